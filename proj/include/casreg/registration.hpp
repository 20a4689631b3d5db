#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "casreg/adam.hpp"
#include "casreg/core.hpp"
#include "casreg/deform.hpp"
#include "casreg/rigid.hpp"
#include "casreg/similarity.hpp"
#include "casreg/volume.hpp"

namespace casreg {

enum class Strategy {
  accumulate,  // warp the original moving image once with the summed field
  successive,  // warp the previous stage's output again at every stage
};

inline const char* to_string(Strategy s) { return s == Strategy::accumulate ? "accumulate" : "successive"; }

struct RegistrationConfig {
  int n_cascades = 5;
  std::vector<int> scales{8, 4, 2, 1, 1};
  double lambda = 1.0;
  int window = 9;
  int iters_per_stage = 100;
  double step_size = 0.5;
  Strategy strategy = Strategy::accumulate;
  std::uint64_t seed = 0;
  bool rigid_init = false;

  /// Coarse-to-fine schedule for n cascades: the first n-1 entries of {8, 4, 2, 1, ...}
  /// followed by a final full-resolution stage.
  static std::vector<int> default_scales(int n) {
    static constexpr int base[] = {8, 4, 2, 1};
    std::vector<int> s;
    for (int i = 0; i + 1 < n; ++i) s.push_back(base[std::min(i, 3)]);
    s.push_back(1);
    return s;
  }

  static RegistrationConfig with_cascades(int n) {
    RegistrationConfig c;
    c.n_cascades = n;
    c.scales = default_scales(n);
    return c;
  }

  void validate() const {
    if (n_cascades < 1) throw std::invalid_argument("n_cascades must be >= 1");
    if (static_cast<int>(scales.size()) != n_cascades) throw std::invalid_argument("scales must have n_cascades entries");
    for (std::size_t i = 0; i < scales.size(); ++i) {
      if (scales[i] < 1) throw std::invalid_argument("scales must be positive");
      if (i > 0 && scales[i] > scales[i - 1]) throw std::invalid_argument("scales must be non-increasing");
    }
    if (scales.back() != 1) throw std::invalid_argument("final scale must be 1");
    if (iters_per_stage < 1) throw std::invalid_argument("iters_per_stage must be >= 1");
    if (window < 3 || window % 2 == 0) throw std::invalid_argument("window must be odd and >= 3");
    if (!(lambda >= 0)) throw std::invalid_argument("lambda must be >= 0");
    if (!(step_size > 0)) throw std::invalid_argument("step_size must be > 0");
  }
};

struct RegistrationResult {
  DisplacementField total_field;
  DisplacementField initial_field;  // rigid pre-alignment as a field; zero when disabled
  std::vector<DisplacementField> stage_fields;
  Volume3 warped;
  std::vector<std::vector<double>> loss_trace;  // per stage, total loss at every iteration
  JacobianReport jacobian;
  Strategy strategy = Strategy::accumulate;
  std::optional<RigidTransform> rigid;
  std::string status = "ok";
};

/// Non-increasing envelope of a loss trace.
inline std::vector<double> best_so_far(const std::vector<double>& trace) {
  std::vector<double> out(trace.size());
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < trace.size(); ++i) out[i] = best = std::min(best, trace[i]);
  return out;
}

/// Grid size for a stage running at `scale`.
inline Dims stage_dims(Dims full, int scale) {
  auto axis = [scale](int n) { return std::min(n, std::max(2, (n + scale / 2) / scale)); };
  return {axis(full.h), axis(full.w), axis(full.l)};
}

namespace detail {

inline Volume3 pyramid_level(const Volume3& v, int scale) {
  if (scale == 1) return v;
  return resize(gaussian_blur(v, 0.5 * (scale - 1)), stage_dims(v.dims(), scale), Interp::trilinear);
}

inline void require_normalized(const Volume3& v, const char* name) {
  constexpr double tol = 1e-6;
  auto [lo, hi] = value_range(v);
  if (lo < -tol || hi > 1 + tol)
    throw std::invalid_argument(std::string("cascade_register: ") + name + " is not normalized to [0, 1]");
}

/// Optimises one incremental field at coarse resolution with Adam. `base` is the part of the
/// transform held fixed during the stage (already downsampled), or empty for successive mode.
inline DisplacementField optimise_stage(const Volume3& fx_s, const Volume3& mv_s, const DisplacementField* base,
                                        const RegistrationConfig& cfg, std::vector<double>& trace) {
  const Dims d = fx_s.dims();
  DisplacementField psi(d);
  AdamState adam(d, AdamParams{cfg.step_size});
  trace.reserve(static_cast<std::size_t>(cfg.iters_per_stage));
  for (int it = 0; it < cfg.iters_per_stage; ++it) {
    const DisplacementField total = base ? add_fields(*base, psi) : psi;
    LossAndGradient lg = loss_and_gradient(fx_s, mv_s, total, cfg.lambda, cfg.window);
    if (!std::isfinite(lg.loss.total) || !all_finite(lg.gradient))
      throw NumericError("non-finite loss or gradient during registration");
    trace.push_back(lg.loss.total);
    adam.step(psi, lg.gradient);
  }
  return psi;
}

}  // namespace detail

/// Cascaded coarse-to-fine registration of mv onto fx. Each stage optimises an incremental field
/// at its scale; the final transform is the sum of all stage fields.
inline RegistrationResult cascade_register(const Volume3& mv, const Volume3& fx, const RegistrationConfig& cfg) {
  require_same_dims(mv, fx, "cascade_register");
  cfg.validate();
  detail::require_normalized(mv, "moving image");
  detail::require_normalized(fx, "fixed image");

  const Dims full = fx.dims();
  RegistrationResult res;
  res.strategy = cfg.strategy;
  res.total_field = DisplacementField(full);
  res.initial_field = DisplacementField(full);

  {
    auto [lo_m, hi_m] = value_range(mv);
    auto [lo_f, hi_f] = value_range(fx);
    if (!(hi_m > lo_m) || !(hi_f > lo_f)) {
      res.status = "warning: constant input image, returning the identity transform";
      res.warped = mv;
      if (full.h >= 3 && full.w >= 3 && full.l >= 3) res.jacobian = jacobian_report(res.total_field);
      return res;
    }
  }

  Volume3 current = mv;
  if (cfg.rigid_init) {
    res.rigid = rigid_register(mv, fx, 40, cfg.seed);
    res.initial_field = rigid_to_field(*res.rigid, full);
    res.total_field = res.initial_field;
    if (cfg.strategy == Strategy::successive) current = apply_rigid(mv, *res.rigid);
  }

  for (int stage = 0; stage < cfg.n_cascades; ++stage) {
    const int scale = cfg.scales[static_cast<std::size_t>(stage)];
    const Volume3 fx_s = detail::pyramid_level(fx, scale);
    std::vector<double> trace;
    DisplacementField psi;
    if (cfg.strategy == Strategy::accumulate) {
      const Volume3 mv_s = detail::pyramid_level(mv, scale);
      const DisplacementField base = resample_field(res.total_field, fx_s.dims());
      psi = detail::optimise_stage(fx_s, mv_s, &base, cfg, trace);
    } else {
      const Volume3 cur_s = detail::pyramid_level(current, scale);
      psi = detail::optimise_stage(fx_s, cur_s, nullptr, cfg, trace);
    }
    DisplacementField psi_full = upsample_field(psi, full);
    res.total_field = add_fields(res.total_field, psi_full);
    if (cfg.strategy == Strategy::successive) current = warp_scalar(current, psi_full);
    res.stage_fields.push_back(std::move(psi_full));
    res.loss_trace.push_back(std::move(trace));
  }

  if (!all_finite(res.total_field)) throw NumericError("registration produced a non-finite displacement");
  res.warped = cfg.strategy == Strategy::accumulate ? warp_scalar(mv, res.total_field) : std::move(current);
  if (full.h >= 3 && full.w >= 3 && full.l >= 3) res.jacobian = jacobian_report(res.total_field);
  return res;
}

/// Carries a label map through a registration the same way the image was carried: one
/// nearest-neighbour warp by the summed field (accumulate), or one warp per stage (successive).
inline LabelVolume propagate(const LabelVolume& labels, const RegistrationResult& res) {
  if (res.strategy == Strategy::accumulate) return warp_labels(labels, res.total_field);
  LabelVolume out = res.rigid ? apply_rigid(labels, *res.rigid) : labels;
  for (const auto& f : res.stage_fields) out = warp_labels(out, f);
  return out;
}

}  // namespace casreg
