#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

#include "casreg/core.hpp"
#include "casreg/deform.hpp"
#include "casreg/similarity.hpp"
#include "casreg/volume.hpp"

namespace casreg {

/// Rigid map q = R (p - center) + center + translation, with R = Rz * Ry * Rx.
/// Resampling a volume through it gives out(p) = v(q).
struct RigidTransform {
  std::array<double, 3> rotation{0, 0, 0};     // radians about the H, W, L axes
  std::array<double, 3> translation{0, 0, 0};  // voxels
  std::optional<std::array<double, 3>> center;  // defaults to the volume midpoint

  std::array<double, 3> center_for(Dims d) const {
    if (center) return *center;
    return {0.5 * (d.h - 1), 0.5 * (d.w - 1), 0.5 * (d.l - 1)};
  }

  std::array<std::array<double, 3>, 3> matrix() const {
    const double ca = std::cos(rotation[0]), sa = std::sin(rotation[0]);
    const double cb = std::cos(rotation[1]), sb = std::sin(rotation[1]);
    const double cg = std::cos(rotation[2]), sg = std::sin(rotation[2]);
    // Rz(g) * Ry(b) * Rx(a)
    return {{{cg * cb, cg * sb * sa - sg * ca, cg * sb * ca + sg * sa},
             {sg * cb, sg * sb * sa + cg * ca, sg * sb * ca - cg * sa},
             {-sb, cb * sa, cb * ca}}};
  }
};

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

namespace detail {

/// Source coordinate of voxel p for a volume whose voxels are `scale` full-resolution voxels apart.
struct RigidMap {
  std::array<std::array<double, 3>, 3> r;
  std::array<double, 3> c, t, s;

  RigidMap(const RigidTransform& tr, Dims full, std::array<double, 3> scale)
      : r(tr.matrix()), c(tr.center_for(full)), t(tr.translation), s(scale) {}

  std::array<double, 3> operator()(int x, int y, int z) const {
    const double p[3] = {x * s[0] - c[0], y * s[1] - c[1], z * s[2] - c[2]};
    std::array<double, 3> q;
    for (int a = 0; a < 3; ++a) q[a] = (r[a][0] * p[0] + r[a][1] * p[1] + r[a][2] * p[2] + c[a] + t[a]) / s[a];
    return q;
  }
};

inline Volume3 rigid_resample(const Volume3& v, const RigidTransform& tr, Dims full, std::array<double, 3> scale) {
  const RigidMap map(tr, full, scale);
  const Dims d = v.dims();
  Volume3 out(d);
  out.spacing = v.spacing;
  out.orientation = v.orientation;
  parallel_for(0, d.h, [&](std::ptrdiff_t xi) {
    const int x = static_cast<int>(xi);
    for (int y = 0; y < d.w; ++y)
      for (int z = 0; z < d.l; ++z) {
        const auto q = map(x, y, z);
        out(x, y, z) = sample_trilinear(v, q[0], q[1], q[2]);
      }
  });
  return out;
}

}  // namespace detail

inline Volume3 apply_rigid(const Volume3& v, const RigidTransform& t) {
  return detail::rigid_resample(v, t, v.dims(), {1, 1, 1});
}

inline LabelVolume apply_rigid(const LabelVolume& v, const RigidTransform& t) {
  const detail::RigidMap map(t, v.dims(), {1, 1, 1});
  const Dims d = v.dims();
  LabelVolume out(d);
  out.spacing = v.spacing;
  out.orientation = v.orientation;
  for (int x = 0; x < d.h; ++x)
    for (int y = 0; y < d.w; ++y)
      for (int z = 0; z < d.l; ++z) {
        const auto q = map(x, y, z);
        out(x, y, z) = v(clamp_index(static_cast<int>(std::lround(q[0])), d.h),
                         clamp_index(static_cast<int>(std::lround(q[1])), d.w),
                         clamp_index(static_cast<int>(std::lround(q[2])), d.l));
      }
  return out;
}

/// Displacement field equivalent of a rigid transform: u(p) = q(p) - p.
inline DisplacementField rigid_to_field(const RigidTransform& t, Dims d) {
  const detail::RigidMap map(t, d, {1, 1, 1});
  DisplacementField f(d);
  for (int x = 0; x < d.h; ++x)
    for (int y = 0; y < d.w; ++y)
      for (int z = 0; z < d.l; ++z) {
        const auto q = map(x, y, z);
        f.comp[0](x, y, z) = q[0] - x;
        f.comp[1](x, y, z) = q[1] - y;
        f.comp[2](x, y, z) = q[2] - z;
      }
  return f;
}

namespace detail {

inline RigidTransform from_params(const std::array<double, 6>& p) {
  RigidTransform t;
  t.rotation = {wrap_angle(p[0]), wrap_angle(p[1]), wrap_angle(p[2])};
  t.translation = {p[3], p[4], p[5]};
  return t;
}

struct RigidLevel {
  Volume3 fx, mv;
  std::array<double, 3> scale;
};

/// Greedy coordinate search: try +/- step on each parameter, keep the best improving move,
/// halve all steps when nothing improves.
inline double coordinate_search(const RigidLevel& lvl, Dims full, std::array<double, 6>& params,
                                std::array<double, 6> steps, int iters) {
  auto score = [&](const std::array<double, 6>& p) {
    return global_ncc(lvl.fx, rigid_resample(lvl.mv, from_params(p), full, lvl.scale));
  };
  double best = score(params);
  for (int it = 0; it < iters; ++it) {
    std::array<double, 6> best_params = params;
    double best_candidate = best;
    for (int k = 0; k < 6; ++k) {
      for (double sign : {1.0, -1.0}) {
        std::array<double, 6> trial = params;
        trial[static_cast<std::size_t>(k)] += sign * steps[static_cast<std::size_t>(k)];
        const double s = score(trial);
        if (s > best_candidate) {
          best_candidate = s;
          best_params = trial;
        }
      }
    }
    if (best_candidate > best) {
      best = best_candidate;
      params = best_params;
    } else {
      for (auto& s : steps) s *= 0.5;
      if (steps[3] < 0.01) break;
    }
  }
  return best;
}

}  // namespace detail

/// Six-parameter rigid alignment maximising global NCC, by multi-start coordinate search over a
/// three-level pyramid. The result never scores below the identity.
inline RigidTransform rigid_register(const Volume3& mv, const Volume3& fx, int iters = 40, std::uint64_t seed = 0) {
  require_same_dims(mv, fx, "rigid_register");
  {
    auto [lo_m, hi_m] = value_range(mv);
    auto [lo_f, hi_f] = value_range(fx);
    if (!(hi_m > lo_m) || !(hi_f > lo_f)) throw std::invalid_argument("rigid_register: constant input");
  }
  const Dims full = fx.dims();
  std::vector<detail::RigidLevel> levels;
  for (int f : {4, 2, 1}) {
    Dims cd{std::max(std::min(full.h, 8), full.h / f), std::max(std::min(full.w, 8), full.w / f),
            std::max(std::min(full.l, 8), full.l / f)};
    detail::RigidLevel lvl;
    const double sigma = f > 1 ? 0.5 * (f - 1) : 0.0;
    lvl.fx = f > 1 ? resize(gaussian_blur(fx, sigma), cd, Interp::trilinear) : fx;
    lvl.mv = f > 1 ? resize(gaussian_blur(mv, sigma), cd, Interp::trilinear) : mv;
    for (int a = 0; a < 3; ++a)
      lvl.scale[static_cast<std::size_t>(a)] = cd[a] > 1 ? static_cast<double>(full[a] - 1) / (cd[a] - 1) : 1.0;
    levels.push_back(std::move(lvl));
  }

  const std::array<double, 6> coarse_steps{0.08, 0.08, 0.08, 2.0, 2.0, 2.0};
  std::vector<std::array<double, 6>> starts{{0, 0, 0, 0, 0, 0}};
  detail::NormalStream rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (int s = 0; s < 6; ++s) {
    std::array<double, 6> p{};
    for (int k = 0; k < 3; ++k) p[static_cast<std::size_t>(k)] = 0.15 * (2 * rng.uniform() - 1);
    for (int k = 3; k < 6; ++k) p[static_cast<std::size_t>(k)] = 4.0 * (2 * rng.uniform() - 1);
    starts.push_back(p);
  }

  std::array<double, 6> best_params{};
  double best_score = -2;
  for (auto p : starts) {
    const double s = detail::coordinate_search(levels[0], full, p, coarse_steps, iters);
    if (s > best_score) {
      best_score = s;
      best_params = p;
    }
  }
  std::array<double, 6> steps = coarse_steps;
  for (std::size_t li = 1; li < levels.size(); ++li) {
    for (auto& s : steps) s *= 0.5;
    detail::coordinate_search(levels[li], full, best_params, steps, iters);
  }

  const RigidTransform result = detail::from_params(best_params);
  const double identity_score = global_ncc(fx, mv);
  if (global_ncc(fx, apply_rigid(mv, result)) < identity_score) return RigidTransform{};
  return result;
}

}  // namespace casreg
