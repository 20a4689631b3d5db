#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "casreg/core.hpp"
#include "casreg/deform.hpp"
#include "casreg/parallel.hpp"

namespace casreg {

/// Windows whose product of summed squared deviations falls below this are treated as flat:
/// their local correlation is defined as 0.
inline constexpr double kFlatWindowEpsilon = 1e-5;

struct LossBreakdown {
  double similarity_term = 0;  // -local_ncc
  double smoothness_term = 0;
  double lambda = 0;
  double total = 0;
};

namespace detail {

inline void require_window(int window, const char* what) {
  if (window < 3 || window % 2 == 0) throw std::invalid_argument(std::string(what) + ": window must be odd and >= 3");
}

/// Sum over the edge-clamped window-wide neighbourhood along one axis:
/// out[p] = sum_{k=-r..r} in[clamp(p+k)].
inline Volume3 box_axis(const Volume3& v, int axis, int r) {
  const Dims d = v.dims();
  Volume3 out(d);
  const detail::AxisView view = axis_view(d, axis);
  const int n = static_cast<int>(view.n);
  const std::size_t s = view.inner;
  for_line_blocks(d, axis, [&](std::size_t base, std::size_t j0, std::size_t j1) {
    const double* in = v.data().data() + base;
    double* o = out.data().data() + base;
    for (std::size_t j = j0; j < j1; ++j) o[j] = 0.0;
    for (int k = -r; k <= r; ++k) {
      const double* src = in + static_cast<std::size_t>(clamp_index(k, n)) * s;
      for (std::size_t j = j0; j < j1; ++j) o[j] += src[j];
    }
    for (int p = 1; p < n; ++p) {
      double* cur = o + static_cast<std::size_t>(p) * s;
      const double* prev = cur - s;
      const double* add = in + static_cast<std::size_t>(clamp_index(p + r, n)) * s;
      const double* sub = in + static_cast<std::size_t>(clamp_index(p - r - 1, n)) * s;
      for (std::size_t j = j0; j < j1; ++j) cur[j] = prev[j] + add[j] - sub[j];
    }
  });
  return out;
}

/// Adjoint of box_axis: out[q] = sum_p in[p] * #{k in [-r, r] : clamp(p+k) = q}.
inline Volume3 box_axis_adjoint(const Volume3& v, int axis, int r) {
  const Dims d = v.dims();
  Volume3 out(d);
  const detail::AxisView view = axis_view(d, axis);
  const int n = static_cast<int>(view.n);
  const std::size_t s = view.inner;
  for_line_blocks(d, axis, [&](std::size_t base, std::size_t j0, std::size_t j1) {
    const double* in = v.data().data() + base;
    double* o = out.data().data() + base;
    auto row = [&](const double* p, int i) { return p + static_cast<std::size_t>(i) * s; };
    for (std::size_t j = j0; j < j1; ++j) o[j] = 0.0;
    for (int p = 0; p <= std::min(r, n - 1); ++p) {
      const double* src = row(in, p);
      for (std::size_t j = j0; j < j1; ++j) o[j] += src[j];
    }
    for (int q = 1; q < n; ++q) {
      double* cur = o + static_cast<std::size_t>(q) * s;
      const double* prev = cur - s;
      for (std::size_t j = j0; j < j1; ++j) cur[j] = prev[j];
      if (q + r < n) {
        const double* add = row(in, q + r);
        for (std::size_t j = j0; j < j1; ++j) cur[j] += add[j];
      }
      if (q - r - 1 >= 0) {
        const double* sub = row(in, q - r - 1);
        for (std::size_t j = j0; j < j1; ++j) cur[j] -= sub[j];
      }
    }
    // Taps that fall off either end are clamped onto the first and last samples.
    for (int p = 0; p < std::min(r, n); ++p) {
      const double* src = row(in, p);
      const double w = r - p;
      for (std::size_t j = j0; j < j1; ++j) o[j] += w * src[j];
    }
    double* last = o + static_cast<std::size_t>(n - 1) * s;
    for (int p = std::max(0, n - r); p < n; ++p) {
      const double* src = row(in, p);
      const double w = p + r - (n - 1);
      for (std::size_t j = j0; j < j1; ++j) last[j] += w * src[j];
    }
  });
  return out;
}

/// Sum over the edge-clamped window^3 cube centred at each voxel.
inline Volume3 box_sum(const Volume3& v, int window) {
  const int r = window / 2;
  return box_axis(box_axis(box_axis(v, 0, r), 1, r), 2, r);
}

inline Volume3 box_sum_adjoint(const Volume3& v, int window) {
  const int r = window / 2;
  return box_axis_adjoint(box_axis_adjoint(box_axis_adjoint(v, 2, r), 1, r), 0, r);
}

inline Volume3 product(const Volume3& a, const Volume3& b) {
  Volume3 out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

/// Windowed first and second moments of a pair of images.
struct WindowMoments {
  double n = 0;  // samples per window
  Volume3 sa, sb, saa, sbb, sab;

  WindowMoments(const Volume3& a, const Volume3& b, int window)
      : n(static_cast<double>(window) * window * window),
        sa(box_sum(a, window)),
        sb(box_sum(b, window)),
        saa(box_sum(product(a, a), window)),
        sbb(box_sum(product(b, b), window)),
        sab(box_sum(product(a, b), window)) {}

  double cross(std::size_t i) const { return sab[i] - sa[i] * sb[i] / n; }
  double var_a(std::size_t i) const { return saa[i] - sa[i] * sa[i] / n; }
  double var_b(std::size_t i) const { return sbb[i] - sb[i] * sb[i] / n; }
  bool flat(std::size_t i) const { return !(var_a(i) * var_b(i) > kFlatWindowEpsilon); }
  /// Squared local correlation; 0 for flat windows.
  double cc(std::size_t i) const {
    if (flat(i)) return 0.0;
    const double c = cross(i);
    return std::min(1.0, (c * c) / (var_a(i) * var_b(i)));
  }
};

}  // namespace detail

/// Pearson correlation of the two voxel populations.
inline double global_ncc(const Volume3& a, const Volume3& b) {
  require_same_dims(a, b, "global_ncc");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0) || !(sbb > 0)) throw std::invalid_argument("global_ncc: constant input has zero variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Mean over voxels of the squared local correlation coefficient in window^3 cubes.
inline double local_ncc(const Volume3& a, const Volume3& b, int window = 9) {
  require_same_dims(a, b, "local_ncc");
  detail::require_window(window, "local_ncc");
  const detail::WindowMoments m(a, b, window);
  const Dims d = a.dims();
  const std::size_t slice = static_cast<std::size_t>(d.w) * d.l;
  const double sum = ordered_sum(d.h, [&](std::ptrdiff_t x) {
    double s = 0;
    for (std::size_t i = static_cast<std::size_t>(x) * slice, e = i + slice; i < e; ++i) s += m.cc(i);
    return s;
  });
  return sum / static_cast<double>(a.size());
}

/// Signed local Pearson correlation per voxel, with the flat-window mask. Shared by the
/// similarity loss and local weighted voting.
struct LocalCorrelation {
  Volume3 r;
  std::vector<std::uint8_t> flat;
};

inline LocalCorrelation local_correlation(const Volume3& a, const Volume3& b, int window) {
  require_same_dims(a, b, "local_correlation");
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("local_correlation: window must be odd");
  const detail::WindowMoments m(a, b, window);
  LocalCorrelation out{Volume3(a.dims()), std::vector<std::uint8_t>(a.size(), 0)};
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (m.flat(i)) {
      out.flat[i] = 1;
      continue;
    }
    out.r[i] = std::clamp(m.cross(i) / std::sqrt(m.var_a(i) * m.var_b(i)), -1.0, 1.0);
  }
  return out;
}

inline double mse(const Volume3& a, const Volume3& b) {
  require_same_dims(a, b, "mse");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

/// Mean SSIM over edge-clamped window^3 cubes, dynamic range 1.
inline double ssim(const Volume3& a, const Volume3& b, int window = 7) {
  require_same_dims(a, b, "ssim");
  detail::require_window(window, "ssim");
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const detail::WindowMoments m(a, b, window);
  double total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double mu_a = m.sa[i] / m.n, mu_b = m.sb[i] / m.n;
    const double va = m.saa[i] / m.n - mu_a * mu_a;
    const double vb = m.sbb[i] / m.n - mu_b * mu_b;
    const double cov = m.sab[i] / m.n - mu_a * mu_b;
    total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(a.size());
}

/// Sum over the 9 (component, axis) pairs of the mean squared forward difference along that axis.
/// Each mean runs over the voxel pairs that exist along the axis.
inline double smoothness_penalty(const DisplacementField& field) {
  const Dims d = field.dims();
  if (d.h < 2 || d.w < 2 || d.l < 2) throw std::invalid_argument("smoothness_penalty: dims must be >= 2 per axis");
  double total = 0;
  for (int axis = 0; axis < 3; ++axis) {
    const detail::AxisView view = detail::axis_view(d, axis);
    const double pairs = static_cast<double>(view.outer * (view.n - 1) * view.inner);
    for (int c = 0; c < 3; ++c) {
      const double* u = field.comp[c].data().data();
      const double s = ordered_sum(static_cast<std::ptrdiff_t>(view.outer), [&](std::ptrdiff_t o) {
        double acc = 0;
        const double* base = u + static_cast<std::size_t>(o) * view.n * view.inner;
        for (std::size_t p = 0; p + 1 < view.n; ++p) {
          const double* a = base + p * view.inner;
          const double* b = a + view.inner;
          for (std::size_t j = 0; j < view.inner; ++j) acc += (b[j] - a[j]) * (b[j] - a[j]);
        }
        return acc;
      });
      total += s / pairs;
    }
  }
  return total;
}

/// Gradient of smoothness_penalty with respect to every displacement component.
inline DisplacementField smoothness_gradient(const DisplacementField& field) {
  const Dims d = field.dims();
  DisplacementField g(d);
  for (int axis = 0; axis < 3; ++axis) {
    const detail::AxisView view = detail::axis_view(d, axis);
    const double w = 2.0 / static_cast<double>(view.outer * (view.n - 1) * view.inner);
    for (int c = 0; c < 3; ++c) {
      const double* u = field.comp[c].data().data();
      double* out = g.comp[c].data().data();
      detail::for_line_blocks(d, axis, [&](std::size_t base, std::size_t j0, std::size_t j1) {
        for (std::size_t p = 0; p + 1 < view.n; ++p) {
          const double* a = u + base + p * view.inner;
          const double* b = a + view.inner;
          double* ga = out + base + p * view.inner;
          double* gb = ga + view.inner;
          for (std::size_t j = j0; j < j1; ++j) {
            const double diff = w * (a[j] - b[j]);
            ga[j] += diff;
            gb[j] -= diff;
          }
        }
      });
    }
  }
  return g;
}

/// -local_ncc(fx, wp) + lambda * smoothness_penalty(field).
inline LossBreakdown total_loss(const Volume3& fx, const Volume3& wp, const DisplacementField& field, double lambda,
                                int window = 9) {
  require_same_dims(fx, wp, "total_loss");
  require_same_dims(fx, field.comp[0], "total_loss");
  LossBreakdown l;
  l.similarity_term = -local_ncc(fx, wp, window);
  l.smoothness_term = smoothness_penalty(field);
  l.lambda = lambda;
  l.total = l.similarity_term + lambda * l.smoothness_term;
  return l;
}

struct LossAndGradient {
  LossBreakdown loss;
  DisplacementField gradient;
  Volume3 warped;
};

/// Loss of warping mv by `field` against fx, with its exact gradient with respect to every
/// displacement component (chained through trilinear sampling; one-sided within the sampled cell).
inline LossAndGradient loss_and_gradient(const Volume3& fx, const Volume3& mv, const DisplacementField& field,
                                         double lambda, int window = 9) {
  require_same_dims(fx, mv, "loss_gradient");
  require_same_dims(fx, field.comp[0], "loss_gradient");
  detail::require_window(window, "loss_gradient");
  const Dims d = fx.dims();
  const std::size_t n_vox = fx.size();

  // Warp with sample derivatives.
  Volume3 warped(d);
  std::array<Volume3, 3> dj{Volume3(d), Volume3(d), Volume3(d)};
  parallel_for(0, d.h, [&](std::ptrdiff_t xi) {
    const int x = static_cast<int>(xi);
    for (int y = 0; y < d.w; ++y)
      for (int z = 0; z < d.l; ++z) {
        const std::size_t i = fx.index(x, y, z);
        double g[3];
        warped[i] = detail::sample_trilinear(mv, x + field.comp[0][i], y + field.comp[1][i], z + field.comp[2][i], g);
        dj[0][i] = g[0];
        dj[1][i] = g[1];
        dj[2][i] = g[2];
      }
  });

  const detail::WindowMoments m(fx, warped, window);
  Volume3 coef_a(d), coef_b(d), coef_c(d);
  const std::size_t slice = static_cast<std::size_t>(d.w) * d.l;
  const double cc_sum = ordered_sum(d.h, [&](std::ptrdiff_t x) {
    double s = 0;
    for (std::size_t i = static_cast<std::size_t>(x) * slice, e = i + slice; i < e; ++i) {
      if (m.flat(i)) continue;
      const double cross = m.cross(i), vi = m.var_a(i), vj = m.var_b(i);
      const double a = 2.0 * cross / (vi * vj);
      const double b = 2.0 * cross * cross / (vi * vj * vj);
      coef_a[i] = a;
      coef_b[i] = b;
      coef_c[i] = -a * m.sa[i] / m.n + b * m.sb[i] / m.n;
      s += std::min(1.0, (cross * cross) / (vi * vj));
    }
    return s;
  });
  const Volume3 adj_a = detail::box_sum_adjoint(coef_a, window);
  const Volume3 adj_b = detail::box_sum_adjoint(coef_b, window);
  const Volume3 adj_c = detail::box_sum_adjoint(coef_c, window);

  LossAndGradient out{{}, smoothness_gradient(field), std::move(warped)};
  const double inv_n = 1.0 / static_cast<double>(n_vox);
  for (int c = 0; c < 3; ++c) {
    Volume3& g = out.gradient.comp[c];
    for (std::size_t i = 0; i < n_vox; ++i) {
      const double dl_dj = -inv_n * (fx[i] * adj_a[i] - out.warped[i] * adj_b[i] + adj_c[i]);
      g[i] = lambda * g[i] + dl_dj * dj[c][i];
    }
  }
  out.loss.similarity_term = -cc_sum * inv_n;
  out.loss.smoothness_term = smoothness_penalty(field);
  out.loss.lambda = lambda;
  out.loss.total = out.loss.similarity_term + lambda * out.loss.smoothness_term;
  return out;
}

inline DisplacementField loss_gradient(const Volume3& fx, const Volume3& mv, const DisplacementField& field,
                                       double lambda, int window = 9) {
  return loss_and_gradient(fx, mv, field, lambda, window).gradient;
}

}  // namespace casreg
