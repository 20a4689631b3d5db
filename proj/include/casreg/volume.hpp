#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "casreg/core.hpp"
#include "casreg/parallel.hpp"

namespace casreg {

enum class Interp { trilinear, nearest };

inline std::pair<Scalar, Scalar> value_range(const Volume3& v) {
  if (v.empty()) throw std::invalid_argument("value_range: empty volume");
  auto [lo, hi] = std::minmax_element(v.data().begin(), v.data().end());
  return {*lo, *hi};
}

inline bool all_finite(const Volume3& v) {
  return std::all_of(v.data().begin(), v.data().end(), [](Scalar s) { return std::isfinite(s); });
}

template <typename T>
std::set<T> value_set(const Grid<T>& g) {
  return std::set<T>(g.data().begin(), g.data().end());
}

inline std::set<Label> label_set(const LabelVolume& l) { return value_set(l); }

/// Rescales intensities to [0, 1]. A constant volume maps to all zeros.
inline Volume3 normalize(const Volume3& v) {
  if (v.empty()) throw std::invalid_argument("normalize: empty volume");
  auto [lo, hi] = value_range(v);
  Volume3 out = v;
  if (!(hi > lo)) {
    std::fill(out.data().begin(), out.data().end(), Scalar{0});
    return out;
  }
  const Scalar range = hi - lo;
  for (auto& s : out.data()) s = (s - lo) / range;
  return out;
}

namespace detail {

/// Input coordinate sampled by output index o when resizing an axis from n_in to n_out.
inline double resize_coordinate(int o, int n_in, int n_out) {
  if (n_out == 1) return 0.5 * static_cast<double>(n_in - 1);
  return static_cast<double>(o) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
}

struct AxisTap {
  int i0 = 0;
  int i1 = 0;
  double frac = 0.0;
};

/// Linear interpolation taps for a coordinate already inside [0, n-1].
inline AxisTap make_tap(double c, int n) {
  AxisTap t;
  if (n == 1) return t;
  int i0 = static_cast<int>(std::floor(c));
  i0 = std::clamp(i0, 0, n - 2);
  t.i0 = i0;
  t.i1 = i0 + 1;
  t.frac = c - i0;
  return t;
}

inline std::vector<AxisTap> resize_taps(int n_in, int n_out) {
  std::vector<AxisTap> taps(static_cast<std::size_t>(n_out));
  for (int o = 0; o < n_out; ++o) taps[static_cast<std::size_t>(o)] = make_tap(resize_coordinate(o, n_in, n_out), n_in);
  return taps;
}

}  // namespace detail

/// Resamples onto out_dims with endpoint-aligned coordinates (output o samples input
/// o*(in-1)/(out-1); a single-voxel axis samples the input midpoint).
template <typename T>
Grid<T> resize(const Grid<T>& v, Dims out_dims, Interp mode) {
  if (!out_dims.positive()) throw std::invalid_argument("resize: output dims must be positive");
  const Dims in = v.dims();
  Grid<T> out(out_dims);
  out.spacing = {v.spacing[0] * in.h / out_dims.h, v.spacing[1] * in.w / out_dims.w, v.spacing[2] * in.l / out_dims.l};
  out.orientation = v.orientation;

  if (mode == Interp::nearest) {
    auto nearest = [](int o, int n_in, int n_out) {
      return clamp_index(static_cast<int>(std::lround(detail::resize_coordinate(o, n_in, n_out))), n_in);
    };
    std::vector<int> xs(out_dims.h), ys(out_dims.w), zs(out_dims.l);
    for (int i = 0; i < out_dims.h; ++i) xs[i] = nearest(i, in.h, out_dims.h);
    for (int i = 0; i < out_dims.w; ++i) ys[i] = nearest(i, in.w, out_dims.w);
    for (int i = 0; i < out_dims.l; ++i) zs[i] = nearest(i, in.l, out_dims.l);
    parallel_for(0, out_dims.h, [&](std::ptrdiff_t x) {
      for (int y = 0; y < out_dims.w; ++y)
        for (int z = 0; z < out_dims.l; ++z) out(static_cast<int>(x), y, z) = v(xs[x], ys[y], zs[z]);
    });
    return out;
  }

  const auto tx = detail::resize_taps(in.h, out_dims.h);
  const auto ty = detail::resize_taps(in.w, out_dims.w);
  const auto tz = detail::resize_taps(in.l, out_dims.l);
  parallel_for(0, out_dims.h, [&](std::ptrdiff_t xo) {
    const auto& a = tx[static_cast<std::size_t>(xo)];
    for (int yo = 0; yo < out_dims.w; ++yo) {
      const auto& b = ty[static_cast<std::size_t>(yo)];
      for (int zo = 0; zo < out_dims.l; ++zo) {
        const auto& c = tz[static_cast<std::size_t>(zo)];
        const double c00 = (1 - c.frac) * v(a.i0, b.i0, c.i0) + c.frac * v(a.i0, b.i0, c.i1);
        const double c01 = (1 - c.frac) * v(a.i0, b.i1, c.i0) + c.frac * v(a.i0, b.i1, c.i1);
        const double c10 = (1 - c.frac) * v(a.i1, b.i0, c.i0) + c.frac * v(a.i1, b.i0, c.i1);
        const double c11 = (1 - c.frac) * v(a.i1, b.i1, c.i0) + c.frac * v(a.i1, b.i1, c.i1);
        const double c0 = (1 - b.frac) * c00 + b.frac * c01;
        const double c1 = (1 - b.frac) * c10 + b.frac * c11;
        out(static_cast<int>(xo), yo, zo) = static_cast<T>((1 - a.frac) * c0 + a.frac * c1);
      }
    }
  });
  return out;
}

namespace detail {

/// Shape of the array seen as [outer][n][inner] with `n` running along `axis`.
struct AxisView {
  std::size_t outer, n, inner;
};

inline AxisView axis_view(Dims d, int axis) {
  const std::size_t h = d.h, w = d.w, l = d.l;
  if (axis == 0) return {1, h, w * l};
  if (axis == 1) return {h, w, l};
  return {h * w, l, 1};
}

/// Runs kernel(offset, inner_begin, inner_end) over independent blocks of lines along `axis`.
/// Line (o, j) starts at o*n*inner + j and has stride `inner`.
template <typename Kernel>
void for_line_blocks(Dims d, int axis, Kernel&& kernel) {
  const AxisView v = axis_view(d, axis);
  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (v.inner + kChunk - 1) / kChunk;
  parallel_for(0, static_cast<std::ptrdiff_t>(v.outer * chunks), [&](std::ptrdiff_t b) {
    const std::size_t o = static_cast<std::size_t>(b) / chunks;
    const std::size_t j0 = (static_cast<std::size_t>(b) % chunks) * kChunk;
    const std::size_t j1 = std::min(v.inner, j0 + kChunk);
    kernel(o * v.n * v.inner, j0, j1);
  });
}

}  // namespace detail

/// Separable Gaussian smoothing with edge replication; kernel truncated at 3 sigma.
inline Volume3 gaussian_blur(const Volume3& v, double sigma) {
  if (sigma <= 0) return v;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));
    norm += kernel[static_cast<std::size_t>(k + radius)];
  }
  for (auto& k : kernel) k /= norm;

  const Dims d = v.dims();
  Volume3 cur = v;
  Volume3 next(d);
  for (int axis = 0; axis < 3; ++axis) {
    const detail::AxisView view = detail::axis_view(d, axis);
    const int n = static_cast<int>(view.n);
    const std::size_t stride = view.inner;
    detail::for_line_blocks(d, axis, [&](std::size_t base, std::size_t j0, std::size_t j1) {
      const double* in = cur.data().data() + base;
      double* out = next.data().data() + base;
      for (int p = 0; p < n; ++p) {
        double* o = out + static_cast<std::size_t>(p) * stride;
        for (std::size_t j = j0; j < j1; ++j) o[j] = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const double w = kernel[static_cast<std::size_t>(k + radius)];
          const double* src = in + static_cast<std::size_t>(clamp_index(p + k, n)) * stride;
          for (std::size_t j = j0; j < j1; ++j) o[j] += w * src[j];
        }
      }
    });
    std::swap(cur, next);
  }
  cur.spacing = v.spacing;
  cur.orientation = v.orientation;
  return cur;
}

template <typename T>
Grid<T> extract(const Grid<T>& v, const BoundingBox& box) {
  Grid<T> out(box.extent());
  out.spacing = v.spacing;
  out.orientation = v.orientation;
  const Dims e = box.extent();
  for (int x = 0; x < e.h; ++x)
    for (int y = 0; y < e.w; ++y)
      for (int z = 0; z < e.l; ++z) out(x, y, z) = v(x + box.lo[0], y + box.lo[1], z + box.lo[2]);
  return out;
}

/// Places `crop` back into a parent grid of `parent` dims at box.lo, filling the rest.
template <typename T>
Grid<T> embed(const Grid<T>& crop, const BoundingBox& box, Dims parent, T fill = T{}) {
  if (crop.dims() != box.extent()) throw std::invalid_argument("embed: crop dims do not match box");
  Grid<T> out(parent, fill);
  out.spacing = crop.spacing;
  const Dims e = box.extent();
  for (int x = 0; x < e.h; ++x)
    for (int y = 0; y < e.w; ++y)
      for (int z = 0; z < e.l; ++z) out(x + box.lo[0], y + box.lo[1], z + box.lo[2]) = crop(x, y, z);
  return out;
}

/// Tight box around voxels >= threshold, dilated by margin and clipped to the volume.
inline BoundingBox foreground_box(const Volume3& v, Scalar threshold, int margin) {
  const Dims d = v.dims();
  std::array<int, 3> lo{d.h, d.w, d.l};
  std::array<int, 3> hi{-1, -1, -1};
  for (int x = 0; x < d.h; ++x)
    for (int y = 0; y < d.w; ++y)
      for (int z = 0; z < d.l; ++z) {
        if (!(v(x, y, z) >= threshold)) continue;
        lo = {std::min(lo[0], x), std::min(lo[1], y), std::min(lo[2], z)};
        hi = {std::max(hi[0], x), std::max(hi[1], y), std::max(hi[2], z)};
      }
  if (hi[0] < 0) throw std::invalid_argument("crop_to_foreground: no voxel reaches the threshold");
  BoundingBox box;
  for (int a = 0; a < 3; ++a) {
    box.lo[a] = std::max(0, lo[a] - margin);
    box.hi[a] = std::min(d[a], hi[a] + 1 + margin);
  }
  return box;
}

inline std::pair<Volume3, BoundingBox> crop_to_foreground(const Volume3& v, Scalar threshold = 0.01, int margin = 2) {
  BoundingBox box = foreground_box(v, threshold, margin);
  return {extract(v, box), box};
}

}  // namespace casreg
