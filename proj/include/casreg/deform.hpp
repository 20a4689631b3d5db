#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "casreg/core.hpp"
#include "casreg/io.hpp"
#include "casreg/parallel.hpp"
#include "casreg/volume.hpp"

namespace casreg {

/// Dense displacement u(p) in voxel units; the transform is p -> p + u(p).
/// Component c is the displacement along axis c (H, W, L).
struct DisplacementField {
  std::array<Volume3, 3> comp;

  DisplacementField() = default;
  explicit DisplacementField(Dims dims) : comp{Volume3(dims), Volume3(dims), Volume3(dims)} {}
  DisplacementField(Volume3 ux, Volume3 uy, Volume3 uz) : comp{std::move(ux), std::move(uy), std::move(uz)} {
    if (comp[1].dims() != comp[0].dims() || comp[2].dims() != comp[0].dims())
      throw std::invalid_argument("DisplacementField: component dims differ");
  }

  static DisplacementField uniform(Dims dims, Scalar dx, Scalar dy, Scalar dz) {
    return {Volume3(dims, dx), Volume3(dims, dy), Volume3(dims, dz)};
  }

  const Dims& dims() const { return comp[0].dims(); }
  std::size_t size() const { return comp[0].size(); }
  bool operator==(const DisplacementField&) const = default;
};

inline bool all_finite(const DisplacementField& f) {
  return all_finite(f.comp[0]) && all_finite(f.comp[1]) && all_finite(f.comp[2]);
}

inline Scalar max_norm(const DisplacementField& f) {
  Scalar m = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const Scalar n2 = f.comp[0][i] * f.comp[0][i] + f.comp[1][i] * f.comp[1][i] + f.comp[2][i] * f.comp[2][i];
    m = std::max(m, n2);
  }
  return std::sqrt(m);
}

namespace detail {

/// Trilinear sample at a continuous coordinate with each axis clamped to [0, n-1].
/// When grad is non-null it receives the partial derivatives with respect to the coordinate
/// (zero along an axis where the coordinate was clamped).
inline Scalar sample_trilinear(const Volume3& v, double cx, double cy, double cz, double* grad = nullptr) {
  const Dims d = v.dims();
  double mask[3] = {1, 1, 1};
  double c[3] = {cx, cy, cz};
  for (int a = 0; a < 3; ++a) {
    const double hi = d[a] - 1;
    if (c[a] < 0) {
      c[a] = 0;
      mask[a] = 0;
    } else if (c[a] > hi) {
      c[a] = hi;
      mask[a] = 0;
    }
  }
  const AxisTap tx = make_tap(c[0], d.h);
  const AxisTap ty = make_tap(c[1], d.w);
  const AxisTap tz = make_tap(c[2], d.l);
  const double v000 = v(tx.i0, ty.i0, tz.i0), v001 = v(tx.i0, ty.i0, tz.i1);
  const double v010 = v(tx.i0, ty.i1, tz.i0), v011 = v(tx.i0, ty.i1, tz.i1);
  const double v100 = v(tx.i1, ty.i0, tz.i0), v101 = v(tx.i1, ty.i0, tz.i1);
  const double v110 = v(tx.i1, ty.i1, tz.i0), v111 = v(tx.i1, ty.i1, tz.i1);
  const double fz = tz.frac, fy = ty.frac, fx = tx.frac;
  const double c00 = (1 - fz) * v000 + fz * v001;
  const double c01 = (1 - fz) * v010 + fz * v011;
  const double c10 = (1 - fz) * v100 + fz * v101;
  const double c11 = (1 - fz) * v110 + fz * v111;
  const double c0 = (1 - fy) * c00 + fy * c01;
  const double c1 = (1 - fy) * c10 + fy * c11;
  if (grad) {
    const bool lx = d.h > 1, ly = d.w > 1, lz = d.l > 1;
    grad[0] = lx ? mask[0] * (c1 - c0) : 0.0;
    grad[1] = ly ? mask[1] * ((1 - fx) * (c01 - c00) + fx * (c11 - c10)) : 0.0;
    const double d0 = (1 - fy) * (v001 - v000) + fy * (v011 - v010);
    const double d1 = (1 - fy) * (v101 - v100) + fy * (v111 - v110);
    grad[2] = lz ? mask[2] * ((1 - fx) * d0 + fx * d1) : 0.0;
  }
  return (1 - fx) * c0 + fx * c1;
}

}  // namespace detail

/// Warped image X(p) = mv(p + u(p)), trilinear, coordinates clamped to the domain.
inline Volume3 warp_scalar(const Volume3& mv, const DisplacementField& field) {
  require_same_dims(mv, field.comp[0], "warp_scalar");
  const Dims d = mv.dims();
  Volume3 out(d);
  out.spacing = mv.spacing;
  out.orientation = mv.orientation;
  parallel_for(0, d.h, [&](std::ptrdiff_t xi) {
    const int x = static_cast<int>(xi);
    for (int y = 0; y < d.w; ++y)
      for (int z = 0; z < d.l; ++z) {
        const std::size_t i = mv.index(x, y, z);
        out[i] = detail::sample_trilinear(mv, x + field.comp[0][i], y + field.comp[1][i], z + field.comp[2][i]);
      }
  });
  return out;
}

/// Nearest-neighbour label warp; the output never contains labels absent from the input.
inline LabelVolume warp_labels(const LabelVolume& labels, const DisplacementField& field) {
  require_same_dims(labels, field.comp[0], "warp_labels");
  const Dims d = labels.dims();
  LabelVolume out(d);
  out.spacing = labels.spacing;
  out.orientation = labels.orientation;
  parallel_for(0, d.h, [&](std::ptrdiff_t xi) {
    const int x = static_cast<int>(xi);
    for (int y = 0; y < d.w; ++y)
      for (int z = 0; z < d.l; ++z) {
        const std::size_t i = labels.index(x, y, z);
        const int sx = clamp_index(static_cast<int>(std::lround(x + field.comp[0][i])), d.h);
        const int sy = clamp_index(static_cast<int>(std::lround(y + field.comp[1][i])), d.w);
        const int sz = clamp_index(static_cast<int>(std::lround(z + field.comp[2][i])), d.l);
        out[i] = labels(sx, sy, sz);
      }
  });
  return out;
}

inline DisplacementField add_fields(const DisplacementField& a, const DisplacementField& b) {
  require_same_dims(a.comp[0], b.comp[0], "add_fields");
  DisplacementField out = a;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < out.size(); ++i) out.comp[c][i] += b.comp[c][i];
  return out;
}

inline DisplacementField scale_field(const DisplacementField& a, Scalar s) {
  DisplacementField out = a;
  for (auto& c : out.comp)
    for (auto& v : c.data()) v *= s;
  return out;
}

/// Resamples a field onto out_dims (endpoint-aligned trilinear, as in resize) and rescales each
/// component so displacements stay in output-voxel units.
inline DisplacementField resample_field(const DisplacementField& field, Dims out_dims) {
  if (!out_dims.positive()) throw std::invalid_argument("resample_field: output dims must be positive");
  const Dims in = field.dims();
  if (in == out_dims) return field;
  DisplacementField out;
  for (int c = 0; c < 3; ++c) {
    out.comp[c] = resize(field.comp[c], out_dims, Interp::trilinear);
    const double factor = (in[c] > 1 && out_dims[c] > 1)
                              ? static_cast<double>(out_dims[c] - 1) / static_cast<double>(in[c] - 1)
                              : static_cast<double>(out_dims[c]) / static_cast<double>(in[c]);
    for (auto& v : out.comp[c].data()) v *= factor;
  }
  return out;
}

inline DisplacementField upsample_field(const DisplacementField& field, Dims out_dims) {
  return resample_field(field, out_dims);
}

struct JacobianReport {
  Volume3 det_map;  // interior voxels only: dims (H-2, W-2, L-2)
  double folding_fraction = 0;
  double min_det = 0;
  double mean_det = 0;
};

inline double det3(const double m[3][3]) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

/// Determinant of I + du/dp by central differences at every interior voxel.
inline JacobianReport jacobian_report(const DisplacementField& field) {
  const Dims d = field.dims();
  if (d.h < 3 || d.w < 3 || d.l < 3) throw std::invalid_argument("jacobian_report: dims must be >= 3 per axis");
  JacobianReport r;
  r.det_map = Volume3({d.h - 2, d.w - 2, d.l - 2});
  parallel_for(1, d.h - 1, [&](std::ptrdiff_t xi) {
    const int x = static_cast<int>(xi);
    for (int y = 1; y < d.w - 1; ++y)
      for (int z = 1; z < d.l - 1; ++z) {
        double j[3][3];
        for (int c = 0; c < 3; ++c) {
          const Volume3& u = field.comp[c];
          j[c][0] = 0.5 * (u(x + 1, y, z) - u(x - 1, y, z));
          j[c][1] = 0.5 * (u(x, y + 1, z) - u(x, y - 1, z));
          j[c][2] = 0.5 * (u(x, y, z + 1) - u(x, y, z - 1));
          j[c][c] += 1.0;
        }
        r.det_map(x - 1, y - 1, z - 1) = det3(j);
      }
  });
  std::size_t folded = 0;
  double sum = 0;
  double mn = std::numeric_limits<double>::infinity();
  for (double v : r.det_map.data()) {
    folded += v <= 0 ? 1 : 0;
    sum += v;
    mn = std::min(mn, v);
  }
  const double n = static_cast<double>(r.det_map.size());
  r.folding_fraction = static_cast<double>(folded) / n;
  r.min_det = mn;
  r.mean_det = sum / n;
  return r;
}

/// Mean over voxels of the Frobenius norm of the forward-difference gradient of u.
inline double mean_gradient_magnitude(const DisplacementField& field) {
  const Dims d = field.dims();
  double total = 0;
  for (int x = 0; x < d.h; ++x)
    for (int y = 0; y < d.w; ++y)
      for (int z = 0; z < d.l; ++z) {
        double s = 0;
        for (int c = 0; c < 3; ++c) {
          const Volume3& u = field.comp[c];
          const double v = u(x, y, z);
          if (x + 1 < d.h) s += (u(x + 1, y, z) - v) * (u(x + 1, y, z) - v);
          if (y + 1 < d.w) s += (u(x, y + 1, z) - v) * (u(x, y + 1, z) - v);
          if (z + 1 < d.l) s += (u(x, y, z + 1) - v) * (u(x, y, z + 1) - v);
        }
        total += std::sqrt(s);
      }
  return total / static_cast<double>(d.count());
}

namespace detail {

/// Standard normal deviates from a 64-bit Mersenne Twister via Box-Muller; identical on every
/// platform, unlike std::normal_distribution.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : rng_(seed) {}
  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0;
  bool has_spare_ = false;
};

}  // namespace detail

/// Smooth random field: per-component white noise, Gaussian-smoothed (std = smoothness voxels),
/// rescaled so the largest displacement vector has length `amplitude`.
inline DisplacementField random_smooth_field(std::uint64_t seed, Dims dims, double amplitude, double smoothness) {
  if (amplitude < 0) throw std::invalid_argument("random_smooth_field: amplitude must be >= 0");
  if (smoothness < 1) throw std::invalid_argument("random_smooth_field: smoothness must be >= 1");
  DisplacementField f(dims);
  if (amplitude == 0) return f;
  detail::NormalStream noise(seed);
  // Noise lives on a padded grid so the smoothing never sees the replicated border.
  const int pad = static_cast<int>(std::ceil(3.0 * smoothness));
  const Dims padded{dims.h + 2 * pad, dims.w + 2 * pad, dims.l + 2 * pad};
  const BoundingBox inner{{pad, pad, pad}, {pad + dims.h, pad + dims.w, pad + dims.l}};
  for (int c = 0; c < 3; ++c) {
    Volume3 n(padded);
    for (auto& v : n.data()) v = noise.next();
    f.comp[c] = extract(gaussian_blur(n, smoothness), inner);
    f.comp[c].spacing = {1, 1, 1};
  }
  const double m = max_norm(f);
  if (!(m > 0)) return DisplacementField(dims);
  return scale_field(f, amplitude / m);
}

/// Raw field format: "<name>.f32" with (du_x, du_y, du_z) interleaved per voxel, plus a
/// "<name>.dims" sidecar carrying the token "field".
inline void save_field(const DisplacementField& f, const std::filesystem::path& path) {
  detail::ensure_parent(path);
  if (path.extension() != ".f32") throw IoError("displacement fields are written as .f32: " + path.string());
  std::vector<float> values(3 * f.size());
  for (std::size_t i = 0; i < f.size(); ++i)
    for (int c = 0; c < 3; ++c) values[3 * i + static_cast<std::size_t>(c)] = static_cast<float>(f.comp[c][i]);
  detail::write_f32_payload(path, values);
  detail::write_raw_header(detail::raw_sidecar(path), f.dims(), "field");
}

inline DisplacementField load_field(const std::filesystem::path& path) {
  const detail::RawHeader h = detail::read_raw_header(detail::raw_sidecar(path));
  if (h.token != "field") throw IoError("not a displacement field file: " + path.string());
  const std::vector<float> values = detail::read_f32_payload(detail::raw_payload(path), 3 * h.dims.count());
  DisplacementField f(h.dims);
  for (std::size_t i = 0; i < f.size(); ++i)
    for (int c = 0; c < 3; ++c) f.comp[c][i] = values[3 * i + static_cast<std::size_t>(c)];
  if (!all_finite(f)) throw IoError("non-finite displacement in " + path.string());
  return f;
}

}  // namespace casreg
