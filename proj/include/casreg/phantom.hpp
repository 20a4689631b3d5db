#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <utility>

#include "casreg/core.hpp"
#include "casreg/deform.hpp"
#include "casreg/volume.hpp"

// Synthetic brain-like phantoms: nested, smoothly deformed ellipsoidal shells with one label per
// shell and a smooth intensity perturbation over the whole field of view.

namespace casreg {

inline constexpr double kPhantomMinAge = 20.0;
inline constexpr double kPhantomMaxAge = 35.0;

namespace detail {

struct Wave {
  std::array<double, 3> k;
  double phase;
  double amplitude;

  double operator()(const std::array<double, 3>& q) const {
    return amplitude * std::cos(2 * std::numbers::pi * (k[0] * q[0] + k[1] * q[1] + k[2] * q[2]) + phase);
  }
};

inline std::array<double, 3> random_direction(NormalStream& rng) {
  std::array<double, 3> v{rng.next(), rng.next(), rng.next()};
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  for (auto& c : v) c /= (n > 0 ? n : 1);
  return v;
}

inline Wave random_wave(NormalStream& rng, double min_freq, double max_freq, double amplitude) {
  Wave w;
  const auto dir = random_direction(rng);
  const double f = min_freq + (max_freq - min_freq) * rng.uniform();
  w.k = {dir[0] * f, dir[1] * f, dir[2] * f};
  w.phase = 2 * std::numbers::pi * rng.uniform();
  w.amplitude = amplitude;
  return w;
}

// Shell intensities chosen so that neighbouring labels always contrast.
inline constexpr double kLabelIntensity[9] = {0.0, 0.55, 0.95, 0.35, 0.8, 0.25, 0.7, 0.45, 1.0};

}  // namespace detail

/// Phantom whose overall size grows with `age` (weeks, clamped to [20, 35]).
inline std::pair<Volume3, LabelVolume> make_phantom_aged(std::uint64_t seed, Dims dims, int n_labels, double age) {
  if (dims.h < 16 || dims.w < 16 || dims.l < 16) throw std::invalid_argument("make_phantom: dims must be >= 16 per axis");
  if (n_labels < 2 || n_labels > 8) throw std::invalid_argument("make_phantom: n_labels must be in [2, 8]");
  age = std::clamp(age, kPhantomMinAge, kPhantomMaxAge);

  detail::NormalStream rng(seed * 0x2545F4914F6CDD1DULL + 0x1234567ULL);
  const double size = 0.62 + 0.26 * (age - kPhantomMinAge) / (kPhantomMaxAge - kPhantomMinAge);
  std::array<double, 3> axes;
  for (auto& a : axes) a = size * (0.9 + 0.1 * rng.uniform());
  std::array<double, 3> centre;
  for (int a = 0; a < 3; ++a) centre[static_cast<std::size_t>(a)] = 0.5 * (dims[a] - 1) + (2 * rng.uniform() - 1) * dims[a] / 64.0;

  // Shared angular modulation plus a small independent term per shell boundary.
  std::array<detail::Wave, 4> outline;
  for (auto& w : outline) w = detail::random_wave(rng, 0.4, 0.9, 0.03);
  constexpr double core = 0.4;
  const double spacing = (1.0 - core) / (n_labels - 1);
  std::array<std::array<detail::Wave, 2>, 8> boundary_waves;
  for (int k = 0; k < n_labels; ++k)
    for (auto& w : boundary_waves[static_cast<std::size_t>(k)]) w = detail::random_wave(rng, 0.5, 1.2, 0.12 * spacing);
  std::array<detail::Wave, 3> texture;
  for (auto& w : texture) w = detail::random_wave(rng, 0.5, 1.5, 0.05);

  Volume3 image(dims);
  LabelVolume labels(dims);
  for (int x = 0; x < dims.h; ++x)
    for (int y = 0; y < dims.w; ++y)
      for (int z = 0; z < dims.l; ++z) {
        const std::array<double, 3> q{(x - centre[0]) / (0.5 * dims.h), (y - centre[1]) / (0.5 * dims.w),
                                      (z - centre[2]) / (0.5 * dims.l)};
        const std::array<double, 3> e{q[0] / axes[0], q[1] / axes[1], q[2] / axes[2]};
        const double rho = std::sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2]);
        std::array<double, 3> dir{1, 0, 0};
        if (rho > 0) dir = {e[0] / rho, e[1] / rho, e[2] / rho};
        double f = 1.0;
        for (const auto& w : outline) f += w(dir);
        const double r = rho / f;

        int label = 0;
        for (int k = 0; k < n_labels; ++k) {
          double b = 1.0 - k * spacing;
          for (const auto& w : boundary_waves[static_cast<std::size_t>(k)]) b += w(dir);
          if (r <= b) label = k + 1;
          else break;
        }
        double value = detail::kLabelIntensity[label];
        for (const auto& w : texture) value += w(q);
        labels(x, y, z) = static_cast<Label>(label);
        image(x, y, z) = value;
      }
  return {normalize(gaussian_blur(image, 0.75)), std::move(labels)};
}

/// Deterministic phantom; the age (and hence size) is drawn from the seed.
inline std::pair<Volume3, LabelVolume> make_phantom(std::uint64_t seed, Dims dims, int n_labels) {
  detail::NormalStream rng(seed ^ 0xA5A5A5A5DEADBEEFULL);
  const double age = kPhantomMinAge + (kPhantomMaxAge - kPhantomMinAge) * rng.uniform();
  return make_phantom_aged(seed, dims, n_labels, age);
}

}  // namespace casreg
