#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace casreg {

using Scalar = double;
using Label = std::uint16_t;

/// Errors raised on malformed or unreadable files.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a computation produces non-finite values.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Grid extent (H, W, L); L is the fastest-varying axis in memory.
struct Dims {
  int h = 0;
  int w = 0;
  int l = 0;

  constexpr std::size_t count() const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(l);
  }
  constexpr int operator[](int axis) const { return axis == 0 ? h : (axis == 1 ? w : l); }
  constexpr bool positive() const { return h > 0 && w > 0 && l > 0; }
  constexpr bool operator==(const Dims&) const = default;
};

inline std::string to_string(const Dims& d) {
  return std::to_string(d.h) + "x" + std::to_string(d.w) + "x" + std::to_string(d.l);
}

/// Dense 3D grid with row-major storage (x slowest, z fastest).
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  explicit Grid(Dims dims, T fill = T{}) : dims_(dims), data_(dims.count(), fill) {
    if (!dims.positive()) throw std::invalid_argument("grid dims must be positive, got " + to_string(dims));
  }
  Grid(Dims dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
    if (!dims.positive()) throw std::invalid_argument("grid dims must be positive, got " + to_string(dims));
    if (data_.size() != dims.count()) throw std::invalid_argument("grid data length does not match dims");
  }

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(x) * dims_.w + static_cast<std::size_t>(y)) * dims_.l + static_cast<std::size_t>(z);
  }
  T& operator()(int x, int y, int z) { return data_[index(x, y, z)]; }
  const T& operator()(int x, int y, int z) const { return data_[index(x, y, z)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  /// Physical voxel size in mm. Carried through I/O, never used in the math.
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  /// Raw NIfTI orientation block (qform/sform fields), preserved verbatim on round-trip.
  std::vector<std::uint8_t> orientation;

  bool operator==(const Grid& o) const { return dims_ == o.dims_ && data_ == o.data_; }

 private:
  Dims dims_{};
  std::vector<T> data_;
};

using Volume3 = Grid<Scalar>;
using LabelVolume = Grid<Label>;

/// Half-open voxel box [lo, hi).
struct BoundingBox {
  std::array<int, 3> lo{};
  std::array<int, 3> hi{};

  Dims extent() const { return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}; }
  bool operator==(const BoundingBox&) const = default;
};

template <typename A, typename B>
void require_same_dims(const Grid<A>& a, const Grid<B>& b, const std::string& what) {
  if (a.dims() != b.dims()) {
    throw std::invalid_argument(what + ": dims mismatch (" + to_string(a.dims()) + " vs " +
                                to_string(b.dims()) + ")");
  }
}

inline int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

}  // namespace casreg
