#pragma once

#include <cmath>

#include "casreg/deform.hpp"

namespace casreg {

struct AdamParams {
  double learning_rate = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-component Adam state for a displacement field.
class AdamState {
 public:
  AdamState(Dims dims, AdamParams params) : params_(params), m_(dims), v_(dims) {}

  void step(DisplacementField& x, const DisplacementField& grad) {
    ++t_;
    const double b1 = params_.beta1, b2 = params_.beta2;
    const double c1 = 1.0 - std::pow(b1, t_);
    const double c2 = 1.0 - std::pow(b2, t_);
    const double lr = params_.learning_rate;
    for (int c = 0; c < 3; ++c) {
      auto& xs = x.comp[c].data();
      const auto& gs = grad.comp[c].data();
      auto& ms = m_.comp[c].data();
      auto& vs = v_.comp[c].data();
      for (std::size_t i = 0; i < xs.size(); ++i) {
        ms[i] = b1 * ms[i] + (1 - b1) * gs[i];
        vs[i] = b2 * vs[i] + (1 - b2) * gs[i] * gs[i];
        xs[i] -= lr * (ms[i] / c1) / (std::sqrt(vs[i] / c2) + params_.epsilon);
      }
    }
  }

  int iterations() const { return t_; }

 private:
  AdamParams params_;
  DisplacementField m_;
  DisplacementField v_;
  int t_ = 0;
};

}  // namespace casreg
