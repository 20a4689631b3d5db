#pragma once

#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "casreg/core.hpp"

namespace casreg {

/// Dice overlap of one label; 1.0 when the label is absent from both volumes.
inline double dice(const LabelVolume& a, const LabelVolume& b, Label label) {
  require_same_dims(a, b, "dice");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool in_a = a[i] == label, in_b = b[i] == label;
    na += in_a;
    nb += in_b;
    both += in_a && in_b;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

/// Arithmetic mean with the standard error of the mean (sample std / sqrt(n)).
struct MeanSe {
  double mean = 0;
  double standard_error = 0;
  std::size_t n = 0;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
  MeanSe r;
  r.n = xs.size();
  if (xs.empty()) return r;
  r.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.standard_error = std::sqrt(ss / static_cast<double>(xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
  }
  return r;
}

struct DiceReport {
  std::map<Label, double> per_label;
  double mean = 0;
  double standard_error = 0;
  std::size_t n = 0;
};

inline DiceReport dice_report(const LabelVolume& a, const LabelVolume& b, const std::vector<Label>& labels) {
  require_same_dims(a, b, "dice_report");
  if (labels.empty()) throw std::invalid_argument("dice_report: empty label list");
  DiceReport r;
  std::vector<double> values;
  for (Label l : labels) {
    const double d = dice(a, b, l);
    r.per_label[l] = d;
    values.push_back(d);
  }
  const MeanSe s = mean_se(values);
  r.mean = s.mean;
  r.standard_error = s.standard_error;
  r.n = s.n;
  return r;
}

/// Foreground labels 1..n.
inline std::vector<Label> foreground_labels(int n) {
  std::vector<Label> out;
  for (int l = 1; l <= n; ++l) out.push_back(static_cast<Label>(l));
  return out;
}

}  // namespace casreg
