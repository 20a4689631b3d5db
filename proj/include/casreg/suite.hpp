#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "casreg/bank.hpp"
#include "casreg/evaluation.hpp"
#include "casreg/mas.hpp"
#include "casreg/parallel.hpp"
#include "casreg/registration.hpp"

namespace casreg {

/// One varied parameter and the values it takes.
struct ConfigGrid {
  std::string key;  // "lambda", "cascades" or "strategy"
  std::vector<std::string> values;
  RegistrationConfig base;
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v)) throw std::invalid_argument("bad " + what + " value '" + s + "'");
  return v;
}

inline int parse_int(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw std::invalid_argument("bad " + what + " value '" + s + "'");
  return v;
}

}  // namespace detail

inline Strategy parse_strategy(const std::string& s) {
  if (s == "accumulate") return Strategy::accumulate;
  if (s == "successive") return Strategy::successive;
  throw std::invalid_argument("unknown strategy '" + s + "' (expected accumulate or successive)");
}

/// Parses "lambda=1e-4,1,2", "cascades=1..5", "cascades=1,3,5" or "strategy=accumulate,successive".
inline ConfigGrid parse_grid(const std::string& text, const RegistrationConfig& base = {}) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("grid must look like key=v1,v2,...");
  ConfigGrid g;
  g.key = text.substr(0, eq);
  g.base = base;
  const std::string rhs = text.substr(eq + 1);
  if (g.key != "lambda" && g.key != "cascades" && g.key != "strategy")
    throw std::invalid_argument("unknown grid key '" + g.key + "' (expected lambda, cascades or strategy)");
  const auto range = rhs.find("..");
  if (range != std::string::npos) {
    if (g.key != "cascades") throw std::invalid_argument("ranges are only allowed for cascades");
    const int lo = detail::parse_int(rhs.substr(0, range), "cascades");
    const int hi = detail::parse_int(rhs.substr(range + 2), "cascades");
    if (lo > hi) throw std::invalid_argument("empty cascades range");
    for (int n = lo; n <= hi; ++n) g.values.push_back(std::to_string(n));
  } else {
    g.values = detail::split(rhs, ',');
  }
  if (g.values.empty()) throw std::invalid_argument("grid has no values");
  for (const auto& v : g.values) {
    if (g.key == "lambda" && detail::parse_double(v, "lambda") < 0) throw std::invalid_argument("lambda must be >= 0");
    if (g.key == "cascades" && detail::parse_int(v, "cascades") < 1) throw std::invalid_argument("cascades must be >= 1");
    if (g.key == "strategy") parse_strategy(v);
  }
  return g;
}

inline RegistrationConfig grid_config(const ConfigGrid& g, std::size_t i) {
  RegistrationConfig c = g.base;
  const std::string& v = g.values.at(i);
  if (g.key == "lambda") {
    c.lambda = detail::parse_double(v, "lambda");
  } else if (g.key == "cascades") {
    const int n = detail::parse_int(v, "cascades");
    c.n_cascades = n;
    c.scales = RegistrationConfig::default_scales(n);
  } else {
    c.strategy = parse_strategy(v);
  }
  return c;
}

inline std::string grid_config_id(const ConfigGrid& g, std::size_t i) { return g.key + "=" + g.values.at(i); }

/// Outcome of registering a target's source atlas onto it.
struct SuiteRow {
  std::string config_id;
  std::string target_id;
  DiceReport dice;
  double folding = 0;
  double seconds = 0;
};

/// Registers `source` onto `target` and scores the propagated labels against the target's.
inline SuiteRow evaluate_pair(const Atlas& source, const Atlas& target, const RegistrationConfig& cfg,
                              const std::vector<Label>& labels) {
  const auto t0 = std::chrono::steady_clock::now();
  const RegistrationResult r = cascade_register(source.image, target.image, cfg);
  SuiteRow row;
  row.target_id = target.id;
  row.dice = dice_report(propagate(source.labels, r), target.labels, labels);
  row.folding = r.jacobian.folding_fraction;
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

/// Foreground labels present in a label map, ascending.
inline std::vector<Label> present_labels(const LabelVolume& l) {
  std::vector<Label> out;
  for (Label v : label_set(l))
    if (v != 0) out.push_back(v);
  return out;
}

inline void write_suite_csv(const std::filesystem::path& path, const std::vector<SuiteRow>& rows) {
  detail::ensure_parent(path);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(10);
  out << "config_id,target_id,label,dice,folding,seconds\n";
  for (const auto& r : rows) {
    for (const auto& [label, d] : r.dice.per_label)
      out << r.config_id << ',' << r.target_id << ',' << label << ',' << d << ',' << r.folding << ',' << r.seconds << '\n';
    out << r.config_id << ',' << r.target_id << ",mean," << r.dice.mean << ',' << r.folding << ',' << r.seconds << '\n';
    out << r.config_id << ',' << r.target_id << ",se," << r.dice.standard_error << ',' << r.folding << ','
        << r.seconds << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

/// Runs every grid configuration on every target of the bank (source atlas registered onto the
/// target) and writes one CSV block per (config, target) in grid order.
inline std::vector<SuiteRow> experiment_suite(const std::filesystem::path& bank_dir, const ConfigGrid& grid,
                                              const std::filesystem::path& out_path) {
  if (grid.values.empty()) throw std::invalid_argument("experiment_suite: empty grid");
  const std::vector<Atlas> atlases = load_atlas_bank(bank_dir);
  const std::vector<Atlas> targets = load_bank_targets(bank_dir);
  if (targets.empty()) throw IoError("bank has no target entries (role=target): " + bank_dir.string());

  std::vector<SuiteRow> rows(grid.values.size() * targets.size());
  std::vector<RegistrationConfig> configs;
  for (std::size_t i = 0; i < grid.values.size(); ++i) {
    configs.push_back(grid_config(grid, i));
    configs.back().validate();
  }
  parallel_for(0, static_cast<std::ptrdiff_t>(rows.size()), [&](std::ptrdiff_t r) {
    const std::size_t ci = static_cast<std::size_t>(r) / targets.size();
    const Atlas& target = targets[static_cast<std::size_t>(r) % targets.size()];
    const Atlas& source = detail::find_atlas(atlases, target.meta.at("source"));
    SuiteRow row = evaluate_pair(source, target, configs[ci], present_labels(target.labels));
    row.config_id = grid_config_id(grid, ci);
    rows[static_cast<std::size_t>(r)] = std::move(row);
  });
  write_suite_csv(out_path, rows);
  return rows;
}

}  // namespace casreg
