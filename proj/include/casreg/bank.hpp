#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "casreg/core.hpp"
#include "casreg/deform.hpp"
#include "casreg/io.hpp"
#include "casreg/mas.hpp"
#include "casreg/phantom.hpp"
#include "casreg/volume.hpp"

// Atlas bank layout: <bank>/<id>/image.nii[.gz], <bank>/<id>/labels.nii[.gz] and an optional
// <bank>/<id>/meta.txt of key=value lines. Entries whose meta has role=target are registration
// targets rather than atlases; source=<id> names the atlas they were generated from.

namespace casreg {

using Meta = std::map<std::string, std::string>;

inline Meta read_meta(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Meta meta;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

inline void write_meta(const std::filesystem::path& path, const Meta& meta) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& [k, v] : meta) out << k << '=' << v << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

namespace detail {

inline std::filesystem::path find_volume_file(const std::filesystem::path& dir, const std::string& stem) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    const auto p = dir / (stem + ext);
    if (std::filesystem::is_regular_file(p)) return p;
  }
  throw IoError("missing " + stem + ".nii[.gz] in " + dir.string());
}

inline std::vector<std::filesystem::path> bank_entries(const std::filesystem::path& bank) {
  if (!std::filesystem::is_directory(bank)) throw IoError("atlas bank is not a directory: " + bank.string());
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(bank))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

inline Meta entry_meta(const std::filesystem::path& dir) {
  const auto p = dir / "meta.txt";
  return std::filesystem::exists(p) ? read_meta(p) : Meta{};
}

inline bool is_target(const Meta& m) {
  auto it = m.find("role");
  return it != m.end() && it->second == "target";
}

}  // namespace detail

/// Loads one bank entry; the image is rescaled to [0, 1].
inline Atlas load_atlas(const std::filesystem::path& dir) {
  Atlas a;
  a.id = dir.filename().string();
  a.image = normalize(load_volume(detail::find_volume_file(dir, "image")));
  a.labels = load_labels(detail::find_volume_file(dir, "labels"));
  require_same_dims(a.image, a.labels, "atlas " + a.id);
  a.meta = detail::entry_meta(dir);
  return a;
}

/// All atlases of a bank in id order; target entries are skipped.
inline std::vector<Atlas> load_atlas_bank(const std::filesystem::path& bank) {
  std::vector<Atlas> out;
  for (const auto& dir : detail::bank_entries(bank)) {
    if (detail::is_target(detail::entry_meta(dir))) continue;
    out.push_back(load_atlas(dir));
  }
  if (out.empty()) throw IoError("atlas bank holds no atlases: " + bank.string());
  return out;
}

/// Target entries of a bank in id order. Each must name its source atlas.
inline std::vector<Atlas> load_bank_targets(const std::filesystem::path& bank) {
  std::vector<Atlas> out;
  for (const auto& dir : detail::bank_entries(bank)) {
    const Meta m = detail::entry_meta(dir);
    if (!detail::is_target(m)) continue;
    if (!m.count("source")) throw IoError("target entry without source=<atlas id>: " + dir.string());
    out.push_back(load_atlas(dir));
  }
  return out;
}

inline void save_atlas(const std::filesystem::path& bank, const Atlas& atlas) {
  const auto dir = bank / atlas.id;
  std::filesystem::create_directories(dir);
  save_volume(atlas.image, dir / "image.nii.gz");
  save_labels(atlas.labels, dir / "labels.nii.gz");
  write_meta(dir / "meta.txt", atlas.meta);
}

inline std::string format_number(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

struct PhantomBankSpec {
  std::uint64_t seed = 0;
  Dims dims{64, 64, 64};
  int n_atlases = 10;
  int n_labels = 7;
  double amplitude = 6.0;
  double smoothness = 8.0;
};

struct PhantomBank {
  std::vector<Atlas> atlases;
  Atlas target;  // a bank member warped by `truth`
  DisplacementField truth;
};

inline std::string atlas_name(int j) {
  std::string n = std::to_string(j);
  return "atlas" + std::string(n.size() < 2 ? 2 - n.size() : 0, '0') + n;
}

/// Atlases with ages spread over the phantom age range, plus one target made by warping a
/// seed-chosen atlas through a random smooth field.
inline PhantomBank make_phantom_bank(const PhantomBankSpec& spec) {
  if (spec.n_atlases < 1) throw std::invalid_argument("phantom bank needs at least one atlas");
  detail::NormalStream rng(spec.seed * 0x9E3779B97F4A7C15ULL + 17);
  PhantomBank bank;
  for (int j = 0; j < spec.n_atlases; ++j) {
    const double age = kPhantomMinAge + (kPhantomMaxAge - kPhantomMinAge) * rng.uniform();
    auto [image, labels] = make_phantom_aged(spec.seed * 1000 + static_cast<std::uint64_t>(j), spec.dims,
                                             spec.n_labels, age);
    bank.atlases.push_back({atlas_name(j), std::move(image), std::move(labels), {{"age", format_number(age)}}});
  }
  const auto src = static_cast<std::size_t>(rng.uniform() * spec.n_atlases) % bank.atlases.size();
  const Atlas& source = bank.atlases[src];
  bank.truth = random_smooth_field(spec.seed * 7919 + 5, spec.dims, spec.amplitude, spec.smoothness);
  bank.target.id = "target";
  bank.target.image = warp_scalar(source.image, bank.truth);
  bank.target.labels = warp_labels(source.labels, bank.truth);
  bank.target.meta = {{"role", "target"}, {"source", source.id}, {"age", source.meta.at("age")}};
  return bank;
}

/// Writes a phantom bank: one directory per atlas, plus target/ holding the target and its
/// ground-truth field (field.f32 with sidecar).
inline void write_phantom_bank(const std::filesystem::path& out, const PhantomBank& bank) {
  std::filesystem::create_directories(out);
  for (const auto& a : bank.atlases) save_atlas(out, a);
  save_atlas(out, bank.target);
  save_field(bank.truth, out / bank.target.id / "field.f32");
}

}  // namespace casreg
