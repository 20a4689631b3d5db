#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "casreg/core.hpp"
#include "casreg/deform.hpp"
#include "casreg/parallel.hpp"
#include "casreg/registration.hpp"
#include "casreg/similarity.hpp"

namespace casreg {

struct Atlas {
  std::string id;
  Volume3 image;
  LabelVolume labels;
  std::map<std::string, std::string> meta;
};

struct AtlasAlignment {
  std::string atlas_id;
  DisplacementField field;  // accumulated transform
  Volume3 warped_image;
  double score = 0;  // global NCC between warped_image and the target
  Strategy strategy = Strategy::accumulate;
  std::vector<DisplacementField> stage_fields;  // kept only for successive warping
  std::optional<RigidTransform> rigid;
  double folding_fraction = 0;
  double seconds = 0;
};

struct AtlasFailure {
  std::string atlas_id;
  std::string message;
};

/// Every atlas registration in a batch failed.
struct AllRegistrationsFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class FusionMethod { majority, lwv };

struct FusionConfig {
  FusionMethod method = FusionMethod::lwv;
  int patch_size = 5;
  double gain = 2.0;
  double epsilon = 1e-6;

  void validate() const {
    if (patch_size < 1 || patch_size % 2 == 0) throw std::invalid_argument("patch size must be odd and >= 1");
    if (!(gain >= 0)) throw std::invalid_argument("gain must be >= 0");
    if (!(epsilon > 0)) throw std::invalid_argument("epsilon must be > 0");
  }
};

inline const char* to_string(FusionMethod m) { return m == FusionMethod::majority ? "majority" : "lwv"; }

/// Registers every atlas (moving) onto the target (fixed). Atlases whose registration throws are
/// reported in `failures` and left out; the result keeps the input order of the rest.
inline std::vector<AtlasAlignment> register_atlases(const Volume3& target, const std::vector<Atlas>& atlases,
                                                    const RegistrationConfig& cfg,
                                                    std::vector<AtlasFailure>* failures = nullptr) {
  if (atlases.empty()) throw std::invalid_argument("register_atlases: empty atlas list");
  for (const auto& a : atlases) {
    require_same_dims(a.image, a.labels, "atlas " + a.id);
    require_same_dims(a.image, target, "atlas " + a.id + " vs target");
  }
  cfg.validate();

  std::vector<std::optional<AtlasAlignment>> slots(atlases.size());
  std::vector<std::string> errors(atlases.size());
  parallel_for(0, static_cast<std::ptrdiff_t>(atlases.size()), [&](std::ptrdiff_t k) {
    const Atlas& atlas = atlases[static_cast<std::size_t>(k)];
    try {
      const auto t0 = std::chrono::steady_clock::now();
      RegistrationResult r = cascade_register(atlas.image, target, cfg);
      AtlasAlignment a;
      a.atlas_id = atlas.id;
      a.score = global_ncc(r.warped, target);
      a.strategy = r.strategy;
      if (r.strategy == Strategy::successive) a.stage_fields = std::move(r.stage_fields);
      a.rigid = r.rigid;
      a.folding_fraction = r.jacobian.folding_fraction;
      a.field = std::move(r.total_field);
      a.warped_image = std::move(r.warped);
      a.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      slots[static_cast<std::size_t>(k)] = std::move(a);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(k)] = e.what();
    }
  });

  std::vector<AtlasAlignment> out;
  for (std::size_t k = 0; k < atlases.size(); ++k) {
    if (slots[k]) {
      out.push_back(std::move(*slots[k]));
    } else if (failures) {
      failures->push_back({atlases[k].id, errors[k]});
    }
  }
  if (out.empty()) throw AllRegistrationsFailed("every atlas registration failed");
  return out;
}

/// The min(k, n) best-scoring alignments, sorted by descending score; equal scores are ordered
/// by atlas id.
inline std::vector<AtlasAlignment> select_atlases(const std::vector<AtlasAlignment>& alignments, int k) {
  if (alignments.empty()) throw std::invalid_argument("select_atlases: empty alignment list");
  if (k < 1) throw std::invalid_argument("select_atlases: k must be >= 1");
  std::vector<const AtlasAlignment*> order;
  for (const auto& a : alignments) order.push_back(&a);
  std::stable_sort(order.begin(), order.end(), [](const AtlasAlignment* a, const AtlasAlignment* b) {
    if (a->score != b->score) return a->score > b->score;
    return a->atlas_id < b->atlas_id;
  });
  order.resize(std::min(order.size(), static_cast<std::size_t>(k)));
  std::vector<AtlasAlignment> out;
  for (const auto* a : order) out.push_back(*a);
  return out;
}

/// Carries the atlas labels through the alignment's transform with nearest-neighbour sampling.
inline LabelVolume propagate_labels(const AtlasAlignment& alignment, const Atlas& atlas) {
  if (alignment.atlas_id != atlas.id)
    throw std::invalid_argument("propagate_labels: alignment is for atlas '" + alignment.atlas_id + "', got '" +
                                atlas.id + "'");
  if (alignment.strategy == Strategy::accumulate || alignment.stage_fields.empty())
    return warp_labels(atlas.labels, alignment.field);
  LabelVolume out = alignment.rigid ? apply_rigid(atlas.labels, *alignment.rigid) : atlas.labels;
  for (const auto& f : alignment.stage_fields) out = warp_labels(out, f);
  return out;
}

namespace detail {

inline void require_fusion_inputs(const std::vector<LabelVolume>& propagated, const char* what) {
  if (propagated.empty()) throw std::invalid_argument(std::string(what) + ": empty input list");
  for (const auto& p : propagated) require_same_dims(p, propagated.front(), what);
}

/// Per-voxel weighted vote; weight(k, i) gives atlas k's weight at voxel i.
/// Ties go to the smallest label.
template <typename Weight>
LabelVolume weighted_vote(const std::vector<LabelVolume>& propagated, Weight&& weight) {
  const Dims d = propagated.front().dims();
  LabelVolume out(d);
  out.spacing = propagated.front().spacing;
  out.orientation = propagated.front().orientation;
  const std::size_t slice = static_cast<std::size_t>(d.w) * d.l;
  parallel_for(0, d.h, [&](std::ptrdiff_t x) {
    std::vector<std::pair<Label, double>> votes;
    for (std::size_t i = static_cast<std::size_t>(x) * slice, e = i + slice; i < e; ++i) {
      votes.clear();
      for (std::size_t k = 0; k < propagated.size(); ++k) {
        const Label l = propagated[k][i];
        const double w = weight(k, i);
        auto it = std::find_if(votes.begin(), votes.end(), [l](const auto& v) { return v.first == l; });
        if (it == votes.end()) votes.emplace_back(l, w);
        else it->second += w;
      }
      auto best = votes.front();
      for (const auto& v : votes)
        if (v.second > best.second || (v.second == best.second && v.first < best.first)) best = v;
      out[i] = best.first;
    }
  });
  return out;
}

}  // namespace detail

/// Per-voxel most frequent label; ties go to the smallest label.
inline LabelVolume fuse_majority(const std::vector<LabelVolume>& propagated) {
  detail::require_fusion_inputs(propagated, "fuse_majority");
  return detail::weighted_vote(propagated, [](std::size_t, std::size_t) { return 1.0; });
}

/// LWV weights |m|^g with m the local Pearson correlation between a warped atlas and the target
/// over a patch^3 window. Flat windows get epsilon; g = 0 gives unit weights everywhere.
inline Volume3 lwv_weights(const Volume3& warped, const Volume3& target, const FusionConfig& cfg) {
  Volume3 w(target.dims(), 1.0);
  if (cfg.gain == 0) return w;
  const LocalCorrelation lc = local_correlation(warped, target, cfg.patch_size);
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = lc.flat[i] ? cfg.epsilon : std::max(std::pow(std::abs(lc.r[i]), cfg.gain), cfg.epsilon);
  return w;
}

inline LabelVolume fuse_lwv(const std::vector<LabelVolume>& propagated, const std::vector<Volume3>& warped,
                            const Volume3& target, const FusionConfig& cfg) {
  detail::require_fusion_inputs(propagated, "fuse_lwv");
  if (warped.size() != propagated.size()) throw std::invalid_argument("fuse_lwv: label and image counts differ");
  cfg.validate();
  std::vector<Volume3> weights;
  for (std::size_t k = 0; k < warped.size(); ++k) {
    require_same_dims(warped[k], target, "fuse_lwv");
    require_same_dims(propagated[k], target, "fuse_lwv");
    weights.push_back(lwv_weights(warped[k], target, cfg));
  }
  return detail::weighted_vote(propagated, [&](std::size_t k, std::size_t i) { return weights[k][i]; });
}

struct AtlasReportRow {
  std::string atlas_id;
  double score = 0;
  bool selected = false;
  bool failed = false;
  std::string message;
  double folding_fraction = 0;
  double seconds = 0;
};

struct SegmentationReport {
  std::vector<AtlasReportRow> atlases;  // input order
  int k_requested = 0;
  int k_used = 0;
  FusionConfig fusion;
  std::vector<std::string> warnings;
  double seconds = 0;
};

struct Segmentation {
  LabelVolume labels;
  SegmentationReport report;
};

namespace detail {

inline const Atlas& find_atlas(const std::vector<Atlas>& atlases, const std::string& id) {
  auto it = std::find_if(atlases.begin(), atlases.end(), [&](const Atlas& a) { return a.id == id; });
  if (it == atlases.end()) throw std::invalid_argument("unknown atlas id '" + id + "'");
  return *it;
}

}  // namespace detail

/// Propagates the selected atlases and fuses them with the configured method.
inline LabelVolume fuse_selected(const std::vector<AtlasAlignment>& selected, const std::vector<Atlas>& atlases,
                                 const Volume3& target, const FusionConfig& fusion) {
  std::vector<LabelVolume> propagated;
  std::vector<Volume3> warped;
  for (const auto& a : selected) {
    propagated.push_back(propagate_labels(a, detail::find_atlas(atlases, a.atlas_id)));
    warped.push_back(a.warped_image);
  }
  return fusion.method == FusionMethod::majority ? fuse_majority(propagated)
                                                 : fuse_lwv(propagated, warped, target, fusion);
}

/// Register, select the k best by global NCC, propagate and fuse.
inline Segmentation segment(const Volume3& target, const std::vector<Atlas>& atlases, const RegistrationConfig& reg,
                            int k, const FusionConfig& fusion) {
  if (atlases.empty()) throw std::invalid_argument("segment: empty atlas list");
  if (k < 1) throw std::invalid_argument("segment: k must be >= 1");
  fusion.validate();
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<AtlasFailure> failures;
  const std::vector<AtlasAlignment> alignments = register_atlases(target, atlases, reg, &failures);
  const std::vector<AtlasAlignment> selected = select_atlases(alignments, k);

  Segmentation out;
  out.labels = fuse_selected(selected, atlases, target, fusion);

  SegmentationReport& rep = out.report;
  rep.k_requested = k;
  rep.k_used = static_cast<int>(selected.size());
  rep.fusion = fusion;
  if (k > static_cast<int>(alignments.size()))
    rep.warnings.push_back("k=" + std::to_string(k) + " exceeds the " + std::to_string(alignments.size()) +
                           " available atlases; using all of them");
  for (const auto& atlas : atlases) {
    AtlasReportRow row;
    row.atlas_id = atlas.id;
    auto a = std::find_if(alignments.begin(), alignments.end(), [&](const auto& x) { return x.atlas_id == atlas.id; });
    if (a == alignments.end()) {
      row.failed = true;
      for (const auto& f : failures)
        if (f.atlas_id == atlas.id) row.message = f.message;
    } else {
      row.score = a->score;
      row.folding_fraction = a->folding_fraction;
      row.seconds = a->seconds;
      row.selected = std::any_of(selected.begin(), selected.end(), [&](const auto& s) { return s.atlas_id == atlas.id; });
    }
    rep.atlases.push_back(std::move(row));
  }
  for (const auto& f : failures) rep.warnings.push_back("registration of atlas '" + f.atlas_id + "' failed: " + f.message);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace casreg
