// Multi-atlas segmentation of a synthetic target with majority voting and local weighted voting.
//
//   sample_segment_phantom [size] [atlases] [k]

#include <cstdio>
#include <cstdlib>

#include "casreg/casreg.hpp"

int main(int argc, char** argv) {
  using namespace casreg;
  PhantomBankSpec spec;
  const int n = argc > 1 ? std::atoi(argv[1]) : 32;
  spec.dims = {n, n, n};
  spec.n_atlases = argc > 2 ? std::atoi(argv[2]) : 6;
  spec.amplitude = 0.09 * n;
  spec.smoothness = n / 8.0;
  const int k = argc > 3 ? std::atoi(argv[3]) : 3;

  PhantomBank bank = make_phantom_bank(spec);
  // Leave the target's source atlas out so the segmentation has to come from other subjects.
  std::erase_if(bank.atlases, [&](const Atlas& a) { return a.id == bank.target.meta.at("source"); });

  const RegistrationConfig reg;
  const auto alignments = register_atlases(bank.target.image, bank.atlases, reg);
  const auto selected = select_atlases(alignments, k);
  const auto labels = foreground_labels(spec.n_labels);

  std::printf("atlas     ncc     selected\n");
  for (const auto& a : alignments) {
    bool sel = false;
    for (const auto& s : selected) sel = sel || s.atlas_id == a.atlas_id;
    std::printf("%-8s  %.4f  %s\n", a.atlas_id.c_str(), a.score, sel ? "yes" : "");
  }
  for (FusionMethod m : {FusionMethod::majority, FusionMethod::lwv}) {
    FusionConfig fusion;
    fusion.method = m;
    const LabelVolume seg = fuse_selected(selected, bank.atlases, bank.target.image, fusion);
    const DiceReport d = dice_report(seg, bank.target.labels, labels);
    std::printf("%-8s  dice %.4f +- %.4f\n", to_string(m), d.mean, d.standard_error);
  }
  return 0;
}
