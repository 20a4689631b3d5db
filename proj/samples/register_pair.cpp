// Registers a phantom onto a smoothly deformed copy of itself and reports how well the
// labels line up before and after.
//
//   sample_register_pair [size] [cascades]

#include <cstdio>
#include <cstdlib>

#include "casreg/casreg.hpp"

int main(int argc, char** argv) {
  using namespace casreg;
  const int n = argc > 1 ? std::atoi(argv[1]) : 48;
  const int cascades = argc > 2 ? std::atoi(argv[2]) : 5;

  auto [atlas, atlas_labels] = make_phantom(1, {n, n, n}, 7);
  const DisplacementField truth = random_smooth_field(2, atlas.dims(), 0.09 * n, n / 8.0);
  const Volume3 target = normalize(warp_scalar(atlas, truth));
  const LabelVolume target_labels = warp_labels(atlas_labels, truth);
  const auto labels = foreground_labels(7);

  const RegistrationResult r = cascade_register(atlas, target, RegistrationConfig::with_cascades(cascades));

  std::printf("dice before  %.4f\n", dice_report(atlas_labels, target_labels, labels).mean);
  std::printf("dice after   %.4f\n", dice_report(propagate(atlas_labels, r), target_labels, labels).mean);
  std::printf("local ncc    %.4f -> %.4f\n", local_ncc(target, atlas), local_ncc(target, r.warped));
  std::printf("folding      %.5f\n", r.jacobian.folding_fraction);
  for (std::size_t s = 0; s < r.stage_fields.size(); ++s)
    std::printf("stage %zu      max |u| %.3f, mean |grad u| %.4f\n", s, max_norm(r.stage_fields[s]),
                mean_gradient_magnitude(r.stage_fields[s]));
  return 0;
}
