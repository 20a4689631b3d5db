#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "test_util.hpp"

using namespace casreg;
using casreg::testing::random_labels;
using casreg::testing::random_volume;

TEST(Normalize, HandComputedRamp) {
  Volume3 v({4, 1, 1}, std::vector<double>{2, 4, 6, 8});
  const Volume3 n = normalize(v);
  EXPECT_DOUBLE_EQ(n[0], 0.0);
  EXPECT_NEAR(n[1], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(n[2], 2.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(n[3], 1.0);
}

TEST(Normalize, ConstantVolumeMapsToZero) {
  const Volume3 n = normalize(Volume3({3, 3, 3}, 5.0));
  for (double x : n.data()) EXPECT_EQ(x, 0.0);
}

TEST(Normalize, UnitRangeDataIsUnchanged) {
  Volume3 v = random_volume({5, 4, 3}, 1);
  v[0] = 0.0;
  v[1] = 1.0;
  EXPECT_EQ(normalize(v).data(), v.data());
}

TEST(Normalize, IdempotentAndOrderPreserving) {
  const Volume3 v = random_volume({6, 5, 4}, 2, -3.0, 7.0);
  const Volume3 once = normalize(v);
  const Volume3 twice = normalize(once);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(once[i], twice[i], 1e-15);
  auto order = [](const Volume3& x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    return idx;
  };
  EXPECT_EQ(order(v), order(once));
  auto [lo, hi] = value_range(once);
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
}

TEST(Resize, IdentityDimsIsExact) {
  const Volume3 v = random_volume({5, 6, 7}, 3);
  EXPECT_EQ(resize(v, v.dims(), Interp::trilinear).data(), v.data());
  EXPECT_EQ(resize(v, v.dims(), Interp::nearest).data(), v.data());
}

TEST(Resize, ConstantStaysConstant) {
  const Volume3 v({4, 4, 4}, 0.37);
  for (Dims d : {Dims{7, 3, 9}, Dims{1, 2, 2}, Dims{11, 11, 11}}) {
    const Volume3 r = resize(v, d, Interp::trilinear);
    ASSERT_EQ(r.dims(), d);
    for (double x : r.data()) EXPECT_NEAR(x, 0.37, 1e-15);
  }
}

TEST(Resize, UpsampleTwoToThreeHasHalfwayCentreSlice) {
  // x = 0 plane is 0, x = 1 plane is 1; output x = 1 samples input x = 0.5.
  const Volume3 v({2, 2, 2}, std::vector<double>{0, 0, 0, 0, 1, 1, 1, 1});
  const Volume3 r = resize(v, {3, 3, 3}, Interp::trilinear);
  for (int y = 0; y < 3; ++y)
    for (int z = 0; z < 3; ++z) {
      EXPECT_DOUBLE_EQ(r(1, y, z), 0.5);
      EXPECT_DOUBLE_EQ(r(0, y, z), 0.0);
      EXPECT_DOUBLE_EQ(r(2, y, z), 1.0);
    }
}

TEST(Resize, TrilinearStaysWithinInputRange) {
  const Volume3 v = random_volume({6, 5, 7}, 4, -2.0, 3.0);
  auto [lo, hi] = value_range(v);
  const Volume3 r = resize(v, {13, 4, 9}, Interp::trilinear);
  auto [rlo, rhi] = value_range(r);
  EXPECT_GE(rlo, lo);
  EXPECT_LE(rhi, hi);
}

TEST(Resize, NearestLabelsIntroduceNoNewLabels) {
  const LabelVolume l = random_labels({7, 6, 5}, 5, 4);
  const LabelVolume r = resize(l, {11, 3, 8}, Interp::nearest);
  const auto in = label_set(l);
  for (Label x : label_set(r)) EXPECT_TRUE(in.count(x));
}

TEST(Resize, SingleVoxelAxisSamplesMidpoint) {
  Volume3 v({3, 1, 1}, std::vector<double>{0, 4, 8});
  EXPECT_DOUBLE_EQ(resize(v, {1, 1, 1}, Interp::trilinear)[0], 4.0);
}

TEST(CropToForeground, SingleBrightVoxel) {
  Volume3 v({8, 8, 8});
  v(3, 3, 3) = 1.0;
  auto [crop, box] = crop_to_foreground(v, 0.5, 1);
  EXPECT_EQ(box.lo, (std::array<int, 3>{2, 2, 2}));
  EXPECT_EQ(box.hi, (std::array<int, 3>{5, 5, 5}));
  EXPECT_EQ(crop.dims(), (Dims{3, 3, 3}));
  EXPECT_EQ(crop(1, 1, 1), 1.0);
}

TEST(CropToForeground, AllForegroundIsIdentity) {
  const Volume3 v = random_volume({5, 4, 6}, 6, 0.5, 1.0);
  auto [crop, box] = crop_to_foreground(v, 0.1, 0);
  EXPECT_EQ(box.lo, (std::array<int, 3>{0, 0, 0}));
  EXPECT_EQ(box.hi, (std::array<int, 3>{5, 4, 6}));
  EXPECT_EQ(crop.data(), v.data());
}

TEST(CropToForeground, AllBackgroundThrows) {
  EXPECT_THROW(crop_to_foreground(Volume3({4, 4, 4}), 0.5, 0), std::invalid_argument);
}

TEST(CropToForeground, MarginIsClippedToVolume) {
  Volume3 v({6, 6, 6});
  v(0, 5, 2) = 1.0;
  auto [crop, box] = crop_to_foreground(v, 0.5, 3);
  EXPECT_EQ(box.lo, (std::array<int, 3>{0, 2, 0}));
  EXPECT_EQ(box.hi, (std::array<int, 3>{4, 6, 6}));
}

TEST(CropToForeground, EmbedRestoresForeground) {
  Volume3 v = random_volume({10, 9, 8}, 7);
  for (auto& x : v.data()) x = x > 0.8 ? x : 0.0;
  for (int x = 0; x < 10; ++x)
    for (int y = 0; y < 9; ++y) v(x, y, 0) = 0.0;
  auto [crop, box] = crop_to_foreground(v, 0.01, 0);
  const Volume3 back = embed(crop, box, v.dims());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] >= 0.01) {
      EXPECT_EQ(back[i], v[i]);
    }
  }
}

TEST(GaussianBlur, PreservesConstantsAndMass) {
  const Volume3 c({9, 8, 7}, 2.5);
  for (double x : gaussian_blur(c, 1.3).data()) EXPECT_NEAR(x, 2.5, 1e-12);
  Volume3 spike({21, 21, 21});
  spike(10, 10, 10) = 1.0;
  const Volume3 b = gaussian_blur(spike, 1.0);
  EXPECT_NEAR(std::accumulate(b.data().begin(), b.data().end(), 0.0), 1.0, 1e-12);
  EXPECT_NEAR(b(9, 10, 10), b(11, 10, 10), 1e-15);
  EXPECT_NEAR(b(10, 9, 10), b(10, 10, 11), 1e-15);
}

TEST(Phantom, DeterministicBySeed) {
  auto [a1, l1] = make_phantom(3, {24, 24, 24}, 4);
  auto [a2, l2] = make_phantom(3, {24, 24, 24}, 4);
  EXPECT_EQ(a1.data(), a2.data());
  EXPECT_EQ(l1.data(), l2.data());
}

TEST(Phantom, SeedsDiffer) {
  auto [a1, l1] = make_phantom(1, {24, 24, 24}, 4);
  auto [a2, l2] = make_phantom(2, {24, 24, 24}, 4);
  EXPECT_NE(l1.data(), l2.data());
}

TEST(Phantom, FourLabelsEachOccupyHalfPercent) {
  auto [img, lab] = make_phantom(0, {64, 64, 64}, 4);
  EXPECT_EQ(label_set(lab), (std::set<Label>{0, 1, 2, 3, 4}));
  std::vector<std::size_t> count(5, 0);
  for (Label l : lab.data()) ++count[l];
  for (std::size_t l = 0; l < 5; ++l) EXPECT_GE(static_cast<double>(count[l]) / lab.size(), 0.005) << "label " << l;
  auto [lo, hi] = value_range(img);
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
}

TEST(Phantom, SevenLabelsAcrossSeedsAndSizes) {
  for (std::uint64_t seed : {0u, 5u, 11u}) {
    for (int n : {32, 64}) {
      auto [img, lab] = make_phantom(seed, {n, n, n}, 7);
      std::vector<std::size_t> count(8, 0);
      for (Label l : lab.data()) ++count[l];
      for (std::size_t l = 0; l < 8; ++l)
        EXPECT_GE(static_cast<double>(count[l]) / lab.size(), 0.005) << "seed " << seed << " dims " << n << " label " << l;
    }
  }
}

TEST(Phantom, RejectsBadArguments) {
  EXPECT_THROW(make_phantom(0, {15, 32, 32}, 4), std::invalid_argument);
  EXPECT_THROW(make_phantom(0, {32, 32, 32}, 1), std::invalid_argument);
  EXPECT_THROW(make_phantom(0, {32, 32, 32}, 9), std::invalid_argument);
}

TEST(Phantom, OlderPhantomsAreLarger) {
  auto count_fg = [](const LabelVolume& l) { return std::count_if(l.data().begin(), l.data().end(), [](Label v) { return v > 0; }); };
  auto [a, young] = make_phantom_aged(4, {32, 32, 32}, 4, 20.0);
  auto [b, old] = make_phantom_aged(4, {32, 32, 32}, 4, 35.0);
  EXPECT_GT(count_fg(old), count_fg(young));
}
