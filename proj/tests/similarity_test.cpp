#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"

using namespace casreg;
using casreg::testing::random_field;
using casreg::testing::random_volume;
using casreg::testing::smooth_volume;

namespace {

long double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  long double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  long double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

/// Field whose sample coordinates stay strictly inside interpolation cells, so that small
/// finite-difference steps never cross a cell boundary.
DisplacementField off_lattice_field(Dims d, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> frac(0.2, 0.8);
  std::uniform_int_distribution<int> whole(-1, 1);
  DisplacementField f(d);
  for (int c = 0; c < 3; ++c)
    for (int x = 0; x < d.h; ++x)
      for (int y = 0; y < d.w; ++y)
        for (int z = 0; z < d.l; ++z) {
          const int p = c == 0 ? x : (c == 1 ? y : z);
          const int n = d[c];
          int k = whole(rng);
          if (p + k < 0 || p + k + 1 > n - 1) k = 0;
          f.comp[c](x, y, z) = k + frac(rng);
        }
  return f;
}

double loss_at(const Volume3& fx, const Volume3& mv, const DisplacementField& f, double lambda, int window) {
  return total_loss(fx, warp_scalar(mv, f), f, lambda, window).total;
}

}  // namespace

TEST(GlobalNcc, SelfAndAntiCorrelation) {
  const Volume3 a = random_volume({6, 5, 4}, 1);
  EXPECT_NEAR(global_ncc(a, a), 1.0, 1e-15);
  Volume3 b = a;
  for (auto& x : b.data()) x = -x + 3;
  EXPECT_NEAR(global_ncc(a, b), -1.0, 1e-15);
}

TEST(GlobalNcc, MatchesDirectPearson) {
  const Volume3 a({4, 1, 1}, std::vector<double>{0, 1, 2, 3});
  const Volume3 b({4, 1, 1}, std::vector<double>{0, 1, 2, 100});
  EXPECT_NEAR(global_ncc(a, b), static_cast<double>(pearson(a.data(), b.data())), 1e-14);
}

TEST(GlobalNcc, AffineInvarianceProperty) {
  const Volume3 a = random_volume({5, 5, 5}, 2);
  for (double alpha : {0.3, 7.0, -0.5, -4.0}) {
    Volume3 b = a;
    for (auto& x : b.data()) x = alpha * x + 1.7;
    EXPECT_NEAR(global_ncc(a, b), alpha > 0 ? 1.0 : -1.0, 1e-12);
  }
}

TEST(GlobalNcc, ConstantInputThrows) {
  EXPECT_THROW(global_ncc(Volume3({3, 3, 3}, 1.0), random_volume({3, 3, 3}, 3)), std::invalid_argument);
}

TEST(BoxSum, MatchesBruteForceAndAdjoint) {
  const Volume3 v = random_volume({7, 6, 9}, 4);
  const Dims d = v.dims();
  const int w = 5, r = 2;
  const Volume3 s = detail::box_sum(v, w);
  for (int x = 0; x < d.h; ++x)
    for (int y = 0; y < d.w; ++y)
      for (int z = 0; z < d.l; ++z) {
        double ref = 0;
        for (int i = -r; i <= r; ++i)
          for (int j = -r; j <= r; ++j)
            for (int k = -r; k <= r; ++k) ref += v(clamp_index(x + i, d.h), clamp_index(y + j, d.w), clamp_index(z + k, d.l));
        EXPECT_NEAR(s(x, y, z), ref, 1e-12);
      }
  const Volume3 u = random_volume(d, 5);
  const Volume3 adj = detail::box_sum_adjoint(u, w);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    lhs += s[i] * u[i];
    rhs += v[i] * adj[i];
  }
  EXPECT_NEAR(lhs, rhs, 1e-9);
}

TEST(LocalNcc, SelfSimilarityIsOne) {
  const Volume3 a = smooth_volume({16, 16, 16});
  EXPECT_NEAR(local_ncc(a, a, 9), 1.0, 1e-12);
  const Volume3 r = random_volume({10, 10, 10}, 6);
  EXPECT_DOUBLE_EQ(local_ncc(r, r, 3), 1.0);
}

TEST(LocalNcc, AffineInvariantAndSymmetric) {
  const Volume3 a = smooth_volume({14, 13, 12});
  const Volume3 c = random_volume({14, 13, 12}, 7);
  Volume3 b = a;
  for (auto& x : b.data()) x = 2 * x + 1;
  EXPECT_NEAR(local_ncc(a, b, 9), local_ncc(a, a, 9), 1e-9);
  EXPECT_NEAR(local_ncc(a, c, 5), local_ncc(c, a, 5), 1e-14);
}

TEST(LocalNcc, IndependentNoiseIsUncorrelated) {
  for (std::uint32_t seed = 0; seed < 5; ++seed) {
    const double v = local_ncc(random_volume({32, 32, 32}, 100 + seed), random_volume({32, 32, 32}, 200 + seed), 9);
    EXPECT_LT(v, 0.2);
    EXPECT_GE(v, 0.0);
  }
}

TEST(LocalNcc, FlatWindowsContributeZero) {
  EXPECT_EQ(local_ncc(Volume3({8, 8, 8}, 0.5), Volume3({8, 8, 8}, 0.5), 3), 0.0);
}

TEST(LocalNcc, RejectsEvenWindow) {
  const Volume3 a = smooth_volume({6, 6, 6});
  EXPECT_THROW(local_ncc(a, a, 4), std::invalid_argument);
  EXPECT_THROW(local_ncc(a, a, 1), std::invalid_argument);
}

TEST(LocalCorrelation, MatchesBruteForcePearson) {
  const Volume3 a = random_volume({7, 7, 7}, 8), b = random_volume({7, 7, 7}, 9);
  const LocalCorrelation lc = local_correlation(a, b, 3);
  for (int x : {0, 3, 6})
    for (int y : {0, 2, 6})
      for (int z : {1, 6}) {
        std::vector<double> wa, wb;
        for (int i = -1; i <= 1; ++i)
          for (int j = -1; j <= 1; ++j)
            for (int k = -1; k <= 1; ++k) {
              wa.push_back(a(clamp_index(x + i, 7), clamp_index(y + j, 7), clamp_index(z + k, 7)));
              wb.push_back(b(clamp_index(x + i, 7), clamp_index(y + j, 7), clamp_index(z + k, 7)));
            }
        EXPECT_NEAR(lc.r(x, y, z), static_cast<double>(pearson(wa, wb)), 1e-10);
      }
}

TEST(Mse, Examples) {
  const Volume3 a = random_volume({5, 4, 3}, 10), b = random_volume({5, 4, 3}, 11);
  EXPECT_EQ(mse(a, a), 0.0);
  EXPECT_DOUBLE_EQ(mse(Volume3({3, 3, 3}, 0.0), Volume3({3, 3, 3}, 0.5)), 0.25);
  double ref = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ref += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(mse(a, b), ref / a.size(), 1e-15);
  EXPECT_DOUBLE_EQ(mse(a, b), mse(b, a));
  EXPECT_THROW(mse(a, Volume3({5, 4, 4})), std::invalid_argument);
}

TEST(Ssim, Examples) {
  const Volume3 a = random_volume({9, 9, 9}, 12), b = random_volume({9, 9, 9}, 13);
  EXPECT_NEAR(ssim(a, a, 3), 1.0, 1e-12);
  const double c1 = 1e-4;
  // Constant images: zero variance and covariance leave only the luminance term.
  EXPECT_NEAR(ssim(Volume3({6, 6, 6}, 0.0), Volume3({6, 6, 6}, 1.0), 3), c1 / (1.0 + c1), 1e-15);
  EXPECT_NEAR(ssim(a, b, 5), ssim(b, a, 5), 1e-14);
  Volume3 s = a;
  for (auto& x : s.data()) x = 0.5 * x + 0.25;
  Volume3 t = b;
  for (auto& x : t.data()) x = 0.5 * x + 0.25;
  EXPECT_NEAR(ssim(s, t, 5), ssim(a, b, 5), 0.05);
  EXPECT_THROW(ssim(a, Volume3({9, 9, 8})), std::invalid_argument);
}

TEST(Smoothness, Examples) {
  EXPECT_EQ(smoothness_penalty(DisplacementField({5, 5, 5})), 0.0);
  EXPECT_EQ(smoothness_penalty(DisplacementField::uniform({5, 4, 3}, 1.5, -2, 0.25)), 0.0);
  DisplacementField f({4, 3, 5});
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 3; ++y)
      for (int z = 0; z < 5; ++z) f.comp[0](x, y, z) = x;
  EXPECT_DOUBLE_EQ(smoothness_penalty(f), 1.0);
}

TEST(Smoothness, GradientMatchesFiniteDifferences) {
  const DisplacementField f = random_field({5, 6, 4}, 14, 1.0);
  const DisplacementField g = smoothness_gradient(f);
  std::mt19937 rng(15);
  for (int t = 0; t < 40; ++t) {
    const int c = static_cast<int>(rng() % 3);
    const std::size_t i = rng() % f.size();
    DisplacementField p = f, m = f;
    p.comp[c][i] += 1e-4;
    m.comp[c][i] -= 1e-4;
    const double fd = (smoothness_penalty(p) - smoothness_penalty(m)) / 2e-4;
    EXPECT_NEAR(g.comp[c][i], fd, 1e-8 + 1e-6 * std::abs(fd));
  }
}

TEST(TotalLoss, Examples) {
  const Volume3 a = smooth_volume({12, 12, 12});
  const Dims d = a.dims();
  const LossBreakdown perfect = total_loss(a, a, DisplacementField(d), 1.0, 9);
  EXPECT_NEAR(perfect.total, -1.0, 1e-12);
  const Volume3 b = random_volume(d, 16);
  const DisplacementField f = random_field(d, 17, 0.5);
  const LossBreakdown l0 = total_loss(a, b, f, 0.0, 9);
  EXPECT_EQ(l0.total, l0.similarity_term);
  const LossBreakdown l1 = total_loss(a, b, f, 1.0, 9);
  EXPECT_NEAR(l1.total, -local_ncc(a, b, 9) + smoothness_penalty(f), 1e-12);
  EXPECT_NEAR(l1.total, l1.similarity_term + l1.lambda * l1.smoothness_term, 1e-12);
  EXPECT_GE(l1.smoothness_term, 0.0);
}

TEST(LossGradient, ConstantImagesLeaveOnlySmoothness) {
  const Dims d{8, 7, 6};
  const Volume3 c(d, 0.4);
  const DisplacementField f = random_field(d, 18, 1.5);
  for (double lambda : {0.0, 1.0, 2.5}) {
    const DisplacementField g = loss_gradient(c, c, f, lambda, 5);
    const DisplacementField s = smoothness_gradient(f);
    for (int k = 0; k < 3; ++k)
      for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g.comp[k][i], lambda * s.comp[k][i], 1e-15);
  }
}

TEST(LossGradient, StationaryAtPerfectAlignment) {
  const Volume3 a = smooth_volume({10, 10, 10});
  const DisplacementField g = loss_gradient(a, a, DisplacementField(a.dims()), 0.0, 5);
  for (const auto& c : g.comp)
    for (double x : c.data()) EXPECT_NEAR(x, 0.0, 1e-12);
}

TEST(LossGradient, MatchesCentralFiniteDifferences) {
  const Dims d{12, 12, 12};
  std::mt19937 rng(19);
  for (std::uint32_t inst = 0; inst < 2; ++inst) {
    const Volume3 fx = smooth_volume(d, 0.3 * inst), mv = random_volume(d, 20 + inst);
    const DisplacementField f = off_lattice_field(d, 30 + inst);
    for (double lambda : {0.0, 1.0}) {
      const DisplacementField g = loss_gradient(fx, mv, f, lambda, 5);
      for (int t = 0; t < 25; ++t) {
        const int c = static_cast<int>(rng() % 3);
        const std::size_t i = rng() % f.size();
        DisplacementField p = f, m = f;
        p.comp[c][i] += 1e-3;
        m.comp[c][i] -= 1e-3;
        const double fd = (loss_at(fx, mv, p, lambda, 5) - loss_at(fx, mv, m, lambda, 5)) / 2e-3;
        const double rel = std::abs(g.comp[c][i] - fd) / std::max({std::abs(fd), std::abs(g.comp[c][i]), 1e-12});
        EXPECT_LT(rel, 1e-4) << "component " << c << " voxel " << i << " grad " << g.comp[c][i] << " fd " << fd;
      }
    }
  }
}

TEST(LossGradient, LossMatchesTotalLoss) {
  const Volume3 fx = smooth_volume({9, 9, 9}), mv = random_volume({9, 9, 9}, 21);
  const DisplacementField f = random_field(fx.dims(), 22, 2.0);
  const LossAndGradient lg = loss_and_gradient(fx, mv, f, 0.7, 5);
  const LossBreakdown ref = total_loss(fx, warp_scalar(mv, f), f, 0.7, 5);
  EXPECT_NEAR(lg.loss.total, ref.total, 1e-12);
  EXPECT_EQ(lg.warped.data(), warp_scalar(mv, f).data());
}
