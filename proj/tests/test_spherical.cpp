#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "sphereg/spherical.hpp"

using namespace sphereg;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

FeatureMap random_features(std::mt19937_64& rng, int h, int w, int d, double scale) {
  FeatureMap f(h, w, d);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& x : f.data) x = u(rng);
  return f;
}

std::vector<double> north(std::size_t d) {
  std::vector<double> n(d + 1, 0.0);
  n.back() = 1.0;
  return n;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

}  // namespace

TEST(SphericalExp, ZeroMapsToNorthPole) {
  const std::vector<double> zero(5, 0.0);
  EXPECT_EQ(spherical_exp(zero), north(5));
}

TEST(SphericalExp, QuarterArc) {
  const std::vector<double> phi{0.3, -1.2, 0.9};
  const double n = std::sqrt(dot(phi, phi));
  std::vector<double> scaled(phi);
  for (auto& x : scaled) x *= (kPi / 2) / n;
  const auto out = spherical_exp(scaled);
  EXPECT_NEAR(out[3], 0.0, 1e-15);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(out[i], phi[i] / n, 1e-15);
}

TEST(SphericalExp, ArcLengthFromNorthPole) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    auto phi = random_vec(rng, 4, 1.0);
    const double target = std::uniform_real_distribution<double>(0.0, kPi - 1e-6)(rng);
    const double n = norm(phi);
    for (auto& x : phi) x *= target / n;
    const auto out = spherical_exp(phi);
    EXPECT_NEAR(oracle::atan2_angle(out, north(4)), target, 1e-9);
    EXPECT_NEAR(spherical_distance(out, north(4)), target, 1e-7);  // arccos is ill-conditioned near 0 and pi
  }
}

TEST(SphericalExp, UnitNormBothModes) {
  std::mt19937_64 rng(2);
  for (auto mode : {EmbedMode::OrthogonalTangent, EmbedMode::VerbatimNormalized}) {
    for (int i = 0; i < 2000; ++i) {
      const auto phi = random_vec(rng, 1 + i % 6, i % 2 ? 5.0 : 1e-5);
      EXPECT_NEAR(norm(spherical_exp(phi, mode)), 1.0, 1e-12);
    }
  }
}

TEST(SphericalExp, VerbatimModeIsRenormalizedPrintedFormula) {
  const std::vector<double> phi{0.4, -0.7};
  const std::vector<double> bar{0.4, -0.7, 1.0};
  const double m = norm(bar);
  std::vector<double> y{bar[0] * std::sin(m) / m, bar[1] * std::sin(m) / m, std::cos(m) + std::sin(m) / m};
  const double yn = norm(y);
  const auto out = spherical_exp(phi, EmbedMode::VerbatimNormalized);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(out[i], y[i] / yn, 1e-15);
}

TEST(SphericalExp, JvpAndVjpMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (auto mode : {EmbedMode::OrthogonalTangent, EmbedMode::VerbatimNormalized}) {
    for (double scale : {1e-4, 0.3, 2.0}) {
      const auto phi = random_vec(rng, 4, scale);
      const auto dphi = random_vec(rng, 4, 1.0);
      const auto gout = random_vec(rng, 5, 1.0);
      const auto unit = spherical_exp(phi, mode);
      std::vector<double> jvp(5);
      spherical_exp_jvp(phi, dphi, mode, unit, jvp);
      const double h = 1e-6;
      auto plus = phi, minus = phi;
      for (int i = 0; i < 4; ++i) {
        plus[i] += h * dphi[i];
        minus[i] -= h * dphi[i];
      }
      const auto up = spherical_exp(plus, mode), dn = spherical_exp(minus, mode);
      for (int i = 0; i < 5; ++i) EXPECT_NEAR(jvp[i], (up[i] - dn[i]) / (2 * h), 1e-8);
      // <gout, J dphi> == <J^T gout, dphi>
      std::vector<double> vjp(4, 0.0);
      spherical_exp_vjp(phi, gout, mode, unit, vjp);
      EXPECT_NEAR(dot(gout, jvp), dot(vjp, dphi), 1e-12);
    }
  }
}

TEST(SphericalDistance, BasicValues) {
  const auto n = north(3);
  std::vector<double> s(n);
  s.back() = -1.0;
  EXPECT_EQ(spherical_distance(n, n), 0.0);
  EXPECT_NEAR(spherical_distance(n, s), kPi, 1e-15);
  EXPECT_THROW(spherical_distance(std::vector<double>{1.0, 1.0}, std::vector<double>{1.0, 0.0}), Error);
}

TEST(SphericalDistance, MatchesAtan2OracleSymmetricTriangle) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    const auto a = spherical_exp(random_vec(rng, 3, 2.0));
    const auto b = spherical_exp(random_vec(rng, 3, 2.0));
    const auto c = spherical_exp(random_vec(rng, 3, 2.0));
    const double ab = spherical_distance(a, b);
    // arccos loses precision near 0 and pi; compare where it is well conditioned.
    if (ab > 1e-3 && ab < kPi - 1e-3) EXPECT_NEAR(ab, oracle::atan2_angle(a, b), 1e-9);
    EXPECT_EQ(ab, spherical_distance(b, a));
    EXPECT_LE(spherical_distance(a, c), ab + spherical_distance(b, c) + 1e-9);
  }
}

TEST(SphericalDistance, ResidualIsMonotoneInDistance) {
  double prev = -1.0;
  for (int i = 0; i <= 1000; ++i) {
    const double d = kPi * i / 1000.0;
    const double r = 1.0 - std::cos(d);
    EXPECT_GT(r, prev);
    prev = r;
  }
}

TEST(EmbedFeatureMap, ZeroMapIsAllNorthPole) {
  const FeatureMap zero(3, 4, 2);
  const auto field = embed_feature_map(zero);
  EXPECT_EQ(field.channels, 3);
  for (std::size_t k = 0; k < field.pixels(); ++k) {
    EXPECT_EQ(field.pixel(k)[0], 0.0);
    EXPECT_EQ(field.pixel(k)[2], 1.0);
  }
}

TEST(EmbedFeatureMap, SinglePixelReducesToSphericalExp) {
  std::mt19937_64 rng(5);
  const auto f = random_features(rng, 1, 1, 4, 1.0);
  const auto field = embed_feature_map(f, EmbedMode::VerbatimNormalized);
  const auto direct = spherical_exp(f.pixel(0), EmbedMode::VerbatimNormalized);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(field.pixel(0)[i], direct[i]);
}

TEST(EmbedFeatureMap, EveryPixelUnitNorm) {
  std::mt19937_64 rng(6);
  for (auto mode : {EmbedMode::OrthogonalTangent, EmbedMode::VerbatimNormalized}) {
    const auto field = embed_feature_map(random_features(rng, 16, 12, 5, 3.0), mode);
    for (std::size_t k = 0; k < field.pixels(); ++k) EXPECT_NEAR(norm(field.pixel(k)), 1.0, 1e-12);
  }
}

TEST(SphericalSimilarity, IdenticalAndAntipodal) {
  std::mt19937_64 rng(7);
  const auto a = embed_feature_map(random_features(rng, 4, 5, 3, 1.0));
  EXPECT_NEAR(spherical_similarity(a, a), 0.0, 1e-12);
  SphericalField neg = a;
  for (auto& x : neg.data) x = -x;
  EXPECT_NEAR(spherical_similarity(a, neg), 2.0 * 4 * 5, 1e-12);
}

TEST(SphericalSimilarity, MatchesBruteForceLoop) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = embed_feature_map(random_features(rng, 4, 4, 2, 2.0));
    const auto b = embed_feature_map(random_features(rng, 4, 4, 2, 2.0));
    double eps = 0.0;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double ip = 0.0;
        for (int c = 0; c < 3; ++c) ip += a.data[(i * 4 + j) * 3 + c] * b.data[(i * 4 + j) * 3 + c];
        eps += 1.0 - ip;
      }
    EXPECT_NEAR(spherical_similarity(a, b), eps, 1e-12);
    EXPECT_GE(spherical_similarity(a, b), 0.0);
    EXPECT_LE(spherical_similarity(a, b), 2.0 * 16);
  }
}

TEST(SphericalSimilarity, InvariantUnderJointPixelPermutation) {
  std::mt19937_64 rng(9);
  const auto a = embed_feature_map(random_features(rng, 5, 6, 3, 2.0));
  const auto b = embed_feature_map(random_features(rng, 5, 6, 3, 2.0));
  std::vector<std::size_t> perm(a.pixels());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  SphericalField pa = a, pb = b;
  for (std::size_t k = 0; k < perm.size(); ++k)
    for (int c = 0; c < a.channels; ++c) {
      pa.pixel(k)[c] = a.pixel(perm[k])[c];
      pb.pixel(k)[c] = b.pixel(perm[k])[c];
    }
  EXPECT_NEAR(spherical_similarity(pa, pb), spherical_similarity(a, b), 1e-12);
}

TEST(SphericalSimilarity, ShapeMismatch) {
  const SphericalField a(2, 2, 3), b(2, 3, 3);
  EXPECT_THROW(spherical_similarity(a, b), Error);
  EXPECT_THROW(residual_field(a, b), Error);
}

TEST(ResidualField, SumsToSimilarityRowMajor) {
  std::mt19937_64 rng(10);
  const auto a = embed_feature_map(random_features(rng, 3, 7, 4, 1.5));
  const auto b = embed_feature_map(random_features(rng, 3, 7, 4, 1.5));
  const auto r = residual_field(a, b);
  ASSERT_EQ(r.size(), 21u);
  EXPECT_NEAR(std::accumulate(r.begin(), r.end(), 0.0), spherical_similarity(a, b), 1e-12);
  EXPECT_NEAR(r[1 * 7 + 2], 1.0 - dot(a.pixel(1, 2), b.pixel(1, 2)), 0.0);
}

TEST(ResidualField, IdenticalAndOneFlippedPixel) {
  std::mt19937_64 rng(11);
  const auto a = embed_feature_map(random_features(rng, 3, 3, 2, 1.0));
  for (double x : residual_field(a, a)) EXPECT_NEAR(x, 0.0, 1e-15);
  SphericalField b = a;
  for (auto& x : b.pixel(4)) x = -x;
  const auto r = residual_field(a, b);
  int twos = 0;
  for (std::size_t k = 0; k < r.size(); ++k) {
    if (k == 4) {
      EXPECT_NEAR(r[k], 2.0, 1e-15);
      ++twos;
    } else {
      EXPECT_NEAR(r[k], 0.0, 1e-15);
    }
  }
  EXPECT_EQ(twos, 1);
}
