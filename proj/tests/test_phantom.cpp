#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "sphereg/io.hpp"
#include "sphereg/phantom.hpp"

using namespace sphereg;

namespace {

PhantomSpec single_sphere(double radius) {
  PhantomSpec spec;
  spec.dims = {32, 32, 32};
  spec.shapes.push_back(SphereShape{Vec3(16, 16, 16), radius, 1.0, true});
  return spec;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("sphereg_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(GeneratePhantom, CenteredSphere) {
  const Phantom ph = generate_phantom(single_sphere(6.0), 0);
  ASSERT_FALSE(ph.landmarks.empty());
  EXPECT_EQ(ph.landmarks[0], ph.volume.center());
  EXPECT_EQ(ph.volume.at(16, 16, 16), 1.0f);
  EXPECT_EQ(ph.volume.at(0, 0, 0), 0.0f);
}

TEST(GeneratePhantom, SphereVolumeWithinTwoPercent) {
  for (double r : {4.0, 6.5, 10.0}) {
    const Phantom ph = generate_phantom(single_sphere(r), 0);
    double sum = 0.0;
    for (float x : ph.volume.data) sum += x;
    const double analytic = 4.0 / 3.0 * std::numbers::pi * r * r * r;
    EXPECT_LT(std::abs(sum - analytic) / analytic, 0.02) << "r=" << r;
  }
}

TEST(GeneratePhantom, SeedDeterminism) {
  PhantomSpec spec = reference_phantom_spec();
  spec.texture = 0.05;
  const Phantom a = generate_phantom(spec, 7), b = generate_phantom(spec, 7), c = generate_phantom(spec, 8);
  ASSERT_EQ(a.volume.data.size(), b.volume.data.size());
  EXPECT_EQ(std::memcmp(a.volume.data.data(), b.volume.data.data(), a.volume.data.size() * sizeof(float)), 0);
  EXPECT_NE(a.volume.data, c.volume.data);
  EXPECT_EQ(reference_phantom(3).volume.data, reference_phantom(3).volume.data);
}

TEST(GeneratePhantom, Errors) {
  PhantomSpec empty;
  try {
    generate_phantom(empty, 0);
    FAIL() << "expected EmptySpec";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySpec);
  }
  PhantomSpec small = single_sphere(3.0);
  small.dims = {8, 32, 32};
  EXPECT_THROW(generate_phantom(small, 0), Error);
}

TEST(ReferencePhantom, LandmarksAndDensities) {
  const Phantom ph = reference_phantom();
  EXPECT_EQ(ph.volume.dims, (std::array<int, 3>{64, 64, 64}));
  ASSERT_GE(ph.landmarks.size(), 14u);
  const Vec3 lo = ph.volume.origin, hi = ph.volume.upper();
  for (const Vec3& p : ph.landmarks) {
    EXPECT_TRUE((p.array() >= lo.array()).all() && (p.array() <= hi.array()).all());
  }
  // Non-coplanar: the landmark cloud has full rank about its centroid.
  Eigen::MatrixXd m(ph.landmarks.size(), 3);
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : ph.landmarks) mean += p;
  mean /= static_cast<double>(ph.landmarks.size());
  for (std::size_t i = 0; i < ph.landmarks.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = (ph.landmarks[i] - mean);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  EXPECT_GT(svd.singularValues().minCoeff(), 1.0);
  float lo_d = 1e9f, hi_d = 0.0f;
  for (float x : ph.volume.data) {
    if (x > 0.0f) lo_d = std::min(lo_d, x);
    hi_d = std::max(hi_d, x);
  }
  EXPECT_EQ(hi_d, 1.0f);
  EXPECT_FLOAT_EQ(ph.volume.at(32, 32, 58), 0.1f);  // soft tissue away from bone
}

TEST(Mtre, BasicCases) {
  const std::vector<Vec3> pts = reference_phantom().landmarks;
  const Twist a = Twist::from_vector(Vec6(0.1, -0.2, 0.05, 3, 4, -1));
  EXPECT_EQ(mtre(pts, a, a), 0.0);
  Twist t0, t1;
  t1.v = Vec3(3, -4, 12);
  EXPECT_NEAR(mtre(pts, t1, t0), 13.0, 1e-12);
  try {
    mtre({}, a, a);
    FAIL() << "expected NoLandmarks";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoLandmarks);
  }
}

TEST(Mtre, MatchesLoopOracleAndLeftInvariance) {
  std::mt19937_64 rng(30);
  std::uniform_real_distribution<double> u(-40.0, 40.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Vec3> pts(14);
    for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
    const Twist a = sample_pose(Twist{}, 30.0, 20.0, rng);
    const Twist b = sample_pose(Twist{}, 30.0, 20.0, rng);
    const Eigen::Matrix4d ta = oracle::twist_series_exp(a.omega, a.v, 40);
    const Eigen::Matrix4d tb = oracle::twist_series_exp(b.omega, b.v, 40);
    double acc = 0.0;
    for (const Vec3& p : pts) {
      const Eigen::Vector4d h(p.x(), p.y(), p.z(), 1.0);
      acc += (ta * h - tb * h).head<3>().norm();
    }
    EXPECT_NEAR(mtre(pts, a, b), acc / 14.0, 1e-10);
    const Twist g = sample_pose(Twist{}, 90.0, 50.0, rng);
    EXPECT_NEAR(mtre(pts, left_compose(g, a), left_compose(g, b)), mtre(pts, a, b), 1e-9);
  }
}

TEST(MetricsReport, BasicCases) {
  const MetricsReport r = metrics_report({0.5, 0.5, 2.0, 3.0});
  EXPECT_EQ(r.smsr, 0.5);
  EXPECT_EQ(r.median, 0.5);
  EXPECT_EQ(r.p75, 2.0);
  EXPECT_EQ(r.p95, 3.0);
  const MetricsReport z = metrics_report(std::vector<double>(10, 0.0));
  EXPECT_EQ(z.smsr, 1.0);
  EXPECT_EQ(z.median, 0.0);
  EXPECT_EQ(z.p75, 0.0);
  EXPECT_EQ(z.p95, 0.0);
  try {
    metrics_report({});
    FAIL() << "expected EmptyInput";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyInput);
  }
}

TEST(MetricsReport, UniformDrawsWithinThreeSigma) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::vector<double> v(1000);
  for (auto& x : v) x = u(rng);
  const MetricsReport r = metrics_report(v);
  EXPECT_LT(std::abs(r.smsr - 0.5), 3.0 * std::sqrt(0.25 / 1000.0));
  EXPECT_LE(r.median, r.p75);
  EXPECT_LE(r.p75, r.p95);
}

TEST(MetricsReport, NearestRankAgreesWithSortReference) {
  std::mt19937_64 rng(32);
  std::exponential_distribution<double> e(1.0);
  for (std::size_t n = 1; n <= 100; ++n) {
    std::vector<double> v(n);
    for (auto& x : v) x = e(rng);
    const MetricsReport r = metrics_report(v);
    std::vector<double> s = v;
    std::sort(s.begin(), s.end());
    // Smallest value with at least p% of the list at or below it.
    auto reference = [&](double p) {
      for (std::size_t i = 0; i < n; ++i)
        if (100.0 * static_cast<double>(i + 1) >= p * static_cast<double>(n)) return s[i];
      return s.back();
    };
    EXPECT_EQ(r.median, reference(50.0)) << n;
    EXPECT_EQ(r.p75, reference(75.0)) << n;
    EXPECT_EQ(r.p95, reference(95.0)) << n;
    EXPECT_LE(r.median, r.p75);
    EXPECT_LE(r.p75, r.p95);
  }
}

TEST(Io, VolumeRoundTripIsBitExact) {
  const auto dir = scratch_dir("io_volume");
  PhantomSpec spec = reference_phantom_spec();
  spec.texture = 0.1;
  const Phantom ph = generate_phantom(spec, 11);
  io::save_phantom(dir / "ph", ph);
  const Phantom back = io::load_phantom(dir / "ph");
  EXPECT_EQ(back.volume.dims, ph.volume.dims);
  EXPECT_EQ(back.volume.spacing, ph.volume.spacing);
  EXPECT_EQ(back.volume.origin, ph.volume.origin);
  EXPECT_EQ(std::memcmp(back.volume.data.data(), ph.volume.data.data(), ph.volume.data.size() * 4), 0);
  EXPECT_EQ(back.landmarks, ph.landmarks);
  EXPECT_EQ(back.seed, 11u);
  EXPECT_EQ(std::filesystem::file_size(dir / "ph.raw"), ph.volume.data.size() * 4);
}

TEST(Io, ImageRoundTripAndPgm) {
  const auto dir = scratch_dir("io_image");
  Image2D img(3, 5);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(0.37 * i);
  io::save_image(dir / "im", img);
  const Image2D back = io::load_image(dir / "im");
  EXPECT_EQ(back.h, 3);
  EXPECT_EQ(back.w, 5);
  EXPECT_EQ(back.data, img.data);
  io::write_pgm(dir / "im.pgm", img);
  std::ifstream in(dir / "im.pgm", std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  EXPECT_EQ(magic, "P5");
  EXPECT_EQ(w, 5);
  EXPECT_EQ(h, 3);
  EXPECT_EQ(maxv, 255);
  EXPECT_EQ(std::filesystem::file_size(dir / "im.pgm"), std::string("P5\n5 3\n255\n").size() + 15);
  EXPECT_THROW(io::load_image(dir / "missing"), Error);
}
