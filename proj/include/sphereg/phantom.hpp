#pragma once

// Synthetic phantoms with embedded landmarks, plus the registration error
// metrics (mTRE, sub-millimetre success rate, nearest-rank percentiles).

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "sphereg/error.hpp"
#include "sphereg/lie.hpp"
#include "sphereg/volume.hpp"

namespace sphereg {

struct SphereShape {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  double density = 1.0;
  bool landmarks = true;  // center and the +z pole
};

struct BoxShape {
  Vec3 center = Vec3::Zero();
  Vec3 half_extent = Vec3::Ones();
  double density = 1.0;
  bool landmarks = true;  // eight corners and the center
};

struct TubeShape {
  Vec3 p0 = Vec3::Zero();
  Vec3 p1 = Vec3::UnitZ();
  double radius = 1.0;
  double density = 1.0;
  bool landmarks = true;  // both end-cap centers
};

using Shape = std::variant<SphereShape, BoxShape, TubeShape>;

struct PhantomSpec {
  std::string name = "phantom";
  std::array<int, 3> dims{64, 64, 64};
  Vec3 spacing = Vec3::Ones();
  Vec3 origin = Vec3::Zero();
  double background = 0.0;
  std::vector<Shape> shapes;  // painted in order; later shapes overwrite earlier ones
  int supersample = 4;        // per-axis sub-voxel samples for partial-volume coverage
  double texture = 0.0;       // relative amplitude of seeded multiplicative voxel noise inside shapes
};

struct Phantom {
  Volume volume;
  std::vector<Vec3> landmarks;  // volume coordinates, mm
  std::string name;
  std::uint64_t seed = 0;
};

namespace detail {

inline bool contains(const SphereShape& s, const Vec3& p) { return (p - s.center).squaredNorm() <= s.radius * s.radius; }

inline bool contains(const BoxShape& b, const Vec3& p) {
  const Vec3 q = (p - b.center).cwiseAbs();
  return q.x() <= b.half_extent.x() && q.y() <= b.half_extent.y() && q.z() <= b.half_extent.z();
}

inline bool contains(const TubeShape& t, const Vec3& p) {
  const Vec3 axis = t.p1 - t.p0;
  const double len2 = axis.squaredNorm();
  const double s = (p - t.p0).dot(axis) / len2;
  if (s < 0.0 || s > 1.0) return false;
  return (p - (t.p0 + s * axis)).squaredNorm() <= t.radius * t.radius;
}

inline void keypoints(const SphereShape& s, std::vector<Vec3>& out) {
  if (!s.landmarks) return;
  out.push_back(s.center);
  out.push_back(s.center + Vec3(0, 0, s.radius));
}

inline void keypoints(const BoxShape& b, std::vector<Vec3>& out) {
  if (!b.landmarks) return;
  for (int c = 0; c < 8; ++c) {
    const Vec3 sign((c & 1) ? 1.0 : -1.0, (c & 2) ? 1.0 : -1.0, (c & 4) ? 1.0 : -1.0);
    out.push_back(b.center + sign.cwiseProduct(b.half_extent));
  }
  out.push_back(b.center);
}

inline void keypoints(const TubeShape& t, std::vector<Vec3>& out) {
  if (!t.landmarks) return;
  out.push_back(t.p0);
  out.push_back(t.p1);
}

}  // namespace detail

inline Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  if (spec.shapes.empty()) fail(ErrorCode::EmptySpec, "phantom spec has no shapes");
  for (int a = 0; a < 3; ++a) {
    if (spec.dims[a] < 16) fail(ErrorCode::InvalidConfig, "phantom dims must be at least 16 per axis");
  }
  if (spec.supersample < 1) fail(ErrorCode::InvalidConfig, "supersample must be >= 1");

  Phantom ph;
  ph.name = spec.name;
  ph.seed = seed;
  ph.volume = Volume(spec.dims, spec.spacing, spec.origin, 0.0f);
  Volume& vol = ph.volume;

  const int ss = spec.supersample;
  const double inv = 1.0 / (static_cast<double>(ss) * ss * ss);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);

  for (int k = 0; k < spec.dims[2]; ++k) {
    for (int j = 0; j < spec.dims[1]; ++j) {
      for (int i = 0; i < spec.dims[0]; ++i) {
        double acc = 0.0;
        bool inside_any = false;
        for (int sz = 0; sz < ss; ++sz)
          for (int sy = 0; sy < ss; ++sy)
            for (int sx = 0; sx < ss; ++sx) {
              const Vec3 p = vol.origin + vol.spacing.cwiseProduct(
                                              Vec3(i + (sx + 0.5) / ss, j + (sy + 0.5) / ss, k + (sz + 0.5) / ss));
              double value = spec.background;
              for (const Shape& shape : spec.shapes) {
                std::visit(
                    [&](const auto& s) {
                      if (detail::contains(s, p)) {
                        value = s.density;
                        inside_any = true;
                      }
                    },
                    shape);
              }
              acc += value;
            }
        double density = acc * inv;
        // The stream advances once per voxel so texture does not depend on geometry.
        const double noise = jitter(rng);
        if (spec.texture > 0.0 && inside_any) density *= 1.0 + spec.texture * noise;
        vol.at(i, j, k) = static_cast<float>(std::max(density, 0.0));
      }
    }
  }

  for (const Shape& shape : spec.shapes) std::visit([&](const auto& s) { detail::keypoints(s, ph.landmarks); }, shape);
  return ph;
}

/// 64^3 at 1 mm: a vertebra-like body (box) with two pedicle-like tubes and a
/// small process (sphere), bone at 1.0 inside a 0.1 soft-tissue sphere.
/// Fourteen landmarks: the box corners and center, the tube end caps, and
/// the process center.
inline PhantomSpec reference_phantom_spec() {
  PhantomSpec spec;
  spec.name = "reference-vertebra";
  spec.dims = {64, 64, 64};
  spec.spacing = Vec3::Ones();
  spec.origin = Vec3::Zero();
  spec.shapes.push_back(SphereShape{Vec3(32, 32, 32), 30.0, 0.1, false});
  spec.shapes.push_back(BoxShape{Vec3(30, 26, 32), Vec3(14, 9, 11), 1.0, true});
  spec.shapes.push_back(TubeShape{Vec3(21, 36, 30), Vec3(24, 50, 35), 3.5, 1.0, true});
  spec.shapes.push_back(TubeShape{Vec3(40, 36, 33), Vec3(37, 52, 27), 3.0, 1.0, true});
  spec.shapes.push_back(SphereShape{Vec3(46, 18, 42), 4.0, 1.0, false});
  return spec;
}

inline Phantom reference_phantom(std::uint64_t seed = 0) {
  Phantom ph = generate_phantom(reference_phantom_spec(), seed);
  ph.landmarks.push_back(Vec3(46, 18, 42));
  return ph;
}

/// Mean landmark displacement between the estimated and true poses.
inline double mtre(const std::vector<Vec3>& landmarks, const Twist& est, const Twist& gt) {
  if (landmarks.empty()) fail(ErrorCode::NoLandmarks, "mtre needs at least one landmark");
  const Transform3 a = se3_exp(est);
  const Transform3 b = se3_exp(gt);
  double acc = 0.0;
  for (const Vec3& p : landmarks) acc += (a.apply(p) - b.apply(p)).norm();
  return acc / static_cast<double>(landmarks.size());
}

/// Landmarks re-expressed about the pose isocenter, the frame the pose acts in.
inline std::vector<Vec3> landmarks_about_isocenter(const Phantom& ph, const Camera& cam) {
  const Vec3 iso = ph.volume.center() + cam.iso_offset;
  std::vector<Vec3> out;
  out.reserve(ph.landmarks.size());
  for (const Vec3& p : ph.landmarks) out.push_back(p - iso);
  return out;
}

/// Nearest-rank percentile (p in (0, 100]) of an ascending-sorted list.
inline double nearest_rank(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) fail(ErrorCode::EmptyInput, "percentile of an empty list");
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

struct MetricsReport {
  std::vector<double> mtre_values;
  double smsr = 0.0;
  double median = 0.0;
  double p75 = 0.0;
  double p95 = 0.0;
};

inline MetricsReport metrics_report(const std::vector<double>& mtre_values) {
  if (mtre_values.empty()) fail(ErrorCode::EmptyInput, "metrics_report needs at least one value");
  MetricsReport rep;
  rep.mtre_values = mtre_values;
  std::vector<double> sorted = mtre_values;
  std::sort(sorted.begin(), sorted.end());
  const auto below = std::count_if(sorted.begin(), sorted.end(), [](double v) { return v < 1.0; });
  rep.smsr = static_cast<double>(below) / static_cast<double>(sorted.size());
  rep.median = nearest_rank(sorted, 50.0);
  rep.p75 = nearest_rank(sorted, 75.0);
  rep.p95 = nearest_rank(sorted, 95.0);
  return rep;
}

}  // namespace sphereg
