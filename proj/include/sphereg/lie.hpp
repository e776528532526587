#pragma once

// Rigid-pose parameterizations and distances on SO(3), SE(3) and the 4x4
// embedding used for the bi-invariant pose loss.

#include <Eigen/Core>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "sphereg/error.hpp"

namespace sphereg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kSmallAngle = 1e-6;
// Below this angle the V-matrix coefficients switch to series; the closed
// forms lose digits to cancellation well before kSmallAngle.
inline constexpr double kSeriesAngle = 1e-2;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Pose in se(3): axis-angle rotation (radians) followed by translation (mm).
struct Twist {
  Vec3 omega = Vec3::Zero();
  Vec3 v = Vec3::Zero();

  Twist() = default;
  Twist(const Vec3& omega_, const Vec3& v_) : omega(omega_), v(v_) {}

  static Twist from_vector(const Vec6& x) { return {x.head<3>(), x.tail<3>()}; }
  Vec6 vector() const {
    Vec6 x;
    x << omega, v;
    return x;
  }
  double operator[](int i) const { return i < 3 ? omega[i] : v[i - 3]; }
  double& operator[](int i) { return i < 3 ? omega[i] : v[i - 3]; }
  bool operator==(const Twist& o) const { return omega == o.omega && v == o.v; }
};

/// Rigid transform x -> R x + t.
struct Transform3 {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static Transform3 identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return R * p + t; }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = R;
    m.topRightCorner<3, 1>() = t;
    return m;
  }
};

inline Mat3 hat(const Vec3& w) {
  Mat3 k;
  k << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return k;
}

inline Vec3 vee(const Mat3& k) { return {k(2, 1), k(0, 2), k(1, 0)}; }

inline Mat3 so3_exp(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 k = hat(omega);
  double a, b;
  if (theta < kSmallAngle) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    const double half = std::sin(0.5 * theta);
    a = std::sin(theta) / theta;
    b = 2.0 * half * half / theta2;
  }
  return Mat3::Identity() + a * k + b * k * k;
}

inline double orthogonality_residual(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).norm();
}

namespace detail {

// Canonical sign for a half-turn axis: first nonzero component positive.
inline Vec3 canonical_half_turn_axis(Vec3 axis) {
  for (int i = 0; i < 3; ++i) {
    if (std::abs(axis[i]) > 1e-12) {
      if (axis[i] < 0.0) axis = -axis;
      break;
    }
  }
  return axis;
}

}  // namespace detail

/// Principal logarithm; the result always satisfies |omega| <= pi.
inline Vec3 so3_log(const Mat3& r) {
  if (!r.allFinite() || orthogonality_residual(r) > 1e-6 || r.determinant() < 0.0) {
    fail(ErrorCode::NotARotation, "matrix is not a proper rotation");
  }
  const Vec3 skew = 0.5 * vee(r - r.transpose());  // sin(theta) * axis
  const double s = skew.norm();
  const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  const double theta = std::atan2(s, c);

  if (theta < kSmallAngle) {
    return (1.0 + theta * theta / 6.0) * skew;
  }
  if (theta < kPi - 1e-3) {
    return (theta / s) * skew;
  }
  // Near a half turn the skew part vanishes; recover the axis from the
  // symmetric part (R + R^T)/2 = c I + (1 - c) a a^T.
  const Mat3 aat = (0.5 * (r + r.transpose()) - c * Mat3::Identity()) / (1.0 - c);
  int col = 0;
  aat.diagonal().maxCoeff(&col);
  Vec3 axis = aat.col(col) / std::sqrt(std::max(aat(col, col), 1e-300));
  axis.normalize();
  const double dir = axis.dot(skew);
  if (std::abs(dir) > 1e-12) {
    if (dir < 0.0) axis = -axis;
  } else {
    axis = detail::canonical_half_turn_axis(axis);
  }
  return theta * axis;
}

namespace detail {

// Left Jacobian of SO(3): couples rotation and translation in exp(se(3)).
inline Mat3 se3_v_matrix(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 k = hat(omega);
  double b, c;
  if (theta < kSeriesAngle) {
    b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
    c = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0;
  } else {
    const double half = std::sin(0.5 * theta);
    b = 2.0 * half * half / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() + b * k + c * k * k;
}

inline Mat3 se3_v_inverse(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 k = hat(omega);
  double c;
  if (theta < kSeriesAngle) {
    c = 1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0;
  } else {
    const double half = 0.5 * theta;
    c = (1.0 - half / std::tan(half)) / theta2;
  }
  return Mat3::Identity() - 0.5 * k + c * k * k;
}

}  // namespace detail

inline Transform3 se3_exp(const Twist& x) {
  return {so3_exp(x.omega), detail::se3_v_matrix(x.omega) * x.v};
}

inline Twist se3_log(const Transform3& t) {
  const Vec3 omega = so3_log(t.R);
  return {omega, detail::se3_v_inverse(omega) * t.t};
}

/// Transform that applies `b` first, then `a`.
inline Transform3 compose(const Transform3& a, const Transform3& b) {
  return {a.R * b.R, a.R * b.t + a.t};
}

inline Transform3 invert(const Transform3& t) {
  const Mat3 rt = t.R.transpose();
  return {rt, -(rt * t.t)};
}

/// Left-multiplied update on twists: log(exp(delta) * exp(x)).
inline Twist left_compose(const Twist& delta, const Twist& x) {
  return se3_log(compose(se3_exp(delta), se3_exp(x)));
}

inline double geodesic_se3(const Twist& a, const Twist& b) {
  const Twist neg_a{-a.omega, -a.v};
  return se3_log(compose(se3_exp(neg_a), se3_exp(b))).vector().norm();
}

inline void check_focal(double f) {
  if (!(f > 0.0) || !std::isfinite(f)) fail(ErrorCode::BadFocal, "focal length must be positive");
}

/// H = [[R, t/(2f)], [-t^T R, 1]]. Orthogonal only when t = 0; not re-orthogonalized.
inline Mat4 map_so4(const Twist& x, double f) {
  check_focal(f);
  const Transform3 t = se3_exp(x);
  Mat4 h;
  h.topLeftCorner<3, 3>() = t.R;
  h.topRightCorner<3, 1>() = t.t / (2.0 * f);
  h.bottomLeftCorner<1, 3>() = -(t.t.transpose() * t.R);
  h(3, 3) = 1.0;
  return h;
}

inline double geodesic_so4(const Twist& a, const Twist& b, double f) {
  return (map_so4(a, f) - map_so4(b, f)).norm();
}

enum class GeodesicFlavor { Se3, So4 };

inline double geodesic(GeodesicFlavor flavor, const Twist& a, const Twist& b, double f) {
  return flavor == GeodesicFlavor::Se3 ? geodesic_se3(a, b) : geodesic_so4(a, b, f);
}

/// Uniform per-axis offsets (degrees / mm) composed onto `center` from the left.
template <class Rng>
Twist sample_pose(const Twist& center, double rot_range_deg, double trans_range_mm, Rng& rng) {
  if (rot_range_deg < 0.0 || trans_range_mm < 0.0) {
    fail(ErrorCode::InvalidConfig, "pose sampling ranges must be non-negative");
  }
  if (rot_range_deg == 0.0 && trans_range_mm == 0.0) return center;
  const double r = deg_to_rad(rot_range_deg);
  std::uniform_real_distribution<double> rot(-r, r);
  std::uniform_real_distribution<double> trans(-trans_range_mm, trans_range_mm);
  Twist delta;
  for (int i = 0; i < 3; ++i) delta.omega[i] = r > 0.0 ? rot(rng) : 0.0;
  for (int i = 0; i < 3; ++i) delta.v[i] = trans_range_mm > 0.0 ? trans(rng) : 0.0;
  return left_compose(delta, center);
}

inline Twist sample_pose(const Twist& center, double rot_range_deg, double trans_range_mm,
                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_pose(center, rot_range_deg, trans_range_mm, rng);
}

}  // namespace sphereg
