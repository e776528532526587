#pragma once

// Hypersphere embedding of feature vectors and the spherical similarity
// built on it.
//
// Two lifts of a D-dimensional feature phi onto S^D are supported:
//
//  * OrthogonalTangent: phi is read as a tangent vector [phi, 0] at the
//    north pole N = (0, ..., 0, 1) and mapped with the standard exponential
//    map, EXP(phi) = N cos|phi| + [phi/|phi|, 0] sin|phi|. Unit norm by
//    construction.
//  * VerbatimNormalized: the lift is [phi, 1], which is not tangent at N,
//    so the result of N cos|phibar| + phibar sin|phibar|/|phibar| is
//    rescaled to unit length afterwards.
//
// Both maps have closed-form forward (JVP) and reverse (VJP) derivatives,
// used by the similarity engine to differentiate through the embedding.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "sphereg/error.hpp"
#include "sphereg/image.hpp"

namespace sphereg {

enum class EmbedMode { OrthogonalTangent, VerbatimNormalized };

namespace detail {

inline double sinc(double m) {
  if (m < 1e-4) return 1.0 - m * m / 6.0;
  return std::sin(m) / m;
}

// (m cos m - sin m) / m^3, i.e. sinc'(m) / m.
inline double dsinc_over_m(double m) {
  const double m2 = m * m;
  if (m < 2e-2) return -1.0 / 3.0 + m2 / 30.0 - m2 * m2 / 840.0;
  return (m * std::cos(m) - std::sin(m)) / (m2 * m);
}

inline double lift_constant(EmbedMode mode) { return mode == EmbedMode::OrthogonalTangent ? 0.0 : 1.0; }

struct LiftState {
  double m = 0.0;      // |phibar|
  double s = 1.0;      // sinc(m)
  double g = 0.0;      // sinc'(m)/m
  double ynorm = 1.0;  // |y| before renormalization
};

// y = N cos m + phibar sinc(m), optionally renormalized. `out` has D+1 slots.
inline LiftState lift(std::span<const double> phi, EmbedMode mode, std::span<double> out) {
  const std::size_t d = phi.size();
  const double c = lift_constant(mode);
  double m2 = c * c;
  for (double x : phi) m2 += x * x;
  LiftState st;
  st.m = std::sqrt(m2);
  st.s = sinc(st.m);
  st.g = dsinc_over_m(st.m);
  for (std::size_t i = 0; i < d; ++i) out[i] = phi[i] * st.s;
  out[d] = std::cos(st.m) + c * st.s;
  if (mode == EmbedMode::VerbatimNormalized) {
    double n2 = 0.0;
    for (std::size_t i = 0; i <= d; ++i) n2 += out[i] * out[i];
    st.ynorm = std::sqrt(n2);
    for (std::size_t i = 0; i <= d; ++i) out[i] /= st.ynorm;
  }
  return st;
}

}  // namespace detail

/// Writes EXP(phi) into `out` (size D+1).
inline void spherical_exp(std::span<const double> phi, EmbedMode mode, std::span<double> out) {
  if (out.size() != phi.size() + 1) fail(ErrorCode::ShapeMismatch, "spherical_exp: output must have D+1 entries");
  detail::lift(phi, mode, out);
}

inline std::vector<double> spherical_exp(std::span<const double> phi, EmbedMode mode = EmbedMode::OrthogonalTangent) {
  std::vector<double> out(phi.size() + 1);
  spherical_exp(phi, mode, out);
  return out;
}

/// Forward-mode derivative: given EXP(phi) in `unit` (as written by
/// spherical_exp) and a tangent dphi, writes dEXP into `dout`.
inline void spherical_exp_jvp(std::span<const double> phi, std::span<const double> dphi, EmbedMode mode,
                              std::span<const double> unit, std::span<double> dout) {
  const std::size_t d = phi.size();
  const double c = detail::lift_constant(mode);
  double m2 = c * c, pd = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    m2 += phi[i] * phi[i];
    pd += phi[i] * dphi[i];  // phibar . dphibar (the lifted coordinate is constant)
  }
  const double m = std::sqrt(m2);
  const double s = detail::sinc(m);
  const double g = detail::dsinc_over_m(m);
  // dy = sinc(m) dphibar + phibar g (phibar.dphibar) - N sinc(m) (phibar.dphibar)
  for (std::size_t i = 0; i < d; ++i) dout[i] = s * dphi[i] + g * pd * phi[i];
  dout[d] = g * pd * c - s * pd;
  if (mode == EmbedMode::VerbatimNormalized) {
    double ynorm2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) ynorm2 += (phi[i] * s) * (phi[i] * s);
    const double ylast = std::cos(m) + c * s;
    ynorm2 += ylast * ylast;
    const double ynorm = std::sqrt(ynorm2);
    double proj = 0.0;
    for (std::size_t i = 0; i <= d; ++i) proj += unit[i] * dout[i];
    for (std::size_t i = 0; i <= d; ++i) dout[i] = (dout[i] - unit[i] * proj) / ynorm;
  }
}

/// Reverse-mode derivative: accumulates J^T gout into `gphi` (size D).
inline void spherical_exp_vjp(std::span<const double> phi, std::span<const double> gout, EmbedMode mode,
                              std::span<const double> unit, std::span<double> gphi) {
  const std::size_t d = phi.size();
  const double c = detail::lift_constant(mode);
  double m2 = c * c;
  for (double x : phi) m2 += x * x;
  const double m = std::sqrt(m2);
  const double s = detail::sinc(m);
  const double g = detail::dsinc_over_m(m);

  // Pull back through the renormalization first (identity for the tangent mode).
  double gy_buf[64];
  std::vector<double> gy_heap;
  double* gy = gy_buf;
  if (d + 1 > 64) {
    gy_heap.resize(d + 1);
    gy = gy_heap.data();
  }
  if (mode == EmbedMode::VerbatimNormalized) {
    double ynorm2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) ynorm2 += (phi[i] * s) * (phi[i] * s);
    const double ylast = std::cos(m) + c * s;
    ynorm2 += ylast * ylast;
    const double ynorm = std::sqrt(ynorm2);
    double proj = 0.0;
    for (std::size_t i = 0; i <= d; ++i) proj += unit[i] * gout[i];
    for (std::size_t i = 0; i <= d; ++i) gy[i] = (gout[i] - unit[i] * proj) / ynorm;
  } else {
    for (std::size_t i = 0; i <= d; ++i) gy[i] = gout[i];
  }
  double phibar_dot_gy = c * gy[d];
  for (std::size_t i = 0; i < d; ++i) phibar_dot_gy += phi[i] * gy[i];
  const double coef = g * phibar_dot_gy - s * gy[d];
  for (std::size_t i = 0; i < d; ++i) gphi[i] += s * gy[i] + coef * phi[i];
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

/// Great-circle distance; inner product clamped to [-1, 1] before arccos.
inline double spherical_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::ShapeMismatch, "spherical_distance: dimension mismatch");
  if (std::abs(std::sqrt(dot(a, a)) - 1.0) > 1e-6 || std::abs(std::sqrt(dot(b, b)) - 1.0) > 1e-6) {
    fail(ErrorCode::NotUnit, "spherical_distance: inputs must be unit vectors");
  }
  return std::acos(std::clamp(dot(a, b), -1.0, 1.0));
}

inline SphericalField embed_feature_map(const FeatureMap& phi, EmbedMode mode = EmbedMode::OrthogonalTangent) {
  SphericalField out(phi.h, phi.w, phi.channels + 1);
  for (std::size_t k = 0; k < phi.pixels(); ++k) spherical_exp(phi.pixel(k), mode, out.pixel(k));
  return out;
}

inline void require_same_shape(const SphericalField& a, const SphericalField& b, const char* where) {
  if (!a.same_shape(b)) fail(ErrorCode::ShapeMismatch, std::string(where) + ": field shapes differ");
}

/// Per-pixel 1 - <Phi_m, Phi_f>, row-major.
inline std::vector<double> residual_field(const SphericalField& moving, const SphericalField& fixed) {
  require_same_shape(moving, fixed, "residual_field");
  std::vector<double> r(moving.pixels());
  for (std::size_t k = 0; k < r.size(); ++k) r[k] = 1.0 - dot(moving.pixel(k), fixed.pixel(k));
  return r;
}

/// epsilon = sum over pixels of (1 - <Phi_m, Phi_f>).
inline double spherical_similarity(const SphericalField& moving, const SphericalField& fixed) {
  require_same_shape(moving, fixed, "spherical_similarity");
  double eps = 0.0;
  for (std::size_t k = 0; k < moving.pixels(); ++k) eps += 1.0 - dot(moving.pixel(k), fixed.pixel(k));
  return eps;
}

}  // namespace sphereg
