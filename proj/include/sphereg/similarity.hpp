#pragma once

// Image similarities used for registration: the learned spherical similarity
// on encoder features and the multi-scale NCC baseline, with the derivative
// plumbing needed by the optimizers (image gradients, stacked residuals with
// their pose Jacobian, and the pose gradient of the loss).
//
// Both metrics are exposed as a loss to minimize: epsilon itself for the
// learned metric, 1 - mncc for the baseline.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "sphereg/encoder.hpp"
#include "sphereg/error.hpp"
#include "sphereg/image.hpp"
#include "sphereg/lie.hpp"
#include "sphereg/renderer.hpp"
#include "sphereg/spherical.hpp"

namespace sphereg {

enum class Metric { Learned, Mncc };

inline std::string to_string(Metric m) { return m == Metric::Learned ? "learned" : "mncc"; }

inline Metric metric_from_string(const std::string& s) {
  if (s == "learned") return Metric::Learned;
  if (s == "mncc") return Metric::Mncc;
  fail(ErrorCode::InvalidConfig, "unknown metric '" + s + "' (expected learned or mncc)");
}

// ---------------------------------------------------------------------------
// Learned spherical similarity.

struct LearnedForward {
  EncoderTape tape_m, tape_f;
  FeatureMap phi_m, phi_f;
  SphericalField emb_m, emb_f;
  double eps = 0.0;
};

inline LearnedForward learned_forward(const Image2D& fixed, const Image2D& moving, const EncoderParams& p) {
  require_same_shape(fixed, moving, "learned_similarity");
  LearnedForward f;
  f.phi_m = encoder_forward(moving, p, &f.tape_m);
  f.phi_f = encoder_forward(fixed, p, &f.tape_f);
  f.emb_m = embed_feature_map(f.phi_m, p.embed);
  f.emb_f = embed_feature_map(f.phi_f, p.embed);
  f.eps = spherical_similarity(f.emb_m, f.emb_f);
  return f;
}

/// epsilon between the encoded moving and fixed images (shared weights).
inline double learned_similarity(const Image2D& fixed, const Image2D& moving, const EncoderParams& p) {
  return learned_forward(fixed, moving, p).eps;
}

namespace detail {

// dEps/dphi for one side: pull -other back through the embedding.
inline FeatureMap embedding_pullback(const FeatureMap& phi, const SphericalField& emb, const SphericalField& other,
                                     EmbedMode mode) {
  FeatureMap g(phi.h, phi.w, phi.channels);
  std::vector<double> neg(other.channels);
  for (std::size_t k = 0; k < phi.pixels(); ++k) {
    const auto o = other.pixel(k);
    for (int c = 0; c < other.channels; ++c) neg[c] = -o[c];
    spherical_exp_vjp(phi.pixel(k), neg, mode, emb.pixel(k), g.pixel(k));
  }
  return g;
}

}  // namespace detail

/// d epsilon / d(moving image).
inline Image2D learned_image_gradient(const Image2D& fixed, const Image2D& moving, const EncoderParams& p) {
  const LearnedForward f = learned_forward(fixed, moving, p);
  const FeatureMap g = detail::embedding_pullback(f.phi_m, f.emb_m, f.emb_f, p.embed);
  return encoder_backward(moving, p, g).input;
}

/// d epsilon / d(encoder parameters), through both the moving and fixed branches.
inline EncoderParams learned_param_gradient(const Image2D& fixed, const Image2D& moving, const EncoderParams& p) {
  const LearnedForward f = learned_forward(fixed, moving, p);
  EncoderParams g = encoder_param_gradient(moving, p, detail::embedding_pullback(f.phi_m, f.emb_m, f.emb_f, p.embed));
  g += encoder_param_gradient(fixed, p, detail::embedding_pullback(f.phi_f, f.emb_f, f.emb_m, p.embed));
  return g;
}

// ---------------------------------------------------------------------------
// Multi-scale normalized cross-correlation.

struct Patch {
  int r0, c0, h, w;
};

/// Non-overlapping size x size tiles from the top-left corner; tiles on the
/// bottom and right edges are clipped to the image.
inline std::vector<Patch> patch_grid(int h, int w, int size) {
  if (size < 1 || size > h || size > w) {
    fail(ErrorCode::InvalidConfig, "patch size " + std::to_string(size) + " must lie in [1, min(h, w)]");
  }
  std::vector<Patch> out;
  for (int r = 0; r < h; r += size)
    for (int c = 0; c < w; c += size) out.push_back({r, c, std::min(size, h - r), std::min(size, w - c)});
  return out;
}

/// Full image, then tiles of min(16, n/2) and min(8, n/4) px where n = min(h, w):
/// {64, 16, 8} at 64 px, {16, 8, 4} at 16 px.
inline std::vector<int> default_patch_sizes(int h, int w) {
  const int full = std::min(h, w);
  std::vector<int> sizes{full};
  for (int s : {std::min(16, full / 2), std::min(8, full / 4)})
    if (s >= 2 && s != sizes.back()) sizes.push_back(s);
  return sizes;
}

namespace detail {

struct NccPatch {
  double ncc = 0.0;
  bool valid = false;
  double mean_a = 0.0, mean_b = 0.0, var_a = 0.0, var_b = 0.0;
  double n = 0.0;
};

// A patch whose variance is negligible next to its mean square counts as
// constant and contributes NCC = 0 with zero derivative.
inline bool has_variance(double var, double mean) { return var > 1e-12 * (var + mean * mean); }

inline NccPatch ncc_patch(const Image2D& a, const Image2D& b, const Patch& p) {
  NccPatch s;
  s.n = static_cast<double>(p.h) * p.w;
  for (int r = p.r0; r < p.r0 + p.h; ++r)
    for (int c = p.c0; c < p.c0 + p.w; ++c) {
      s.mean_a += a(r, c);
      s.mean_b += b(r, c);
    }
  s.mean_a /= s.n;
  s.mean_b /= s.n;
  double cov = 0.0;
  for (int r = p.r0; r < p.r0 + p.h; ++r)
    for (int c = p.c0; c < p.c0 + p.w; ++c) {
      const double da = a(r, c) - s.mean_a, db = b(r, c) - s.mean_b;
      s.var_a += da * da;
      s.var_b += db * db;
      cov += da * db;
    }
  s.var_a /= s.n;
  s.var_b /= s.n;
  cov /= s.n;
  if (!std::isfinite(s.var_a) || !std::isfinite(s.var_b)) {
    s.ncc = std::numeric_limits<double>::quiet_NaN();  // let non-finite input surface
    return s;
  }
  s.valid = has_variance(s.var_a, s.mean_a) && has_variance(s.var_b, s.mean_b);
  if (s.valid) s.ncc = cov / std::sqrt(s.var_a * s.var_b);
  return s;
}

// Directional derivative of NCC w.r.t. `a` along `da`.
inline double ncc_patch_jvp(const Image2D& a, const Image2D& b, const Image2D& da, const Patch& p, const NccPatch& s) {
  if (!s.valid) return 0.0;
  double mean_da = 0.0;
  for (int r = p.r0; r < p.r0 + p.h; ++r)
    for (int c = p.c0; c < p.c0 + p.w; ++c) mean_da += da(r, c);
  mean_da /= s.n;
  double db_term = 0.0, da_term = 0.0;
  for (int r = p.r0; r < p.r0 + p.h; ++r)
    for (int c = p.c0; c < p.c0 + p.w; ++c) {
      const double d = da(r, c) - mean_da;
      db_term += d * (b(r, c) - s.mean_b);
      da_term += d * (a(r, c) - s.mean_a);
    }
  db_term /= s.n;
  da_term /= s.n;
  return db_term / std::sqrt(s.var_a * s.var_b) - s.ncc * da_term / s.var_a;
}

// Accumulates weight * dNCC/da into `g`.
inline void ncc_patch_grad(const Image2D& a, const Image2D& b, const Patch& p, const NccPatch& s, double weight,
                           Image2D& g) {
  if (!s.valid) return;
  const double k1 = weight / (s.n * std::sqrt(s.var_a * s.var_b));
  const double k2 = weight * s.ncc / (s.n * s.var_a);
  for (int r = p.r0; r < p.r0 + p.h; ++r)
    for (int c = p.c0; c < p.c0 + p.w; ++c) g(r, c) += k1 * (b(r, c) - s.mean_b) - k2 * (a(r, c) - s.mean_a);
}

}  // namespace detail

/// Mean over scales of the mean patchwise zero-normalized cross-correlation.
inline double mncc_similarity(const Image2D& a, const Image2D& b, const std::vector<int>& patch_sizes) {
  require_same_shape(a, b, "mncc_similarity");
  if (patch_sizes.empty()) fail(ErrorCode::InvalidConfig, "mncc needs at least one patch size");
  double total = 0.0;
  for (int size : patch_sizes) {
    const auto patches = patch_grid(a.h, a.w, size);
    double acc = 0.0;
    for (const Patch& p : patches) acc += detail::ncc_patch(a, b, p).ncc;
    total += acc / static_cast<double>(patches.size());
  }
  return total / static_cast<double>(patch_sizes.size());
}

inline double mncc_similarity(const Image2D& a, const Image2D& b) {
  return mncc_similarity(a, b, default_patch_sizes(a.h, a.w));
}

/// d mncc / d a.
inline Image2D mncc_gradient(const Image2D& a, const Image2D& b, const std::vector<int>& patch_sizes) {
  require_same_shape(a, b, "mncc_gradient");
  Image2D g(a.h, a.w);
  for (int size : patch_sizes) {
    const auto patches = patch_grid(a.h, a.w, size);
    const double weight = 1.0 / (static_cast<double>(patches.size()) * static_cast<double>(patch_sizes.size()));
    for (const Patch& p : patches) detail::ncc_patch_grad(a, b, p, detail::ncc_patch(a, b, p), weight, g);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Metric-agnostic loss interface.

struct SimilarityModel {
  Metric metric = Metric::Mncc;
  EncoderParams encoder;         // learned metric
  std::vector<int> patch_sizes;  // mncc; empty selects default_patch_sizes
  int downsample = 1;            // box-average factor applied to both images first

  std::vector<int> patches_for(const Image2D& img) const {
    return patch_sizes.empty() ? default_patch_sizes(img.h, img.w) : patch_sizes;
  }
  Image2D view(const Image2D& img) const { return downsample_box(img, downsample); }
};

/// Scalar to minimize: epsilon (learned) or 1 - mncc.
inline double similarity_loss(const SimilarityModel& m, const Image2D& fixed_in, const Image2D& moving_in) {
  const Image2D fixed = m.view(fixed_in), moving = m.view(moving_in);
  if (m.metric == Metric::Learned) return learned_similarity(fixed, moving, m.encoder);
  return 1.0 - mncc_similarity(moving, fixed, m.patches_for(moving));
}

/// d loss / d(moving image).
inline Image2D similarity_image_gradient(const SimilarityModel& m, const Image2D& fixed_in, const Image2D& moving_in) {
  const Image2D fixed = m.view(fixed_in), moving = m.view(moving_in);
  if (m.metric == Metric::Learned) return downsample_box_adjoint(learned_image_gradient(fixed, moving, m.encoder), m.downsample);
  Image2D g = mncc_gradient(moving, fixed, m.patches_for(moving));
  for (double& x : g.data) x = -x;
  return downsample_box_adjoint(g, m.downsample);
}

/// Stacked residuals and J = -dr/dtheta (one column per twist axis).
struct ResidualSystem {
  Eigen::VectorXd r;
  Eigen::Matrix<double, Eigen::Dynamic, 6> J;
  double loss = 0.0;
};

/// Residuals only: per-cell 1 - <Phi_m, Phi_f> (learned) or per-patch
/// 1 - NCC over all scales (mncc). `loss` is the similarity loss.
inline ResidualSystem residuals(const SimilarityModel& m, const Image2D& fixed_in, const Image2D& moving_in) {
  const Image2D fixed = m.view(fixed_in), moving = m.view(moving_in);
  ResidualSystem sys;
  if (m.metric == Metric::Learned) {
    const LearnedForward f = learned_forward(fixed, moving, m.encoder);
    const auto r = residual_field(f.emb_m, f.emb_f);
    sys.r = Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
    sys.loss = f.eps;
    return sys;
  }
  require_same_shape(fixed, moving, "residuals");
  const auto sizes = m.patches_for(moving);
  std::vector<double> r;
  double total = 0.0;
  for (int size : sizes) {
    const auto patches = patch_grid(moving.h, moving.w, size);
    double acc = 0.0;
    for (const Patch& p : patches) {
      const double ncc = detail::ncc_patch(moving, fixed, p).ncc;
      r.push_back(1.0 - ncc);
      acc += ncc;
    }
    total += acc / static_cast<double>(patches.size());
  }
  sys.r = Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
  sys.loss = 1.0 - total / static_cast<double>(sizes.size());
  return sys;
}

/// Residuals plus their Jacobian given the six pose-derivative images of
/// the moving render.
inline ResidualSystem residual_system(const SimilarityModel& m, const Image2D& fixed_in, const Image2D& moving_in,
                                      const std::array<Image2D, 6>& dmoving_in) {
  ResidualSystem sys = residuals(m, fixed_in, moving_in);
  const Image2D fixed = m.view(fixed_in), moving = m.view(moving_in);
  std::array<Image2D, 6> dmoving;
  for (int k = 0; k < 6; ++k) dmoving[k] = m.view(dmoving_in[k]);
  sys.J.resize(sys.r.size(), 6);
  if (m.metric == Metric::Learned) {
    const EncoderParams& p = m.encoder;
    const LearnedForward f = learned_forward(fixed, moving, p);
    std::vector<double> dunit(f.emb_m.channels);
    for (int k = 0; k < 6; ++k) {
      const FeatureMap dphi = encoder_jvp(p, f.tape_m, dmoving[k]);
      for (std::size_t c = 0; c < f.phi_m.pixels(); ++c) {
        spherical_exp_jvp(f.phi_m.pixel(c), dphi.pixel(c), p.embed, f.emb_m.pixel(c), dunit);
        sys.J(static_cast<Eigen::Index>(c), k) = dot(dunit, f.emb_f.pixel(c));  // -d(1 - <., .>)
      }
    }
    return sys;
  }
  const auto sizes = m.patches_for(moving);
  Eigen::Index row = 0;
  for (int size : sizes) {
    for (const Patch& p : patch_grid(moving.h, moving.w, size)) {
      const detail::NccPatch s = detail::ncc_patch(moving, fixed, p);
      for (int k = 0; k < 6; ++k) sys.J(row, k) = detail::ncc_patch_jvp(moving, fixed, dmoving[k], p, s);
      ++row;
    }
  }
  return sys;
}

inline Vec6 contract_pose_gradient(const Image2D& image_grad, const std::array<Image2D, 6>& dmoving) {
  Vec6 g;
  for (int k = 0; k < 6; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < image_grad.data.size(); ++i) acc += image_grad.data[i] * dmoving[k].data[i];
    g[k] = acc;
  }
  return g;
}

/// d loss / d theta (left-multiplied perturbations), chaining the renderer's
/// pose-derivative images with the metric's image gradient.
inline Vec6 grad_similarity_pose(const Volume& vol, const Camera& cam, const Twist& theta, const Image2D& fixed,
                                 const SimilarityModel& m, const GradientSteps& steps = {}) {
  const Image2D moving = render_drr(vol, cam, theta);
  const auto dmoving = render_pose_gradient(vol, cam, theta, steps);
  return contract_pose_gradient(similarity_image_gradient(m, fixed, moving), dmoving);
}

// ---------------------------------------------------------------------------
// Double-backward loss.

enum class GradientCompare { Geodesic, Euclidean };

/// d L_geo(theta, theta_gt) / d theta by central differences of
/// left-multiplied perturbations, matching the renderer's convention.
inline Vec6 geodesic_pose_gradient(const Twist& theta, const Twist& theta_gt, GeodesicFlavor flavor, double f,
                                   const GradientSteps& steps = {}) {
  Vec6 g;
  for (int k = 0; k < 6; ++k) {
    Twist d;
    d[k] = steps[k];
    const double plus = geodesic(flavor, left_compose(d, theta), theta_gt, f);
    d[k] = -steps[k];
    const double minus = geodesic(flavor, left_compose(d, theta), theta_gt, f);
    g[k] = (plus - minus) / (2.0 * steps[k]);
  }
  return g;
}

/// Mismatch between the network's pose gradient and the geodesic's; the
/// two 6-vectors are compared as twists (default) or as plain vectors.
inline double gradient_mismatch(const Vec6& grad_net, const Vec6& g_geo, GradientCompare compare = GradientCompare::Geodesic) {
  if (compare == GradientCompare::Euclidean) return (grad_net - g_geo).norm();
  return geodesic_se3(Twist::from_vector(grad_net), Twist::from_vector(g_geo));
}

inline double double_backward_loss(const Twist& theta, const Twist& theta_gt, const Vec6& grad_net,
                                   GeodesicFlavor flavor, double f, const GradientSteps& steps = {},
                                   GradientCompare compare = GradientCompare::Geodesic) {
  return gradient_mismatch(grad_net, geodesic_pose_gradient(theta, theta_gt, flavor, f, steps), compare);
}

}  // namespace sphereg
