#pragma once

// Self-supervised training of the encoder with the double-backward loss:
// the pose gradient of the learned similarity is pulled toward the pose
// gradient of a geodesic distance to the ground truth.
//
// The parameter gradient of L(g_net(p)) is c^T dg_net/dp with c = dL/dg_net.
// Since g_net = <d eps / d moving, dI/dtheta>, c^T g_net is the derivative of
// eps along the image direction u = sum_k c_k dI/dtheta_k, so
//   d(c^T g_net)/dp = d/dt [d eps / dp](moving + t u),
// which is taken by central differences in t of the exact reverse-mode
// parameter gradient. Two backward passes per iteration cover all parameters.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <random>
#include <vector>

#include "sphereg/augmentation.hpp"
#include "sphereg/lie.hpp"
#include "sphereg/renderer.hpp"
#include "sphereg/similarity.hpp"

namespace sphereg {

enum class OptimizerKind { Adam, Sgd };

struct TrainConfig {
  int iterations = 500;
  double learning_rate = 1e-2;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t rng_seed = 0;
  double gt_rot_deg = 10.0;  // theta_gt drawn around the isocenter
  double gt_trans_mm = 10.0;
  double rot_deg = 5.0;  // theta drawn around theta_gt
  double trans_mm = 5.0;
  GeodesicFlavor flavor = GeodesicFlavor::Se3;
  double f = 400.0;  // focal length for the SO(4) embedding
  // Plain difference by default: as twists, the rotation parts of pose
  // gradients routinely exceed pi and wrap, which leaves nothing to learn.
  GradientCompare compare = GradientCompare::Euclidean;
  bool augmentation = false;
  RandomizationConfig randomization;
  GradientSteps fd_steps;
  int downsample = 2;            // detector pixels per encoder pixel
  double direction_step = 1e-3;  // t step, relative to rms(moving) / rms(u)

  void validate() const {
    if (iterations < 1) fail(ErrorCode::InvalidConfig, "iterations must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      fail(ErrorCode::InvalidConfig, "learning_rate must be finite and >= 0");
    }
    if (gt_rot_deg < 0 || gt_trans_mm < 0 || rot_deg < 0 || trans_mm < 0) {
      fail(ErrorCode::InvalidConfig, "pose sampling ranges must be non-negative");
    }
    check_focal(f);
    if (downsample < 1) fail(ErrorCode::InvalidConfig, "downsample must be >= 1");
    if (!(direction_step > 0.0)) fail(ErrorCode::InvalidConfig, "direction_step must be positive");
    if (augmentation) randomization.validate();
  }
};

struct TrainRecord {
  int iteration = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  EncoderParams params;
  std::vector<TrainRecord> trace;
};

/// One training sample: everything the loss needs at a drawn pose pair.
struct TrainSample {
  Twist theta_gt, theta;
  Image2D fixed, moving;
  std::array<Image2D, 6> dmoving;
};

template <class Rng>
TrainSample draw_train_sample(const Volume& vol, const Camera& cam, const TrainConfig& cfg, Rng& rng) {
  TrainSample s;
  s.theta_gt = sample_pose(Twist{}, cfg.gt_rot_deg, cfg.gt_trans_mm, rng);
  s.theta = sample_pose(s.theta_gt, cfg.rot_deg, cfg.trans_mm, rng);
  s.fixed = render_drr(vol, cam, s.theta_gt);
  const std::uint64_t aug_seed = rng();
  if (cfg.augmentation) s.fixed = randomize(s.fixed, cfg.randomization, aug_seed);
  s.moving = render_drr(vol, cam, s.theta);
  s.dmoving = render_pose_gradient(vol, cam, s.theta, cfg.fd_steps);
  return s;
}

/// Double-backward loss at one sample and, when `grad` is given, its
/// gradient with respect to the encoder parameters.
inline double double_backward_sample(const TrainSample& s, const EncoderParams& p, const TrainConfig& cfg,
                                     EncoderParams* grad = nullptr) {
  SimilarityModel m{Metric::Learned, p, {}};
  m.downsample = cfg.downsample;
  const Vec6 g_net = contract_pose_gradient(similarity_image_gradient(m, s.fixed, s.moving), s.dmoving);
  const Vec6 g_geo = geodesic_pose_gradient(s.theta, s.theta_gt, cfg.flavor, cfg.f, cfg.fd_steps);
  const double loss = gradient_mismatch(g_net, g_geo, cfg.compare);
  if (!grad) return loss;

  // c = dL/dg_net by central differences; L is a cheap closed form in g.
  Vec6 c;
  for (int k = 0; k < 6; ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(g_net[k]));
    Vec6 a = g_net, b = g_net;
    a[k] += h;
    b[k] -= h;
    c[k] = (gradient_mismatch(a, g_geo, cfg.compare) - gradient_mismatch(b, g_geo, cfg.compare)) / (2.0 * h);
  }
  Image2D u(s.moving.h, s.moving.w);
  for (int k = 0; k < 6; ++k)
    for (std::size_t i = 0; i < u.size(); ++i) u.data[i] += c[k] * s.dmoving[k].data[i];

  const Image2D fixed_v = m.view(s.fixed), moving_v = m.view(s.moving), u_v = m.view(u);
  double su = 0.0, sm = 0.0;
  for (std::size_t i = 0; i < u_v.size(); ++i) {
    su += u_v.data[i] * u_v.data[i];
    sm += moving_v.data[i] * moving_v.data[i];
  }
  *grad = p.zeros_like();
  if (su == 0.0) return loss;
  const double t = cfg.direction_step * std::sqrt(std::max(sm, 1e-300) / su);
  Image2D plus = moving_v, minus = moving_v;
  for (std::size_t i = 0; i < u_v.size(); ++i) {
    plus.data[i] += t * u_v.data[i];
    minus.data[i] -= t * u_v.data[i];
  }
  const EncoderParams gp = learned_param_gradient(fixed_v, plus, p);
  const EncoderParams gm = learned_param_gradient(fixed_v, minus, p);
  auto dst = grad->tensors();
  auto a = gp.tensors();
  auto b = gm.tensors();
  for (std::size_t ti = 0; ti < dst.size(); ++ti)
    for (std::size_t i = 0; i < dst[ti]->size(); ++i) (*dst[ti])[i] = ((*a[ti])[i] - (*b[ti])[i]) / (2.0 * t);
  return loss;
}

/// Adam (beta 0.9 / 0.999) or plain gradient descent on the flat parameter vector.
class ParamOptimizer {
 public:
  ParamOptimizer(OptimizerKind kind, double lr, std::size_t n) : kind_(kind), lr_(lr), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& x, const std::vector<double>& g) {
    ++t_;
    if (kind_ == OptimizerKind::Sgd) {
      for (std::size_t i = 0; i < x.size(); ++i) x[i] -= lr_ * g[i];
      return;
    }
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
    for (std::size_t i = 0; i < x.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * g[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * g[i] * g[i];
      x[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    }
  }

 private:
  OptimizerKind kind_;
  double lr_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

/// Runs cfg.iterations updates from `init`. Every draw comes from one
/// generator seeded with cfg.rng_seed, so a seed fixes the whole trace.
inline TrainResult train_similarity(const Volume& vol, const Camera& cam, const EncoderParams& init,
                                    const TrainConfig& cfg) {
  cfg.validate();
  cam.validate();
  init.validate();
  if (cam.det_h != init.in_h * cfg.downsample || cam.det_w != init.in_w * cfg.downsample) {
    fail(ErrorCode::ShapeMismatch, "detector size must equal the encoder input times the downsample factor");
  }
  TrainResult res;
  res.params = init;
  std::mt19937_64 rng(cfg.rng_seed);
  std::vector<double> x = init.flatten();
  ParamOptimizer opt(cfg.optimizer, cfg.learning_rate, x.size());
  for (int it = 1; it <= cfg.iterations; ++it) {
    const TrainSample s = draw_train_sample(vol, cam, cfg, rng);
    EncoderParams g;
    const double loss = double_backward_sample(s, res.params, cfg, &g);
    const std::vector<double> gf = g.flatten();
    double gn = 0.0;
    for (double v : gf) gn += v * v;
    gn = std::sqrt(gn);
    if (!std::isfinite(loss) || !std::isfinite(gn)) {
      fail(ErrorCode::Diverged, "training loss became non-finite at iteration " + std::to_string(it));
    }
    res.trace.push_back({it, loss, gn});
    opt.step(x, gf);
    res.params.unflatten(x);
  }
  return res;
}

/// iteration,loss,grad_norm
inline void write_loss_csv(std::ostream& os, const std::vector<TrainRecord>& trace) {
  os << "iteration,loss,grad_norm\n" << std::setprecision(17);
  for (const TrainRecord& r : trace) os << r.iteration << ',' << r.loss << ',' << r.grad_norm << '\n';
}

}  // namespace sphereg
