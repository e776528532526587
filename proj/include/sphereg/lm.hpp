#pragma once

// Damped Gauss-Newton (Levenberg-Marquardt) refinement of a pose on se(3).
// Residuals and their Jacobian come from the similarity engine; increments
// are applied on the left, theta <- log(exp(delta) exp(theta)).

#include <Eigen/Dense>

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <vector>

#include "sphereg/error.hpp"
#include "sphereg/lie.hpp"
#include "sphereg/renderer.hpp"
#include "sphereg/similarity.hpp"

namespace sphereg {

enum class WeightMode { Identity, Custom };
enum class TerminationMode { Norm, PerComponent };

struct LMConfig {
  double lambda0 = 1e-2;
  double lambda_up = 10.0;
  double lambda_down = 3.0;
  int max_iters = 100;
  int term_window = 10;
  double term_std = 1e-2;
  TerminationMode term_mode = TerminationMode::Norm;
  GradientSteps fd_steps;
  WeightMode weight_mode = WeightMode::Identity;
  std::vector<double> weights;  // one per residual when weight_mode == Custom

  void validate() const {
    if (!(lambda0 > 0.0)) fail(ErrorCode::InvalidConfig, "lambda0 must be positive");
    if (!(lambda_up > 1.0) || !(lambda_down > 1.0)) fail(ErrorCode::InvalidConfig, "damping factors must exceed 1");
    if (term_window < 2) fail(ErrorCode::InvalidConfig, "term_window must be at least 2");
    if (max_iters < term_window) fail(ErrorCode::InvalidConfig, "max_iters must be at least term_window");
    if (!(term_std > 0.0)) fail(ErrorCode::InvalidConfig, "term_std must be positive");
    if (!(fd_steps.rotation > 0.0) || !(fd_steps.translation > 0.0)) {
      fail(ErrorCode::InvalidConfig, "finite-difference steps must be positive");
    }
    if (weight_mode == WeightMode::Custom) {
      if (weights.empty()) fail(ErrorCode::InvalidConfig, "custom weight mode needs weights");
      for (double w : weights)
        if (!(w >= 0.0) || !std::isfinite(w)) fail(ErrorCode::InvalidConfig, "weights must be finite and >= 0");
    }
  }
};

struct LMIteration {
  int iteration = 0;
  Twist theta;             // pose after this iteration's accept/reject
  double eps = 0.0;        // loss at `theta`
  double lambda = 0.0;     // damping used for the proposed step
  double step_norm = 0.0;  // |delta| of the proposed step
  Vec6 step = Vec6::Zero();
  bool accepted = false;
};

struct RegistrationResult {
  Twist theta_est;
  double eps = 0.0;
  std::vector<LMIteration> trace;
  bool converged = false;
  int iterations = 0;
};

/// Raised when the loss stops being finite; carries the trajectory so far.
class DivergedError : public Error {
 public:
  DivergedError(const std::string& what, RegistrationResult partial)
      : Error(ErrorCode::Diverged, what), partial_(std::move(partial)) {}
  const RegistrationResult& partial() const noexcept { return partial_; }

 private:
  RegistrationResult partial_;
};

/// delta = (J^T W J + lambda I)^-1 J^T W r with J = -dr/dtheta. `w` holds the
/// diagonal of W; empty means identity.
inline Vec6 lm_step(const Eigen::VectorXd& r, const Eigen::Matrix<double, Eigen::Dynamic, 6>& J,
                    const Eigen::VectorXd& w, double lambda) {
  if (J.rows() != r.size()) fail(ErrorCode::ShapeMismatch, "lm_step: J and r disagree on the residual count");
  if (w.size() != 0 && w.size() != r.size()) fail(ErrorCode::ShapeMismatch, "lm_step: weight count differs from r");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail(ErrorCode::InvalidConfig, "lm_step: lambda must be >= 0");
  Eigen::Matrix<double, 6, 6> A;
  Vec6 b;
  if (w.size() == 0) {
    A.noalias() = J.transpose() * J;
    b.noalias() = J.transpose() * r;
  } else {
    A.noalias() = J.transpose() * w.asDiagonal() * J;
    b.noalias() = J.transpose() * w.cwiseProduct(r);
  }
  if (b.isZero(0.0)) return Vec6::Zero();
  // Undamped, a parameter whose Jacobian column is identically zero is
  // inactive: it is left out of the solve and gets a zero increment.
  std::vector<int> active;
  for (int k = 0; k < 6; ++k)
    if (lambda > 0.0 || A(k, k) != 0.0) active.push_back(k);
  const auto n = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd As(n, n);
  Eigen::VectorXd bs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    bs(i) = b(active[i]);
    for (Eigen::Index j = 0; j < n; ++j) As(i, j) = A(active[i], active[j]);
  }
  As.diagonal().array() += lambda;
  const Eigen::LLT<Eigen::MatrixXd> llt(As);
  const double scale = As.diagonal().cwiseAbs().maxCoeff();
  const double pivot = llt.matrixLLT().diagonal().minCoeff();
  if (llt.info() != Eigen::Success || !(pivot * pivot > 1e-14 * scale)) {
    fail(ErrorCode::SolveFailed, "damped normal matrix is numerically singular");
  }
  const Eigen::VectorXd xs = llt.solve(bs);
  Vec6 delta = Vec6::Zero();
  for (Eigen::Index i = 0; i < n; ++i) delta(active[i]) = xs(i);
  if (!delta.allFinite()) fail(ErrorCode::SolveFailed, "non-finite increment");
  return delta;
}

namespace detail {

inline double population_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

inline bool window_settled(const std::vector<LMIteration>& trace, const LMConfig& cfg) {
  if (static_cast<int>(trace.size()) < cfg.term_window) return false;
  const auto first = trace.end() - cfg.term_window;
  if (cfg.term_mode == TerminationMode::Norm) {
    std::vector<double> norms;
    for (auto it = first; it != trace.end(); ++it) norms.push_back(it->step_norm);
    return population_std(norms) < cfg.term_std;
  }
  for (int k = 0; k < 6; ++k) {
    std::vector<double> comp;
    for (auto it = first; it != trace.end(); ++it) comp.push_back(it->step[k]);
    if (population_std(comp) >= cfg.term_std) return false;
  }
  return true;
}

}  // namespace detail

/// Refines theta_init against `fixed`. A step is accepted only when it
/// strictly lowers the loss; lambda is divided by lambda_down on accept and
/// multiplied by lambda_up on reject. Stops when the spread of the proposed
/// increments over the last term_window iterations falls below term_std.
inline RegistrationResult lm_refine(const Volume& vol, const Camera& cam, const Image2D& fixed,
                                    const Twist& theta_init, const SimilarityModel& model, const LMConfig& cfg) {
  cfg.validate();
  cam.validate();
  if (fixed.h != cam.det_h || fixed.w != cam.det_w) fail(ErrorCode::ShapeMismatch, "target does not match the detector");

  RegistrationResult res;
  Twist theta = theta_init;
  double lambda = cfg.lambda0;

  auto assemble = [&](const Twist& t) {
    const Image2D moving = render_drr(vol, cam, t);
    return residual_system(model, fixed, moving, render_pose_gradient(vol, cam, t, cfg.fd_steps));
  };
  ResidualSystem sys = assemble(theta);
  double eps = sys.loss;
  res.theta_est = theta;
  res.eps = eps;
  if (!std::isfinite(eps)) throw DivergedError("initial loss is not finite", res);

  Eigen::VectorXd w;
  if (cfg.weight_mode == WeightMode::Custom) {
    if (static_cast<Eigen::Index>(cfg.weights.size()) != sys.r.size()) {
      fail(ErrorCode::ShapeMismatch, "custom weights: expected " + std::to_string(sys.r.size()) + " entries");
    }
    w = Eigen::Map<const Eigen::VectorXd>(cfg.weights.data(), sys.r.size());
  }

  for (int it = 1; it <= cfg.max_iters; ++it) {
    LMIteration rec;
    rec.iteration = it;
    rec.lambda = lambda;
    try {
      rec.step = lm_step(sys.r, sys.J, w, lambda);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SolveFailed) throw;
      rec.step.setZero();
    }
    rec.step_norm = rec.step.norm();

    bool accepted = false;
    if (rec.step_norm > 0.0) {
      const Twist cand = left_compose(Twist::from_vector(rec.step), theta);
      const double cand_eps = similarity_loss(model, fixed, render_drr(vol, cam, cand));
      if (!std::isfinite(cand_eps)) {
        res.iterations = static_cast<int>(res.trace.size());
        throw DivergedError("loss became non-finite at iteration " + std::to_string(it), res);
      }
      if (cand_eps < eps) {
        accepted = true;
        theta = cand;
        sys = assemble(theta);
        eps = sys.loss;
      }
    }
    lambda = accepted ? lambda / cfg.lambda_down : lambda * cfg.lambda_up;
    // Keep lambda representable; beyond this every step is zero anyway.
    lambda = std::min(lambda, 1e300);

    rec.accepted = accepted;
    rec.theta = theta;
    rec.eps = eps;
    res.trace.push_back(rec);
    if (detail::window_settled(res.trace, cfg)) {
      res.converged = true;
      break;
    }
  }
  res.theta_est = theta;
  res.eps = eps;
  res.iterations = static_cast<int>(res.trace.size());
  return res;
}

/// One row per iteration: iter, eps, lambda, dtheta_norm, accepted, theta[0..5].
inline void write_trace_csv(std::ostream& os, const std::vector<LMIteration>& trace) {
  os << "iter,eps,lambda,dtheta_norm,accepted,theta0,theta1,theta2,theta3,theta4,theta5\n";
  os << std::setprecision(17);
  for (const LMIteration& r : trace) {
    os << r.iteration << ',' << r.eps << ',' << r.lambda << ',' << r.step_norm << ',' << (r.accepted ? 1 : 0);
    for (int k = 0; k < 6; ++k) os << ',' << r.theta[k];
    os << '\n';
  }
}

}  // namespace sphereg
