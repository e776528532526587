#pragma once

// End-to-end registration: multi-start initialization, coarse-to-fine LM
// refinement, the seeded benchmark harness, similarity landscapes and the
// optimizer comparison.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sphereg/augmentation.hpp"
#include "sphereg/lm.hpp"
#include "sphereg/phantom.hpp"
#include "sphereg/renderer.hpp"
#include "sphereg/similarity.hpp"

namespace sphereg {

// ---------------------------------------------------------------------------
// Multi-start initialization.

struct Candidate {
  Twist pose;
  double loss = 0.0;
  int index = 0;  // position in the draw order
};

/// The center followed by K - 1 draws of sample_pose around it.
inline std::vector<Twist> draw_candidates(const Twist& center, int K, double rot_deg, double trans_mm,
                                          std::uint64_t seed) {
  if (K < 1) fail(ErrorCode::InvalidConfig, "K must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<Twist> out{center};
  for (int k = 1; k < K; ++k) out.push_back(sample_pose(center, rot_deg, trans_mm, rng));
  return out;
}

/// Candidates scored against `fixed`, ascending by loss (ties keep draw order).
inline std::vector<Candidate> rank_candidates(const Volume& vol, const Camera& cam, const Image2D& fixed,
                                              const std::vector<Twist>& poses, const SimilarityModel& model) {
  std::vector<Candidate> out(poses.size());
  for (std::size_t k = 0; k < poses.size(); ++k) {
    out[k].pose = poses[k];
    out[k].index = static_cast<int>(k);
    out[k].loss = similarity_loss(model, fixed, render_drr(vol, cam, poses[k]));
  }
  // Non-finite losses sort last.
  std::stable_sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    const bool fa = std::isfinite(a.loss), fb = std::isfinite(b.loss);
    if (fa != fb) return fa;
    return fa && a.loss < b.loss;
  });
  return out;
}

/// Pose of minimum loss among the K candidates.
inline Twist initialize_pose(const Volume& vol, const Camera& cam, const Image2D& fixed, int K, double rot_deg,
                             double trans_mm, const SimilarityModel& model, std::uint64_t seed,
                             const Twist& center = {}) {
  return rank_candidates(vol, cam, fixed, draw_candidates(center, K, rot_deg, trans_mm, seed), model).front().pose;
}

// ---------------------------------------------------------------------------
// Registration.

struct RegisterOptions {
  bool multi_start = true;  // false: refine the center directly
  int K = 32;
  double init_rot_deg = 5.0;
  double init_trans_mm = 10.0;
  int refine_top = 4;                // candidates refined; the lowest final loss wins
  std::vector<int> pyramid{4, 2, 1};  // detector downsample per stage (mncc only)
  LMConfig lm;
  std::uint64_t seed = 0;

  void validate() const {
    if (K < 1) fail(ErrorCode::InvalidConfig, "K must be >= 1");
    if (refine_top < 1) fail(ErrorCode::InvalidConfig, "refine_top must be >= 1");
    if (init_rot_deg < 0 || init_trans_mm < 0) fail(ErrorCode::InvalidConfig, "init ranges must be >= 0");
    if (pyramid.empty()) fail(ErrorCode::InvalidConfig, "pyramid needs at least one stage");
    for (int f : pyramid)
      if (f < 1) fail(ErrorCode::InvalidConfig, "pyramid factors must be >= 1");
    if (pyramid.back() != 1) fail(ErrorCode::InvalidConfig, "the last pyramid stage must be full resolution");
    lm.validate();
  }
};

struct StageSummary {
  int candidate = 0;
  int downsample = 1;
  int iterations = 0;
  double eps = 0.0;
  bool converged = false;
};

struct RegistrationOutcome {
  Twist theta_init;         // multi-start winner (or the center)
  double init_loss = 0.0;   // full-resolution loss at theta_init
  RegistrationResult result;  // final pose; trace concatenates the winner's stages
  std::vector<int> trace_stage;  // downsample factor per trace row
  std::vector<StageSummary> stages;  // every stage of every refined candidate
  int winner = -1;  // rank of the refined candidate kept; -1 keeps theta_init
};

namespace detail {

// Model for one pyramid stage; mncc patch sizes shrink with the image.
inline SimilarityModel stage_model(const SimilarityModel& base, int factor) {
  SimilarityModel m = base;
  m.downsample = base.downsample * factor;
  if (!base.patch_sizes.empty())
    for (int& p : m.patch_sizes) p = std::max(1, p / factor);
  return m;
}

}  // namespace detail

/// Refines `center` against `fixed`. Each refined candidate runs the
/// pyramid coarse to fine; the final pose is the lowest full-resolution loss
/// among the refined candidates and theta_init itself, so the result never
/// scores worse than its initialization.
inline RegistrationOutcome register_pose(const Volume& vol, const Camera& cam, const Image2D& fixed,
                                         const Twist& center, const SimilarityModel& model,
                                         const RegisterOptions& opt) {
  opt.validate();
  cam.validate();
  if (fixed.h != cam.det_h || fixed.w != cam.det_w) fail(ErrorCode::ShapeMismatch, "target does not match the detector");
  std::vector<int> pyramid = model.metric == Metric::Mncc ? opt.pyramid : std::vector<int>{1};
  for (int f : pyramid) {
    const int d = f * model.downsample;
    if (cam.det_h % d != 0 || cam.det_w % d != 0) {
      fail(ErrorCode::InvalidConfig, "pyramid factor " + std::to_string(f) + " does not divide the detector");
    }
  }

  std::vector<Candidate> ranked;
  if (opt.multi_start) {
    ranked = rank_candidates(vol, cam, fixed, draw_candidates(center, opt.K, opt.init_rot_deg, opt.init_trans_mm, opt.seed),
                             model);
  } else {
    ranked = rank_candidates(vol, cam, fixed, {center}, model);
  }
  RegistrationOutcome out;
  out.theta_init = ranked.front().pose;
  out.init_loss = ranked.front().loss;
  if (!std::isfinite(out.init_loss)) {
    RegistrationResult partial;
    partial.theta_est = out.theta_init;
    partial.eps = out.init_loss;
    throw DivergedError("initial loss is not finite", partial);
  }
  out.result.theta_est = out.theta_init;
  out.result.eps = out.init_loss;

  const int n_refine = std::min<int>(opt.refine_top, static_cast<int>(ranked.size()));
  for (int c = 0; c < n_refine; ++c) {
    if (!std::isfinite(ranked[static_cast<std::size_t>(c)].loss)) break;
    Twist theta = ranked[static_cast<std::size_t>(c)].pose;
    RegistrationResult combined;
    std::vector<int> rows;
    RegistrationResult last;
    for (int f : pyramid) {
      const SimilarityModel m = detail::stage_model(model, f);
      last = lm_refine(vol, cam, fixed, theta, m, opt.lm);
      out.stages.push_back({c, f, last.iterations, last.eps, last.converged});
      for (LMIteration it : last.trace) {
        it.iteration = static_cast<int>(combined.trace.size()) + 1;
        combined.trace.push_back(it);
        rows.push_back(f);
      }
      theta = last.theta_est;
    }
    // The last stage is full resolution, so its eps is the comparable loss.
    if (last.eps < out.result.eps) {
      combined.theta_est = theta;
      combined.eps = last.eps;
      combined.converged = last.converged;
      combined.iterations = static_cast<int>(combined.trace.size());
      out.result = std::move(combined);
      out.trace_stage = std::move(rows);
      out.winner = c;
    }
  }
  out.result.iterations = static_cast<int>(out.result.trace.size());
  return out;
}

/// iter,stage_downsample,eps,lambda,dtheta_norm,accepted,theta0..theta5
inline void write_stage_trace_csv(std::ostream& os, const RegistrationOutcome& o) {
  os << "iter,downsample,eps,lambda,dtheta_norm,accepted,theta0,theta1,theta2,theta3,theta4,theta5\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < o.result.trace.size(); ++i) {
    const LMIteration& r = o.result.trace[i];
    os << r.iteration << ',' << o.trace_stage[i] << ',' << r.eps << ',' << r.lambda << ',' << r.step_norm << ','
       << (r.accepted ? 1 : 0);
    for (int k = 0; k < 6; ++k) os << ',' << r.theta[k];
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Benchmark.

struct BenchmarkConfig {
  int n_cases = 100;
  double gt_rot_deg = 10.0;  // theta_gt around the isocenter
  double gt_trans_mm = 10.0;
  double pert_rot_deg = 5.0;  // initial perturbation of theta_gt
  double pert_trans_mm = 10.0;
  bool randomize_targets = false;
  RandomizationConfig randomization;
  GeodesicFlavor flavor = GeodesicFlavor::Se3;  // reported pose error
  double f = 400.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_cases < 1) fail(ErrorCode::InvalidConfig, "n_cases must be >= 1");
    if (gt_rot_deg < 0 || gt_trans_mm < 0 || pert_rot_deg < 0 || pert_trans_mm < 0) {
      fail(ErrorCode::InvalidConfig, "benchmark ranges must be >= 0");
    }
    check_focal(f);
    if (randomize_targets) randomization.validate();
  }
};

struct CaseResult {
  int index = 0;
  std::uint64_t seed = 0;
  Twist theta_gt, theta_start, theta_est;
  double init_mtre = 0.0;
  double mtre = std::numeric_limits<double>::infinity();
  double pose_error = std::numeric_limits<double>::infinity();  // geodesic to theta_gt
  double eps = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  bool converged = false;
  std::string status = "ok";  // or the error code of a failed case
};

struct BenchmarkResult {
  std::vector<CaseResult> cases;
  MetricsReport report;
};

/// Per-case seed derived from the run seed, so cases are independent.
inline std::uint64_t case_seed(std::uint64_t seed, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::uint64_t out[1];
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out[0];
}

inline CaseResult run_case(const Phantom& ph, const Camera& cam, const SimilarityModel& model,
                           const RegisterOptions& reg, const BenchmarkConfig& cfg, int index) {
  CaseResult c;
  c.index = index;
  c.seed = case_seed(cfg.seed, index);
  std::mt19937_64 rng(c.seed);
  c.theta_gt = sample_pose(Twist{}, cfg.gt_rot_deg, cfg.gt_trans_mm, rng);
  c.theta_start = sample_pose(c.theta_gt, cfg.pert_rot_deg, cfg.pert_trans_mm, rng);
  const std::uint64_t aug_seed = rng(), init_seed = rng();
  const auto landmarks = landmarks_about_isocenter(ph, cam);
  c.init_mtre = mtre(landmarks, c.theta_start, c.theta_gt);
  c.theta_est = c.theta_start;
  try {
    Image2D fixed = render_drr(ph.volume, cam, c.theta_gt);
    if (cfg.randomize_targets) fixed = randomize(fixed, cfg.randomization, aug_seed);
    RegisterOptions opt = reg;
    opt.seed = init_seed;
    const RegistrationOutcome o = register_pose(ph.volume, cam, fixed, c.theta_start, model, opt);
    c.theta_est = o.result.theta_est;
    c.eps = o.result.eps;
    c.iterations = o.result.iterations;
    c.converged = o.result.converged;
    c.mtre = mtre(landmarks, c.theta_est, c.theta_gt);
    c.pose_error = geodesic(cfg.flavor, c.theta_est, c.theta_gt, cfg.f);
    if (!std::isfinite(c.mtre)) c.mtre = std::numeric_limits<double>::infinity();
  } catch (const Error& e) {
    // A failed case counts as a miss; the batch carries on.
    c.status = std::string(to_string(e.code()));
    c.mtre = std::numeric_limits<double>::infinity();
    c.pose_error = std::numeric_limits<double>::infinity();
  }
  return c;
}

/// Runs every case (concurrently when OpenMP is available) and aggregates.
inline BenchmarkResult benchmark(const Phantom& ph, const Camera& cam, const SimilarityModel& model,
                                 const RegisterOptions& reg, const BenchmarkConfig& cfg) {
  cfg.validate();
  reg.validate();
  BenchmarkResult res;
  res.cases.resize(static_cast<std::size_t>(cfg.n_cases));
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < cfg.n_cases; ++i) res.cases[static_cast<std::size_t>(i)] = run_case(ph, cam, model, reg, cfg, i);
  std::vector<double> values;
  for (const CaseResult& c : res.cases) values.push_back(c.mtre);
  res.report = metrics_report(values);
  return res;
}

inline void write_cases_csv(std::ostream& os, const std::vector<CaseResult>& cases) {
  os << "case,seed,status,mtre,init_mtre,pose_error,eps,iterations,converged";
  for (const char* p : {"gt", "est"})
    for (int k = 0; k < 6; ++k) os << ',' << p << k;
  os << '\n' << std::setprecision(17);
  for (const CaseResult& c : cases) {
    os << c.index << ',' << c.seed << ',' << c.status << ',' << c.mtre << ',' << c.init_mtre << ',' << c.pose_error
       << ',' << c.eps << ',' << c.iterations << ',' << (c.converged ? 1 : 0);
    for (int k = 0; k < 6; ++k) os << ',' << c.theta_gt[k];
    for (int k = 0; k < 6; ++k) os << ',' << c.theta_est[k];
    os << '\n';
  }
}

/// Recomputes the aggregate report from a per-case CSV (the mtre column).
inline MetricsReport report_from_cases_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::EmptyInput, "empty case CSV");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const auto col = std::find(header.begin(), header.end(), "mtre") - header.begin();
  if (col == static_cast<long>(header.size())) fail(ErrorCode::InvalidConfig, "case CSV has no mtre column");
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    for (long k = 0; k <= col; ++k) std::getline(ss, cell, ',');
    values.push_back(cell == "inf" ? std::numeric_limits<double>::infinity() : std::stod(cell));
  }
  return metrics_report(values);
}

// ---------------------------------------------------------------------------
// Similarity landscape.

struct LandscapeCell {
  int i = 0, j = 0;
  double offset_a = 0.0, offset_b = 0.0;  // twist units: rad or mm
  double eps = 0.0;
  double one_minus_eps_hat = 0.0;  // 1 - (eps - min) / (max - min)
};

struct Landscape {
  int axis_a = 0, axis_b = 1;
  int n_a = 1, n_b = 1;
  std::vector<LandscapeCell> cells;  // row-major in (i, j)
};

inline std::vector<double> symmetric_grid(double extent, int n) {
  if (n < 1) fail(ErrorCode::InvalidConfig, "grid resolution must be >= 1");
  std::vector<double> g(static_cast<std::size_t>(n), 0.0);
  if (n == 1) return g;
  for (int k = 0; k < n; ++k) g[static_cast<std::size_t>(k)] = -extent + 2.0 * extent * k / (n - 1);
  return g;
}

/// Loss on a grid of left perturbations of theta_gt along two twist axes.
inline Landscape landscape(const Volume& vol, const Camera& cam, const Image2D& fixed, const Twist& theta_gt,
                           const SimilarityModel& model, int axis_a, int axis_b, double extent_a, double extent_b,
                           int n_a, int n_b) {
  if (axis_a < 0 || axis_a > 5 || axis_b < 0 || axis_b > 5 || axis_a == axis_b) {
    fail(ErrorCode::InvalidConfig, "landscape axes must be two distinct indices in 0..5");
  }
  Landscape L;
  L.axis_a = axis_a;
  L.axis_b = axis_b;
  L.n_a = n_a;
  L.n_b = n_b;
  const std::vector<double> ga = symmetric_grid(extent_a, n_a), gb = symmetric_grid(extent_b, n_b);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int i = 0; i < n_a; ++i)
    for (int j = 0; j < n_b; ++j) {
      LandscapeCell c;
      c.i = i;
      c.j = j;
      c.offset_a = ga[static_cast<std::size_t>(i)];
      c.offset_b = gb[static_cast<std::size_t>(j)];
      Twist d;
      d[axis_a] = c.offset_a;
      d[axis_b] = c.offset_b;
      c.eps = similarity_loss(model, fixed, render_drr(vol, cam, left_compose(d, theta_gt)));
      lo = std::min(lo, c.eps);
      hi = std::max(hi, c.eps);
      L.cells.push_back(c);
    }
  for (LandscapeCell& c : L.cells) c.one_minus_eps_hat = hi > lo ? 1.0 - (c.eps - lo) / (hi - lo) : 1.0;
  return L;
}

inline void write_landscape_csv(std::ostream& os, const Landscape& L) {
  os << "i,j,offset_a,offset_b,eps,one_minus_eps_hat\n" << std::setprecision(17);
  for (const LandscapeCell& c : L.cells)
    os << c.i << ',' << c.j << ',' << c.offset_a << ',' << c.offset_b << ',' << c.eps << ',' << c.one_minus_eps_hat
       << '\n';
}

/// Loss along one twist axis on n points in [-extent, extent].
inline std::vector<double> axis_profile(const Volume& vol, const Camera& cam, const Image2D& fixed,
                                        const Twist& theta_gt, const SimilarityModel& model, int axis, double extent,
                                        int n) {
  if (axis < 0 || axis > 5) fail(ErrorCode::InvalidConfig, "axis must be in 0..5");
  std::vector<double> out;
  for (double o : symmetric_grid(extent, n)) {
    Twist d;
    d[axis] = o;
    out.push_back(similarity_loss(model, fixed, render_drr(vol, cam, left_compose(d, theta_gt))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer comparison.

enum class OptimMethod { Lm, Gd, Adam };

inline std::string to_string(OptimMethod m) {
  switch (m) {
    case OptimMethod::Lm: return "lm";
    case OptimMethod::Gd: return "gd";
    case OptimMethod::Adam: return "adam";
  }
  return "unknown";
}

inline OptimMethod optim_method_from_string(const std::string& s) {
  if (s == "lm") return OptimMethod::Lm;
  if (s == "gd") return OptimMethod::Gd;
  if (s == "adam") return OptimMethod::Adam;
  fail(ErrorCode::InvalidConfig, "unknown optimizer '" + s + "' (lm, gd, adam)");
}

struct CompareConfig {
  int iterations = 50;
  double gt_rot_deg = 10.0;
  double gt_trans_mm = 10.0;
  double pert_rot_deg = 3.0;
  double pert_trans_mm = 5.0;
  // Gradient methods step along -g scaled per axis group (rad, mm).
  double gd_rot_rate = 0.02;
  double gd_trans_rate = 20.0;
  double adam_rot_step = 0.005;
  double adam_trans_step = 0.5;
  LMConfig lm;

  void validate() const {
    if (iterations < 1) fail(ErrorCode::InvalidConfig, "iterations must be >= 1");
    if (gt_rot_deg < 0 || gt_trans_mm < 0 || pert_rot_deg < 0 || pert_trans_mm < 0) {
      fail(ErrorCode::InvalidConfig, "comparison ranges must be >= 0");
    }
    lm.validate();
  }
};

struct LossCurve {
  OptimMethod method = OptimMethod::Lm;
  std::uint64_t seed = 0;
  double initial_loss = 0.0;
  std::vector<double> losses;  // loss after each iteration
};

namespace detail {

inline LossCurve run_method(const Volume& vol, const Camera& cam, const Image2D& fixed, const Twist& start,
                            const SimilarityModel& model, const CompareConfig& cfg, OptimMethod method) {
  LossCurve curve;
  curve.method = method;
  curve.initial_loss = similarity_loss(model, fixed, render_drr(vol, cam, start));
  if (method == OptimMethod::Lm) {
    LMConfig lm = cfg.lm;
    lm.max_iters = cfg.iterations;
    lm.term_window = std::min(lm.term_window, cfg.iterations);
    lm.term_std = std::numeric_limits<double>::min();  // run the full budget
    const RegistrationResult r = lm_refine(vol, cam, fixed, start, model, lm);
    for (const LMIteration& it : r.trace) curve.losses.push_back(it.eps);
    while (static_cast<int>(curve.losses.size()) < cfg.iterations) curve.losses.push_back(curve.losses.back());
    return curve;
  }
  Twist theta = start;
  Vec6 m = Vec6::Zero(), v = Vec6::Zero();
  for (int it = 1; it <= cfg.iterations; ++it) {
    const Vec6 g = grad_similarity_pose(vol, cam, theta, fixed, model, cfg.lm.fd_steps);
    Vec6 step;
    if (method == OptimMethod::Gd) {
      for (int k = 0; k < 6; ++k) step[k] = -(k < 3 ? cfg.gd_rot_rate : cfg.gd_trans_rate) * g[k];
    } else {
      const double b1 = 0.9, b2 = 0.999;
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g.cwiseProduct(g);
      const double c1 = 1 - std::pow(b1, it), c2 = 1 - std::pow(b2, it);
      for (int k = 0; k < 6; ++k) {
        const double lr = k < 3 ? cfg.adam_rot_step : cfg.adam_trans_step;
        step[k] = -lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + 1e-12);
      }
    }
    theta = left_compose(Twist::from_vector(step), theta);
    const double loss = similarity_loss(model, fixed, render_drr(vol, cam, theta));
    if (!std::isfinite(loss)) fail(ErrorCode::Diverged, to_string(method) + " loss became non-finite");
    curve.losses.push_back(loss);
  }
  return curve;
}

}  // namespace detail

/// Every method runs on the same seeded problem per seed.
inline std::vector<LossCurve> optimizer_comparison(const Phantom& ph, const Camera& cam, const SimilarityModel& model,
                                                   const std::vector<OptimMethod>& methods,
                                                   const std::vector<std::uint64_t>& seeds, const CompareConfig& cfg) {
  if (methods.empty()) fail(ErrorCode::InvalidConfig, "at least one optimizer is required");
  if (seeds.empty()) fail(ErrorCode::InvalidConfig, "at least one seed is required");
  cfg.validate();
  std::vector<LossCurve> out;
  for (std::uint64_t seed : seeds) {
    std::mt19937_64 rng(seed);
    const Twist gt = sample_pose(Twist{}, cfg.gt_rot_deg, cfg.gt_trans_mm, rng);
    const Twist start = sample_pose(gt, cfg.pert_rot_deg, cfg.pert_trans_mm, rng);
    const Image2D fixed = render_drr(ph.volume, cam, gt);
    for (OptimMethod m : methods) {
      LossCurve c = detail::run_method(ph.volume, cam, fixed, start, model, cfg, m);
      c.seed = seed;
      out.push_back(std::move(c));
    }
  }
  return out;
}

/// First iteration (1-based) at which the curve is at or below `target`; 0 if never.
inline int iterations_to_reach(const LossCurve& c, double target) {
  for (std::size_t i = 0; i < c.losses.size(); ++i)
    if (c.losses[i] <= target) return static_cast<int>(i) + 1;
  return 0;
}

/// method,seed,iteration,loss with iteration 0 holding the shared initial loss.
inline void write_curves_csv(std::ostream& os, const std::vector<LossCurve>& curves) {
  os << "method,seed,iteration,loss\n" << std::setprecision(17);
  for (const LossCurve& c : curves) {
    os << to_string(c.method) << ',' << c.seed << ",0," << c.initial_loss << '\n';
    for (std::size_t i = 0; i < c.losses.size(); ++i)
      os << to_string(c.method) << ',' << c.seed << ',' << i + 1 << ',' << c.losses[i] << '\n';
  }
}

}  // namespace sphereg
