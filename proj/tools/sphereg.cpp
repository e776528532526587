// sphereg: command-line front end for phantom generation, rendering,
// registration, training, benchmarking, landscapes and optimizer curves.
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sphereg/config.hpp"
#include "sphereg/io.hpp"
#include "sphereg/phantom.hpp"
#include "sphereg/pipeline.hpp"
#include "sphereg/run_dir.hpp"
#include "sphereg/train.hpp"

namespace fs = std::filesystem;
using namespace sphereg;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::NotARotation:
    case ErrorCode::NotUnit:
    case ErrorCode::DegenerateRay:
    case ErrorCode::BadEnergy:
    case ErrorCode::SolveFailed:
    case ErrorCode::Diverged:
      return kExitNumeric;
    default:
      return kExitConfig;
  }
}

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string metric;
  std::string geodesic;
};

PipelineConfig resolve_config(const Globals& g) {
  PipelineConfig cfg = g.config.empty() ? PipelineConfig{} : pipeline_config_from_json(io::read_json(g.config));
  if (g.seed) cfg.seed = *g.seed;
  if (!g.metric.empty()) cfg.metric = metric_from_string(g.metric);
  if (!g.geodesic.empty()) cfg.geodesic = geodesic_from_string(g.geodesic);
  cfg.sync();
  cfg.validate();
  return cfg;
}

fs::path prepare_out(const Globals& g, const std::string& command) {
  const fs::path dir = g.out.empty() ? fs::path("runs") / command : fs::path(g.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

/// "rx,ry,rz,tx,ty,tz" with rotations in degrees and translations in mm.
Twist parse_pose(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      v.push_back(std::stod(cell));
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidConfig, "pose entries must be numbers: '" + s + "'");
    }
  }
  if (v.size() != 6) fail(ErrorCode::InvalidConfig, "pose needs 6 comma-separated values (deg, deg, deg, mm, mm, mm)");
  Twist t;
  for (int k = 0; k < 3; ++k) t.omega[k] = deg_to_rad(v[static_cast<std::size_t>(k)]);
  for (int k = 0; k < 3; ++k) t.v[k] = v[static_cast<std::size_t>(k) + 3];
  return t;
}

json twist_json(const Twist& t) {
  json a = json::array();
  for (int k = 0; k < 6; ++k) a.push_back(t[k]);
  return a;
}

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        out.push_back(cell);
      } else {
        out.push_back(static_cast<T>(std::stoull(cell)));
      }
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidConfig, std::string("bad ") + what + " list '" + s + "'");
    }
  }
  if (out.empty()) fail(ErrorCode::InvalidConfig, std::string("empty ") + what + " list");
  return out;
}

Phantom load_phantom_for(const PipelineConfig& cfg) {
  return cfg.phantom_path.empty() ? reference_phantom(cfg.phantom_seed) : io::load_phantom(cfg.phantom_path);
}

void write_image(const fs::path& dir, const std::string& name, const Image2D& img) {
  fs::create_directories(dir / "images");
  io::save_image(dir / "images" / name, img);
  io::write_pgm(dir / "images" / (name + ".pgm"), img);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out << text;
}

/// The similarity model for cfg; a learned metric without an encoder path
/// trains one first (with cfg.train) and stores it in the run directory.
SimilarityModel make_model(const PipelineConfig& cfg, const Phantom& ph, const fs::path& dir) {
  SimilarityModel m;
  m.metric = cfg.metric;
  m.patch_sizes = cfg.patch_sizes;
  if (cfg.metric == Metric::Mncc) return m;
  if (!cfg.encoder_path.empty()) {
    m.encoder = io::load_encoder(cfg.encoder_path);
  } else {
    const EncoderParams init = make_encoder(cfg.encoder, cfg.seed);
    TrainConfig tc = cfg.train;
    tc.downsample = cfg.camera.det_h / init.in_h;
    const TrainResult tr = train_similarity(ph.volume, cfg.camera, init, tc);
    io::save_encoder(dir / "encoder", tr.params);
    std::ostringstream os;
    write_loss_csv(os, tr.trace);
    write_text(dir / "loss.csv", os.str());
    m.encoder = io::load_encoder(dir / "encoder");  // the float32 weights that were saved
  }
  if (cfg.camera.det_h % m.encoder.in_h != 0 || cfg.camera.det_w % m.encoder.in_w != 0 ||
      cfg.camera.det_h / m.encoder.in_h != cfg.camera.det_w / m.encoder.in_w) {
    fail(ErrorCode::ShapeMismatch, "detector size must be an integer multiple of the encoder input");
  }
  m.downsample = cfg.camera.det_h / m.encoder.in_h;
  return m;
}

json report_json(const MetricsReport& r) {
  auto finite_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return {{"n", r.mtre_values.size()},
          {"smsr", r.smsr},
          {"median_mtre", finite_or_null(r.median)},
          {"p75_mtre", finite_or_null(r.p75)},
          {"p95_mtre", finite_or_null(r.p95)}};
}

// ---------------------------------------------------------------------------

int cmd_phantom_gen(const Globals& g, double texture) {
  PipelineConfig cfg = resolve_config(g);
  const fs::path dir = prepare_out(g, "phantom-gen");
  Phantom ph = reference_phantom(cfg.seed);
  if (texture > 0.0) {
    PhantomSpec spec = reference_phantom_spec();
    spec.texture = texture;
    ph.volume = generate_phantom(spec, cfg.seed).volume;
  }
  io::save_phantom(dir / "phantom", ph);
  io::write_json(dir / "config.json", to_json_value(cfg));
  write_manifest(dir, "phantom-gen", cfg.seed, {{"landmarks", ph.landmarks.size()}});
  std::cout << "phantom written to " << (dir / "phantom").string() << "\n";
  return 0;
}

int cmd_render(const Globals& g, const std::string& pose) {
  const PipelineConfig cfg = resolve_config(g);
  const fs::path dir = prepare_out(g, "render");
  const Phantom ph = load_phantom_for(cfg);
  const Twist theta = pose.empty() ? Twist{} : parse_pose(pose);
  write_image(dir, "drr", render_drr(ph.volume, cfg.camera, theta));
  io::write_json(dir / "config.json", to_json_value(cfg));
  write_manifest(dir, "render", cfg.seed, {{"pose", twist_json(theta)}});
  std::cout << "rendered " << cfg.camera.det_h << "x" << cfg.camera.det_w << " DRR to " << (dir / "images").string()
            << "\n";
  return 0;
}

int cmd_register(const Globals& g, const std::string& target_stem, const std::string& gt_pose,
                 const std::string& init_pose) {
  const PipelineConfig cfg = resolve_config(g);
  const fs::path dir = prepare_out(g, "register");
  const Phantom ph = load_phantom_for(cfg);
  const SimilarityModel model = make_model(cfg, ph, dir);
  std::optional<Twist> gt;
  Image2D target;
  if (!target_stem.empty()) {
    target = io::load_image(target_stem);
    if (!gt_pose.empty()) gt = parse_pose(gt_pose);
  } else {
    gt = gt_pose.empty() ? Twist{} : parse_pose(gt_pose);
    target = render_drr(ph.volume, cfg.camera, *gt);
  }
  const Twist center = init_pose.empty() ? Twist{} : parse_pose(init_pose);
  RegisterOptions opt = cfg.registration;
  opt.seed = cfg.seed;
  io::write_json(dir / "config.json", to_json_value(cfg));
  write_image(dir, "target", target);

  json result = {{"center", twist_json(center)}};
  int code = 0;
  try {
    const RegistrationOutcome o = register_pose(ph.volume, cfg.camera, target, center, model, opt);
    std::ostringstream trace;
    write_stage_trace_csv(trace, o);
    write_text(dir / "trace.csv", trace.str());
    write_image(dir, "initial", render_drr(ph.volume, cfg.camera, o.theta_init));
    write_image(dir, "final", render_drr(ph.volume, cfg.camera, o.result.theta_est));
    json stages = json::array();
    for (const StageSummary& s : o.stages)
      stages.push_back({{"candidate", s.candidate},
                        {"downsample", s.downsample},
                        {"iterations", s.iterations},
                        {"eps", s.eps},
                        {"converged", s.converged}});
    result.update({{"status", "ok"},
                   {"theta_init", twist_json(o.theta_init)},
                   {"init_loss", o.init_loss},
                   {"theta_est", twist_json(o.result.theta_est)},
                   {"eps", o.result.eps},
                   {"iterations", o.result.iterations},
                   {"converged", o.result.converged},
                   {"winner", o.winner},
                   {"stages", stages}});
    if (gt) {
      const auto lms = landmarks_about_isocenter(ph, cfg.camera);
      result["theta_gt"] = twist_json(*gt);
      result["mtre_mm"] = mtre(lms, o.result.theta_est, *gt);
      result["init_mtre_mm"] = mtre(lms, o.theta_init, *gt);
    }
  } catch (const DivergedError& e) {
    // Persist what was computed before the loss stopped being finite.
    std::ostringstream trace;
    write_trace_csv(trace, e.partial().trace);
    write_text(dir / "trace.csv", trace.str());
    result.update({{"status", "Diverged"}, {"error", e.what()}, {"iterations", e.partial().trace.size()}});
    code = kExitNumeric;
  }
  io::write_json(dir / "result.json", result);
  write_manifest(dir, "register", cfg.seed);
  if (code == 0) {
    std::cout << "eps " << result["eps"].get<double>();
    if (result.contains("mtre_mm")) std::cout << "  mTRE " << result["mtre_mm"].get<double>() << " mm";
    std::cout << "\n";
  } else {
    std::cerr << "registration diverged; partial trace in " << (dir / "trace.csv").string() << "\n";
  }
  return code;
}

int cmd_train(const Globals& g, std::optional<int> iterations) {
  PipelineConfig cfg = resolve_config(g);
  if (iterations) cfg.train.iterations = *iterations;
  cfg.train.validate();
  const fs::path dir = prepare_out(g, "train");
  const Phantom ph = load_phantom_for(cfg);
  const EncoderParams init = make_encoder(cfg.encoder, cfg.seed);
  TrainConfig tc = cfg.train;
  if (cfg.camera.det_h % init.in_h != 0) fail(ErrorCode::ShapeMismatch, "detector must be a multiple of the encoder input");
  tc.downsample = cfg.camera.det_h / init.in_h;
  const TrainResult tr = train_similarity(ph.volume, cfg.camera, init, tc);
  io::save_encoder(dir / "encoder", tr.params);
  std::ostringstream os;
  write_loss_csv(os, tr.trace);
  write_text(dir / "loss.csv", os.str());
  io::write_json(dir / "config.json", to_json_value(cfg));
  const std::size_t w = std::min<std::size_t>(50, tr.trace.size());
  auto med = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  std::vector<double> first, last;
  for (std::size_t i = 0; i < w; ++i) {
    first.push_back(tr.trace[i].loss);
    last.push_back(tr.trace[tr.trace.size() - w + i].loss);
  }
  const json summary = {{"iterations", tr.trace.size()},
                        {"median_first", med(first)},
                        {"median_last", med(last)},
                        {"geodesic", to_string(cfg.geodesic)}};
  io::write_json(dir / "summary.json", summary);
  write_manifest(dir, "train", cfg.seed, {{"summary", summary}});
  std::cout << "median loss over the first/last " << w << " iterations: " << summary["median_first"].get<double>()
            << " / " << summary["median_last"].get<double>() << "\n";
  return 0;
}

int cmd_benchmark(const Globals& g, std::optional<int> cases) {
  PipelineConfig cfg = resolve_config(g);
  if (cases) cfg.bench.n_cases = *cases;
  cfg.bench.validate();
  const fs::path dir = prepare_out(g, "benchmark");
  const Phantom ph = load_phantom_for(cfg);
  const SimilarityModel model = make_model(cfg, ph, dir);
  const BenchmarkResult r = benchmark(ph, cfg.camera, model, cfg.registration, cfg.bench);
  std::ostringstream os;
  write_cases_csv(os, r.cases);
  write_text(dir / "cases.csv", os.str());
  const json report = report_json(r.report);
  io::write_json(dir / "report.json", report);
  io::write_json(dir / "config.json", to_json_value(cfg));
  write_manifest(dir, "benchmark", cfg.seed,
                 {{"report", report}, {"metric", to_string(cfg.metric)}, {"geodesic", to_string(cfg.geodesic)}});
  std::cout << "SMSR " << r.report.smsr << "  median mTRE " << r.report.median << " mm over " << r.cases.size()
            << " cases\n";
  return 0;
}

int cmd_landscape(const Globals& g, const std::string& axes, double extent_rot, double extent_trans, int res,
                  const std::string& gt_pose) {
  const PipelineConfig cfg = resolve_config(g);
  const std::vector<int> ax = [&] {
    std::vector<int> v;
    for (auto x : parse_list<std::uint64_t>(axes, "axis")) v.push_back(static_cast<int>(x));
    return v;
  }();
  if (ax.size() != 2) fail(ErrorCode::InvalidConfig, "--axes needs two indices");
  const fs::path dir = prepare_out(g, "landscape");
  const Phantom ph = load_phantom_for(cfg);
  const SimilarityModel model = make_model(cfg, ph, dir);
  const Twist gt = gt_pose.empty() ? Twist{} : parse_pose(gt_pose);
  const Image2D fixed = render_drr(ph.volume, cfg.camera, gt);
  auto extent = [&](int a) { return a < 3 ? deg_to_rad(extent_rot) : extent_trans; };
  const Landscape L = landscape(ph.volume, cfg.camera, fixed, gt, model, ax[0], ax[1], extent(ax[0]), extent(ax[1]),
                                res, res);
  std::ostringstream os;
  write_landscape_csv(os, L);
  write_text(dir / "landscape.csv", os.str());
  io::write_json(dir / "config.json", to_json_value(cfg));
  write_manifest(dir, "landscape", cfg.seed, {{"axes", ax}, {"resolution", res}});
  std::cout << "wrote " << L.cells.size() << " grid cells to " << (dir / "landscape.csv").string() << "\n";
  return 0;
}

int cmd_compare(const Globals& g, const std::string& methods, const std::string& seeds, std::optional<int> iterations) {
  PipelineConfig cfg = resolve_config(g);
  if (iterations) cfg.compare.iterations = *iterations;
  cfg.compare.validate();
  std::vector<OptimMethod> ms;
  for (const std::string& s : parse_list<std::string>(methods, "method")) ms.push_back(optim_method_from_string(s));
  const std::vector<std::uint64_t> sd = parse_list<std::uint64_t>(seeds, "seed");
  const fs::path dir = prepare_out(g, "compare-optim");
  const Phantom ph = load_phantom_for(cfg);
  const SimilarityModel model = make_model(cfg, ph, dir);
  CompareConfig cc = cfg.compare;
  cc.lm = cfg.registration.lm;
  const std::vector<LossCurve> curves = optimizer_comparison(ph, cfg.camera, model, ms, sd, cc);
  std::ostringstream os;
  write_curves_csv(os, curves);
  write_text(dir / "curves.csv", os.str());
  json summary = json::array();
  for (std::uint64_t s : sd) {
    json entry = {{"seed", s}};
    const LossCurve* gd = nullptr;
    for (const LossCurve& c : curves)
      if (c.seed == s && c.method == OptimMethod::Gd) gd = &c;
    for (const LossCurve& c : curves) {
      if (c.seed != s) continue;
      json m = {{"initial_loss", c.initial_loss}, {"final_loss", c.losses.back()}};
      if (gd) {
        const int n = iterations_to_reach(c, gd->losses.back());
        m["iterations_to_gd_final"] = n > 0 ? json(n) : json(nullptr);
      }
      entry[to_string(c.method)] = m;
    }
    summary.push_back(entry);
  }
  io::write_json(dir / "summary.json", summary);
  io::write_json(dir / "config.json", to_json_value(cfg));
  write_manifest(dir, "compare-optim", cfg.seed, {{"summary", summary}});
  std::cout << "wrote " << curves.size() << " curves to " << (dir / "curves.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"2D/3D registration with learned spherical similarity (desk scale)"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Random seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory (default runs/<command>)");
  app.add_option("--metric", g.metric, "Similarity metric")->check(CLI::IsMember({"learned", "mncc"}));
  app.add_option("--geodesic", g.geodesic, "Geodesic flavor for training and reported pose error")
      ->check(CLI::IsMember({"se3", "so4"}));

  auto* phantom = app.add_subcommand("phantom-gen", "Write the reference phantom (RVOL + landmarks)");
  double texture = 0.0;
  phantom->add_option("--texture", texture, "Relative amplitude of seeded voxel texture")->check(CLI::Range(0.0, 1.0));

  auto* render = app.add_subcommand("render", "Render a DRR at a pose");
  std::string pose;
  render->add_option("--pose", pose, "rx,ry,rz,tx,ty,tz (deg, mm); default identity");

  auto* reg = app.add_subcommand("register", "Register a target image to the volume");
  std::string target, gt, init;
  reg->add_option("--target", target, "Target image stem (RIMG); default renders at --gt");
  reg->add_option("--gt", gt, "Ground-truth pose (deg, mm) for rendering and mTRE");
  reg->add_option("--init", init, "Center pose for initialization (deg, mm); default identity");

  auto* train = app.add_subcommand("train", "Train the encoder with the double-backward loss");
  std::optional<int> train_iters;
  train->add_option("--iterations", train_iters, "Training iterations (overrides the config)");

  auto* bench = app.add_subcommand("benchmark", "Seeded registration benchmark");
  std::optional<int> cases;
  bench->add_option("--cases", cases, "Number of cases (overrides the config)");

  auto* land = app.add_subcommand("landscape", "Similarity landscape around a pose");
  std::string axes = "0,1", land_gt;
  double extent_rot = 10.0, extent_trans = 10.0;
  int res = 21;
  land->add_option("--axes", axes, "Two twist indices (0-2 rotation, 3-5 translation)");
  land->add_option("--extent-rot", extent_rot, "Half-extent for rotation axes, deg");
  land->add_option("--extent-trans", extent_trans, "Half-extent for translation axes, mm");
  land->add_option("--res", res, "Grid points per axis")->check(CLI::PositiveNumber);
  land->add_option("--gt", land_gt, "Center pose (deg, mm)");

  auto* cmp = app.add_subcommand("compare-optim", "Loss-vs-iteration curves for lm, gd and adam");
  std::string methods = "lm,gd,adam", seeds = "1,2,3";
  std::optional<int> cmp_iters;
  cmp->add_option("--methods", methods, "Comma-separated optimizers");
  cmp->add_option("--seeds", seeds, "Comma-separated problem seeds");
  cmp->add_option("--iterations", cmp_iters, "Iterations per optimizer");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*phantom) return cmd_phantom_gen(g, texture);
    if (*render) return cmd_render(g, pose);
    if (*reg) return cmd_register(g, target, gt, init);
    if (*train) return cmd_train(g, train_iters);
    if (*bench) return cmd_benchmark(g, cases);
    if (*land) return cmd_landscape(g, axes, extent_rot, extent_trans, res, land_gt);
    if (*cmp) return cmd_compare(g, methods, seeds, cmp_iters);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
