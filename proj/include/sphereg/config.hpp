#pragma once

// JSON configuration for the command-line pipeline. Every section is
// optional; missing keys keep their defaults and unknown keys are rejected
// so that typos surface as configuration errors.

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sphereg/augmentation.hpp"
#include "sphereg/encoder.hpp"
#include "sphereg/lm.hpp"
#include "sphereg/pipeline.hpp"
#include "sphereg/train.hpp"
#include "sphereg/volume.hpp"

namespace sphereg {

using nlohmann::json;

namespace detail {

inline void allow_keys(const json& j, const char* section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) fail(ErrorCode::InvalidConfig, std::string(section) + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : keys) ok = ok || k == a;
    if (!ok) fail(ErrorCode::InvalidConfig, std::string("unknown key '") + k + "' in " + section);
  }
}

template <class T>
void opt(const json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(field);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline std::string to_string(GeodesicFlavor f) { return f == GeodesicFlavor::Se3 ? "se3" : "so4"; }

inline GeodesicFlavor geodesic_from_string(const std::string& s) {
  if (s == "se3") return GeodesicFlavor::Se3;
  if (s == "so4") return GeodesicFlavor::So4;
  fail(ErrorCode::InvalidConfig, "unknown geodesic '" + s + "' (se3, so4)");
}

inline json to_json_value(const Camera& c) {
  return {{"f", c.f},
          {"det_w", c.det_w},
          {"det_h", c.det_h},
          {"pixel_mm", c.pixel_mm},
          {"iso_offset_mm", {c.iso_offset.x(), c.iso_offset.y(), c.iso_offset.z()}},
          {"source_fraction", c.source_fraction}};
}

inline void read_camera(const json& j, Camera& c) {
  detail::allow_keys(j, "camera", {"f", "det_w", "det_h", "pixel_mm", "iso_offset_mm", "source_fraction"});
  detail::opt(j, "f", c.f);
  detail::opt(j, "det_w", c.det_w);
  detail::opt(j, "det_h", c.det_h);
  detail::opt(j, "pixel_mm", c.pixel_mm);
  if (j.contains("iso_offset_mm")) {
    std::vector<double> v;
    detail::opt(j, "iso_offset_mm", v);
    if (v.size() != 3) fail(ErrorCode::InvalidConfig, "iso_offset_mm must have 3 entries");
    c.iso_offset = Vec3(v[0], v[1], v[2]);
  }
  detail::opt(j, "source_fraction", c.source_fraction);
}

inline json to_json_value(const LMConfig& c) {
  return {{"lambda0", c.lambda0},
          {"lambda_up", c.lambda_up},
          {"lambda_down", c.lambda_down},
          {"max_iters", c.max_iters},
          {"term_window", c.term_window},
          {"term_std", c.term_std},
          {"term_mode", c.term_mode == TerminationMode::Norm ? "norm" : "per_component"},
          {"fd_rot", c.fd_steps.rotation},
          {"fd_trans", c.fd_steps.translation}};
}

inline void read_lm(const json& j, LMConfig& c) {
  detail::allow_keys(j, "lm", {"lambda0", "lambda_up", "lambda_down", "max_iters", "term_window", "term_std",
                               "term_mode", "fd_rot", "fd_trans"});
  detail::opt(j, "lambda0", c.lambda0);
  detail::opt(j, "lambda_up", c.lambda_up);
  detail::opt(j, "lambda_down", c.lambda_down);
  detail::opt(j, "max_iters", c.max_iters);
  detail::opt(j, "term_window", c.term_window);
  detail::opt(j, "term_std", c.term_std);
  if (j.contains("term_mode")) {
    std::string m;
    detail::opt(j, "term_mode", m);
    if (m == "norm") {
      c.term_mode = TerminationMode::Norm;
    } else if (m == "per_component") {
      c.term_mode = TerminationMode::PerComponent;
    } else {
      fail(ErrorCode::InvalidConfig, "term_mode must be norm or per_component");
    }
  }
  detail::opt(j, "fd_rot", c.fd_steps.rotation);
  detail::opt(j, "fd_trans", c.fd_steps.translation);
}

inline json to_json_value(const RegisterOptions& o) {
  return {{"mode", o.multi_start ? "multi_start" : "given"},
          {"K", o.K},
          {"rot_deg", o.init_rot_deg},
          {"trans_mm", o.init_trans_mm},
          {"refine_top", o.refine_top},
          {"pyramid", o.pyramid}};
}

inline void read_initializer(const json& j, RegisterOptions& o) {
  detail::allow_keys(j, "initializer", {"mode", "K", "rot_deg", "trans_mm", "refine_top", "pyramid"});
  if (j.contains("mode")) {
    std::string m;
    detail::opt(j, "mode", m);
    if (m == "multi_start") {
      o.multi_start = true;
    } else if (m == "given") {
      o.multi_start = false;
    } else {
      fail(ErrorCode::InvalidConfig, "initializer mode must be multi_start or given");
    }
  }
  detail::opt(j, "K", o.K);
  detail::opt(j, "rot_deg", o.init_rot_deg);
  detail::opt(j, "trans_mm", o.init_trans_mm);
  detail::opt(j, "refine_top", o.refine_top);
  detail::opt(j, "pyramid", o.pyramid);
}

inline json to_json_value(const EncoderInit& e) {
  return {{"in_h", e.in_h},      {"in_w", e.in_w}, {"stride", e.stride},
          {"c1", e.c1},          {"cl", e.cl},     {"cg", e.cg},
          {"activation", to_string(e.act)},        {"input_scale", e.input_scale}};
}

inline void read_encoder_init(const json& j, EncoderInit& e) {
  detail::allow_keys(j, "encoder", {"in_h", "in_w", "stride", "c1", "cl", "cg", "activation", "input_scale"});
  detail::opt(j, "in_h", e.in_h);
  detail::opt(j, "in_w", e.in_w);
  detail::opt(j, "stride", e.stride);
  detail::opt(j, "c1", e.c1);
  detail::opt(j, "cl", e.cl);
  detail::opt(j, "cg", e.cg);
  if (j.contains("activation")) {
    std::string a;
    detail::opt(j, "activation", a);
    e.act = activation_from_string(a);
  }
  detail::opt(j, "input_scale", e.input_scale);
}

inline json to_json_value(const TrainConfig& t) {
  return {{"iterations", t.iterations},
          {"learning_rate", t.learning_rate},
          {"optimizer", t.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
          {"gt_rot_deg", t.gt_rot_deg},
          {"gt_trans_mm", t.gt_trans_mm},
          {"rot_deg", t.rot_deg},
          {"trans_mm", t.trans_mm},
          {"compare", t.compare == GradientCompare::Geodesic ? "geodesic" : "euclidean"},
          {"augmentation", t.augmentation},
          {"direction_step", t.direction_step}};
}

inline void read_train(const json& j, TrainConfig& t) {
  detail::allow_keys(j, "train", {"iterations", "learning_rate", "optimizer", "gt_rot_deg", "gt_trans_mm", "rot_deg",
                                  "trans_mm", "compare", "augmentation", "direction_step"});
  detail::opt(j, "iterations", t.iterations);
  detail::opt(j, "learning_rate", t.learning_rate);
  if (j.contains("optimizer")) {
    std::string o;
    detail::opt(j, "optimizer", o);
    if (o == "adam") {
      t.optimizer = OptimizerKind::Adam;
    } else if (o == "sgd") {
      t.optimizer = OptimizerKind::Sgd;
    } else {
      fail(ErrorCode::InvalidConfig, "train optimizer must be adam or sgd");
    }
  }
  detail::opt(j, "gt_rot_deg", t.gt_rot_deg);
  detail::opt(j, "gt_trans_mm", t.gt_trans_mm);
  detail::opt(j, "rot_deg", t.rot_deg);
  detail::opt(j, "trans_mm", t.trans_mm);
  if (j.contains("compare")) {
    std::string c;
    detail::opt(j, "compare", c);
    if (c == "geodesic") {
      t.compare = GradientCompare::Geodesic;
    } else if (c == "euclidean") {
      t.compare = GradientCompare::Euclidean;
    } else {
      fail(ErrorCode::InvalidConfig, "train compare must be geodesic or euclidean");
    }
  }
  detail::opt(j, "augmentation", t.augmentation);
  detail::opt(j, "direction_step", t.direction_step);
}

inline json to_json_value(const BenchmarkConfig& b) {
  return {{"n_cases", b.n_cases},         {"gt_rot_deg", b.gt_rot_deg},       {"gt_trans_mm", b.gt_trans_mm},
          {"pert_rot_deg", b.pert_rot_deg}, {"pert_trans_mm", b.pert_trans_mm}, {"randomize_targets", b.randomize_targets}};
}

inline void read_benchmark(const json& j, BenchmarkConfig& b) {
  detail::allow_keys(j, "benchmark",
                     {"n_cases", "gt_rot_deg", "gt_trans_mm", "pert_rot_deg", "pert_trans_mm", "randomize_targets"});
  detail::opt(j, "n_cases", b.n_cases);
  detail::opt(j, "gt_rot_deg", b.gt_rot_deg);
  detail::opt(j, "gt_trans_mm", b.gt_trans_mm);
  detail::opt(j, "pert_rot_deg", b.pert_rot_deg);
  detail::opt(j, "pert_trans_mm", b.pert_trans_mm);
  detail::opt(j, "randomize_targets", b.randomize_targets);
}

inline json to_json_value(const CompareConfig& c) {
  return {{"iterations", c.iterations},     {"gt_rot_deg", c.gt_rot_deg},       {"gt_trans_mm", c.gt_trans_mm},
          {"pert_rot_deg", c.pert_rot_deg}, {"pert_trans_mm", c.pert_trans_mm}, {"gd_rot_rate", c.gd_rot_rate},
          {"gd_trans_rate", c.gd_trans_rate}, {"adam_rot_step", c.adam_rot_step}, {"adam_trans_step", c.adam_trans_step}};
}

inline void read_compare(const json& j, CompareConfig& c) {
  detail::allow_keys(j, "compare", {"iterations", "gt_rot_deg", "gt_trans_mm", "pert_rot_deg", "pert_trans_mm",
                                    "gd_rot_rate", "gd_trans_rate", "adam_rot_step", "adam_trans_step"});
  detail::opt(j, "iterations", c.iterations);
  detail::opt(j, "gt_rot_deg", c.gt_rot_deg);
  detail::opt(j, "gt_trans_mm", c.gt_trans_mm);
  detail::opt(j, "pert_rot_deg", c.pert_rot_deg);
  detail::opt(j, "pert_trans_mm", c.pert_trans_mm);
  detail::opt(j, "gd_rot_rate", c.gd_rot_rate);
  detail::opt(j, "gd_trans_rate", c.gd_trans_rate);
  detail::opt(j, "adam_rot_step", c.adam_rot_step);
  detail::opt(j, "adam_trans_step", c.adam_trans_step);
}

struct PipelineConfig {
  Camera camera;
  std::string phantom_path;  // stem of a saved phantom; empty uses the reference phantom
  std::uint64_t phantom_seed = 0;
  Metric metric = Metric::Mncc;
  std::string encoder_path;  // stem of a saved encoder; empty trains one when the learned metric is needed
  std::vector<int> patch_sizes;
  EncoderInit encoder;
  GeodesicFlavor geodesic = GeodesicFlavor::Se3;
  double focal_mm = 400.0;  // SO(4) embedding scale
  RegisterOptions registration;
  RandomizationConfig augmentation;
  TrainConfig train;
  BenchmarkConfig bench;
  CompareConfig compare;
  std::uint64_t seed = 0;

  PipelineConfig() { encoder.input_scale = 0.05; }

  /// Copies shared settings into the sections that use them.
  void sync() {
    train.randomization = bench.randomization = augmentation;
    train.flavor = bench.flavor = geodesic;
    train.f = bench.f = focal_mm;
    train.rng_seed = bench.seed = seed;
  }

  void validate() const {
    camera.validate();
    check_focal(focal_mm);
    registration.validate();
    augmentation.validate();
    train.validate();
    bench.validate();
    compare.validate();
  }
};

inline json to_json_value(const PipelineConfig& c) {
  json j;
  j["camera"] = to_json_value(c.camera);
  j["phantom"] = {{"path", c.phantom_path}, {"seed", c.phantom_seed}};
  j["metric"] = to_string(c.metric);
  j["encoder_path"] = c.encoder_path;
  j["patch_sizes"] = c.patch_sizes;
  j["encoder"] = to_json_value(c.encoder);
  j["geodesic"] = to_string(c.geodesic);
  j["focal_mm"] = c.focal_mm;
  j["initializer"] = to_json_value(c.registration);
  j["lm"] = to_json_value(c.registration.lm);
  j["augmentation"] = c.augmentation;
  j["train"] = to_json_value(c.train);
  j["benchmark"] = to_json_value(c.bench);
  j["compare"] = to_json_value(c.compare);
  j["seed"] = c.seed;
  return j;
}

inline PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig c;
  detail::allow_keys(j, "config",
                     {"camera", "phantom", "metric", "encoder_path", "patch_sizes", "encoder", "geodesic", "focal_mm",
                      "initializer", "lm", "augmentation", "train", "benchmark", "compare", "seed"});
  if (j.contains("camera")) read_camera(j.at("camera"), c.camera);
  if (j.contains("phantom")) {
    detail::allow_keys(j.at("phantom"), "phantom", {"path", "seed"});
    detail::opt(j.at("phantom"), "path", c.phantom_path);
    detail::opt(j.at("phantom"), "seed", c.phantom_seed);
  }
  if (j.contains("metric")) c.metric = metric_from_string(j.at("metric").get<std::string>());
  detail::opt(j, "encoder_path", c.encoder_path);
  detail::opt(j, "patch_sizes", c.patch_sizes);
  if (j.contains("encoder")) read_encoder_init(j.at("encoder"), c.encoder);
  if (j.contains("geodesic")) c.geodesic = geodesic_from_string(j.at("geodesic").get<std::string>());
  detail::opt(j, "focal_mm", c.focal_mm);
  if (j.contains("initializer")) read_initializer(j.at("initializer"), c.registration);
  if (j.contains("lm")) read_lm(j.at("lm"), c.registration.lm);
  if (j.contains("augmentation")) {
    try {
      c.augmentation = j.at("augmentation").get<RandomizationConfig>();
    } catch (const json::exception& e) {
      fail(ErrorCode::InvalidConfig, std::string("augmentation: ") + e.what());
    }
  }
  if (j.contains("train")) read_train(j.at("train"), c.train);
  if (j.contains("benchmark")) read_benchmark(j.at("benchmark"), c.bench);
  if (j.contains("compare")) read_compare(j.at("compare"), c.compare);
  detail::opt(j, "seed", c.seed);
  c.sync();
  c.validate();
  return c;
}

}  // namespace sphereg
