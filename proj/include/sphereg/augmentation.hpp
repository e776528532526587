#pragma once

// Domain randomization applied to rendered images during training. The
// transforms run in a fixed order: smoothing, noise, bound normalization,
// linear scaling, gamma, sine scaling, random erasing. "max" in every range
// is the maximum intensity of the image as it enters that transform.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sphereg/error.hpp"
#include "sphereg/image.hpp"

namespace sphereg {

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double x) const { return x >= lo && x <= hi; }
  template <class Rng>
  double sample(Rng& rng) const {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  }
};

struct RandomizationConfig {
  bool smoothing = true;
  double smoothing_p = 0.5;
  std::vector<int> kernel_sizes{3, 5};

  bool noise = true;
  Range noise_mean_frac{-0.15, 0.1};
  double noise_sigma_frac = 0.05;

  bool bound_norm = true;
  Range lower_frac{-0.04, 0.02};
  Range upper_frac{0.9, 1.05};

  bool linear = true;
  Range linear_scale{0.9, 1.05};

  bool gamma = true;
  Range gamma_range{0.7, 1.3};

  bool sine = true;
  Range sine_a{0.8, 1.1};
  Range sine_b{0.8, 1.1};
  Range sine_c{-0.5, 0.4};

  bool erase = true;
  Range erase_area{0.02, 0.4};
  Range erase_aspect{0.3, 1.0};

  static RandomizationConfig disabled() {
    RandomizationConfig c;
    c.smoothing = c.noise = c.bound_norm = c.linear = c.gamma = c.sine = c.erase = false;
    return c;
  }

  void validate() const {
    auto ordered = [](const Range& r, const char* name) {
      if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi) {
        fail(ErrorCode::InvalidConfig, std::string("augmentation range ") + name + " must be finite with lo <= hi");
      }
    };
    ordered(noise_mean_frac, "noise_mean_frac");
    ordered(lower_frac, "lower_frac");
    ordered(upper_frac, "upper_frac");
    ordered(linear_scale, "linear_scale");
    ordered(gamma_range, "gamma");
    ordered(sine_a, "sine_a");
    ordered(sine_b, "sine_b");
    ordered(sine_c, "sine_c");
    ordered(erase_area, "erase_area");
    ordered(erase_aspect, "erase_aspect");
    if (!(smoothing_p >= 0.0 && smoothing_p <= 1.0)) fail(ErrorCode::InvalidConfig, "smoothing_p must be in [0,1]");
    if (kernel_sizes.empty()) fail(ErrorCode::InvalidConfig, "kernel_sizes must not be empty");
    for (int k : kernel_sizes)
      if (k < 1 || k % 2 == 0) fail(ErrorCode::InvalidConfig, "kernel sizes must be odd and positive");
    if (!(noise_sigma_frac >= 0.0) || !std::isfinite(noise_sigma_frac)) {
      fail(ErrorCode::InvalidConfig, "noise_sigma_frac must be finite and >= 0");
    }
    if (upper_frac.lo <= lower_frac.hi) fail(ErrorCode::InvalidConfig, "bound intervals must not overlap");
    if (!(gamma_range.lo > 0.0)) fail(ErrorCode::InvalidConfig, "gamma must be positive");
    if (!(erase_area.lo > 0.0 && erase_area.hi <= 1.0)) fail(ErrorCode::InvalidConfig, "erase_area must lie in (0,1]");
    if (!(erase_aspect.lo > 0.0)) fail(ErrorCode::InvalidConfig, "erase_aspect must be positive");
  }
};

/// Everything randomize() drew, in application order.
struct AugmentationTrace {
  std::vector<std::string> stages;
  bool smoothed = false;
  int kernel = 0;
  double noise_mean = 0.0;
  double noise_sigma = 0.0;
  double noise_max = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double bound_max = 0.0;
  double scale = 1.0;
  double gamma = 1.0;
  double a = 1.0, b = 1.0, c = 0.0;
  bool erased = false;
  int erase_r0 = 0, erase_c0 = 0, erase_h = 0, erase_w = 0;
  double erase_fraction = 0.0;
  double erase_aspect = 0.0;
  double erase_fill = 0.0;
};

namespace detail {

inline double image_max(const Image2D& img) { return *std::max_element(img.data.begin(), img.data.end()); }

// Intensity unit for the "max"-relative ranges; 1 for images without a
// positive maximum so the transforms stay defined.
inline double intensity_unit(const Image2D& img) {
  const double m = image_max(img);
  return m > 0.0 ? m : 1.0;
}

}  // namespace detail

/// Separable Gaussian blur, sigma = k / 6, edges replicated.
inline Image2D gaussian_smooth(const Image2D& img, int k) {
  if (k < 1 || k % 2 == 0) fail(ErrorCode::InvalidConfig, "kernel size must be odd and positive");
  const int half = k / 2;
  const double sigma = k / 6.0;
  std::vector<double> g(static_cast<std::size_t>(k));
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    const double x = i - half;
    g[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * sigma * sigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= sum;
  Image2D tmp(img.h, img.w), out(img.h, img.w);
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[static_cast<std::size_t>(i)] * img(r, std::clamp(c + i - half, 0, img.w - 1));
      tmp(r, c) = acc;
    }
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[static_cast<std::size_t>(i)] * tmp(std::clamp(r + i - half, 0, img.h - 1), c);
      out(r, c) = acc;
    }
  return out;
}

struct EraseRecord {
  bool erased = false;
  int r0 = 0, c0 = 0, h = 0, w = 0;
  double fraction = 0.0;
  double aspect = 0.0;
  double fill = 0.0;
};

/// Fills one rectangle with the pre-erase image mean. Area fraction and
/// aspect (short side over long side) are drawn uniformly; the integer
/// rectangle is redrawn until its realized fraction lies in range. After
/// 100 failed draws (tiny images) the image is returned unchanged.
template <class Rng>
Image2D random_erase(const Image2D& img, const Range& area, const Range& aspect, Rng& rng,
                     EraseRecord* rec = nullptr) {
  if (!(area.lo > 0.0 && area.lo <= area.hi && area.hi <= 1.0)) fail(ErrorCode::InvalidConfig, "erase area range");
  if (!(aspect.lo > 0.0 && aspect.lo <= aspect.hi)) fail(ErrorCode::InvalidConfig, "erase aspect range");
  EraseRecord r;
  Image2D out = img;
  if (img.size() == 0) {
    if (rec) *rec = r;
    return out;
  }
  double mean = 0.0;
  for (double v : img.data) mean += v;
  mean /= static_cast<double>(img.size());
  r.fill = mean;
  const double total = static_cast<double>(img.size());
  std::bernoulli_distribution tall(0.5);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double frac = area.sample(rng);
    const double asp = aspect.sample(rng);
    const double side_short = std::sqrt(frac * total * asp);
    const double side_long = std::sqrt(frac * total / asp);
    int h = static_cast<int>(std::lround(side_short));
    int w = static_cast<int>(std::lround(side_long));
    if (tall(rng)) std::swap(h, w);
    if (h < 1 || w < 1 || h > img.h || w > img.w) continue;
    const double realized = h * w / total;
    if (!area.contains(realized)) continue;
    r.r0 = std::uniform_int_distribution<int>(0, img.h - h)(rng);
    r.c0 = std::uniform_int_distribution<int>(0, img.w - w)(rng);
    r.h = h;
    r.w = w;
    r.fraction = realized;
    r.aspect = asp;
    r.erased = true;
    break;
  }
  if (r.erased)
    for (int y = r.r0; y < r.r0 + r.h; ++y)
      for (int x = r.c0; x < r.c0 + r.w; ++x) out(y, x) = mean;
  if (rec) *rec = r;
  return out;
}

/// Applies the enabled transforms in order. Every random draw comes from a
/// single generator seeded with `seed`.
inline Image2D randomize(const Image2D& img, const RandomizationConfig& cfg, std::uint64_t seed,
                         AugmentationTrace* trace = nullptr) {
  cfg.validate();
  AugmentationTrace t;
  std::mt19937_64 rng(seed);
  Image2D x = img;
  if (x.size() == 0) {
    if (trace) *trace = t;
    return x;
  }

  if (cfg.smoothing) {
    t.stages.push_back("smoothing");
    t.smoothed = std::bernoulli_distribution(cfg.smoothing_p)(rng);
    const auto pick = std::uniform_int_distribution<std::size_t>(0, cfg.kernel_sizes.size() - 1)(rng);
    t.kernel = cfg.kernel_sizes[pick];
    if (t.smoothed) x = gaussian_smooth(x, t.kernel);
  }
  if (cfg.noise) {
    t.stages.push_back("noise");
    t.noise_max = detail::intensity_unit(x);
    t.noise_mean = cfg.noise_mean_frac.sample(rng) * t.noise_max;
    t.noise_sigma = cfg.noise_sigma_frac * t.noise_max;
    if (t.noise_sigma > 0.0) {
      std::normal_distribution<double> n(t.noise_mean, t.noise_sigma);
      for (double& v : x.data) v += n(rng);
    } else {
      for (double& v : x.data) v += t.noise_mean;
    }
  }
  if (cfg.bound_norm) {
    // [0, max] is mapped affinely onto the sampled [lower, upper], then clipped.
    t.stages.push_back("bound_norm");
    t.bound_max = detail::intensity_unit(x);
    t.lower = cfg.lower_frac.sample(rng) * t.bound_max;
    t.upper = cfg.upper_frac.sample(rng) * t.bound_max;
    const double s = (t.upper - t.lower) / t.bound_max;
    for (double& v : x.data) v = std::clamp(t.lower + s * v, t.lower, t.upper);
  }
  if (cfg.linear) {
    t.stages.push_back("linear");
    t.scale = cfg.linear_scale.sample(rng);
    for (double& v : x.data) v *= t.scale;
  }
  if (cfg.gamma) {
    // Odd power law on intensities relative to the stage max.
    t.stages.push_back("gamma");
    t.gamma = cfg.gamma_range.sample(rng);
    const double m = detail::intensity_unit(x);
    if (t.gamma != 1.0)
      for (double& v : x.data) v = std::copysign(m * std::pow(std::abs(v) / m, t.gamma), v);
  }
  if (cfg.sine) {
    // a sin(b u + c) on u = x / max, mapped back to the stage's units.
    t.stages.push_back("sine");
    t.a = cfg.sine_a.sample(rng);
    t.b = cfg.sine_b.sample(rng);
    t.c = cfg.sine_c.sample(rng);
    const double m = detail::intensity_unit(x);
    for (double& v : x.data) v = m * t.a * std::sin(t.b * v / m + t.c);
  }
  if (cfg.erase) {
    t.stages.push_back("erase");
    EraseRecord er;
    x = random_erase(x, cfg.erase_area, cfg.erase_aspect, rng, &er);
    t.erased = er.erased;
    t.erase_r0 = er.r0;
    t.erase_c0 = er.c0;
    t.erase_h = er.h;
    t.erase_w = er.w;
    t.erase_fraction = er.fraction;
    t.erase_aspect = er.aspect;
    t.erase_fill = er.fill;
  }
  if (trace) *trace = t;
  return x;
}

inline void to_json(nlohmann::json& j, const Range& r) { j = nlohmann::json::array({r.lo, r.hi}); }
inline void from_json(const nlohmann::json& j, Range& r) {
  if (!j.is_array() || j.size() != 2) fail(ErrorCode::InvalidConfig, "range must be [lo, hi]");
  r.lo = j[0].get<double>();
  r.hi = j[1].get<double>();
}

inline void to_json(nlohmann::json& j, const RandomizationConfig& c) {
  j = nlohmann::json{{"smoothing", c.smoothing},
                     {"smoothing_p", c.smoothing_p},
                     {"kernel_sizes", c.kernel_sizes},
                     {"noise", c.noise},
                     {"noise_mean_frac", c.noise_mean_frac},
                     {"noise_sigma_frac", c.noise_sigma_frac},
                     {"bound_norm", c.bound_norm},
                     {"lower_frac", c.lower_frac},
                     {"upper_frac", c.upper_frac},
                     {"linear", c.linear},
                     {"linear_scale", c.linear_scale},
                     {"gamma", c.gamma},
                     {"gamma_range", c.gamma_range},
                     {"sine", c.sine},
                     {"sine_a", c.sine_a},
                     {"sine_b", c.sine_b},
                     {"sine_c", c.sine_c},
                     {"erase", c.erase},
                     {"erase_area", c.erase_area},
                     {"erase_aspect", c.erase_aspect}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, RandomizationConfig& c) {
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("smoothing", c.smoothing);
  opt("smoothing_p", c.smoothing_p);
  opt("kernel_sizes", c.kernel_sizes);
  opt("noise", c.noise);
  opt("noise_mean_frac", c.noise_mean_frac);
  opt("noise_sigma_frac", c.noise_sigma_frac);
  opt("bound_norm", c.bound_norm);
  opt("lower_frac", c.lower_frac);
  opt("upper_frac", c.upper_frac);
  opt("linear", c.linear);
  opt("linear_scale", c.linear_scale);
  opt("gamma", c.gamma);
  opt("gamma_range", c.gamma_range);
  opt("sine", c.sine);
  opt("sine_a", c.sine_a);
  opt("sine_b", c.sine_b);
  opt("sine_c", c.sine_c);
  opt("erase", c.erase);
  opt("erase_area", c.erase_area);
  opt("erase_aspect", c.erase_aspect);
}

}  // namespace sphereg
