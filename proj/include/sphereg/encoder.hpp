#pragma once

// Toy dual-branch feature encoder.
//
// Local branch: 3x3 conv (1 -> c1), pointwise activation, 3x3 conv
// (c1 -> cl), then s x s average pooling. Global branch: s x s patch-average
// tokens, one dense projection (cg x tokens) plus bias, broadcast to every
// output cell. Output cell (I, J) is concat(local[:, I, J], global[:]).
// Convolutions are zero-padded "same". The input is multiplied by the fixed
// (untrained) input_scale first.
//
// Both reverse mode (parameter and input gradients) and forward mode (input
// tangent) are exact.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sphereg/error.hpp"
#include "sphereg/image.hpp"
#include "sphereg/spherical.hpp"

namespace sphereg {

enum class Activation { Tanh, Relu, Identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
  }
  return "tanh";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  fail(ErrorCode::InvalidConfig, "unknown activation '" + s + "'");
}

struct EncoderParams {
  int in_h = 32;
  int in_w = 32;
  int stride = 4;
  int c1 = 4;  // hidden local channels
  int cl = 3;  // local output channels
  int cg = 2;  // global output channels
  Activation act = Activation::Tanh;
  EmbedMode embed = EmbedMode::OrthogonalTangent;
  double input_scale = 1.0;

  std::vector<double> w1, b1;  // [c1][3][3], [c1]
  std::vector<double> w2, b2;  // [cl][c1][3][3], [cl]
  std::vector<double> wg, bg;  // [cg][tokens], [cg]

  int grid_h() const { return in_h / stride; }
  int grid_w() const { return in_w / stride; }
  int tokens() const { return grid_h() * grid_w(); }
  int out_dim() const { return cl + cg; }

  /// Allocates zeroed tensors for the declared shapes.
  void allocate() {
    w1.assign(static_cast<std::size_t>(c1) * 9, 0.0);
    b1.assign(c1, 0.0);
    w2.assign(static_cast<std::size_t>(cl) * c1 * 9, 0.0);
    b2.assign(cl, 0.0);
    wg.assign(static_cast<std::size_t>(cg) * tokens(), 0.0);
    bg.assign(cg, 0.0);
  }

  void validate() const {
    if (in_h < 1 || in_w < 1 || stride < 1 || c1 < 1 || cl < 0 || cg < 0 || cl + cg < 1) {
      fail(ErrorCode::InvalidConfig, "encoder dimensions must be positive");
    }
    if (in_h % stride != 0 || in_w % stride != 0) {
      fail(ErrorCode::ShapeMismatch, "encoder input size must be a multiple of the stride");
    }
    if (w1.size() != static_cast<std::size_t>(c1) * 9 || b1.size() != static_cast<std::size_t>(c1) ||
        w2.size() != static_cast<std::size_t>(cl) * c1 * 9 || b2.size() != static_cast<std::size_t>(cl) ||
        wg.size() != static_cast<std::size_t>(cg) * tokens() || bg.size() != static_cast<std::size_t>(cg)) {
      fail(ErrorCode::ShapeMismatch, "encoder tensors do not match the declared layer shapes");
    }
    if (!(input_scale > 0.0) || !std::isfinite(input_scale)) fail(ErrorCode::InvalidConfig, "input_scale must be > 0");
    for (const auto* t : tensors())
      for (double x : *t)
        if (!std::isfinite(x)) fail(ErrorCode::InvalidConfig, "encoder parameters must be finite");
  }

  std::array<const std::vector<double>*, 6> tensors() const { return {&w1, &b1, &w2, &b2, &wg, &bg}; }
  std::array<std::vector<double>*, 6> tensors() { return {&w1, &b1, &w2, &b2, &wg, &bg}; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* t : tensors()) n += t->size();
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto* t : tensors()) out.insert(out.end(), t->begin(), t->end());
    return out;
  }

  void unflatten(const std::vector<double>& flat) {
    if (flat.size() != parameter_count()) fail(ErrorCode::ShapeMismatch, "flat parameter vector has the wrong length");
    std::size_t k = 0;
    for (auto* t : tensors())
      for (double& x : *t) x = flat[k++];
  }

  /// Same shapes and metadata, all tensors zero (gradient accumulator).
  EncoderParams zeros_like() const {
    EncoderParams z = *this;
    z.allocate();
    return z;
  }

  EncoderParams& operator+=(const EncoderParams& o) {
    auto dst = tensors();
    auto src = o.tensors();
    for (std::size_t t = 0; t < dst.size(); ++t)
      for (std::size_t i = 0; i < dst[t]->size(); ++i) (*dst[t])[i] += (*src[t])[i];
    return *this;
  }
};

struct EncoderInit {
  int in_h = 32;
  int in_w = 32;
  int stride = 4;
  int c1 = 4;
  int cl = 3;
  int cg = 2;
  Activation act = Activation::Tanh;
  EmbedMode embed = EmbedMode::OrthogonalTangent;
  double input_scale = 1.0;
};

/// Scaled-Gaussian initialization; biases start at zero.
inline EncoderParams make_encoder(const EncoderInit& init, std::uint64_t seed) {
  EncoderParams p;
  p.in_h = init.in_h;
  p.in_w = init.in_w;
  p.stride = init.stride;
  p.c1 = init.c1;
  p.cl = init.cl;
  p.cg = init.cg;
  p.act = init.act;
  p.embed = init.embed;
  p.input_scale = init.input_scale;
  if (p.stride < 1 || p.in_h % p.stride != 0 || p.in_w % p.stride != 0) {
    fail(ErrorCode::ShapeMismatch, "encoder input size must be a multiple of the stride");
  }
  p.allocate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  const double s1 = 1.0 / 3.0;
  const double s2 = 1.0 / std::sqrt(9.0 * p.c1);
  const double sg = 1.0 / std::sqrt(static_cast<double>(p.tokens()));
  for (double& x : p.w1) x = s1 * n01(rng);
  for (double& x : p.w2) x = s2 * n01(rng);
  for (double& x : p.wg) x = sg * n01(rng);
  p.validate();
  return p;
}

namespace detail {

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::Tanh: return std::tanh(x);
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Identity: return x;
  }
  return x;
}

inline double activate_grad(Activation a, double x) {
  switch (a) {
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

// out[o] (+)= sum_i w[o][i] (*) in[i], 3x3 zero-padded, planes of h*w.
inline void conv3x3(const double* in, int cin, const double* w, int cout, int h, int wd, double* out) {
  const std::size_t plane = static_cast<std::size_t>(h) * wd;
  for (int o = 0; o < cout; ++o) {
    double* dst = out + o * plane;
    for (int i = 0; i < cin; ++i) {
      const double* src = in + i * plane;
      const double* k = w + (static_cast<std::size_t>(o) * cin + i) * 9;
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < wd; ++c) {
          double acc = 0.0;
          for (int dy = -1; dy <= 1; ++dy) {
            const int rr = r + dy;
            if (rr < 0 || rr >= h) continue;
            for (int dx = -1; dx <= 1; ++dx) {
              const int cc = c + dx;
              if (cc < 0 || cc >= wd) continue;
              acc += k[(dy + 1) * 3 + (dx + 1)] * src[rr * wd + cc];
            }
          }
          dst[r * wd + c] += acc;
        }
    }
  }
}

// Reverse of conv3x3: accumulates dL/dw into gw and dL/din into gin (if not null).
inline void conv3x3_backward(const double* in, int cin, const double* w, int cout, int h, int wd, const double* gout,
                             double* gw, double* gin) {
  const std::size_t plane = static_cast<std::size_t>(h) * wd;
  for (int o = 0; o < cout; ++o) {
    const double* g = gout + o * plane;
    for (int i = 0; i < cin; ++i) {
      const double* src = in + i * plane;
      const double* k = w + (static_cast<std::size_t>(o) * cin + i) * 9;
      double* gk = gw + (static_cast<std::size_t>(o) * cin + i) * 9;
      double* gsrc = gin ? gin + i * plane : nullptr;
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < wd; ++c) {
          const double go = g[r * wd + c];
          if (go == 0.0) continue;
          for (int dy = -1; dy <= 1; ++dy) {
            const int rr = r + dy;
            if (rr < 0 || rr >= h) continue;
            for (int dx = -1; dx <= 1; ++dx) {
              const int cc = c + dx;
              if (cc < 0 || cc >= wd) continue;
              gk[(dy + 1) * 3 + (dx + 1)] += go * src[rr * wd + cc];
              if (gsrc) gsrc[rr * wd + cc] += go * k[(dy + 1) * 3 + (dx + 1)];
            }
          }
        }
    }
  }
}

inline void check_input(const Image2D& img, const EncoderParams& p) {
  if (img.h != p.in_h || img.w != p.in_w) {
    fail(ErrorCode::ShapeMismatch, "encoder expects " + std::to_string(p.in_h) + "x" + std::to_string(p.in_w) +
                                       " input, got " + std::to_string(img.h) + "x" + std::to_string(img.w));
  }
}

}  // namespace detail

/// Intermediate activations kept for the backward and tangent passes.
struct EncoderTape {
  std::vector<double> x;       // scaled input, h*w
  std::vector<double> a1, h1;  // c1 planes
  std::vector<double> tokens;  // patch means of x
};

inline FeatureMap encoder_forward(const Image2D& img, const EncoderParams& p, EncoderTape* tape = nullptr) {
  p.validate();
  detail::check_input(img, p);
  const int h = p.in_h, w = p.in_w, s = p.stride, gh = p.grid_h(), gw = p.grid_w();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  EncoderTape local_tape;
  EncoderTape& t = tape ? *tape : local_tape;

  t.x.resize(plane);
  for (std::size_t i = 0; i < plane; ++i) t.x[i] = p.input_scale * img.data[i];

  t.a1.assign(p.c1 * plane, 0.0);
  for (int c = 0; c < p.c1; ++c) std::fill(t.a1.begin() + c * plane, t.a1.begin() + (c + 1) * plane, p.b1[c]);
  detail::conv3x3(t.x.data(), 1, p.w1.data(), p.c1, h, w, t.a1.data());
  t.h1.resize(t.a1.size());
  for (std::size_t i = 0; i < t.a1.size(); ++i) t.h1[i] = detail::activate(p.act, t.a1[i]);

  std::vector<double> a2(p.cl * plane, 0.0);
  detail::conv3x3(t.h1.data(), p.c1, p.w2.data(), p.cl, h, w, a2.data());

  t.tokens.assign(p.tokens(), 0.0);
  const double inv = 1.0 / (s * s);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) t.tokens[(r / s) * gw + c / s] += inv * t.x[r * w + c];

  FeatureMap phi(gh, gw, p.out_dim());
  for (int o = 0; o < p.cl; ++o) {
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) phi.pixel(r / s, c / s)[o] += inv * a2[o * plane + r * w + c];
    for (std::size_t k = 0; k < phi.pixels(); ++k) phi.pixel(k)[o] += p.b2[o];
  }
  for (int q = 0; q < p.cg; ++q) {
    double g = p.bg[q];
    for (int k = 0; k < p.tokens(); ++k) g += p.wg[static_cast<std::size_t>(q) * p.tokens() + k] * t.tokens[k];
    for (std::size_t k = 0; k < phi.pixels(); ++k) phi.pixel(k)[p.cl + q] = g;
  }
  return phi;
}

struct EncoderGradients {
  EncoderParams params;  // d/d(parameters), same layout as the encoder
  Image2D input;         // d/d(image)
};

/// Reverse mode through the encoder given dL/dphi.
inline EncoderGradients encoder_backward(const Image2D& img, const EncoderParams& p, const FeatureMap& upstream) {
  EncoderTape t;
  const FeatureMap phi = encoder_forward(img, p, &t);
  if (!upstream.same_shape(phi)) fail(ErrorCode::ShapeMismatch, "upstream gradient does not match the feature map");
  const int h = p.in_h, w = p.in_w, s = p.stride, gw = p.grid_w();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const double inv = 1.0 / (s * s);

  EncoderGradients out{p.zeros_like(), Image2D(h, w)};
  EncoderParams& g = out.params;
  std::vector<double> gx(plane, 0.0);

  // Local branch.
  std::vector<double> ga2(p.cl * plane);
  for (int o = 0; o < p.cl; ++o) {
    for (std::size_t k = 0; k < upstream.pixels(); ++k) g.b2[o] += upstream.pixel(k)[o];
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) ga2[o * plane + r * w + c] = inv * upstream.pixel(r / s, c / s)[o];
  }
  std::vector<double> gh1(p.c1 * plane, 0.0);
  detail::conv3x3_backward(t.h1.data(), p.c1, p.w2.data(), p.cl, h, w, ga2.data(), g.w2.data(), gh1.data());
  std::vector<double>& ga1 = gh1;
  for (std::size_t i = 0; i < ga1.size(); ++i) ga1[i] *= detail::activate_grad(p.act, t.a1[i]);
  for (int c = 0; c < p.c1; ++c)
    for (std::size_t i = 0; i < plane; ++i) g.b1[c] += ga1[c * plane + i];
  detail::conv3x3_backward(t.x.data(), 1, p.w1.data(), p.c1, h, w, ga1.data(), g.w1.data(), gx.data());

  // Global branch.
  std::vector<double> gtok(p.tokens(), 0.0);
  for (int q = 0; q < p.cg; ++q) {
    double gq = 0.0;
    for (std::size_t k = 0; k < upstream.pixels(); ++k) gq += upstream.pixel(k)[p.cl + q];
    g.bg[q] += gq;
    for (int k = 0; k < p.tokens(); ++k) {
      g.wg[static_cast<std::size_t>(q) * p.tokens() + k] += gq * t.tokens[k];
      gtok[k] += gq * p.wg[static_cast<std::size_t>(q) * p.tokens() + k];
    }
  }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) gx[r * w + c] += inv * gtok[(r / s) * gw + c / s];

  for (std::size_t i = 0; i < plane; ++i) out.input.data[i] = p.input_scale * gx[i];
  return out;
}

inline EncoderParams encoder_param_gradient(const Image2D& img, const EncoderParams& p, const FeatureMap& upstream) {
  return encoder_backward(img, p, upstream).params;
}

/// Forward-mode derivative of the feature map along an input tangent.
/// `tape` must come from encoder_forward on the same image and parameters.
inline FeatureMap encoder_jvp(const EncoderParams& p, const EncoderTape& tape, const Image2D& dimg) {
  const int h = p.in_h, w = p.in_w, s = p.stride, gw = p.grid_w();
  if (dimg.h != h || dimg.w != w) fail(ErrorCode::ShapeMismatch, "encoder_jvp: tangent image has the wrong shape");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const double inv = 1.0 / (s * s);

  std::vector<double> dx(plane);
  for (std::size_t i = 0; i < plane; ++i) dx[i] = p.input_scale * dimg.data[i];
  std::vector<double> dh1(p.c1 * plane, 0.0);
  detail::conv3x3(dx.data(), 1, p.w1.data(), p.c1, h, w, dh1.data());
  for (std::size_t i = 0; i < dh1.size(); ++i) dh1[i] *= detail::activate_grad(p.act, tape.a1[i]);
  std::vector<double> da2(p.cl * plane, 0.0);
  detail::conv3x3(dh1.data(), p.c1, p.w2.data(), p.cl, h, w, da2.data());

  FeatureMap dphi(p.grid_h(), gw, p.out_dim());
  for (int o = 0; o < p.cl; ++o)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) dphi.pixel(r / s, c / s)[o] += inv * da2[o * plane + r * w + c];
  std::vector<double> dtok(p.tokens(), 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) dtok[(r / s) * gw + c / s] += inv * dx[r * w + c];
  for (int q = 0; q < p.cg; ++q) {
    double dg = 0.0;
    for (int k = 0; k < p.tokens(); ++k) dg += p.wg[static_cast<std::size_t>(q) * p.tokens() + k] * dtok[k];
    for (std::size_t k = 0; k < dphi.pixels(); ++k) dphi.pixel(k)[p.cl + q] = dg;
  }
  return dphi;
}

}  // namespace sphereg
