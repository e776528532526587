#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "sphereg/error.hpp"

namespace sphereg {

/// Row-major scalar raster; rows index the detector v axis.
struct Image2D {
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Image2D() = default;
  Image2D(int h_, int w_, double fill = 0.0) : h(h_), w(w_), data(static_cast<std::size_t>(h_) * w_, fill) {}

  std::size_t size() const { return data.size(); }
  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * w + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * w + c]; }

  bool same_shape(const Image2D& o) const { return h == o.h && w == o.w; }
  bool all_finite() const {
    for (double x : data)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline void require_same_shape(const Image2D& a, const Image2D& b, const char* where) {
  if (!a.same_shape(b)) fail(ErrorCode::ShapeMismatch, std::string(where) + ": image shapes differ");
}

/// Mean over non-overlapping f x f blocks.
inline Image2D downsample_box(const Image2D& img, int f) {
  if (f < 1 || img.h % f != 0 || img.w % f != 0) {
    fail(ErrorCode::ShapeMismatch, "downsample factor " + std::to_string(f) + " does not divide the image size");
  }
  if (f == 1) return img;
  Image2D out(img.h / f, img.w / f);
  const double inv = 1.0 / (f * f);
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c) out(r / f, c / f) += inv * img(r, c);
  return out;
}

/// Adjoint of downsample_box: spreads each coarse value over its block.
inline Image2D downsample_box_adjoint(const Image2D& g, int f) {
  if (f == 1) return g;
  Image2D out(g.h * f, g.w * f);
  const double inv = 1.0 / (f * f);
  for (int r = 0; r < out.h; ++r)
    for (int c = 0; c < out.w; ++c) out(r, c) = inv * g(r / f, c / f);
  return out;
}

/// H x W raster of `channels`-dimensional vectors, channel index fastest.
template <class Tag>
struct ChannelGrid {
  int h = 0;
  int w = 0;
  int channels = 0;
  std::vector<double> data;

  ChannelGrid() = default;
  ChannelGrid(int h_, int w_, int c_)
      : h(h_), w(w_), channels(c_), data(static_cast<std::size_t>(h_) * w_ * c_, 0.0) {}

  std::size_t pixels() const { return static_cast<std::size_t>(h) * w; }
  std::span<double> pixel(std::size_t k) {
    return {data.data() + k * channels, static_cast<std::size_t>(channels)};
  }
  std::span<const double> pixel(std::size_t k) const {
    return {data.data() + k * channels, static_cast<std::size_t>(channels)};
  }
  std::span<double> pixel(int i, int j) { return pixel(static_cast<std::size_t>(i) * w + j); }
  std::span<const double> pixel(int i, int j) const { return pixel(static_cast<std::size_t>(i) * w + j); }

  template <class OtherTag>
  bool same_grid(const ChannelGrid<OtherTag>& o) const {
    return h == o.h && w == o.w;
  }
  bool same_shape(const ChannelGrid& o) const { return h == o.h && w == o.w && channels == o.channels; }
};

struct FeatureTag {};
struct SphereTag {};

/// Encoder output phi: H x W x D.
using FeatureMap = ChannelGrid<FeatureTag>;
/// Unit vectors on S^D: H x W x (D+1).
using SphericalField = ChannelGrid<SphereTag>;

}  // namespace sphereg
