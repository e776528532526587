#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sphereg/error.hpp"
#include "sphereg/lie.hpp"

namespace sphereg {

/// Attenuation grid. Voxel (i, j, k) occupies the box
/// origin + [i, i+1) x [j, j+1) x [k, k+1) scaled by spacing, so `origin` is
/// the outer corner of the first voxel. Storage is x-fastest.
struct Volume {
  std::array<int, 3> dims{0, 0, 0};
  Vec3 spacing = Vec3::Ones();
  Vec3 origin = Vec3::Zero();
  std::vector<float> data;

  Volume() = default;
  Volume(std::array<int, 3> dims_, const Vec3& spacing_, const Vec3& origin_, float fill = 0.0f)
      : dims(dims_), spacing(spacing_), origin(origin_),
        data(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2], fill) {}

  std::size_t voxel_count() const { return data.size(); }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(dims[0]) * (j + static_cast<std::size_t>(dims[1]) * k);
  }
  float& at(int i, int j, int k) { return data[index(i, j, k)]; }
  float at(int i, int j, int k) const { return data[index(i, j, k)]; }

  Vec3 extent() const { return spacing.cwiseProduct(Vec3(dims[0], dims[1], dims[2])); }
  Vec3 upper() const { return origin + extent(); }
  Vec3 center() const { return origin + 0.5 * extent(); }
  Vec3 voxel_center(int i, int j, int k) const {
    return origin + spacing.cwiseProduct(Vec3(i + 0.5, j + 0.5, k + 0.5));
  }

  bool same_grid(const Volume& o) const { return dims == o.dims; }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] < 1) fail(ErrorCode::InvalidConfig, "volume dims must be >= 1");
      if (!(spacing[a] > 0.0)) fail(ErrorCode::InvalidConfig, "volume spacing must be positive");
    }
    if (data.size() != static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]) {
      fail(ErrorCode::ShapeMismatch, "volume data size does not match dims");
    }
    for (float x : data) {
      if (!std::isfinite(x) || x < 0.0f) fail(ErrorCode::InvalidConfig, "volume densities must be finite and >= 0");
    }
  }
};

/// C-arm pinhole geometry in the isocenter frame: the source sits on the -z
/// axis at distance f * source_fraction from the isocenter, the detector
/// plane at +f * (1 - source_fraction), principal point at detector center.
struct Camera {
  double f = 400.0;  // source-to-detector distance, mm
  int det_w = 64;
  int det_h = 64;
  double pixel_mm = 2.0;  // 64 px then span the 64 mm phantom at the isocenter
  Vec3 iso_offset = Vec3::Zero();  // isocenter relative to the volume center, mm
  double source_fraction = 0.5;

  void validate() const {
    check_focal(f);
    if (det_w < 1 || det_h < 1) fail(ErrorCode::InvalidConfig, "detector must have at least one pixel");
    if (!(pixel_mm > 0.0)) fail(ErrorCode::InvalidConfig, "pixel pitch must be positive");
    if (!(source_fraction > 0.0 && source_fraction < 1.0)) {
      fail(ErrorCode::InvalidConfig, "source_fraction must lie in (0, 1)");
    }
  }

  Vec3 source() const { return {0.0, 0.0, -f * source_fraction}; }
  Vec3 pixel_center(int row, int col) const {
    return {(col + 0.5 - 0.5 * det_w) * pixel_mm, (row + 0.5 - 0.5 * det_h) * pixel_mm, f * (1.0 - source_fraction)};
  }
};

/// Voxel-wise operator Psi for the additive enhancement V + Psi(V).
using VolumeOperator = std::function<Volume(const Volume&)>;

inline VolumeOperator zero_operator() {
  return [](const Volume& v) {
    Volume out = v;
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    return out;
  };
}

inline Volume enhance_volume(const Volume& vol, const VolumeOperator& psi) {
  const Volume delta = psi(vol);
  if (!delta.same_grid(vol) || delta.data.size() != vol.data.size()) {
    fail(ErrorCode::ShapeMismatch, "enhance_volume: operator changed the volume shape");
  }
  Volume out = vol;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += delta.data[i];
  return out;
}

}  // namespace sphereg
