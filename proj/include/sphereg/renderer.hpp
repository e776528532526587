#pragma once

// DRR synthesis: exact Siddon line integrals through a posed voxel volume.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "sphereg/error.hpp"
#include "sphereg/image.hpp"
#include "sphereg/lie.hpp"
#include "sphereg/volume.hpp"

namespace sphereg {

/// Exact sum of density x chord length over the voxels crossed by p0 -> p1
/// (volume coordinates, mm). Space outside the grid is air.
inline double siddon_raycast(const Volume& vol, const Vec3& p0, const Vec3& p1) {
  const Vec3 d = p1 - p0;
  const double length = d.norm();
  if (!(length > 0.0)) fail(ErrorCode::DegenerateRay, "siddon_raycast: p0 == p1");

  const Vec3 lo = vol.origin;
  const Vec3 hi = vol.upper();
  double a_min = 0.0, a_max = 1.0;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (p0[a] <= lo[a] || p0[a] >= hi[a]) return 0.0;
      continue;
    }
    double t0 = (lo[a] - p0[a]) / d[a];
    double t1 = (hi[a] - p0[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    a_min = std::max(a_min, t0);
    a_max = std::min(a_max, t1);
  }
  if (!(a_max > a_min)) return 0.0;

  std::array<int, 3> idx{};
  std::array<int, 3> step{};
  std::array<double, 3> a_next{};
  std::array<double, 3> a_inc{};
  std::array<std::ptrdiff_t, 3> stride{1, vol.dims[0], static_cast<std::ptrdiff_t>(vol.dims[0]) * vol.dims[1]};
  // Locate the entry voxel from the midpoint of a short probe so a ray that
  // enters exactly on a voxel face is assigned to the voxel it travels into.
  const double a_probe = a_min + 1e-9 * (a_max - a_min);
  for (int a = 0; a < 3; ++a) {
    const double pos = p0[a] + a_probe * d[a];
    int i = static_cast<int>(std::floor((pos - lo[a]) / vol.spacing[a]));
    idx[a] = std::clamp(i, 0, vol.dims[a] - 1);
    if (d[a] > 0.0) {
      step[a] = 1;
      a_next[a] = (lo[a] + (idx[a] + 1) * vol.spacing[a] - p0[a]) / d[a];
      a_inc[a] = vol.spacing[a] / d[a];
    } else if (d[a] < 0.0) {
      step[a] = -1;
      a_next[a] = (lo[a] + idx[a] * vol.spacing[a] - p0[a]) / d[a];
      a_inc[a] = -vol.spacing[a] / d[a];
    } else {
      step[a] = 0;
      a_next[a] = std::numeric_limits<double>::infinity();
      a_inc[a] = 0.0;
    }
  }

  const float* data = vol.data.data();
  std::ptrdiff_t offset = idx[0] + stride[1] * idx[1] + stride[2] * idx[2];
  double alpha = a_min;
  double sum = 0.0;
  while (alpha < a_max) {
    int axis = a_next[0] < a_next[1] ? 0 : 1;
    if (a_next[2] < a_next[axis]) axis = 2;
    const double a_end = std::min(a_next[axis], a_max);
    if (a_end > alpha) {
      sum += static_cast<double>(data[offset]) * (a_end - alpha);
      alpha = a_end;
    }
    if (alpha >= a_max) break;
    idx[axis] += step[axis];
    if (idx[axis] < 0 || idx[axis] >= vol.dims[axis]) break;
    offset += step[axis] * stride[axis];
    a_next[axis] += a_inc[axis];
  }
  return sum * length;
}

/// Maps isocenter-frame points into volume coordinates for a given pose.
/// The posed volume is x_world = R (x_vol - iso) + t with iso the volume
/// center shifted by the camera's iso_offset.
struct PoseFrame {
  Mat3 rt;
  Vec3 t;
  Vec3 iso;

  PoseFrame(const Volume& vol, const Camera& cam, const Twist& theta) {
    const Transform3 pose = se3_exp(theta);
    rt = pose.R.transpose();
    t = pose.t;
    iso = vol.center() + cam.iso_offset;
  }

  Vec3 to_volume(const Vec3& world) const { return rt * (world - t) + iso; }
};

inline Image2D render_drr(const Volume& vol, const Camera& cam, const Twist& theta) {
  cam.validate();
  const PoseFrame frame(vol, cam, theta);
  const Vec3 src = frame.to_volume(cam.source());
  Image2D img(cam.det_h, cam.det_w);
  const int n = cam.det_h * cam.det_w;
#pragma omp parallel for schedule(dynamic, 16)
  for (int p = 0; p < n; ++p) {
    const int r = p / cam.det_w;
    const int c = p % cam.det_w;
    img.data[p] = siddon_raycast(vol, src, frame.to_volume(cam.pixel_center(r, c)));
  }
  return img;
}

/// Per-axis central-difference steps: rotation (rad) then translation (mm).
struct GradientSteps {
  double rotation = 1e-3;
  double translation = 1e-1;

  double operator[](int axis) const { return axis < 3 ? rotation : translation; }
};

/// dI/dtheta_k by central differences of left-multiplied perturbations.
inline std::array<Image2D, 6> render_pose_gradient(const Volume& vol, const Camera& cam, const Twist& theta,
                                                   const GradientSteps& steps = {}) {
  if (!(steps.rotation > 0.0) || !(steps.translation > 0.0)) {
    fail(ErrorCode::InvalidConfig, "finite-difference steps must be positive");
  }
  std::array<Image2D, 6> grads;
  for (int k = 0; k < 6; ++k) {
    const double h = steps[k];
    Twist delta;
    delta[k] = h;
    const Image2D plus = render_drr(vol, cam, left_compose(delta, theta));
    delta[k] = -h;
    const Image2D minus = render_drr(vol, cam, left_compose(delta, theta));
    Image2D g(cam.det_h, cam.det_w);
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = (plus.data[i] - minus.data[i]) / (2.0 * h);
    grads[k] = std::move(g);
  }
  return grads;
}

/// Beer-Lambert style inversion 1 - log(1 + I) / log(1 + I0).
inline Image2D invert_intensity(const Image2D& img, double i0) {
  if (!(i0 > 0.0) || !std::isfinite(i0)) fail(ErrorCode::BadEnergy, "beam energy I0 must be positive");
  Image2D out = img;
  const double denom = std::log1p(i0);
  for (double& x : out.data) x = 1.0 - std::log1p(x) / denom;
  return out;
}

}  // namespace sphereg
