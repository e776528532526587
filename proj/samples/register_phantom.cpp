// Render the reference phantom at a known pose, then recover that pose from
// a perturbed start with the multi-start + LM pipeline.

#include <iostream>

#include "sphereg/phantom.hpp"
#include "sphereg/pipeline.hpp"

using namespace sphereg;

int main() {
  const Phantom ph = reference_phantom();
  const Camera cam;
  const Twist gt{Vec3(deg_to_rad(6), deg_to_rad(-4), deg_to_rad(3)), Vec3(5, -7, 4)};
  const Twist start = sample_pose(gt, 5.0, 10.0, std::uint64_t{1});
  const Image2D target = render_drr(ph.volume, cam, gt);

  const SimilarityModel model{Metric::Mncc, {}, {}};
  RegisterOptions opt;
  opt.seed = 1;
  const RegistrationOutcome o = register_pose(ph.volume, cam, target, start, model, opt);

  const auto landmarks = landmarks_about_isocenter(ph, cam);
  std::cout << "start mTRE  " << mtre(landmarks, start, gt) << " mm\n"
            << "init  mTRE  " << mtre(landmarks, o.theta_init, gt) << " mm\n"
            << "final mTRE  " << mtre(landmarks, o.result.theta_est, gt) << " mm after " << o.result.iterations
            << " LM iterations\n";
  return 0;
}
