// Train the toy encoder with the double-backward loss for a few hundred
// iterations and print a one-axis similarity profile around a pose.

#include <iostream>

#include "sphereg/phantom.hpp"
#include "sphereg/pipeline.hpp"
#include "sphereg/train.hpp"

using namespace sphereg;

int main() {
  const Phantom ph = reference_phantom();
  const Camera cam;
  EncoderInit init;
  init.input_scale = 0.05;
  TrainConfig cfg;
  cfg.iterations = 200;
  cfg.downsample = cam.det_h / init.in_h;
  const TrainResult tr = train_similarity(ph.volume, cam, make_encoder(init, 1), cfg);
  std::cout << "loss " << tr.trace.front().loss << " -> " << tr.trace.back().loss << "\n";

  SimilarityModel model{Metric::Learned, tr.params, {}};
  model.downsample = cfg.downsample;
  const Twist gt{Vec3::Zero(), Vec3(2, -3, 1)};
  const Image2D target = render_drr(ph.volume, cam, gt);
  const auto profile = axis_profile(ph.volume, cam, target, gt, model, 3, 10.0, 11);
  const auto grid = symmetric_grid(10.0, 11);
  for (std::size_t i = 0; i < profile.size(); ++i) std::cout << "tx " << grid[i] << " mm  eps " << profile[i] << "\n";
  return 0;
}
