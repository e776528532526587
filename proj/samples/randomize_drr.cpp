// Apply seeded domain randomization to a DRR and write the clean and
// corrupted images as PGM files in the working directory.

#include <iostream>

#include "sphereg/augmentation.hpp"
#include "sphereg/io.hpp"
#include "sphereg/phantom.hpp"
#include "sphereg/renderer.hpp"

using namespace sphereg;

int main() {
  const Image2D drr = render_drr(reference_phantom().volume, Camera{}, Twist{});
  io::write_pgm("drr_clean.pgm", drr);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    AugmentationTrace t;
    const Image2D out = randomize(drr, RandomizationConfig{}, seed, &t);
    const std::string name = "drr_random_" + std::to_string(seed) + ".pgm";
    io::write_pgm(name, out);
    std::cout << name << ": gamma " << t.gamma << ", scale " << t.scale << ", erased "
              << 100.0 * t.erase_fraction << "%\n";
  }
  return 0;
}
