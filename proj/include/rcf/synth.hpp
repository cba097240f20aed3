// Procedural multi-sensor scenes: camera image, dense ground-truth depth,
// sparse scanline lidar, and sparse multi-channel radar with vertical
// extension. Pure functions of (seed, dims); the radar observes true depth
// with Gaussian noise so a linear fit of truth on radar explains > 90% of
// variance per scene.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rcf/tensor.hpp"
#include "rcf/util.hpp"

namespace rcf {

struct SceneSample {
  Tensor<float> image;        // [H x W x 3] in [0,1]
  Tensor<float> radar;        // [H x W x C_R] meters, 0 = no return
  Tensor<float> lidar_gt;     // [H x W] meters, 0 = no return
  Tensor<float> dense_depth;  // [H x W] full truth, analysis only
};

// dims must be multiples of 16 (deepest toy reassemble scale) and >= 32.
SceneSample gen_scene(uint64_t seed, size_t h, size_t w, size_t radar_channels = 3);

struct Augmented {
  Tensor<float> image;
  bool flip = false;
};

// Photometric jitter with explicit factors; augment() draws them.
Tensor<float> apply_photometric(const Tensor<float>& image, double gamma, double brightness,
                                const std::vector<double>& color);

// Draw order: gamma, brightness, per-channel color (all uniform in
// (0.9, 1.1)), then the flip coin at p = 0.5. The flip itself is left to
// the caller so sensor maps flip identically.
Augmented augment(const Tensor<float>& image, Rng& rng);

Tensor<float> hflip(const Tensor<float>& t);  // reverse columns, rank 2 or 3

// Photometric jitter on the image plus a coordinated flip of all maps.
SceneSample augment_sample(const SceneSample& s, Rng& rng);

// Dataset directory: manifest.txt plus scene_%06d/{image,radar,lidar,depth}.rten.
void write_sample(const std::string& dir, const SceneSample& s);
SceneSample read_sample(const std::string& dir);

struct Dataset {
  std::string root;
  size_t count = 0;
  size_t height = 0, width = 0, radar_channels = 0;
  uint64_t seed = 0;

  std::string sample_dir(size_t i) const;
  SceneSample load(size_t i) const;
};

void generate_dataset(const std::string& dir, size_t n, size_t h, size_t w, uint64_t seed,
                      size_t radar_channels = 3);
Dataset open_dataset(const std::string& dir);

}  // namespace rcf
