#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ha2f/change_head.hpp"
#include "ha2f/png_io.hpp"

namespace ha2f {

struct ImagePair {
  Image a, b;        // RGB, [0,1]
  BinaryMask label;  // may be empty (h == 0) for unlabeled pairs
  std::string id;
};

struct SynthConfig {
  int size = 64;
  int n_objects_min = 3, n_objects_max = 6;
  double change_fraction_lo = 0.05, change_fraction_hi = 0.2;
  double jitter_brightness = 0.05, jitter_contrast = 0.05;
  double noise_sigma = 0.01;
  int shift_px = 1;
  uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

/// Deterministic bi-temporal pair: blurred-noise background, opaque
/// non-overlapping objects, some added/removed in phase 2, then misregistration
/// shift, photometric jitter and additive noise applied to phase 2 only.
/// The label marks the exact added/removed footprints.
ImagePair synth_pair(const SynthConfig& cfg, int index);

/// root/split/{A,B,label} with matching filenames; pairs sorted by filename.
std::vector<ImagePair> load_dataset(const std::string& root, const std::string& split);

/// p=0.5 horizontal flip, p=0.5 vertical flip, random crop to crop_size and
/// resize back (bilinear images, nearest label). Identical transform for a, b
/// and label; deterministic given seed.
ImagePair augment(const ImagePair& pair, uint64_t seed, int crop_size);

void write_pair(const std::string& dir, const ImagePair& pair);  // dir has A/, B/, label/

Image resize_bilinear(const Image& img, int oh, int ow);
BinaryMask resize_nearest(const BinaryMask& m, int oh, int ow);

}  // namespace ha2f
