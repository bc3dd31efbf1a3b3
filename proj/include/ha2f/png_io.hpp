#pragma once

#include <string>
#include <vector>

#include <cstdint>

namespace ha2f {

/// In-memory image: values in [0,1], layout (c, h, w) planes.
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<double> v;

  double& at(int ch, int y, int x) { return v[(static_cast<size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return v[(static_cast<size_t>(ch) * h + y) * w + x]; }
};

/// Reads an 8-bit PNG; gray -> 1 channel, anything else -> RGB. Throws DataError.
Image read_png(const std::string& path);

/// Writes [0,1] values as 8-bit (rounded, clamped); c must be 1 or 3.
void write_png(const std::string& path, const Image& img);

void write_png_rgb8(const std::string& path, int h, int w, const std::vector<uint8_t>& rgb);

}  // namespace ha2f
