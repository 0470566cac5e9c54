#pragma once

// Grayscale image grids and 8-bit binary PGM (P5) I/O.

#include <string>
#include <vector>

#include "milseg/errors.hpp"

namespace milseg {

// Row-major H x W grid of intensities in [0, 1].
struct ImageGrid {
  int h = 0;
  int w = 0;
  std::vector<float> v;

  ImageGrid() = default;
  ImageGrid(int h, int w, float fill = 0.0f)
      : h(h), w(w), v(static_cast<size_t>(h) * w, fill) {}

  float& at(int r, int c) { return v[static_cast<size_t>(r) * w + c]; }
  float at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
};

// Writes an 8-bit P5 PGM; intensities quantized round-half-up, so 0.5
// maps to byte 128. Round-trip error is at most 1/510 per pixel.
void save_pgm(const std::string& path, const ImageGrid& img);
ImageGrid load_pgm(const std::string& path);

}  // namespace milseg
