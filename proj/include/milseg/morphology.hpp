#pragma once

// Binary mathematical morphology for weak-segmentation post-processing:
// erosion, dilation, opening, connected-component filtering.

#include <cstdint>
#include <vector>

#include "milseg/errors.hpp"

namespace milseg {

// Row-major H x W boolean grid.
struct BinaryMask {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int h, int w, bool fill = false)
      : h(h), w(w), bits(static_cast<size_t>(h) * w, fill ? 1 : 0) {}

  bool at(int r, int c) const {
    return bits[static_cast<size_t>(r) * w + c] != 0;
  }
  void set(int r, int c, bool v) {
    bits[static_cast<size_t>(r) * w + c] = v ? 1 : 0;
  }
  long long count() const {
    long long n = 0;
    for (auto b : bits) n += b;
    return n;
  }
  bool operator==(const BinaryMask& o) const {
    return h == o.h && w == o.w && bits == o.bits;
  }
};

// All-true rectangle. The anchor defaults to (height/2, width/2);
// reflected() mirrors the window about the anchor, which matters for
// even sizes (the full-scale pipeline uses a 20x20 element).
struct StructuringElement {
  int height = 20;
  int width = 20;
  int anchor_r = -1;  // -1 means height/2
  int anchor_c = -1;  // -1 means width/2

  int ar() const { return anchor_r >= 0 ? anchor_r : height / 2; }
  int ac() const { return anchor_c >= 0 ? anchor_c : width / 2; }

  StructuringElement reflected() const {
    return {height, width, height - 1 - ar(), width - 1 - ac()};
  }
};

// Out-of-bounds reads of the input mask during dilation.
enum class Border { kZero, kOne };

// Erosion: AND over the window {(i-ar, j-ac)}; out-of-bounds reads as false.
BinaryMask erode(const BinaryMask& mask, const StructuringElement& z);

// Dilation: OR over the reflected window, out[r,c] = OR in(r-(i-ar), c-(j-ac)).
// Out-of-bounds reads take the border value (default false, i.e. ignored).
// Duality holds exactly: erode(m, z) == NOT dilate(NOT m, z.reflected(), kOne).
BinaryMask dilate(const BinaryMask& mask, const StructuringElement& z,
                  Border border = Border::kZero);

// Opening: dilate(erode(mask, z), z). Anti-extensive, increasing, idempotent.
BinaryMask opening(const BinaryMask& mask, const StructuringElement& z);

// Keeps only the 4-connected component with the most pixels. Ties go to
// the component whose first pixel in row-major order comes first. An
// empty mask stays empty.
BinaryMask largest_component(const BinaryMask& mask);

BinaryMask invert(const BinaryMask& mask);

}  // namespace milseg
