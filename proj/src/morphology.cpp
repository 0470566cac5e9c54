#include "milseg/morphology.hpp"

#include <vector>

namespace milseg {

namespace {

void check_element(const BinaryMask& mask, const StructuringElement& z) {
  if (z.height < 1 || z.width < 1)
    throw ConfigError("structuring element must be at least 1x1");
  if (z.height > mask.h || z.width > mask.w)
    throw ConfigError("structuring element larger than mask");
}

}  // namespace

BinaryMask erode(const BinaryMask& mask, const StructuringElement& z) {
  check_element(mask, z);
  const int ar = z.ar(), ac = z.ac();
  BinaryMask out(mask.h, mask.w);
  for (int r = 0; r < mask.h; ++r)
    for (int c = 0; c < mask.w; ++c) {
      bool all = true;
      for (int i = 0; all && i < z.height; ++i) {
        const int rr = r + i - ar;
        if (rr < 0 || rr >= mask.h) {
          all = false;
          break;
        }
        for (int j = 0; j < z.width; ++j) {
          const int cc = c + j - ac;
          if (cc < 0 || cc >= mask.w || !mask.at(rr, cc)) {
            all = false;
            break;
          }
        }
      }
      out.set(r, c, all);
    }
  return out;
}

BinaryMask dilate(const BinaryMask& mask, const StructuringElement& z,
                  Border border) {
  check_element(mask, z);
  const int ar = z.ar(), ac = z.ac();
  const bool oob = border == Border::kOne;
  BinaryMask out(mask.h, mask.w);
  for (int r = 0; r < mask.h; ++r)
    for (int c = 0; c < mask.w; ++c) {
      bool any = false;
      for (int i = 0; !any && i < z.height; ++i) {
        const int rr = r - (i - ar);
        if (rr < 0 || rr >= mask.h) {
          if (oob) any = true;
          continue;
        }
        for (int j = 0; j < z.width; ++j) {
          const int cc = c - (j - ac);
          if (cc < 0 || cc >= mask.w) {
            if (oob) {
              any = true;
              break;
            }
            continue;
          }
          if (mask.at(rr, cc)) {
            any = true;
            break;
          }
        }
      }
      out.set(r, c, any);
    }
  return out;
}

BinaryMask opening(const BinaryMask& mask, const StructuringElement& z) {
  return dilate(erode(mask, z), z);
}

BinaryMask largest_component(const BinaryMask& mask) {
  std::vector<std::int32_t> label(mask.bits.size(), -1);
  int best_label = -1;
  long long best_size = 0;
  int next_label = 0;
  std::vector<std::pair<int, int>> queue;
  for (int r = 0; r < mask.h; ++r)
    for (int c = 0; c < mask.w; ++c) {
      if (!mask.at(r, c) || label[static_cast<size_t>(r) * mask.w + c] >= 0)
        continue;
      const int cur = next_label++;
      long long size = 0;
      queue.clear();
      queue.emplace_back(r, c);
      label[static_cast<size_t>(r) * mask.w + c] = cur;
      while (!queue.empty()) {
        auto [qr, qc] = queue.back();
        queue.pop_back();
        ++size;
        const int dr[4] = {-1, 1, 0, 0};
        const int dc[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int nr = qr + dr[k], nc = qc + dc[k];
          if (nr < 0 || nr >= mask.h || nc < 0 || nc >= mask.w) continue;
          auto& l = label[static_cast<size_t>(nr) * mask.w + nc];
          if (l >= 0 || !mask.at(nr, nc)) continue;
          l = cur;
          queue.emplace_back(nr, nc);
        }
      }
      // strict > keeps the earliest row-major component on ties
      if (size > best_size) {
        best_size = size;
        best_label = cur;
      }
    }
  BinaryMask out(mask.h, mask.w);
  if (best_label < 0) return out;
  for (size_t i = 0; i < mask.bits.size(); ++i)
    out.bits[i] = label[i] == best_label ? 1 : 0;
  return out;
}

BinaryMask invert(const BinaryMask& mask) {
  BinaryMask out(mask.h, mask.w);
  for (size_t i = 0; i < mask.bits.size(); ++i) out.bits[i] = mask.bits[i] ? 0 : 1;
  return out;
}

}  // namespace milseg
