#include "milseg/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace milseg {

void save_pgm(const std::string& path, const ImageGrid& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "P5\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(img.w));
  for (int r = 0; r < img.h; ++r) {
    for (int c = 0; c < img.w; ++c) {
      const float v = std::clamp(img.at(r, c), 0.0f, 1.0f);
      row[static_cast<size_t>(c)] =
          static_cast<unsigned char>(std::floor(v * 255.0f + 0.5f));
    }
    f.write(reinterpret_cast<const char*>(row.data()), img.w);
  }
  if (!f) throw IoError("failed writing: " + path);
}

namespace {

// Skips whitespace and '#' comment lines between header tokens.
int next_header_int(std::istream& in, const std::string& path) {
  int ch = in.peek();
  while (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '#') {
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      in.get();
    }
    ch = in.peek();
  }
  int value = 0;
  if (!(in >> value)) throw IoError("malformed PGM header: " + path);
  return value;
}

}  // namespace

ImageGrid load_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  if (m0 != 'P' || m1 != '5') throw IoError("not a P5 PGM: " + path);
  const int w = next_header_int(f, path);
  const int h = next_header_int(f, path);
  const int maxval = next_header_int(f, path);
  if (w <= 0 || h <= 0 || maxval != 255)
    throw IoError("unsupported PGM header in " + path);
  f.get();  // single whitespace byte after maxval
  ImageGrid img(h, w);
  std::vector<unsigned char> row(static_cast<size_t>(w));
  for (int r = 0; r < h; ++r) {
    f.read(reinterpret_cast<char*>(row.data()), w);
    if (f.gcount() != w) throw IoError("truncated PGM: " + path);
    for (int c = 0; c < w; ++c)
      img.at(r, c) = static_cast<float>(row[static_cast<size_t>(c)]) / 255.0f;
  }
  return img;
}

}  // namespace milseg
