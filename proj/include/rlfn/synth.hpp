#pragma once

#include <algorithm>
#include <vector>

#include "rlfn/image.hpp"
#include "rlfn/random.hpp"

namespace rlfn {

/// Page-like test image: dark axis-aligned glyph boxes (1 to 8 px a side) on light paper, with a
/// slight per-channel tint. Sharp edges at every scale make bicubic a weak baseline.
inline ImageRGB8 synth_document(int size, Rng& rng) {
  const double paper = rng.uniform(0.75, 1.0);
  const double ink = rng.uniform(0.0, 0.3);
  std::vector<double> grey(static_cast<std::size_t>(size) * size, paper);
  const int glyphs = rng.uniform_int(25, 59);
  for (int g = 0; g < glyphs; ++g) {
    const int w = rng.uniform_int(1, 8);
    const int h = rng.uniform_int(1, 8);
    const int x0 = rng.uniform_int(0, size - 1);
    const int y0 = rng.uniform_int(0, size - 1);
    for (int y = y0; y < std::min(size, y0 + h); ++y) {
      for (int x = x0; x < std::min(size, x0 + w); ++x) grey[static_cast<std::size_t>(y) * size + x] = ink;
    }
  }
  double tint[3];
  for (double& t : tint) t = rng.uniform(0.8, 1.0);
  ImageRGB8 img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = round_to_u8(grey[static_cast<std::size_t>(y) * size + x] * tint[c] * 255.0);
    }
  }
  return img;
}

inline std::vector<ImageRGB8> synth_documents(int count, int size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ImageRGB8> out;
  for (int i = 0; i < count; ++i) out.push_back(synth_document(size, rng));
  return out;
}

}  // namespace rlfn
