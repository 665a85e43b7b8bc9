#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rlfn/data.hpp"
#include "rlfn/metrics.hpp"
#include "rlfn/model.hpp"

namespace rlfn {

struct TileOptions {
  int max_side = 256;  // LR images with a longer side are processed in tiles
  int tile = 192;
  int overlap = 8;
};

namespace detail {

struct Span1D {
  int lo, hi;            // tile extent in LR pixels
  int core_lo, core_hi;  // part of the tile kept in the output
};

// Splits [0, len) into cores of width tile - 2 overlap, each padded by the overlap on both sides
// where the image allows, and widened to at least the ESA minimum.
inline std::vector<Span1D> tile_spans(int len, const TileOptions& opt) {
  if (len <= opt.tile) return {{0, len, 0, len}};
  const int core = std::max(1, opt.tile - 2 * opt.overlap);
  std::vector<Span1D> out;
  for (int c0 = 0; c0 < len; c0 += core) {
    const int c1 = std::min(len, c0 + core);
    int lo = std::max(0, c0 - opt.overlap);
    int hi = std::min(len, c1 + opt.overlap);
    while (hi - lo < std::min(len, kEsaMinSize)) {
      if (lo > 0) --lo;
      if (hi - lo < std::min(len, kEsaMinSize) && hi < len) ++hi;
    }
    out.push_back({lo, hi, c0, c1});
  }
  return out;
}

}  // namespace detail

/// Model output for one LR image. Large images are cut into overlapping tiles whose centres are
/// stitched; the tiling is a fixed function of the image size.
inline ImageRGB8 super_resolve(const Model& model, const ImageRGB8& lr, const TileOptions& opt = {}) {
  NoGradGuard no_grad;
  const int r = model.config.scale;
  if (std::max(lr.width, lr.height) <= opt.max_side) return to_image(forward(model, to_tensor(lr)));
  ImageRGB8 out(lr.width * r, lr.height * r);
  for (const auto& ty : detail::tile_spans(lr.height, opt)) {
    for (const auto& tx : detail::tile_spans(lr.width, opt)) {
      const ImageRGB8 piece = crop(lr, tx.lo, ty.lo, tx.hi - tx.lo, ty.hi - ty.lo);
      const ImageRGB8 sr = to_image(forward(model, to_tensor(piece)));
      for (int y = ty.core_lo * r; y < ty.core_hi * r; ++y) {
        for (int x = tx.core_lo * r; x < tx.core_hi * r; ++x) {
          for (int c = 0; c < 3; ++c) out.at(x, y, c) = sr.at(x - tx.lo * r, y - ty.lo * r, c);
        }
      }
    }
  }
  return out;
}

struct ImageScore {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalResult {
  double psnr = 0.0;
  double ssim = 0.0;
  std::vector<ImageScore> images;
};

using Upscaler = std::function<ImageRGB8(const ImageRGB8& lr, int out_w, int out_h)>;

inline EvalResult evaluate_with(const Upscaler& up, const std::vector<SamplePair>& pairs, const MetricConfig& cfg,
                                const std::function<void(const SamplePair&, const ImageRGB8&)>& on_output = {}) {
  if (pairs.empty()) throw Error("evaluate: eval set is empty");
  EvalResult res;
  for (const auto& p : pairs) {
    check_pair(p);
    const ImageRGB8 sr = up(p.lr, p.hr.width, p.hr.height);
    if (on_output) on_output(p, sr);
    ImageScore s{p.source, psnr(sr, p.hr, cfg), ssim(sr, p.hr, cfg)};
    res.psnr += s.psnr;
    res.ssim += s.ssim;
    res.images.push_back(std::move(s));
  }
  res.psnr /= static_cast<double>(pairs.size());
  res.ssim /= static_cast<double>(pairs.size());
  return res;
}

inline EvalResult evaluate(const Model& model, const std::vector<SamplePair>& pairs, const MetricConfig& cfg,
                           const TileOptions& tiles = {}) {
  for (const auto& p : pairs) {
    if (p.scale != model.config.scale) {
      throw Error("evaluate: sample '" + p.source + "' has scale " + std::to_string(p.scale) + " but the model is x" +
                  std::to_string(model.config.scale));
    }
  }
  return evaluate_with([&](const ImageRGB8& lr, int, int) { return super_resolve(model, lr, tiles); }, pairs, cfg);
}

inline ImageRGB8 bicubic_upscale(const ImageRGB8& lr, int out_w, int out_h) {
  return bicubic_resize(lr, out_w, out_h, true);
}

inline EvalResult evaluate_bicubic(const std::vector<SamplePair>& pairs, const MetricConfig& cfg) {
  return evaluate_with(bicubic_upscale, pairs, cfg);
}

}  // namespace rlfn
