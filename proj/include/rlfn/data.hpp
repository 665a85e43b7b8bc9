#pragma once

#include <fnmatch.h>

#include <algorithm>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rlfn/image.hpp"
#include "rlfn/random.hpp"

namespace rlfn {

struct SamplePair {
  ImageRGB8 hr;
  ImageRGB8 lr;
  int scale = 1;
  std::string source;
};

/// HR cropped to a multiple of r, then downscaled with antialiased bicubic.
inline SamplePair degrade(const ImageRGB8& hr, int r, std::string source = {}) {
  if (r < 1) throw Error("degrade: scale must be >= 1");
  ImageRGB8 trimmed = crop_to_multiple(hr, r);
  ImageRGB8 lr = bicubic_resize(trimmed, trimmed.width / r, trimmed.height / r, true);
  return {std::move(trimmed), std::move(lr), r, std::move(source)};
}

inline void check_pair(const SamplePair& p) {
  if (p.hr.width != p.lr.width * p.scale || p.hr.height != p.lr.height * p.scale) {
    throw Error("sample '" + p.source + "': HR " + std::to_string(p.hr.width) + "x" + std::to_string(p.hr.height) +
                " is not " + std::to_string(p.scale) + "x the LR " + std::to_string(p.lr.width) + "x" +
                std::to_string(p.lr.height));
  }
}

struct CropWindow {
  int lr_x = 0;
  int lr_y = 0;
};

/// Aligned crops chosen in LR coordinates: LR side patch_hr / r at (x, y), HR side patch_hr at
/// (r x, r y).
inline SamplePair random_crop_pair(const SamplePair& p, int patch_hr, Rng& rng, CropWindow* where = nullptr) {
  const int r = p.scale;
  if (patch_hr < r || patch_hr % r != 0) {
    throw Error("random_crop_pair: patch " + std::to_string(patch_hr) + " not a positive multiple of scale " +
                std::to_string(r));
  }
  if (p.hr.width < patch_hr || p.hr.height < patch_hr) {
    throw Error("random_crop_pair: image '" + p.source + "' (" + std::to_string(p.hr.width) + "x" +
                std::to_string(p.hr.height) + ") is smaller than patch " + std::to_string(patch_hr));
  }
  const int lp = patch_hr / r;
  const int x = rng.uniform_int(0, p.lr.width - lp);
  const int y = rng.uniform_int(0, p.lr.height - lp);
  if (where) *where = {x, y};
  return {crop(p.hr, x * r, y * r, patch_hr, patch_hr), crop(p.lr, x, y, lp, lp), r, p.source};
}

/// Dihedral transform k in [0, 8): rotate k % 4 quarter turns counter-clockwise, then mirror
/// left-right when k >= 4.
inline ImageRGB8 dihedral(const ImageRGB8& img, int k) {
  const int rot = k % 4;
  const bool mirror = k >= 4;
  const int w = img.width;
  const int h = img.height;
  const int ow = rot % 2 ? h : w;
  const int oh = rot % 2 ? w : h;
  ImageRGB8 out(ow, oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      const int mx = mirror ? ow - 1 - x : x;
      int sx = 0;
      int sy = 0;
      switch (rot) {
        case 0: sx = mx; sy = y; break;
        case 1: sx = w - 1 - y; sy = mx; break;
        case 2: sx = w - 1 - mx; sy = h - 1 - y; break;
        default: sx = y; sy = h - 1 - mx; break;
      }
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
    }
  }
  return out;
}

inline SamplePair augment(const SamplePair& p, Rng& rng, int* chosen = nullptr) {
  const int k = rng.uniform_int(0, 7);
  if (chosen) *chosen = k;
  return {dihedral(p.hr, k), dihedral(p.lr, k), p.scale, p.source};
}

struct DatasetSpec {
  std::filesystem::path root;
  std::string glob = "*.png";
  int scale = 2;
  int patch_size = 96;  // HR pixels; 0 keeps whole images
  int batch_size = 16;
  bool augment = true;
  std::uint64_t seed = 0;
  bool cache_lr = false;  // write generated LR images under root/LR_bicubic/X<r>/

  void validate() const {
    if (scale < 1) throw Error("dataset: scale must be >= 1");
    if (batch_size < 1) throw Error("dataset: batch_size must be >= 1");
    if (patch_size < 0 || (patch_size > 0 && patch_size % scale != 0)) {
      throw Error("dataset: patch_size " + std::to_string(patch_size) + " must be a multiple of scale " +
                  std::to_string(scale));
    }
  }
};

/// Pairs from <root>/HR/<glob>. LR images come from <root>/LR_bicubic/X<r>/ when present and
/// correctly sized, otherwise they are generated (and written back if cache_lr is set).
inline std::vector<SamplePair> load_pairs(const DatasetSpec& spec) {
  spec.validate();
  namespace fs = std::filesystem;
  const fs::path hr_dir = fs::is_directory(spec.root / "HR") ? spec.root / "HR" : spec.root;
  if (!fs::is_directory(hr_dir)) throw Error("dataset: '" + spec.root.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(hr_dir)) {
    if (!e.is_regular_file()) continue;
    if (fnmatch(spec.glob.c_str(), e.path().filename().c_str(), 0) == 0) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  const fs::path lr_dir = spec.root / "LR_bicubic" / ("X" + std::to_string(spec.scale));
  std::vector<SamplePair> pairs;
  for (const auto& f : files) {
    ImageRGB8 hr = crop_to_multiple(load_png(f), spec.scale);
    const fs::path cached = lr_dir / f.filename();
    if (fs::exists(cached)) {
      ImageRGB8 lr = load_png(cached);
      if (lr.width * spec.scale == hr.width && lr.height * spec.scale == hr.height) {
        pairs.push_back({std::move(hr), std::move(lr), spec.scale, f.filename().string()});
        continue;
      }
    }
    SamplePair p = degrade(hr, spec.scale, f.filename().string());
    if (spec.cache_lr) save_png(p.lr, cached);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

struct Batch {
  Tensor lr;
  Tensor hr;
  Tensor bicubic;  // LR upscaled back to HR size, filled when requested
  std::vector<int> indices;
};

/// Deterministic stream of training batches. Each epoch visits a fresh seeded permutation of
/// the samples; the final batch of an epoch may be short.
class BatchStream {
 public:
  BatchStream(std::vector<SamplePair> pairs, DatasetSpec spec, bool with_bicubic = false)
      : pairs_(std::move(pairs)), spec_(std::move(spec)), rng_(spec_.seed), with_bicubic_(with_bicubic) {
    spec_.validate();
    if (pairs_.empty()) throw Error("batches: dataset is empty");
    for (const auto& p : pairs_) check_pair(p);
  }

  std::size_t size() const { return pairs_.size(); }
  const std::vector<SamplePair>& pairs() const { return pairs_; }

  Batch next() {
    if (cursor_ >= order_.size()) {
      order_ = rng_.permutation(static_cast<int>(pairs_.size()));
      cursor_ = 0;
    }
    const std::size_t count = std::min<std::size_t>(spec_.batch_size, order_.size() - cursor_);
    std::vector<SamplePair> picked;
    Batch b;
    for (std::size_t i = 0; i < count; ++i) {
      const int idx = order_[cursor_ + i];
      b.indices.push_back(idx);
      SamplePair p = spec_.patch_size > 0 ? random_crop_pair(pairs_[idx], spec_.patch_size, rng_) : pairs_[idx];
      if (spec_.augment) p = augment(p, rng_);
      picked.push_back(std::move(p));
    }
    cursor_ += count;
    std::vector<const ImageRGB8*> lr;
    std::vector<const ImageRGB8*> hr;
    for (const auto& p : picked) {
      lr.push_back(&p.lr);
      hr.push_back(&p.hr);
    }
    b.lr = to_tensor(lr);
    b.hr = to_tensor(hr);
    if (with_bicubic_) {
      std::vector<ImageRGB8> up;
      for (const auto& p : picked) up.push_back(bicubic_resize(p.lr, p.hr.width, p.hr.height, true));
      std::vector<const ImageRGB8*> ptrs;
      for (const auto& u : up) ptrs.push_back(&u);
      b.bicubic = to_tensor(ptrs);
    }
    return b;
  }

 private:
  std::vector<SamplePair> pairs_;
  DatasetSpec spec_;
  Rng rng_;
  bool with_bicubic_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
};

}  // namespace rlfn
