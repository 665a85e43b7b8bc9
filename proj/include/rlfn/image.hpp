#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rlfn/tensor.hpp"

namespace rlfn {

class ImageError : public Error {
 public:
  using Error::Error;
};

struct ImageRGB8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB triples

  ImageRGB8() = default;
  ImageRGB8(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const ImageRGB8&) const = default;
};

// Single-channel float map, row-major.
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct Gray8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Reads an 8-bit PNG. Grayscale and palette images are expanded to RGB; alpha is discarded.
inline ImageRGB8 load_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw ImageError("load_png: cannot read '" + path.string() + "': " + image.message);
  }
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw ImageError("load_png: '" + path.string() + "' has 16-bit samples; only 8-bit PNG is supported");
  }
  image.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgba.data(), 0, nullptr)) {
    throw ImageError("load_png: decoding '" + path.string() + "' failed: " + image.message);
  }
  ImageRGB8 out(static_cast<int>(image.width), static_cast<int>(image.height));
  for (std::size_t i = 0, n = out.pixels.size() / 3; i < n; ++i) {
    out.pixels[i * 3 + 0] = rgba[i * 4 + 0];
    out.pixels[i * 3 + 1] = rgba[i * 4 + 1];
    out.pixels[i * 3 + 2] = rgba[i * 4 + 2];
  }
  return out;
}

namespace detail {

inline void write_png(const std::filesystem::path& path, int w, int h, png_uint_32 format, const void* data) {
  if (w < 1 || h < 1) throw ImageError("save_png: empty image");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = format;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, data, 0, nullptr)) {
    throw ImageError("save_png: cannot write '" + path.string() + "': " + image.message);
  }
}

}  // namespace detail

inline void save_png(const ImageRGB8& img, const std::filesystem::path& path) {
  detail::write_png(path, img.width, img.height, PNG_FORMAT_RGB, img.pixels.data());
}

inline void save_png(const Gray8& img, const std::filesystem::path& path) {
  detail::write_png(path, img.width, img.height, PNG_FORMAT_GRAY, img.pixels.data());
}

inline std::uint8_t round_to_u8(double v) {
  // Half away from zero, then clamp.
  const double r = std::round(v);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

// Keys cubic convolution kernel with a = -0.5.
inline double cubic_kernel(double x) {
  const double ax = std::abs(x);
  const double ax2 = ax * ax;
  const double ax3 = ax2 * ax;
  if (ax <= 1.0) return 1.5 * ax3 - 2.5 * ax2 + 1.0;
  if (ax <= 2.0) return -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0;
  return 0.0;
}

struct ResampleTaps {
  std::vector<int> first;        // first source index per output, before clamping
  int taps = 0;                  // taps per output
  std::vector<double> weights;   // [out][taps], normalised to sum 1
};

/// Contribution table for resizing a length-`in` axis to `out`, imresize style: output i maps
/// to source coordinate (i + 0.5) / s - 0.5 with s = out / in; when shrinking with antialias the
/// kernel is widened by 1/s and scaled by s.
inline ResampleTaps resample_taps(int in, int out, bool antialias) {
  const double scale = static_cast<double>(out) / in;
  const bool widen = antialias && scale < 1.0;
  const double kscale = widen ? scale : 1.0;
  const double width = 4.0 / kscale;
  ResampleTaps t;
  t.taps = static_cast<int>(std::ceil(width)) + 2;
  t.first.resize(out);
  t.weights.resize(static_cast<std::size_t>(out) * t.taps);
  for (int i = 0; i < out; ++i) {
    const double u = (i + 0.5) / scale - 0.5;
    const int left = static_cast<int>(std::floor(u - width / 2.0));
    t.first[i] = left;
    double total = 0.0;
    for (int k = 0; k < t.taps; ++k) {
      const double w = kscale * cubic_kernel(kscale * (u - (left + k)));
      t.weights[static_cast<std::size_t>(i) * t.taps + k] = w;
      total += w;
    }
    for (int k = 0; k < t.taps; ++k) t.weights[static_cast<std::size_t>(i) * t.taps + k] /= total;
  }
  return t;
}

/// Separable bicubic resize with clamp-to-edge borders. Both passes run in double and the
/// result is rounded once.
inline ImageRGB8 bicubic_resize(const ImageRGB8& img, int out_w, int out_h, bool antialias = true) {
  if (out_w < 1 || out_h < 1) throw ImageError("bicubic_resize: output size must be positive");
  if (img.width < 1 || img.height < 1) throw ImageError("bicubic_resize: empty input");
  if (out_w == img.width && out_h == img.height) return img;
  const ResampleTaps ty = resample_taps(img.height, out_h, antialias);
  const ResampleTaps tx = resample_taps(img.width, out_w, antialias);

  // Vertical pass: (out_h x img.width x 3).
  std::vector<double> mid(static_cast<std::size_t>(out_h) * img.width * 3, 0.0);
  for (int y = 0; y < out_h; ++y) {
    double* row = mid.data() + static_cast<std::size_t>(y) * img.width * 3;
    for (int k = 0; k < ty.taps; ++k) {
      const double w = ty.weights[static_cast<std::size_t>(y) * ty.taps + k];
      if (w == 0.0) continue;
      const int sy = std::clamp(ty.first[y] + k, 0, img.height - 1);
      const std::uint8_t* src = img.pixels.data() + static_cast<std::size_t>(sy) * img.width * 3;
      for (int i = 0; i < img.width * 3; ++i) row[i] += w * src[i];
    }
  }
  ImageRGB8 out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const double* row = mid.data() + static_cast<std::size_t>(y) * img.width * 3;
    for (int x = 0; x < out_w; ++x) {
      double acc[3] = {0.0, 0.0, 0.0};
      for (int k = 0; k < tx.taps; ++k) {
        const double w = tx.weights[static_cast<std::size_t>(x) * tx.taps + k];
        if (w == 0.0) continue;
        const int sx = std::clamp(tx.first[x] + k, 0, img.width - 1);
        for (int c = 0; c < 3; ++c) acc[c] += w * row[sx * 3 + c];
      }
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = round_to_u8(acc[c]);
    }
  }
  return out;
}

inline ImageRGB8 crop(const ImageRGB8& img, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || w < 1 || h < 1 || x0 + w > img.width || y0 + h > img.height) {
    throw ImageError("crop: window " + std::to_string(w) + "x" + std::to_string(h) + " at (" + std::to_string(x0) +
                     "," + std::to_string(y0) + ") outside " + std::to_string(img.width) + "x" +
                     std::to_string(img.height) + " image");
  }
  ImageRGB8 out(w, h);
  for (int y = 0; y < h; ++y) {
    const auto* src = img.pixels.data() + (static_cast<std::size_t>(y0 + y) * img.width + x0) * 3;
    std::copy(src, src + static_cast<std::size_t>(w) * 3, out.pixels.data() + static_cast<std::size_t>(y) * w * 3);
  }
  return out;
}

// Trims the bottom/right so both sides are multiples of r.
inline ImageRGB8 crop_to_multiple(const ImageRGB8& img, int r) {
  const int w = img.width / r * r;
  const int h = img.height / r * r;
  if (w < 1 || h < 1) throw ImageError("crop_to_multiple: image smaller than scale " + std::to_string(r));
  if (w == img.width && h == img.height) return img;
  return crop(img, 0, 0, w, h);
}

/// BT.601 studio-range luma: Y = 16 + (65.481 R + 128.553 G + 24.966 B) / 255.
inline Plane rgb_to_y(const ImageRGB8& img) {
  Plane p{img.width, img.height, std::vector<double>(static_cast<std::size_t>(img.width) * img.height)};
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const double r = img.pixels[i * 3 + 0];
    const double g = img.pixels[i * 3 + 1];
    const double b = img.pixels[i * 3 + 2];
    p.values[i] = 16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0;
  }
  return p;
}

// All three channels as separate planes, for metrics computed without the Y conversion.
inline std::vector<Plane> rgb_planes(const ImageRGB8& img) {
  std::vector<Plane> out(3, Plane{img.width, img.height, std::vector<double>(static_cast<std::size_t>(img.width) * img.height)});
  for (std::size_t i = 0; i < out[0].values.size(); ++i) {
    for (int c = 0; c < 3; ++c) out[c].values[i] = img.pixels[i * 3 + c];
  }
  return out;
}

/// Images to a (b, 3, h, w) tensor in [0, 1]. All images must share a size.
inline Tensor to_tensor(const std::vector<const ImageRGB8*>& images) {
  if (images.empty()) throw ShapeError("to_tensor: no images");
  const int w = images.front()->width;
  const int h = images.front()->height;
  const int b = static_cast<int>(images.size());
  std::vector<float> v(static_cast<std::size_t>(b) * 3 * h * w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int n = 0; n < b; ++n) {
    const ImageRGB8& img = *images[n];
    if (img.width != w || img.height != h) throw ShapeError("to_tensor: images differ in size");
    float* dst = v.data() + static_cast<std::size_t>(n) * 3 * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      for (int c = 0; c < 3; ++c) dst[c * plane + i] = static_cast<float>(img.pixels[i * 3 + c]) / 255.0f;
    }
  }
  return Tensor(Shape{b, 3, h, w}, std::move(v));
}

inline Tensor to_tensor(const ImageRGB8& img) { return to_tensor(std::vector<const ImageRGB8*>{&img}); }

// Batch element n of a 3-channel tensor in [0, 1], clamped and rounded to 8 bits.
inline ImageRGB8 to_image(const Tensor& t, int n = 0) {
  const Shape& s = t.shape();
  if (s.c != 3) throw ShapeError("to_image: expected 3 channels, got " + s.str());
  ImageRGB8 img(s.w, s.h);
  const std::size_t plane = s.plane();
  const float* src = t.data().data() + static_cast<std::size_t>(n) * 3 * plane;
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) img.pixels[i * 3 + c] = round_to_u8(static_cast<double>(src[c * plane + i]) * 255.0);
  }
  return img;
}

}  // namespace rlfn
