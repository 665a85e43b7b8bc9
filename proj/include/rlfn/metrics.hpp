#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rlfn/image.hpp"

namespace rlfn {

inline constexpr double kPsnrCap = 100.0;

struct MetricConfig {
  int border_crop = 0;
  bool y_channel = true;

  static MetricConfig for_scale(int r) { return {r, true}; }
};

namespace detail {

inline std::vector<Plane> metric_planes(const ImageRGB8& a, const ImageRGB8& b, const MetricConfig& cfg,
                                        const char* who) {
  if (a.width != b.width || a.height != b.height) {
    throw ImageError(std::string(who) + ": size mismatch " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                     " vs " + std::to_string(b.width) + "x" + std::to_string(b.height));
  }
  const int c = cfg.border_crop;
  if (c < 0 || 2 * c >= a.width || 2 * c >= a.height) {
    throw ImageError(std::string(who) + ": border crop " + std::to_string(c) + " leaves nothing of a " +
                     std::to_string(a.width) + "x" + std::to_string(a.height) + " image");
  }
  std::vector<Plane> out;
  for (const ImageRGB8* img : {&a, &b}) {
    std::vector<Plane> planes = cfg.y_channel ? std::vector<Plane>{rgb_to_y(*img)} : rgb_planes(*img);
    for (Plane& p : planes) {
      Plane cropped{p.width - 2 * c, p.height - 2 * c, {}};
      cropped.values.reserve(static_cast<std::size_t>(cropped.width) * cropped.height);
      for (int y = c; y < p.height - c; ++y) {
        for (int x = c; x < p.width - c; ++x) cropped.values.push_back(p.at(x, y));
      }
      out.push_back(std::move(cropped));
    }
  }
  return out;  // first half from a, second half from b
}

}  // namespace detail

inline double psnr_planes(const std::vector<Plane>& a, const std::vector<Plane>& b) {
  double se = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t i = 0; i < a[k].values.size(); ++i) {
      const double d = a[k].values[i] - b[k].values[i];
      se += d * d;
    }
    n += a[k].values.size();
  }
  const double mse = se / static_cast<double>(n);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

/// 10 log10(255^2 / MSE) on the border-cropped Y maps (or RGB). Zero error reports 100 dB.
inline double psnr(const ImageRGB8& a, const ImageRGB8& b, const MetricConfig& cfg = {}) {
  const auto planes = detail::metric_planes(a, b, cfg, "psnr");
  const std::size_t half = planes.size() / 2;
  return psnr_planes({planes.begin(), planes.begin() + half}, {planes.begin() + half, planes.end()});
}

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

inline std::vector<double> ssim_gaussian() {
  std::vector<double> g(kSsimWindow);
  double total = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

/// Mean SSIM over every fully contained 11x11 window (Gaussian sigma 1.5, K1 0.01, K2 0.03,
/// L 255), with the windowed moments computed by separable filtering.
inline double ssim_plane(const Plane& a, const Plane& b) {
  if (a.width < kSsimWindow || a.height < kSsimWindow) {
    throw ImageError("ssim: " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                     " is smaller than the 11x11 window");
  }
  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  const std::vector<double> g = ssim_gaussian();
  const int w = a.width;
  const int ow = w - kSsimWindow + 1;
  const int oh = a.height - kSsimWindow + 1;
  // Five moment images, filtered horizontally then vertically.
  auto field = [&](int k, std::size_t i) {
    const double x = a.values[i];
    const double y = b.values[i];
    switch (k) {
      case 0: return x;
      case 1: return y;
      case 2: return x * x;
      case 3: return y * y;
      default: return x * y;
    }
  };
  std::vector<std::vector<double>> h(5, std::vector<double>(static_cast<std::size_t>(a.height) * ow));
  for (int k = 0; k < 5; ++k) {
    for (int y = 0; y < a.height; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int t = 0; t < kSsimWindow; ++t) acc += g[t] * field(k, static_cast<std::size_t>(y) * w + x + t);
        h[k][static_cast<std::size_t>(y) * ow + x] = acc;
      }
    }
  }
  double total = 0.0;
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double m[5];
      for (int k = 0; k < 5; ++k) {
        double acc = 0.0;
        for (int t = 0; t < kSsimWindow; ++t) acc += g[t] * h[k][static_cast<std::size_t>(y + t) * ow + x];
        m[k] = acc;
      }
      const double mx = m[0];
      const double my = m[1];
      const double vx = m[2] - mx * mx;
      const double vy = m[3] - my * my;
      const double cov = m[4] - mx * my;
      total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  }
  return total / (static_cast<double>(ow) * oh);
}

/// SSIM on the border-cropped Y map; without the Y conversion it is averaged over R, G and B.
inline double ssim(const ImageRGB8& a, const ImageRGB8& b, const MetricConfig& cfg = {}) {
  const auto planes = detail::metric_planes(a, b, cfg, "ssim");
  const std::size_t half = planes.size() / 2;
  double total = 0.0;
  for (std::size_t k = 0; k < half; ++k) total += ssim_plane(planes[k], planes[half + k]);
  return total / static_cast<double>(half);
}

}  // namespace rlfn
