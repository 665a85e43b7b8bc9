#include <gtest/gtest.h>

#include <cmath>

#include "rlfn/bench.hpp"
#include "rlfn/metrics.hpp"
#include "rlfn/random.hpp"

namespace rlfn {
namespace {

ImageRGB8 noise(int w, int h, Rng& rng) {
  ImageRGB8 img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return img;
}

ImageRGB8 perturb(const ImageRGB8& img, int amplitude, Rng& rng) {
  ImageRGB8 out = img;
  for (auto& p : out.pixels) p = static_cast<std::uint8_t>(std::clamp(p + rng.uniform_int(-amplitude, amplitude), 0, 255));
  return out;
}

// Brute force: every window position evaluates its own weighted moments from scratch.
double ssim_oracle(const Plane& a, const Plane& b) {
  long double g[11];
  long double gs = 0;
  for (int i = 0; i < 11; ++i) {
    g[i] = std::exp(-static_cast<long double>((i - 5) * (i - 5)) / (2 * 1.5L * 1.5L));
    gs += g[i];
  }
  for (auto& v : g) v /= gs;
  const long double c1 = 6.5025L;
  const long double c2 = 58.5225L;
  long double total = 0;
  int count = 0;
  for (int y = 0; y + 11 <= a.height; ++y) {
    for (int x = 0; x + 11 <= a.width; ++x) {
      long double mx = 0, my = 0;
      for (int j = 0; j < 11; ++j) {
        for (int i = 0; i < 11; ++i) {
          mx += g[j] * g[i] * a.at(x + i, y + j);
          my += g[j] * g[i] * b.at(x + i, y + j);
        }
      }
      long double vx = 0, vy = 0, cov = 0;
      for (int j = 0; j < 11; ++j) {
        for (int i = 0; i < 11; ++i) {
          const long double dx = a.at(x + i, y + j) - mx;
          const long double dy = b.at(x + i, y + j) - my;
          vx += g[j] * g[i] * dx * dx;
          vy += g[j] * g[i] * dy * dy;
          cov += g[j] * g[i] * dx * dy;
        }
      }
      total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return static_cast<double>(total / count);
}

TEST(Psnr, IdenticalIsCapped) {
  Rng rng(1);
  const ImageRGB8 a = noise(20, 20, rng);
  EXPECT_EQ(psnr(a, a, {2, true}), 100.0);
}

TEST(Psnr, UniformOffsetClosedForm) {
  Rng rng(2);
  ImageRGB8 a = noise(24, 24, rng);
  for (auto& p : a.pixels) p = static_cast<std::uint8_t>(std::min<int>(p, 254));
  ImageRGB8 b = a;
  for (auto& p : b.pixels) ++p;
  const double want = 10.0 * std::log10(255.0 * 255.0);
  EXPECT_NEAR(psnr(a, b, {0, false}), want, 1e-3);
  EXPECT_NEAR(want, 48.1308, 1e-4);
  // On Y a one-level RGB offset moves luma by 219/255.
  const double dy = 219.0 / 255.0;
  EXPECT_NEAR(psnr(a, b, {3, true}), 10.0 * std::log10(255.0 * 255.0 / (dy * dy)), 1e-9);
}

TEST(Psnr, SymmetricAndMonotoneInNoise) {
  Rng rng(3);
  const ImageRGB8 a = noise(32, 32, rng);
  const ImageRGB8 b = perturb(a, 10, rng);
  EXPECT_EQ(psnr(a, b, {4, true}), psnr(b, a, {4, true}));
  double previous = 1e9;
  for (int amp : {2, 8, 32}) {
    Rng nr(7);
    const double v = psnr(a, perturb(a, amp, nr), {4, true});
    EXPECT_LT(v, previous);
    previous = v;
  }
}

TEST(Psnr, BorderCropIgnoresEdges) {
  Rng rng(4);
  const ImageRGB8 a = noise(16, 16, rng);
  ImageRGB8 b = a;
  for (int x = 0; x < 16; ++x) b.at(x, 0, 0) = static_cast<std::uint8_t>(255 - b.at(x, 0, 0));
  EXPECT_EQ(psnr(a, b, {1, true}), 100.0);
  EXPECT_LT(psnr(a, b, {0, true}), 100.0);
  EXPECT_THROW(psnr(a, b, {8, true}), ImageError);
  EXPECT_THROW(psnr(a, noise(16, 15, rng), {}), ImageError);
}

TEST(Ssim, IdenticalIsExactlyOne) {
  Rng rng(5);
  for (int i = 0; i < 5; ++i) {
    const ImageRGB8 a = noise(rng.uniform_int(11, 40), rng.uniform_int(11, 40), rng);
    EXPECT_EQ(ssim(a, a, {0, true}), 1.0);
    EXPECT_EQ(ssim(a, a, {0, false}), 1.0);
  }
}

TEST(Ssim, MatchesBruteForceOracle) {
  Rng rng(6);
  for (int i = 0; i < 6; ++i) {
    const ImageRGB8 a = noise(rng.uniform_int(11, 36), rng.uniform_int(11, 36), rng);
    const ImageRGB8 b = i % 2 ? noise(a.width, a.height, rng) : perturb(a, 20, rng);
    EXPECT_NEAR(ssim(a, b, {0, true}), ssim_oracle(rgb_to_y(a), rgb_to_y(b)), 1e-6);
  }
}

TEST(Ssim, SymmetricAndAnticorrelated) {
  Rng rng(8);
  const ImageRGB8 a = noise(30, 30, rng);
  const ImageRGB8 b = perturb(a, 30, rng);
  EXPECT_EQ(ssim(a, b, {2, true}), ssim(b, a, {2, true}));
  ImageRGB8 inv = a;
  for (auto& p : inv.pixels) p = static_cast<std::uint8_t>(255 - p);
  EXPECT_LT(ssim(a, inv, {0, true}), 0.0);
}

TEST(Ssim, TooSmallAfterCrop) {
  const ImageRGB8 a(14, 14, 3);
  EXPECT_NO_THROW(ssim(a, a, {1, true}));
  EXPECT_THROW(ssim(a, a, {2, true}), ImageError);
}

ModelConfig bench_config(int channels) {
  ModelConfig c = ModelConfig::rlfn(2);
  c.num_blocks = 2;
  c.channels = channels;
  return c;
}

TEST(Bench, SingleRunHasZeroSpread) {
  const BenchResult r = bench_runtime(build_model(bench_config(16), 0), 16, 16, 0, 1);
  EXPECT_EQ(r.std_ms, 0.0);
  ASSERT_EQ(r.runs_ms.size(), 1u);
  EXPECT_GE(r.env.threads, 1);
  EXPECT_FALSE(r.env.compiler.empty());
}

TEST(Bench, MeanWithinRunRange) {
  const BenchResult r = bench_runtime(build_model(bench_config(16), 0), 24, 24, 1, 5);
  ASSERT_EQ(r.runs_ms.size(), 5u);
  EXPECT_GE(r.mean_ms, *std::min_element(r.runs_ms.begin(), r.runs_ms.end()));
  EXPECT_LE(r.mean_ms, *std::max_element(r.runs_ms.begin(), r.runs_ms.end()));
  EXPECT_THROW(bench_runtime(build_model(bench_config(16), 0), 8, 24, 0, 1), Error);
  EXPECT_THROW(bench_runtime(build_model(bench_config(16), 0), 24, 24, 0, 0), Error);
}

TEST(Bench, SmallerModelIsNotSlower) {
  const BenchResult full = bench_runtime(build_model(ModelConfig::rlfn(4), 0), 48, 48, 3, 10);
  const BenchResult slim = bench_runtime(build_model(ModelConfig::rlfn_s(4), 0), 48, 48, 3, 10);
  EXPECT_LE(slim.mean_ms, full.mean_ms);
}

}  // namespace
}  // namespace rlfn
