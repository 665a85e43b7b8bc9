#include <gtest/gtest.h>

#include <png.h>

#include <cmath>
#include <filesystem>

#include "rlfn/image.hpp"
#include "rlfn/random.hpp"

namespace rlfn {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir() {
  fs::path d = fs::temp_directory_path() / ("rlfn_test_image_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d;
}

ImageRGB8 random_image(int w, int h, Rng& rng) {
  ImageRGB8 img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return img;
}

// Slow oracle: every output sample is a full 2-D sum over the kernel support, weights
// normalised per axis, evaluated in long double with clamped source indices.
long double keys(long double x) {
  x = std::fabs(x);
  if (x <= 1) return (1.5L * x - 2.5L) * x * x + 1;
  if (x <= 2) return ((-0.5L * x + 2.5L) * x - 4) * x + 2;
  return 0;
}

std::vector<std::pair<int, long double>> axis_weights(int out_i, int in, int out, bool aa) {
  const long double s = static_cast<long double>(out) / in;
  const long double k = (aa && s < 1) ? s : 1;
  const long double u = (out_i + 0.5L) / s - 0.5L;
  const long double half = 2 / k;
  std::vector<std::pair<int, long double>> w;
  long double total = 0;
  for (int j = static_cast<int>(std::floor(u - half)) - 1; j <= static_cast<int>(std::ceil(u + half)) + 1; ++j) {
    const long double v = k * keys(k * (u - j));
    if (v == 0) continue;
    w.emplace_back(std::clamp(j, 0, in - 1), v);
    total += v;
  }
  for (auto& e : w) e.second /= total;
  return w;
}

ImageRGB8 oracle_resize(const ImageRGB8& img, int ow, int oh, bool aa) {
  ImageRGB8 out(ow, oh);
  for (int y = 0; y < oh; ++y) {
    const auto wy = axis_weights(y, img.height, oh, aa);
    for (int x = 0; x < ow; ++x) {
      const auto wx = axis_weights(x, img.width, ow, aa);
      for (int c = 0; c < 3; ++c) {
        long double acc = 0;
        for (const auto& [sy, a] : wy) {
          for (const auto& [sx, b] : wx) acc += a * b * img.at(sx, sy, c);
        }
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::round(static_cast<double>(acc)), 0.0, 255.0));
      }
    }
  }
  return out;
}

int max_level_diff(const ImageRGB8& a, const ImageRGB8& b) {
  int worst = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) worst = std::max(worst, std::abs(a.pixels[i] - b.pixels[i]));
  return worst;
}

TEST(Png, RoundTripBitwise) {
  Rng rng(3);
  const ImageRGB8 img = random_image(37, 21, rng);
  const fs::path p = scratch_dir() / "rt.png";
  save_png(img, p);
  EXPECT_EQ(load_png(p), img);
}

TEST(Png, OnePixelRoundTrip) {
  ImageRGB8 img(1, 1);
  img.pixels = {12, 200, 77};
  const fs::path p = scratch_dir() / "one.png";
  save_png(img, p);
  EXPECT_EQ(load_png(p), img);
}

TEST(Png, GrayscalePromotedToRgb) {
  Gray8 g{2, 1, {5, 250}};
  const fs::path p = scratch_dir() / "gray.png";
  save_png(g, p);
  const ImageRGB8 img = load_png(p);
  ASSERT_EQ(img.width, 2);
  EXPECT_EQ(img.at(0, 0, 0), 5);
  EXPECT_EQ(img.at(0, 0, 2), 5);
  EXPECT_EQ(img.at(1, 0, 1), 250);
}

TEST(Png, SixteenBitRejected) {
  const fs::path p = scratch_dir() / "deep.png";
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = 2;
  image.height = 2;
  image.format = PNG_FORMAT_LINEAR_Y;
  const std::uint16_t data[4] = {0, 1000, 30000, 65535};
  ASSERT_TRUE(png_image_write_to_file(&image, p.c_str(), 0, data, 0, nullptr));
  try {
    load_png(p);
    FAIL() << "expected ImageError";
  } catch (const ImageError& e) {
    EXPECT_NE(std::string(e.what()).find("16-bit"), std::string::npos);
  }
}

TEST(Png, MissingFileIsStructuredError) { EXPECT_THROW(load_png("/nonexistent/x.png"), ImageError); }

TEST(Bicubic, IdentitySizeIsBitwiseEqual) {
  Rng rng(1);
  const ImageRGB8 img = random_image(13, 9, rng);
  EXPECT_EQ(bicubic_resize(img, 13, 9), img);
}

TEST(Bicubic, ConstantImageStaysConstant) {
  const ImageRGB8 img(20, 14, 173);
  for (auto [w, h] : {std::pair{5, 7}, {40, 28}, {1, 1}, {33, 3}, {10, 14}}) {
    for (bool aa : {true, false}) {
      const ImageRGB8 out = bicubic_resize(img, w, h, aa);
      for (auto v : out.pixels) ASSERT_EQ(v, 173);
    }
  }
}

TEST(Bicubic, WeightsSumToOne) {
  for (auto [in, out] : {std::pair{64, 16}, {16, 64}, {7, 4}, {96, 48}, {5, 13}, {100, 33}}) {
    for (bool aa : {true, false}) {
      const ResampleTaps t = resample_taps(in, out, aa);
      for (int i = 0; i < out; ++i) {
        double s = 0.0;
        for (int k = 0; k < t.taps; ++k) s += t.weights[static_cast<std::size_t>(i) * t.taps + k];
        ASSERT_NEAR(s, 1.0, 1e-6);
      }
    }
  }
}

TEST(Bicubic, ImpulseRowMatchesOracle) {
  ImageRGB8 row(7, 1);
  row.at(3, 0, 0) = row.at(3, 0, 1) = row.at(3, 0, 2) = 255;
  const ImageRGB8 fast = bicubic_resize(row, 4, 1, true);
  const ImageRGB8 slow = oracle_resize(row, 4, 1, true);
  EXPECT_LE(max_level_diff(fast, slow), 1);
  // Symmetric impulse gives a symmetric response.
  EXPECT_EQ(fast.at(1, 0, 0), fast.at(2, 0, 0));
  EXPECT_EQ(fast.at(0, 0, 0), fast.at(3, 0, 0));
  EXPECT_GT(fast.at(1, 0, 0), fast.at(0, 0, 0));
}

TEST(Bicubic, HalvingKnownValues) {
  // At exact x0.5 with antialias every output sits between two inputs; the widened kernel
  // sampled at offsets +-0.5, +-1.5, +-2.5, +-3.5 gives taps proportional to these.
  const double w05 = 0.5 * cubic_kernel(0.25);
  const double w15 = 0.5 * cubic_kernel(0.75);
  const double w25 = 0.5 * cubic_kernel(1.25);
  const double w35 = 0.5 * cubic_kernel(1.75);
  const double total = 2 * (w05 + w15 + w25 + w35);
  ImageRGB8 row(16, 1);
  row.at(7, 0, 0) = 255;
  const ImageRGB8 out = bicubic_resize(row, 8, 1, true);
  // Output 3 maps to source 6.5: input 7 is at +0.5. Output 4 maps to 8.5: input 7 at -1.5.
  EXPECT_EQ(out.at(3, 0, 0), round_to_u8(255.0 * w05 / total));
  EXPECT_EQ(out.at(4, 0, 0), round_to_u8(255.0 * w15 / total));
  EXPECT_EQ(out.at(2, 0, 0), round_to_u8(255.0 * w25 / total));
}

TEST(Bicubic, CorpusMatchesSlowOracle) {
  Rng rng(2024);
  int worst = 0;
  for (int n = 0; n < 50; ++n) {
    const int w = rng.uniform_int(4, 40);
    const int h = rng.uniform_int(4, 40);
    ImageRGB8 img = random_image(w, h, rng);
    // Half the corpus is smooth so both noisy and band-limited content are covered.
    if (n % 2) img = bicubic_resize(bicubic_resize(img, w / 2 + 1, h / 2 + 1), w, h);
    const int ow = rng.uniform_int(1, 80);
    const int oh = rng.uniform_int(1, 80);
    const bool aa = n % 3 != 0;
    worst = std::max(worst, max_level_diff(bicubic_resize(img, ow, oh, aa), oracle_resize(img, ow, oh, aa)));
  }
  EXPECT_LE(worst, 1);
}

TEST(Bicubic, DownThenUpConstantIsExact) {
  const ImageRGB8 img(48, 48, 91);
  const ImageRGB8 lr = bicubic_resize(img, 12, 12);
  EXPECT_EQ(bicubic_resize(lr, 48, 48), img);
}

TEST(Bicubic, InvalidOutputSize) {
  const ImageRGB8 img(4, 4);
  EXPECT_THROW(bicubic_resize(img, 0, 4), ImageError);
}

TEST(Luma, KnownValues) {
  ImageRGB8 img(4, 1);
  img.pixels = {0, 0, 0, 255, 255, 255, 255, 0, 0, 0, 255, 0};
  const Plane y = rgb_to_y(img);
  EXPECT_DOUBLE_EQ(y.at(0, 0), 16.0);
  EXPECT_NEAR(y.at(1, 0), 235.0, 1e-9);
  EXPECT_NEAR(y.at(2, 0), 81.481, 1e-9);
  EXPECT_NEAR(y.at(3, 0), 144.553, 1e-9);
}

TEST(Luma, RangeOverAllGreys) {
  Rng rng(9);
  const ImageRGB8 img = random_image(64, 64, rng);
  for (double v : rgb_to_y(img).values) {
    ASSERT_GE(v, 16.0);
    ASSERT_LE(v, 235.0 + 1e-9);
  }
}

TEST(Crop, ToMultipleTrimsBottomRight) {
  Rng rng(4);
  const ImageRGB8 img = random_image(65, 66, rng);
  const ImageRGB8 c = crop_to_multiple(img, 4);
  EXPECT_EQ(c.width, 64);
  EXPECT_EQ(c.height, 64);
  EXPECT_EQ(c.at(63, 63, 1), img.at(63, 63, 1));
  EXPECT_THROW(crop(img, 60, 0, 10, 10), ImageError);
}

TEST(TensorBridge, RoundTrip) {
  Rng rng(5);
  const ImageRGB8 img = random_image(9, 6, rng);
  const Tensor t = to_tensor(img);
  EXPECT_EQ(t.shape(), (Shape{1, 3, 6, 9}));
  for (float v : t.data()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
  EXPECT_EQ(to_image(t), img);
}

}  // namespace
}  // namespace rlfn
