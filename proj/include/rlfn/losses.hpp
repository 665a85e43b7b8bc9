#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rlfn/image.hpp"
#include "rlfn/model.hpp"
#include "rlfn/ops.hpp"
#include "rlfn/random.hpp"

namespace rlfn {

namespace detail {

// Mean of f(pred - target) with derivative df, as one fused node.
template <typename T, typename Fn, typename DFn>
BasicTensor<T> pointwise_loss(const char* name, const BasicTensor<T>& pred, const BasicTensor<T>& target, Fn fn,
                              DFn dfn) {
  require_same_shape(name, pred, target);
  if (pred.numel() == 0) throw ShapeError(std::string(name) + ": empty tensors");
  std::span<const T> p = pred.data();
  std::span<const T> t = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += static_cast<double>(fn(p[i] - t[i]));
  const T inv_n = T(1) / static_cast<T>(p.size());
  const T value = static_cast<T>(acc / static_cast<double>(p.size()));
  return make_op_result<T>(Shape{1, 1, 1, 1}, {value}, {pred, target}, [dfn, inv_n](Node<T>& self) {
    Node<T>& a = *self.inputs[0];
    Node<T>& b = *self.inputs[1];
    const T go = self.grad[0] * inv_n;
    if (a.requires_grad) {
      std::span<T> g = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * dfn(a.data[i] - b.data[i]);
    }
    if (b.requires_grad) {
      std::span<T> g = b.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= go * dfn(a.data[i] - b.data[i]);
    }
  });
}

}  // namespace detail

/// Mean absolute error. The subgradient at a tie is 0.
template <typename T>
BasicTensor<T> l1_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  return detail::pointwise_loss(
      "l1_loss", pred, target, [](T d) { return std::abs(d); },
      [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); });
}

template <typename T>
BasicTensor<T> l2_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  return detail::pointwise_loss(
      "l2_loss", pred, target, [](T d) { return d * d; }, [](T d) { return T(2) * d; });
}

/// Frozen conv3x3 -> tanh -> conv3x3 network used as the contrastive feature space. Its tensors
/// never require grad, so no optimizer can see them; gradients still flow through it to inputs.
template <typename T>
struct BasicFeatureExtractor {
  BasicConvParams<T> conv1;
  BasicConvParams<T> conv2;
  std::uint64_t seed = 0;

  int width() const { return conv1.out_channels(); }

  // Tap 0 is the post-tanh feature, tap 1 the final output.
  std::vector<BasicTensor<T>> taps(const BasicTensor<T>& x) const {
    BasicTensor<T> a = tanh(conv2d(x, conv1));
    BasicTensor<T> b = conv2d(a, conv2);
    return {a, b};
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return taps(x)[1]; }

  std::vector<BasicTensor<T>> tensors() const { return {conv1.weight, conv1.bias, conv2.weight, conv2.bias}; }

  template <typename U>
  BasicFeatureExtractor<U> cast() const {
    return {conv1.template cast<U>(), conv2.template cast<U>(), seed};
  }
};

using FeatureExtractor = BasicFeatureExtractor<float>;

inline constexpr int kDefaultExtractorWidth = 64;

template <typename T = float>
BasicFeatureExtractor<T> build_random_extractor(std::uint64_t seed, int width = kDefaultExtractorWidth,
                                                int in_channels = 3) {
  if (width < 1) throw Error("build_random_extractor: width must be >= 1");
  BasicFeatureExtractor<T> e{detail::conv_layer<T>(in_channels, width, 3), detail::conv_layer<T>(width, width, 3), seed};
  Rng rng(seed);
  init_fan_in<T>({{"extractor.conv1", &e.conv1}, {"extractor.conv2", &e.conv2}}, rng);
  return e;
}

struct ContrastiveConfig {
  std::vector<int> taps{1};
  std::vector<double> lambdas{1.0};
  double epsilon = 1e-8;
  double loss_weight = 255.0;
  std::uint64_t extractor_seed = 0;
  int extractor_width = kDefaultExtractorWidth;

  void validate() const {
    if (taps.empty() || taps.size() != lambdas.size()) {
      throw Error("contrastive: taps and lambdas must be non-empty and of equal length");
    }
    for (int t : taps) {
      if (t < 0 || t > 1) throw Error("contrastive: tap index " + std::to_string(t) + " outside [0, 1]");
    }
    for (double l : lambdas) {
      if (!(l > 0.0)) throw Error("contrastive: lambda weights must be positive");
    }
    if (!(epsilon > 0.0)) throw Error("contrastive: epsilon must be positive");
    if (extractor_width < 1) throw Error("contrastive: extractor width must be >= 1");
  }
};

/// Sum over taps of lambda * d(f(anchor), f(pos)) / (d(f(anchor), f(neg)) + eps) with d the mean
/// absolute difference. pos and neg are treated as constants.
template <typename T>
BasicTensor<T> contrastive_loss(const BasicTensor<T>& anchor, const BasicTensor<T>& pos, const BasicTensor<T>& neg,
                                const BasicFeatureExtractor<T>& extractor, const ContrastiveConfig& cfg) {
  cfg.validate();
  detail::require_same_shape("contrastive_loss", anchor, pos);
  detail::require_same_shape("contrastive_loss", anchor, neg);
  std::vector<BasicTensor<T>> fp;
  std::vector<BasicTensor<T>> fn;
  {
    NoGradGuard no_grad;
    fp = extractor.taps(pos.detach());
    fn = extractor.taps(neg.detach());
  }
  const std::vector<BasicTensor<T>> fa = extractor.taps(anchor);
  auto check_finite = [&](const std::vector<BasicTensor<T>>& set) {
    for (int t : cfg.taps) {
      for (T v : set[t].data()) {
        if (!std::isfinite(static_cast<double>(v))) throw Error("contrastive_loss: non-finite extractor features");
      }
    }
  };
  check_finite(fa);
  check_finite(fp);
  check_finite(fn);
  BasicTensor<T> total;
  for (std::size_t i = 0; i < cfg.taps.size(); ++i) {
    const int t = cfg.taps[i];
    // The anchor appears in both distances, so both carry gradient.
    BasicTensor<T> num = l1_loss(fa[t], fp[t]);
    BasicTensor<T> denom = add_scalar(l1_loss(fa[t], fn[t]), static_cast<T>(cfg.epsilon));
    BasicTensor<T> term = scale(div(num, denom), static_cast<T>(cfg.lambdas[i]));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

/// Per-pixel L2 norm over channels of f(a) - f(b), for single images (n = 1).
template <typename T>
Plane difference_map(const BasicTensor<T>& a, const BasicTensor<T>& b, const BasicFeatureExtractor<T>& extractor) {
  detail::require_same_shape("difference_map", a, b);
  if (a.shape().n != 1) throw ShapeError("difference_map: expected single images, got " + a.shape().str());
  NoGradGuard no_grad;
  const BasicTensor<T> fa = extractor(a.detach());
  const BasicTensor<T> fb = extractor(b.detach());
  const Shape& s = fa.shape();
  Plane out{s.w, s.h, std::vector<double>(s.plane(), 0.0)};
  for (int c = 0; c < s.c; ++c) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const double d = static_cast<double>(fa.data()[c * s.plane() + i]) - static_cast<double>(fb.data()[c * s.plane() + i]);
      out.values[i] += d * d;
    }
  }
  for (double& v : out.values) v = std::sqrt(v);
  return out;
}

/// Min-max normalisation to 8 bits. A constant map becomes all zeros.
inline Gray8 normalize_map(const Plane& p) {
  Gray8 g{p.width, p.height, std::vector<std::uint8_t>(p.values.size(), 0)};
  if (p.values.empty()) return g;
  const auto [lo, hi] = std::minmax_element(p.values.begin(), p.values.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return g;
  for (std::size_t i = 0; i < p.values.size(); ++i) g.pixels[i] = round_to_u8((p.values[i] - *lo) / range * 255.0);
  return g;
}

}  // namespace rlfn
