#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "rlfn/tensor.hpp"

namespace rlfn {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  bool empty() const { return m.empty(); }
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// One bias-corrected Adam update from the gradients currently held by `params`. A parameter
/// without a gradient is treated as having a zero gradient. Moments are kept in double.
inline void adam_step(const NamedParams& params, AdamState& state, double lr) {
  if (state.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam: optimizer state holds " + std::to_string(state.m.size()) + " tensors, got " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& [name, p] = params[k];
    if (state.m[k].size() != p.numel()) {
      throw ShapeError("adam: state for '" + name + "' has " + std::to_string(state.m[k].size()) +
                       " elements, parameter has " + std::to_string(p.numel()));
    }
    for (float g : p.grad()) {
      if (!std::isfinite(g)) throw Error("adam: non-finite gradient in parameter '" + name + "'");
    }
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k].second;
    std::span<const float> g = p.grad();
    std::span<float> w = p.mutable_data();
    std::vector<double>& m = state.m[k];
    std::vector<double>& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] = static_cast<float>(static_cast<double>(w[i]) - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

inline void adam_step(const std::vector<Tensor>& params, AdamState& state, double lr) {
  NamedParams named;
  for (std::size_t i = 0; i < params.size(); ++i) named.emplace_back("param[" + std::to_string(i) + "]", params[i]);
  adam_step(named, state, lr);
}

/// Step schedule: initial * 0.5^floor(iter / halve_every).
inline double lr_at(std::int64_t iter, double initial_lr, std::int64_t halve_every) {
  if (iter < 0) throw Error("lr_at: negative iteration");
  if (halve_every < 1) throw Error("lr_at: halve_every must be >= 1");
  return initial_lr * std::pow(0.5, static_cast<double>(iter / halve_every));
}

}  // namespace rlfn
