#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "rlfn/tensor.hpp"

namespace rlfn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t probes = 0;
  std::size_t skipped = 0;  // probes dropped by the kink guard
  double max_raw_rel_error = 0.0;  // same, without the scale floor
};

struct GradCheckOptions {
  double eps = 1e-3;
  // Drop probes whose forward and backward one-sided quotients disagree by more than
  // kink_tolerance (relative). At a kink inside [x - eps, x + eps] the central quotient is off by
  // exactly half that disagreement, so such probes say nothing about the analytic gradient.
  bool skip_kinks = false;
  double kink_tolerance = 1e-2;
  // Lower bound on the error denominator, as a fraction of the largest numeric gradient of the
  // same input. Elements far below that scale are dominated by float rounding in the analytic
  // pass and are then judged against the tensor's own gradient magnitude. 0 disables it.
  double scale_floor = 0.0;
};

/// Compares reverse-mode gradients against central finite differences.
///
/// `f` must be callable with `const std::vector<BasicTensor<T>>&` for both float and double and
/// return a one-element tensor; a generic lambda does this. Analytic gradients come from the
/// float graph. The numeric side re-evaluates `f` in double, one perturbed element at a time,
/// so rounding noise in the loss does not swamp the difference quotient.
/// Relative error per element is |a - n| / max(|a|, |n|, scale_floor * max|n|, 1e-8).
template <typename F>
GradCheckReport grad_check(F&& f, const std::vector<Tensor>& inputs, const GradCheckOptions& opt) {
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const auto& x : inputs) leaves.push_back(x.detach().set_requires_grad(true));
  {
    Tensor loss = f(leaves);
    backward(loss);
  }

  std::vector<Tensor64> probe;
  probe.reserve(inputs.size());
  for (const auto& x : inputs) probe.push_back(x.detach().template cast<double>());

  NoGradGuard no_grad;
  const double eps = opt.eps;
  const double centre = opt.skip_kinks ? f(probe).item() : 0.0;
  GradCheckReport report;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    std::span<double> values = probe[i].mutable_data();
    std::span<const float> analytic = leaves[i].grad();
    std::vector<double> numeric(values.size());
    std::vector<bool> kept(values.size(), true);
    double scale = 0.0;
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double original = values[j];
      values[j] = original + eps;
      const double plus = f(probe).item();
      values[j] = original - eps;
      const double minus = f(probe).item();
      values[j] = original;
      ++report.probes;
      if (opt.skip_kinks) {
        const double fwd = (plus - centre) / eps;
        const double bwd = (centre - minus) / eps;
        if (std::abs(fwd - bwd) > opt.kink_tolerance * std::max({std::abs(fwd), std::abs(bwd), 1e-8})) {
          ++report.skipped;
          kept[j] = false;
          continue;
        }
      }
      numeric[j] = (plus - minus) / (2.0 * eps);
      scale = std::max(scale, std::abs(numeric[j]));
    }
    const double floor = opt.scale_floor * scale;
    for (std::size_t j = 0; j < values.size(); ++j) {
      if (!kept[j]) continue;
      const double a = analytic.empty() ? 0.0 : static_cast<double>(analytic[j]);
      const double n = numeric[j];
      const double raw = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
      const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor, 1e-8});
      report.max_raw_rel_error = std::max(report.max_raw_rel_error, raw);
      if (rel >= report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_input = i;
        report.worst_index = j;
        report.analytic = a;
        report.numeric = n;
      }
    }
  }
  return report;
}

template <typename F>
GradCheckReport grad_check(F&& f, const std::vector<Tensor>& inputs, double eps = 1e-3) {
  return grad_check(std::forward<F>(f), inputs, GradCheckOptions{eps});
}

}  // namespace rlfn
