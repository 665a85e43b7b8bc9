#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rlfn/eval.hpp"

namespace rlfn {

/// Zeroes the floor(ratio * c_out) output filters of `conv` with the smallest weight L1 norm,
/// bias included. Equal norms are broken by filter index. Returns the pruned filter indices.
template <typename T>
std::vector<int> prune_filters(BasicConvParams<T>& conv, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error("prune: ratio " + std::to_string(ratio) + " outside [0, 1]");
  const int c_out = conv.out_channels();
  const int count = static_cast<int>(std::floor(ratio * c_out + 1e-9));
  if (count == 0) return {};
  const std::size_t per = conv.weight.numel() / static_cast<std::size_t>(c_out);
  std::vector<double> norm(c_out, 0.0);
  std::span<const T> w = conv.weight.data();
  for (int o = 0; o < c_out; ++o) {
    for (std::size_t i = 0; i < per; ++i) norm[o] += std::abs(static_cast<double>(w[o * per + i]));
  }
  std::vector<int> order(c_out);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return norm[a] < norm[b]; });
  order.resize(count);
  std::span<T> wm = conv.weight.mutable_data();
  std::span<T> bm = conv.bias.mutable_data();
  for (int o : order) {
    std::fill(wm.begin() + static_cast<std::ptrdiff_t>(o * per), wm.begin() + static_cast<std::ptrdiff_t>((o + 1) * per), T(0));
    bm[o] = T(0);
  }
  std::sort(order.begin(), order.end());
  return order;
}

struct SensitivityEntry {
  std::string layer;
  double ratio = 0.0;
  double psnr = 0.0;
  double drop = 0.0;  // baseline PSNR minus pruned PSNR
};

struct SensitivityReport {
  double baseline_psnr = 0.0;
  double bicubic_psnr = 0.0;
  double reference_ratio = 0.0;
  std::vector<double> ratios;
  std::vector<SensitivityEntry> entries;  // layer-major, ratios in the given order
  std::vector<std::string> ranking;       // most redundant first
  bool untrained_warning = false;
  std::string warning;

  double drop(const std::string& layer, double ratio) const {
    for (const auto& e : entries) {
      if (e.layer == layer && e.ratio == ratio) return e.drop;
    }
    throw Error("sensitivity: no entry for '" + layer + "' at ratio " + std::to_string(ratio));
  }

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "layer,ratio,psnr,drop\n";
    for (const auto& e : entries) os << e.layer << ',' << e.ratio << ',' << e.psnr << ',' << e.drop << '\n';
    return os.str();
  }
};

inline bool is_conv_group(const std::string& layer) { return layer.find(".esa.group.") != std::string::npos; }

struct PruneOptions {
  std::vector<double> ratios{0.1, 0.2, 0.3, 0.5};
  double reference_ratio = -1.0;  // < 0: largest ratio in the list
  MetricConfig metric{-1, true};
  TileOptions tiles;
  std::vector<std::string> layers;  // empty: every convolution
};

/// One-shot L1-norm filter pruning of each layer in turn. Each (layer, ratio) cell prunes a
/// copy of the weights, evaluates, and restores the layer bitwise before moving on.
inline SensitivityReport prune_sensitivity(Model& model, const std::vector<SamplePair>& eval,
                                           const PruneOptions& opt = {}) {
  if (eval.empty()) throw Error("prune-scan: eval set is empty");
  if (opt.ratios.empty()) throw Error("prune-scan: no ratios");
  for (double r : opt.ratios) {
    if (!(r >= 0.0 && r < 1.0)) throw Error("prune-scan: ratio " + std::to_string(r) + " outside [0, 1)");
  }
  MetricConfig metric = opt.metric;
  if (metric.border_crop < 0) metric.border_crop = model.config.scale;

  SensitivityReport rep;
  rep.ratios = opt.ratios;
  rep.reference_ratio = opt.reference_ratio >= 0.0 ? opt.reference_ratio
                                                   : *std::max_element(opt.ratios.begin(), opt.ratios.end());
  if (std::find(opt.ratios.begin(), opt.ratios.end(), rep.reference_ratio) == opt.ratios.end()) {
    throw Error("prune-scan: reference ratio is not one of the scanned ratios");
  }
  rep.baseline_psnr = evaluate(model, eval, metric, opt.tiles).psnr;
  rep.bicubic_psnr = evaluate_bicubic(eval, metric).psnr;

  bool all_biases_zero = true;
  for (auto& [name, conv] : model.layers()) {
    for (float b : conv->bias.data()) all_biases_zero = all_biases_zero && b == 0.0f;
  }
  if (all_biases_zero) {
    rep.untrained_warning = true;
    rep.warning = "every bias is exactly zero; the model looks freshly initialised";
  } else if (rep.baseline_psnr <= rep.bicubic_psnr) {
    rep.untrained_warning = true;
    rep.warning = "model does not beat bicubic on the eval set; drops are not meaningful";
  }

  std::vector<std::string> names;
  for (auto& [name, conv] : model.layers()) {
    if (opt.layers.empty() || std::find(opt.layers.begin(), opt.layers.end(), name) != opt.layers.end()) {
      names.push_back(name);
    }
  }
  if (names.empty()) throw Error("prune-scan: no matching layers");

  for (auto& [name, conv] : model.layers()) {
    if (std::find(names.begin(), names.end(), name) == names.end()) continue;
    const std::vector<float> w(conv->weight.data().begin(), conv->weight.data().end());
    const std::vector<float> b(conv->bias.data().begin(), conv->bias.data().end());
    for (double ratio : opt.ratios) {
      SensitivityEntry e{name, ratio, rep.baseline_psnr, 0.0};
      if (!prune_filters(*conv, ratio).empty()) {
        e.psnr = evaluate(model, eval, metric, opt.tiles).psnr;
        e.drop = rep.baseline_psnr - e.psnr;
        std::copy(w.begin(), w.end(), conv->weight.mutable_data().begin());
        std::copy(b.begin(), b.end(), conv->bias.mutable_data().begin());
      }
      rep.entries.push_back(e);
    }
  }

  std::vector<std::pair<double, std::string>> keyed;
  for (const auto& n : names) keyed.emplace_back(rep.drop(n, rep.reference_ratio), n);
  std::sort(keyed.begin(), keyed.end());
  for (const auto& [d, n] : keyed) rep.ranking.push_back(n);
  return rep;
}

/// Horizontal bar chart of the drop at the reference ratio per layer, ConvGroup layers in red.
inline std::string sensitivity_svg(const SensitivityReport& rep) {
  std::vector<std::pair<std::string, double>> bars;
  for (const auto& e : rep.entries) {
    if (e.ratio == rep.reference_ratio) bars.emplace_back(e.layer, e.drop);
  }
  double max_drop = 1e-9;
  for (const auto& [n, d] : bars) max_drop = std::max(max_drop, std::abs(d));
  const int row = 16;
  const int label = 170;
  const int plot = 420;
  const int height = 40 + row * static_cast<int>(bars.size());
  std::ostringstream os;
  os.precision(4);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << label + plot + 80 << "\" height=\"" << height
     << "\" font-family=\"monospace\" font-size=\"11\">\n";
  os << "<text x=\"4\" y=\"16\">PSNR drop (dB) at prune ratio " << rep.reference_ratio << "</text>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& [name, d] = bars[i];
    const int y = 28 + row * static_cast<int>(i);
    const int w = static_cast<int>(std::round(std::max(0.0, d) / max_drop * plot));
    const char* colour = is_conv_group(name) ? "#d62728" : "#4c72b0";
    os << "<text x=\"4\" y=\"" << y + 11 << "\">" << name << "</text>";
    os << "<rect x=\"" << label << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << row - 4 << "\" fill=\""
       << colour << "\"/>";
    os << "<text x=\"" << label + w + 4 << "\" y=\"" << y + 11 << "\">" << d << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace rlfn
