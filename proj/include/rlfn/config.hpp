#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rlfn/synth.hpp"
#include "rlfn/trainer.hpp"

namespace rlfn {

class ConfigError : public Error {
 public:
  using Error::Error;
};

inline constexpr int kConfigVersion = 1;

// Where training or eval images come from: a directory with HR/*.png, or a generated corpus.
struct DataSource {
  DatasetSpec spec;
  int synthetic_count = 0;  // > 0: generate this many document images instead of reading root
  int synthetic_size = 96;
  std::uint64_t synthetic_seed = 0;

  std::vector<SamplePair> load() const;
};

struct RunConfig {
  ModelConfig model = ModelConfig::rlfn(2);
  DataSource train;
  DataSource eval;
  TrainPlan plan;
  MetricConfig metrics{-1, true};  // border_crop < 0: the model scale
  std::filesystem::path output_dir = "runs/default";
  std::uint64_t seed = 0;

  void validate() const;
  std::string describe() const;
};

namespace detail {

struct ConfigEntry {
  std::string value;
  int line = 0;
  bool used = false;
};

class ConfigReader {
 public:
  ConfigReader(std::map<std::string, ConfigEntry> entries, std::string origin)
      : entries_(std::move(entries)), origin_(std::move(origin)) {}

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  template <typename U>
  void get(const std::string& key, U& out) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return;
    it->second.used = true;
    try {
      out = convert<U>(it->second.value);
    } catch (const ConfigError& e) {
      fail(it->second.line, key, e.what());
    }
  }

  [[noreturn]] void fail(int line, const std::string& key, const std::string& why) const {
    throw ConfigError(origin_ + ":" + std::to_string(line) + ": field '" + key + "': " + why);
  }

  int line_of(const std::string& key) const { return entries_.at(key).line; }

  void reject_unused() const {
    for (const auto& [key, e] : entries_) {
      if (!e.used) throw ConfigError(origin_ + ":" + std::to_string(e.line) + ": unknown key '" + key + "'");
    }
  }

 private:
  template <typename U>
  static U convert(const std::string& s) {
    if constexpr (std::is_same_v<U, std::string>) {
      return s;
    } else if constexpr (std::is_same_v<U, std::filesystem::path>) {
      return std::filesystem::path(s);
    } else if constexpr (std::is_same_v<U, bool>) {
      if (s == "true" || s == "yes" || s == "1") return true;
      if (s == "false" || s == "no" || s == "0") return false;
      throw ConfigError("expected true or false, got '" + s + "'");
    } else if constexpr (std::is_same_v<U, double>) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(s, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != s.size() || s.empty()) throw ConfigError("expected a number, got '" + s + "'");
      return v;
    } else if constexpr (std::is_integral_v<U>) {
      U v{};
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("expected an integer, got '" + s + "'");
      return v;
    } else if constexpr (std::is_same_v<U, std::vector<double>>) {
      std::vector<double> out;
      for (const auto& part : split(s)) out.push_back(convert<double>(part));
      return out;
    } else if constexpr (std::is_same_v<U, std::vector<int>>) {
      std::vector<int> out;
      for (const auto& part : split(s)) out.push_back(convert<int>(part));
      return out;
    } else {
      static_assert(sizeof(U) == 0, "unsupported config type");
    }
  }

  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string part; std::getline(ss, part, ',');) {
      const auto b = part.find_first_not_of(" \t");
      const auto e = part.find_last_not_of(" \t");
      if (b == std::string::npos) throw ConfigError("empty list element in '" + s + "'");
      out.push_back(part.substr(b, e - b + 1));
    }
    return out;
  }

  std::map<std::string, ConfigEntry> entries_;
  std::string origin_;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline void read_source(ConfigReader& r, const std::string& prefix, DataSource& d) {
  r.get(prefix + ".root", d.spec.root);
  r.get(prefix + ".glob", d.spec.glob);
  r.get(prefix + ".patch_size", d.spec.patch_size);
  r.get(prefix + ".batch_size", d.spec.batch_size);
  r.get(prefix + ".augment", d.spec.augment);
  r.get(prefix + ".seed", d.spec.seed);
  r.get(prefix + ".cache_lr", d.spec.cache_lr);
  r.get(prefix + ".synthetic_count", d.synthetic_count);
  r.get(prefix + ".synthetic_size", d.synthetic_size);
  r.get(prefix + ".synthetic_seed", d.synthetic_seed);
}

}  // namespace detail

/// Parses the flat `key = value` format. Lines starting with '#' are comments. `version` must be
/// present; unknown and repeated keys are errors that name the line.
inline RunConfig parse_run_config(const std::string& text, const std::string& origin = "<config>") {
  std::map<std::string, detail::ConfigEntry> entries;
  std::istringstream in(text);
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value', got '" + t + "'");
    }
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": missing key");
    if (entries.count(key)) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": key '" + key + "' repeats line " +
                        std::to_string(entries[key].line));
    }
    entries[key] = {value, line_no, false};
  }

  detail::ConfigReader r(std::move(entries), origin);
  if (!r.has("version")) throw ConfigError(origin + ": missing required key 'version'");
  int version = 0;
  r.get("version", version);
  if (version != kConfigVersion) {
    r.fail(r.line_of("version"), "version",
           "unsupported version " + std::to_string(version) + " (this build reads " + std::to_string(kConfigVersion) + ")");
  }

  RunConfig c;
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);

  std::string preset = "rlfn";
  r.get("model.preset", preset);
  int scale = 2;
  r.get("model.scale", scale);
  if (preset == "rlfn") c.model = ModelConfig::rlfn(scale);
  else if (preset == "rlfn-s") c.model = ModelConfig::rlfn_s(scale);
  else r.fail(r.line_of("model.preset"), "model.preset", "expected rlfn or rlfn-s, got '" + preset + "'");
  r.get("model.blocks", c.model.num_blocks);
  r.get("model.channels", c.model.channels);
  r.get("model.esa_channels", c.model.esa_channels);
  r.get("model.esa_convs", c.model.esa_convs);
  std::string block = to_string(c.model.block_kind);
  r.get("model.block", block);
  try {
    c.model.block_kind = parse_block_kind(block);
  } catch (const Error& e) {
    r.fail(r.line_of("model.block"), "model.block", e.what());
  }

  detail::read_source(r, "train", c.train);
  detail::read_source(r, "eval", c.eval);
  c.train.spec.scale = c.eval.spec.scale = c.model.scale;
  c.eval.spec.patch_size = 0;
  c.eval.spec.augment = false;

  r.get("metrics.border_crop", c.metrics.border_crop);
  r.get("metrics.y_channel", c.metrics.y_channel);

  std::string variant = "ws";
  r.get("plan.variant", variant);
  try {
    c.plan.variant = parse_plan_variant(variant);
  } catch (const Error& e) {
    r.fail(r.line_of("plan.variant"), "plan.variant", e.what());
  }
  int stage_count = 3;
  r.get("plan.stages", stage_count);
  if (stage_count < 1 || stage_count > 16) {
    r.fail(r.line_of("plan.stages"), "plan.stages", "must be between 1 and 16");
  }
  // Plan-wide defaults, overridable per stage.
  std::int64_t iters = 1000;
  double lr = 5e-4;
  std::int64_t halve_every = 200000;
  std::int64_t eval_every = 0;
  r.get("plan.iters", iters);
  r.get("plan.lr", lr);
  r.get("plan.halve_every", halve_every);
  r.get("plan.eval_every", eval_every);
  for (int k = 1; k <= stage_count; ++k) {
    const std::string p = "stage." + std::to_string(k) + ".";
    StagePlan s;
    s.name = "stage" + std::to_string(k);
    s.loss = k == 3 ? LossKind::L1_CL : LossKind::L1;
    s.total_iters = iters;
    s.initial_lr = lr;
    s.halve_every = halve_every;
    s.eval_every = eval_every;
    s.seed = c.seed + static_cast<std::uint64_t>(k);
    s.warm_start = k > 1;
    r.get(p + "name", s.name);
    std::string loss = to_string(s.loss);
    r.get(p + "loss", loss);
    try {
      s.loss = parse_loss_kind(loss);
    } catch (const Error& e) {
      r.fail(r.line_of(p + "loss"), p + "loss", e.what());
    }
    r.get(p + "iters", s.total_iters);
    r.get(p + "lr", s.initial_lr);
    r.get(p + "halve_every", s.halve_every);
    r.get(p + "eval_every", s.eval_every);
    r.get(p + "seed", s.seed);
    r.get(p + "warm_start", s.warm_start);
    r.get(p + "cl.weight", s.cl.loss_weight);
    r.get(p + "cl.taps", s.cl.taps);
    r.get(p + "cl.lambdas", s.cl.lambdas);
    r.get(p + "cl.epsilon", s.cl.epsilon);
    r.get(p + "cl.extractor_seed", s.cl.extractor_seed);
    r.get(p + "cl.extractor_width", s.cl.extractor_width);
    c.plan.stages.push_back(s);
  }
  r.reject_unused();
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

inline void RunConfig::validate() const {
  model.validate();
  plan.validate();
  for (const DataSource* d : {&train, &eval}) {
    d->spec.validate();
    if (d->synthetic_count < 0) throw ConfigError("synthetic_count must be >= 0");
    if (d->synthetic_count == 0 && d->spec.root.empty()) throw ConfigError("data source needs a root or synthetic_count");
    if (d->synthetic_count > 0 && d->synthetic_size < model.scale * kEsaMinSize) {
      throw ConfigError("synthetic_size must be at least " + std::to_string(model.scale * kEsaMinSize));
    }
  }
  if (train.spec.patch_size > 0 && train.spec.patch_size / model.scale < kEsaMinSize) {
    throw ConfigError("train.patch_size " + std::to_string(train.spec.patch_size) + " gives LR patches below " +
                      std::to_string(kEsaMinSize) + " pixels");
  }
  if (metrics.border_crop < -1) throw ConfigError("metrics.border_crop must be >= 0");
  if (output_dir.empty()) throw ConfigError("output_dir is empty");
}

inline std::vector<SamplePair> DataSource::load() const {
  if (synthetic_count == 0) return load_pairs(spec);
  std::vector<SamplePair> out;
  int i = 0;
  for (const auto& img : synth_documents(synthetic_count, synthetic_size, synthetic_seed)) {
    out.push_back(degrade(img, spec.scale, "synthetic_" + std::to_string(i++)));
  }
  return out;
}

inline std::string RunConfig::describe() const {
  std::ostringstream os;
  os << "model=" << to_string(model.block_kind) << " blocks=" << model.num_blocks << " channels=" << model.channels
     << " esa_channels=" << model.esa_channels << " scale=" << model.scale
     << " params=" << build_model(model, 0).count_params() << "\n";
  os << "variant=" << to_string(plan.variant) << " stages=" << plan.stages.size() << "\n";
  for (const auto& s : plan.stages) {
    os << "stage=" << s.name << " loss=" << to_string(s.loss) << " iters=" << s.total_iters << " lr=" << s.initial_lr
       << " halve_every=" << s.halve_every << " warm_start=" << (s.warm_start ? "true" : "false");
    if (s.loss == LossKind::L1_CL) os << " cl_weight=" << s.cl.loss_weight;
    os << "\n";
  }
  if (plan.variant == PlanVariant::E2000) {
    const StagePlan s = collapse_plan(plan);
    os << "runs_as=" << s.name << " iters=" << s.total_iters << " halve_every=" << s.halve_every << "\n";
  }
  os << "output_dir=" << output_dir.string() << "\n";
  return os.str();
}

}  // namespace rlfn
