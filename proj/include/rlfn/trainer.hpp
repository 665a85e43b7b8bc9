#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "rlfn/checkpoint.hpp"
#include "rlfn/data.hpp"
#include "rlfn/eval.hpp"
#include "rlfn/losses.hpp"
#include "rlfn/optim.hpp"

namespace rlfn {

class TrainingError : public Error {
 public:
  using Error::Error;
};

enum class LossKind { L1, L2, L1_CL };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::L1: return "l1";
    case LossKind::L2: return "l2";
    case LossKind::L1_CL: return "l1+cl";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "l1") return LossKind::L1;
  if (s == "l2") return LossKind::L2;
  if (s == "l1+cl") return LossKind::L1_CL;
  throw Error("unknown loss '" + s + "' (expected l1, l2 or l1+cl)");
}

// WS: warm-started stages with a fresh optimizer and schedule. CLR: the optimizer state is
// carried across stage boundaries while the schedule restarts. E2000: a single stage as long as
// the whole plan, halving the rate half as often.
enum class PlanVariant { WS, CLR, E2000 };

inline const char* to_string(PlanVariant v) {
  switch (v) {
    case PlanVariant::WS: return "ws";
    case PlanVariant::CLR: return "clr";
    case PlanVariant::E2000: return "e2000";
  }
  return "?";
}

inline PlanVariant parse_plan_variant(const std::string& s) {
  if (s == "ws") return PlanVariant::WS;
  if (s == "clr") return PlanVariant::CLR;
  if (s == "e2000") return PlanVariant::E2000;
  throw Error("unknown plan variant '" + s + "' (expected ws, clr or e2000)");
}

struct StagePlan {
  std::string name = "stage";
  LossKind loss = LossKind::L1;
  ContrastiveConfig cl;
  double initial_lr = 5e-4;
  std::int64_t halve_every = 200000;
  std::int64_t total_iters = 1000;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 0;  // 0: evaluate only at the start and end
  bool warm_start = false;

  void validate() const {
    if (total_iters < 1) throw Error("stage '" + name + "': total_iters must be >= 1");
    if (!(initial_lr > 0.0)) throw Error("stage '" + name + "': initial_lr must be positive");
    if (halve_every < 1) throw Error("stage '" + name + "': halve_every must be >= 1");
    if (eval_every < 0) throw Error("stage '" + name + "': eval_every must be >= 0");
    if (loss == LossKind::L1_CL) cl.validate();
  }
};

struct TrainPlan {
  std::vector<StagePlan> stages;
  PlanVariant variant = PlanVariant::WS;

  void validate() const {
    if (stages.empty()) throw Error("plan: no stages");
    if (stages.front().warm_start) throw Error("plan: the first stage cannot warm-start");
    for (std::size_t i = 0; i < stages.size(); ++i) {
      stages[i].validate();
      for (std::size_t j = 0; j < i; ++j) {
        if (stages[j].name == stages[i].name) throw Error("plan: duplicate stage name '" + stages[i].name + "'");
      }
    }
  }
};

/// Three stages: from scratch with L1, warm-started L1, warm-started L1 + w * CL.
inline TrainPlan default_plan(std::int64_t iters_per_stage, double initial_lr = 5e-4, std::uint64_t seed = 0) {
  TrainPlan plan;
  for (int k = 0; k < 3; ++k) {
    StagePlan s;
    s.name = "stage" + std::to_string(k + 1);
    s.loss = k == 2 ? LossKind::L1_CL : LossKind::L1;
    s.initial_lr = initial_lr;
    s.total_iters = iters_per_stage;
    s.seed = seed + static_cast<std::uint64_t>(k);
    s.warm_start = k > 0;
    plan.stages.push_back(s);
  }
  return plan;
}

/// The single stage an E2000 plan actually runs.
inline StagePlan collapse_plan(const TrainPlan& plan) {
  StagePlan s = plan.stages.front();
  s.name = "e2000";
  s.total_iters = 0;
  for (const auto& st : plan.stages) s.total_iters += st.total_iters;
  s.halve_every = 2 * s.halve_every;
  return s;
}

struct EvalRecord {
  std::int64_t iter = 0;
  double lr = 0.0;
  double loss = std::numeric_limits<double>::quiet_NaN();  // mean train loss since the previous record
  double psnr = std::numeric_limits<double>::quiet_NaN();
  double ssim = std::numeric_limits<double>::quiet_NaN();
};

inline std::string format_record(const std::string& stage, const EvalRecord& r) {
  auto num = [](double v, int prec) {
    if (std::isnan(v)) return std::string("-");
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
  };
  return "stage=" + stage + " iter=" + std::to_string(r.iter) + " lr=" + num(r.lr, 6) + " loss=" + num(r.loss, 8) +
         " psnr=" + num(r.psnr, 10) + " ssim=" + num(r.ssim, 8);
}

struct TrainLog {
  std::string stage;
  std::vector<double> step_losses;  // one per optimizer step
  std::vector<double> step_lrs;
  std::vector<EvalRecord> evals;    // iteration 0, every eval_every, and the final step
  std::filesystem::path checkpoint;

  std::string to_text() const {
    std::string out;
    for (const auto& r : evals) out += format_record(stage, r) + "\n";
    return out;
  }
};

struct StageContext {
  std::filesystem::path checkpoint_path;   // empty: no checkpoint written
  AdamState* carried = nullptr;            // optimizer state to continue from and update in place
  const FeatureExtractor* extractor = nullptr;
  MetricConfig metric{-1, true};           // border_crop < 0 means the model scale
  TileOptions tiles;
  std::function<void(const std::string&, const EvalRecord&)> on_eval;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Runs `stage.total_iters` Adam steps on `model` in place. Batches come from a stream seeded by
/// the dataset and stage seeds; the negative for the contrastive term is the bicubic upscale of
/// each LR patch.
inline TrainLog run_stage(Model& model, const StagePlan& stage, const std::vector<SamplePair>& train,
                          DatasetSpec data, const std::vector<SamplePair>& eval, const StageContext& ctx = {}) {
  stage.validate();
  if (data.scale != model.config.scale) {
    throw Error("train: data scale " + std::to_string(data.scale) + " differs from model scale " +
                std::to_string(model.config.scale));
  }
  data.seed = detail::mix_seed(data.seed, stage.seed);
  const bool use_cl = stage.loss == LossKind::L1_CL;
  BatchStream stream(train, data, use_cl);
  FeatureExtractor own;
  const FeatureExtractor* extractor = ctx.extractor;
  if (use_cl && !extractor) {
    own = build_random_extractor(stage.cl.extractor_seed, stage.cl.extractor_width);
    extractor = &own;
  }
  MetricConfig metric = ctx.metric;
  if (metric.border_crop < 0) metric.border_crop = model.config.scale;

  AdamState local;
  AdamState& state = ctx.carried ? *ctx.carried : local;
  const NamedParams params = model.named_tensors();

  TrainLog log;
  log.stage = stage.name;
  auto record = [&](std::int64_t iter, double lr, double loss) {
    EvalRecord r{iter, lr, loss};
    if (!eval.empty()) {
      const EvalResult e = evaluate(model, eval, metric, ctx.tiles);
      r.psnr = e.psnr;
      r.ssim = e.ssim;
    }
    log.evals.push_back(r);
    if (ctx.on_eval) ctx.on_eval(stage.name, r);
  };
  auto save = [&](nlohmann::json extra) {
    if (ctx.checkpoint_path.empty()) return;
    extra["stage"] = stage.name;
    extra["loss"] = to_string(stage.loss);
    save_checkpoint(model, ctx.checkpoint_path, extra);
    log.checkpoint = ctx.checkpoint_path;
  };

  record(0, lr_at(0, stage.initial_lr, stage.halve_every), std::numeric_limits<double>::quiet_NaN());
  double since_last = 0.0;
  std::int64_t steps_since = 0;
  for (std::int64_t it = 0; it < stage.total_iters; ++it) {
    const double lr = lr_at(it, stage.initial_lr, stage.halve_every);
    const Batch batch = stream.next();
    Tensor sr = forward(model, batch.lr);
    Tensor loss;
    switch (stage.loss) {
      case LossKind::L1: loss = l1_loss(sr, batch.hr); break;
      case LossKind::L2: loss = l2_loss(sr, batch.hr); break;
      case LossKind::L1_CL:
        loss = add(l1_loss(sr, batch.hr),
                   scale(contrastive_loss(sr, batch.hr, batch.bicubic, *extractor, stage.cl),
                         static_cast<float>(stage.cl.loss_weight)));
        break;
    }
    const double value = loss.item();
    if (!std::isfinite(value)) {
      // The weights have not been touched by this step, so they are the last good ones.
      save({{"aborted", true}, {"iteration", it}});
      throw TrainingError("train: non-finite loss at iteration " + std::to_string(it) + " of stage '" + stage.name +
                          "'");
    }
    model.zero_grad();
    backward(loss);
    adam_step(params, state, lr);
    log.step_losses.push_back(value);
    log.step_lrs.push_back(lr);
    since_last += value;
    ++steps_since;
    const std::int64_t done = it + 1;
    if ((stage.eval_every > 0 && done % stage.eval_every == 0) || done == stage.total_iters) {
      record(done, lr, since_last / static_cast<double>(steps_since));
      since_last = 0.0;
      steps_since = 0;
    }
  }
  model.zero_grad();
  nlohmann::json extra = {{"iterations", stage.total_iters}};
  if (!std::isnan(log.evals.back().psnr)) extra["psnr"] = log.evals.back().psnr;
  save(extra);
  return log;
}

struct PlanContext {
  std::filesystem::path output_dir;  // empty: nothing written
  std::uint64_t model_seed = 0;      // used by stages that do not warm-start
  MetricConfig metric{-1, true};
  TileOptions tiles;
  std::function<void(const std::string&, const EvalRecord&)> on_eval;
};

struct PlanResult {
  Model model;
  std::vector<TrainLog> logs;
  AdamState optimizer;  // state after the final stage
};

/// Runs every stage of `plan` starting from `model`. A warm-starting stage continues from the
/// previous stage's weights; other stages rebuild the model from `model_seed`.
inline PlanResult run_plan(Model model, const TrainPlan& plan, const std::vector<SamplePair>& train,
                           const DatasetSpec& data, const std::vector<SamplePair>& eval, const PlanContext& ctx = {}) {
  plan.validate();
  const std::vector<StagePlan> stages =
      plan.variant == PlanVariant::E2000 ? std::vector<StagePlan>{collapse_plan(plan)} : plan.stages;
  PlanResult result;
  AdamState carried;
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const StagePlan& s = stages[k];
    if (k > 0 && !s.warm_start) model = build_model(model.config, ctx.model_seed);
    AdamState fresh;
    StageContext sc;
    sc.carried = (plan.variant == PlanVariant::CLR && (k == 0 || s.warm_start)) ? &carried : &fresh;
    if (plan.variant == PlanVariant::CLR && k > 0 && !s.warm_start) carried = AdamState{};
    sc.metric = ctx.metric;
    sc.tiles = ctx.tiles;
    sc.on_eval = ctx.on_eval;
    if (!ctx.output_dir.empty()) sc.checkpoint_path = ctx.output_dir / (s.name + ".ckpt");
    TrainLog log = run_stage(model, s, train, data, eval, sc);
    if (!ctx.output_dir.empty()) {
      std::ofstream(ctx.output_dir / (s.name + ".log")) << log.to_text();
    }
    result.logs.push_back(std::move(log));
    result.optimizer = *sc.carried;
  }
  result.model = std::move(model);
  return result;
}

}  // namespace rlfn
