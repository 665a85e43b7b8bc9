#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "rlfn/synth.hpp"
#include "rlfn/trainer.hpp"

namespace rlfn {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("rlfn_test_trainer_" + std::to_string(::getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

ModelConfig toy_config() {
  ModelConfig c;
  c.num_blocks = 1;
  c.channels = 4;
  c.esa_channels = 4;
  c.scale = 2;
  return c;
}

std::vector<SamplePair> doc_pairs(int count, int size, std::uint64_t seed) {
  std::vector<SamplePair> out;
  int i = 0;
  for (const auto& img : synth_documents(count, size, seed)) out.push_back(degrade(img, 2, "doc" + std::to_string(i++)));
  return out;
}

DatasetSpec toy_data() {
  DatasetSpec d;
  d.scale = 2;
  d.patch_size = 32;
  d.batch_size = 2;
  d.seed = 5;
  return d;
}

StagePlan toy_stage(const std::string& name, std::int64_t iters, bool warm = false) {
  StagePlan s;
  s.name = name;
  s.total_iters = iters;
  s.initial_lr = 1e-3;
  s.warm_start = warm;
  return s;
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor p(Shape{1, 1, 1, 3}, std::vector<float>{0.5f, -1.0f, 2.0f});
  p.set_requires_grad(true);
  p.mutable_grad();
  AdamState st;
  adam_step(std::vector<Tensor>{p}, st, 0.1);
  EXPECT_EQ(p.data()[0], 0.5f);
  EXPECT_EQ(p.data()[1], -1.0f);
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, FirstStepClosedForm) {
  Tensor p(Shape{1, 1, 1, 1}, 0.0f);
  p.set_requires_grad(true);
  p.mutable_grad()[0] = 1.0f;
  AdamState st;
  adam_step(std::vector<Tensor>{p}, st, 0.1);
  EXPECT_FLOAT_EQ(p.data()[0], static_cast<float>(-0.1 / (1.0 + 1e-8)));
  EXPECT_NEAR(p.data()[0], -0.0999999990, 1e-8);
}

TEST(Adam, FiveStepsMatchScalarOracle) {
  const double grads[5] = {0.3, -1.2, 0.05, 2.0, -0.7};
  Tensor p(Shape{1, 1, 1, 1}, 0.25f);
  p.set_requires_grad(true);
  AdamState st;
  double w = 0.25, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    const double g = static_cast<float>(grads[t - 1]);
    p.mutable_grad()[0] = static_cast<float>(g);
    adam_step(std::vector<Tensor>{p}, st, 0.01);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    w = static_cast<float>(w);
    EXPECT_NEAR(p.data()[0], w, 1e-7 * std::abs(w)) << t;
  }
}

TEST(Adam, SymmetricAndErrors) {
  Tensor a(Shape{1, 1, 1, 2}, 1.0f);
  Tensor b(Shape{1, 1, 1, 2}, 1.0f);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  a.mutable_grad()[0] = b.mutable_grad()[0] = 0.4f;
  a.mutable_grad()[1] = b.mutable_grad()[1] = -3.0f;
  AdamState st;
  adam_step(std::vector<Tensor>{a, b}, st, 0.05);
  EXPECT_EQ(a.data()[0], b.data()[0]);
  EXPECT_EQ(a.data()[1], b.data()[1]);
  a.mutable_grad()[1] = std::numeric_limits<float>::infinity();
  try {
    adam_step(NamedParams{{"head.weight", a}, {"head.bias", b}}, st, 0.05);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("'head.weight'"), std::string::npos);
  }
  EXPECT_THROW(adam_step(std::vector<Tensor>{a}, st, 0.05), ShapeError);
}

TEST(Adam, CarriedMomentsChangeTheNextStep) {
  // Same weight and gradient; only the optimizer state differs.
  auto step_from = [](AdamState st) {
    Tensor p(Shape{1, 1, 1, 1}, 1.0f);
    p.set_requires_grad(true);
    p.mutable_grad()[0] = 0.5f;
    adam_step(std::vector<Tensor>{p}, st, 0.1);
    return p.data()[0];
  };
  AdamState carried;
  {
    Tensor q(Shape{1, 1, 1, 1}, 0.0f);
    q.set_requires_grad(true);
    q.mutable_grad()[0] = -2.0f;
    adam_step(std::vector<Tensor>{q}, carried, 0.1);
  }
  EXPECT_NE(step_from(AdamState{}), step_from(carried));
}

TEST(Schedule, HalvingPoints) {
  EXPECT_DOUBLE_EQ(lr_at(0, 5e-4, 200000), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at(200000, 5e-4, 200000), 2.5e-4);
  EXPECT_DOUBLE_EQ(lr_at(399999, 5e-4, 200000), 2.5e-4);
  EXPECT_DOUBLE_EQ(lr_at(400000, 5e-4, 200000), 1.25e-4);
  double previous = 1.0;
  for (std::int64_t it = 0; it < 100; ++it) {
    const double v = lr_at(it, 1.0, 7);
    EXPECT_LE(v, previous);
    if (it > 0) EXPECT_EQ(v != previous, it % 7 == 0) << it;
    previous = v;
  }
  EXPECT_THROW(lr_at(-1, 1.0, 7), Error);
}

TEST(Evaluate, BaselineWiringAndCap) {
  const auto pairs = doc_pairs(2, 32, 1);
  const MetricConfig cfg{2, true};
  const EvalResult a = evaluate_bicubic(pairs, cfg);
  const EvalResult b = evaluate_with(bicubic_upscale, pairs, cfg);
  EXPECT_EQ(a.psnr, b.psnr);
  EXPECT_EQ(a.ssim, b.ssim);
  ASSERT_EQ(a.images.size(), 2u);
  EXPECT_EQ(a.psnr, (psnr(bicubic_resize(pairs[0].lr, 32, 32), pairs[0].hr, cfg) +
                     psnr(bicubic_resize(pairs[1].lr, 32, 32), pairs[1].hr, cfg)) / 2);
  const EvalResult exact = evaluate_with([&](const ImageRGB8&, int, int) { return pairs[0].hr; }, {pairs[0]}, cfg);
  EXPECT_EQ(exact.psnr, 100.0);
  const Model m = build_model(toy_config(), 3);
  EXPECT_EQ(evaluate(m, pairs, cfg).psnr, evaluate(m, pairs, cfg).psnr);
  EXPECT_THROW(evaluate(m, {}, cfg), Error);
}

TEST(Evaluate, TilesCoverImageOnce) {
  TileOptions opt{32, 40, 8};
  for (int len : {16, 40, 41, 100, 131}) {
    const auto spans = detail::tile_spans(len, opt);
    int expect = 0;
    for (const auto& s : spans) {
      EXPECT_EQ(s.core_lo, expect);
      EXPECT_LE(s.lo, s.core_lo);
      EXPECT_GE(s.hi, s.core_hi);
      EXPECT_GE(s.hi - s.lo, std::min(len, kEsaMinSize));
      EXPECT_LE(s.hi - s.lo, opt.tile);
      expect = s.core_hi;
    }
    EXPECT_EQ(expect, len);
  }
  const Model m = build_model(toy_config(), 3);
  const auto pairs = doc_pairs(1, 96, 2);
  const ImageRGB8 tiled = super_resolve(m, pairs[0].lr, opt);
  EXPECT_EQ(tiled.width, 96);
  EXPECT_EQ(tiled, super_resolve(m, pairs[0].lr, opt));
}

TEST(RunStage, OneIterationIsOneStep) {
  Model m = build_model(toy_config(), 1);
  const Model before = m.clone();
  const TrainLog log = run_stage(m, toy_stage("s", 1), doc_pairs(4, 32, 3), toy_data(), doc_pairs(1, 32, 4));
  EXPECT_EQ(log.step_losses.size(), 1u);
  ASSERT_EQ(log.evals.size(), 2u);
  EXPECT_EQ(log.evals[0].iter, 0);
  EXPECT_EQ(log.evals[1].iter, 1);
  EXPECT_FALSE(std::isnan(log.evals[1].psnr));
  EXPECT_NE(m.head.weight.data()[0], before.head.weight.data()[0]);
  StagePlan bad = toy_stage("s", 0);
  EXPECT_THROW(run_stage(m, bad, doc_pairs(2, 32, 3), toy_data(), {}), Error);
}

TEST(RunStage, EvalCadenceAndLogText) {
  Model m = build_model(toy_config(), 1);
  StagePlan s = toy_stage("warm", 7);
  s.eval_every = 3;
  const TrainLog log = run_stage(m, s, doc_pairs(4, 32, 3), toy_data(), doc_pairs(1, 32, 4));
  std::vector<std::int64_t> iters;
  for (const auto& r : log.evals) iters.push_back(r.iter);
  EXPECT_EQ(iters, (std::vector<std::int64_t>{0, 3, 6, 7}));
  const std::string text = log.to_text();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  EXPECT_NE(text.find("stage=warm iter=0 lr=0.001 loss=- psnr="), std::string::npos) << text;
}

TEST(RunStage, BitwiseReproducibleCheckpoints) {
  const auto train = doc_pairs(4, 32, 3);
  const auto eval = doc_pairs(1, 32, 4);
  std::string bytes[2];
  for (int run = 0; run < 2; ++run) {
    Model m = build_model(toy_config(), 9);
    StageContext ctx;
    ctx.checkpoint_path = scratch("repro" + std::to_string(run)) / "s.ckpt";
    run_stage(m, toy_stage("s", 5), train, toy_data(), eval, ctx);
    bytes[run] = slurp(ctx.checkpoint_path);
  }
  EXPECT_FALSE(bytes[0].empty());
  EXPECT_EQ(bytes[0], bytes[1]);
}

TEST(RunStage, NonFiniteLossAbortsKeepingWeights) {
  Model m = build_model(toy_config(), 1);
  m.tail.bias.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  StageContext ctx;
  ctx.checkpoint_path = scratch("nan") / "s.ckpt";
  EXPECT_THROW(run_stage(m, toy_stage("s", 3), doc_pairs(2, 32, 3), toy_data(), {}, ctx), TrainingError);
  const CheckpointFile f = read_checkpoint(ctx.checkpoint_path);
  EXPECT_EQ(f.header["extra"]["aborted"], true);
  EXPECT_EQ(f.header["extra"]["iteration"], 0);
}

TEST(RunStage, ContrastiveStageLeavesExtractorFrozen) {
  Model m = build_model(toy_config(), 1);
  const Model before = m.clone();
  const FeatureExtractor ex = build_random_extractor(3, 8);
  std::vector<std::vector<float>> snapshot;
  for (const auto& t : ex.tensors()) snapshot.emplace_back(t.data().begin(), t.data().end());
  StagePlan s = toy_stage("cl", 4);
  s.loss = LossKind::L1_CL;
  StageContext ctx;
  ctx.extractor = &ex;
  const TrainLog log = run_stage(m, s, doc_pairs(4, 32, 3), toy_data(), {}, ctx);
  for (std::size_t i = 0; i < snapshot.size(); ++i) {
    const auto d = ex.tensors()[i].data();
    EXPECT_TRUE(std::equal(d.begin(), d.end(), snapshot[i].begin()));
  }
  EXPECT_NE(m.tail.weight.data()[0], before.tail.weight.data()[0]);
  for (double l : log.step_losses) EXPECT_TRUE(std::isfinite(l));
}

TrainPlan two_stage(PlanVariant v) {
  TrainPlan p;
  p.variant = v;
  p.stages = {toy_stage("one", 3), toy_stage("two", 1, true)};
  return p;
}

TEST(RunPlan, SingleStageEqualsRunStage) {
  const auto train = doc_pairs(4, 32, 3);
  const auto eval = doc_pairs(1, 32, 4);
  Model direct = build_model(toy_config(), 2);
  const TrainLog a = run_stage(direct, toy_stage("only", 3), train, toy_data(), eval);
  TrainPlan p;
  p.stages = {toy_stage("only", 3)};
  const PlanResult r = run_plan(build_model(toy_config(), 2), p, train, toy_data(), eval);
  ASSERT_EQ(r.logs.size(), 1u);
  EXPECT_EQ(r.logs[0].step_losses, a.step_losses);
  EXPECT_EQ(r.logs[0].evals.back().psnr, a.evals.back().psnr);
}

TEST(RunPlan, WarmStartIsLosslessAndResetsSchedule) {
  const auto train = doc_pairs(4, 32, 3);
  const auto eval = doc_pairs(1, 32, 4);
  TrainPlan p = two_stage(PlanVariant::WS);
  p.stages[0].halve_every = 2;
  const PlanResult r = run_plan(build_model(toy_config(), 2), p, train, toy_data(), eval);
  ASSERT_EQ(r.logs.size(), 2u);
  EXPECT_EQ(r.logs[1].evals.front().psnr, r.logs[0].evals.back().psnr);
  EXPECT_EQ(r.logs[1].evals.front().ssim, r.logs[0].evals.back().ssim);
  EXPECT_EQ(r.logs[0].step_lrs.back(), 5e-4);
  EXPECT_EQ(r.logs[1].step_lrs.front(), p.stages[1].initial_lr);
  EXPECT_EQ(r.optimizer.t, 1);
}

TEST(RunPlan, ClrDiffersFromWsAfterBoundary) {
  const auto train = doc_pairs(4, 32, 3);
  const PlanResult ws = run_plan(build_model(toy_config(), 2), two_stage(PlanVariant::WS), train, toy_data(), {});
  const PlanResult clr = run_plan(build_model(toy_config(), 2), two_stage(PlanVariant::CLR), train, toy_data(), {});
  EXPECT_EQ(ws.logs[0].step_losses, clr.logs[0].step_losses);
  EXPECT_EQ(ws.logs[1].step_losses, clr.logs[1].step_losses);  // same weights going in
  EXPECT_EQ(clr.optimizer.t, 4);
  EXPECT_EQ(ws.optimizer.t, 1);
  const auto a = ws.model.head.weight.data();
  const auto b = clr.model.head.weight.data();
  EXPECT_FALSE(std::equal(a.begin(), a.end(), b.begin()));
}

TEST(RunPlan, E2000CollapsesToOneLongStage) {
  TrainPlan p = two_stage(PlanVariant::E2000);
  const StagePlan s = collapse_plan(p);
  EXPECT_EQ(s.total_iters, 4);
  EXPECT_EQ(s.halve_every, 400000);
  const PlanResult r = run_plan(build_model(toy_config(), 2), p, doc_pairs(4, 32, 3), toy_data(), {});
  ASSERT_EQ(r.logs.size(), 1u);
  EXPECT_EQ(r.logs[0].step_losses.size(), 4u);
}

TEST(RunPlan, ValidationAndArtifacts) {
  TrainPlan p = two_stage(PlanVariant::WS);
  p.stages[0].warm_start = true;
  EXPECT_THROW(p.validate(), Error);
  p.stages[0].warm_start = false;
  p.stages[1].name = "one";
  EXPECT_THROW(p.validate(), Error);
  p.stages[1].name = "two";
  PlanContext ctx;
  ctx.output_dir = scratch("plan");
  run_plan(build_model(toy_config(), 2), p, doc_pairs(4, 32, 3), toy_data(), doc_pairs(1, 32, 4), ctx);
  EXPECT_TRUE(fs::exists(ctx.output_dir / "one.ckpt"));
  EXPECT_TRUE(fs::exists(ctx.output_dir / "two.ckpt"));
  EXPECT_NE(slurp(ctx.output_dir / "two.log").find("stage=two iter=1"), std::string::npos);
}

TEST(RunStage, TrainingImprovesOnHeldOutImage) {
  ModelConfig c = toy_config();
  c.num_blocks = 2;
  c.channels = 16;
  c.esa_channels = 16;
  Model m = build_model(c, 0);
  StagePlan s = toy_stage("smoke", 150);
  s.initial_lr = 2e-3;
  DatasetSpec d = toy_data();
  d.batch_size = 4;
  const TrainLog log = run_stage(m, s, doc_pairs(16, 48, 10), d, doc_pairs(1, 48, 11));
  EXPECT_GT(log.evals.back().psnr, log.evals.front().psnr + 3.0);
}

}  // namespace
}  // namespace rlfn
