#include <gtest/gtest.h>

#include "rlfn/config.hpp"

namespace rlfn {
namespace {

const char* kMinimal = R"(version = 1
train.synthetic_count = 4
eval.synthetic_count = 2
)";

std::string error_of(const std::string& text) {
  try {
    parse_run_config(text, "cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

TEST(Config, DefaultsFromMinimalFile) {
  const RunConfig c = parse_run_config(kMinimal);
  EXPECT_EQ(c.model, ModelConfig::rlfn(2));
  ASSERT_EQ(c.plan.stages.size(), 3u);
  EXPECT_EQ(c.plan.stages[0].loss, LossKind::L1);
  EXPECT_EQ(c.plan.stages[2].loss, LossKind::L1_CL);
  EXPECT_FALSE(c.plan.stages[0].warm_start);
  EXPECT_TRUE(c.plan.stages[1].warm_start);
  EXPECT_EQ(c.plan.variant, PlanVariant::WS);
  EXPECT_EQ(c.eval.spec.patch_size, 0);
}

TEST(Config, FullFile) {
  const RunConfig c = parse_run_config(R"(# comment
version = 1
seed = 9
output_dir = out/x
model.preset = rlfn-s
model.scale = 4
model.blocks = 2
model.channels = 16
train.root = data/div2k
train.patch_size = 128
train.batch_size = 8
eval.synthetic_count = 3
eval.synthetic_size = 64
metrics.border_crop = 4
metrics.y_channel = false
plan.variant = clr
plan.stages = 2
plan.iters = 50
stage.1.lr = 1e-3
stage.2.loss = l1+cl
stage.2.cl.taps = 0, 1
stage.2.cl.lambdas = 0.5, 0.5
stage.2.cl.weight = 100
)");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.model.channels, 16);
  EXPECT_EQ(c.model.num_blocks, 2);
  EXPECT_EQ(c.model.scale, 4);
  EXPECT_EQ(c.train.spec.scale, 4);
  EXPECT_EQ(c.train.spec.root, "data/div2k");
  EXPECT_EQ(c.metrics.border_crop, 4);
  EXPECT_FALSE(c.metrics.y_channel);
  EXPECT_EQ(c.plan.variant, PlanVariant::CLR);
  ASSERT_EQ(c.plan.stages.size(), 2u);
  EXPECT_EQ(c.plan.stages[0].initial_lr, 1e-3);
  EXPECT_EQ(c.plan.stages[1].total_iters, 50);
  EXPECT_EQ(c.plan.stages[1].cl.taps, (std::vector<int>{0, 1}));
  EXPECT_EQ(c.plan.stages[1].cl.loss_weight, 100.0);
  EXPECT_NE(c.describe().find("variant=clr"), std::string::npos);
}

TEST(Config, ErrorsNameLineAndKey) {
  EXPECT_NE(error_of("seed = 1\n").find("missing required key 'version'"), std::string::npos);
  EXPECT_NE(error_of("version = 2\n").find("cfg:1"), std::string::npos);
  const std::string unknown = error_of(std::string(kMinimal) + "model.widht = 3\n");
  EXPECT_NE(unknown.find("cfg:4: unknown key 'model.widht'"), std::string::npos) << unknown;
  const std::string dup = error_of(std::string(kMinimal) + "version = 1\n");
  EXPECT_NE(dup.find("cfg:4"), std::string::npos) << dup;
  const std::string bad = error_of(std::string(kMinimal) + "train.batch_size = many\n");
  EXPECT_NE(bad.find("field 'train.batch_size'"), std::string::npos) << bad;
  EXPECT_NE(error_of(std::string(kMinimal) + "plan.variant = warm\n").find("plan.variant"), std::string::npos);
  EXPECT_NE(error_of(std::string(kMinimal) + "garbage\n").find("cfg:4"), std::string::npos);
  EXPECT_FALSE(error_of("version = 1\ntrain.synthetic_count = 1\n").empty());
  EXPECT_FALSE(error_of(std::string(kMinimal) + "train.patch_size = 20\n").empty());
  EXPECT_FALSE(error_of(std::string(kMinimal) + "stage.1.warm_start = true\n").empty());
}

TEST(Config, MissingFileNamesPath) {
  try {
    load_run_config("/nonexistent/run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/run.cfg"), std::string::npos);
  }
}

TEST(Config, SyntheticSourceIsDeterministic) {
  const RunConfig c = parse_run_config(kMinimal);
  const auto a = c.train.load();
  const auto b = c.train.load();
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(a[3].hr, b[3].hr);
  EXPECT_EQ(a[0].lr.width, 48);
}

}  // namespace
}  // namespace rlfn
