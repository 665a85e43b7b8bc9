#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "rlfn/rlfn.hpp"

namespace fs = std::filesystem;
using namespace rlfn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Thrown for bad flag combinations that CLI11 cannot express.
class UsageError : public Error {
 public:
  using Error::Error;
};

void apply_thread_override() {
  const char* env = std::getenv("RLFN_NUM_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError("RLFN_NUM_THREADS must be a positive integer, got '" + std::string(env) + "'");
#ifdef _OPENMP
  omp_set_num_threads(static_cast<int>(n));
#endif
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

// Eval data given either as a directory or as a generated corpus.
struct EvalDataFlags {
  std::string data;
  int synthetic = 0;
  int synthetic_size = 96;
  std::uint64_t synthetic_seed = 0;
  std::string glob = "*.png";

  void add_to(CLI::App* cmd) {
    cmd->add_option("--data", data, "Directory holding HR images (or an HR/ subdirectory)");
    cmd->add_option("--synthetic", synthetic, "Evaluate on this many generated document images instead");
    cmd->add_option("--synthetic-size", synthetic_size, "Side of generated images")->capture_default_str();
    cmd->add_option("--synthetic-seed", synthetic_seed, "Seed of generated images")->capture_default_str();
    cmd->add_option("--glob", glob, "File pattern inside the data directory")->capture_default_str();
  }

  std::vector<SamplePair> load(int scale) const {
    if (data.empty() == (synthetic == 0)) throw UsageError("give exactly one of --data or --synthetic");
    DataSource src;
    src.spec.root = data;
    src.spec.glob = glob;
    src.spec.scale = scale;
    src.spec.patch_size = 0;
    src.synthetic_count = synthetic;
    src.synthetic_size = synthetic_size;
    src.synthetic_seed = synthetic_seed;
    auto pairs = src.load();
    if (pairs.empty()) throw Error("eval set is empty");
    return pairs;
  }
};

MetricConfig metric_from(int border_crop, bool rgb, int scale) {
  return MetricConfig{border_crop < 0 ? scale : border_crop, !rgb};
}

// ---------------------------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string output_dir;
  bool dry_run = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;
  if (a.dry_run) {
    std::cout << cfg.describe();
    return kExitOk;
  }
  fs::create_directories(cfg.output_dir);
  fs::copy_file(a.config, cfg.output_dir / "config.cfg", fs::copy_options::overwrite_existing);

  const auto train = cfg.train.load();
  const auto eval = cfg.eval.load();
  if (train.empty()) throw Error("train: no training images");
  std::cout << "train_images=" << train.size() << " eval_images=" << eval.size() << "\n" << std::flush;

  PlanContext ctx;
  ctx.output_dir = cfg.output_dir;
  ctx.model_seed = cfg.seed;
  ctx.metric = cfg.metrics;
  ctx.on_eval = [](const std::string& stage, const EvalRecord& r) { std::cout << format_record(stage, r) << "\n" << std::flush; };
  const Model initial = build_model(cfg.model, cfg.seed);
  const PlanResult res = run_plan(initial.clone(), cfg.plan, train, cfg.train.spec, eval, ctx);

  MetricConfig metric = cfg.metrics;
  if (metric.border_crop < 0) metric.border_crop = cfg.model.scale;
  const EvalResult bic = evaluate_bicubic(eval, metric);
  const EvalResult fin = evaluate(res.model, eval, metric);

  nlohmann::json summary;
  summary["model"] = to_json(cfg.model);
  summary["params"] = res.model.count_params();
  summary["variant"] = to_string(cfg.plan.variant);
  summary["seed"] = cfg.seed;
  summary["metrics"] = {{"border_crop", metric.border_crop}, {"y_channel", metric.y_channel}};
  for (const auto& log : res.logs) {
    nlohmann::json s;
    s["name"] = log.stage;
    s["iterations"] = log.step_losses.size();
    s["checkpoint"] = log.checkpoint.filename().string();
    s["start"] = {{"psnr", log.evals.front().psnr}, {"ssim", log.evals.front().ssim}};
    s["end"] = {{"psnr", log.evals.back().psnr}, {"ssim", log.evals.back().ssim}};
    s["final_loss"] = log.evals.back().loss;
    summary["stages"].push_back(s);
  }
  summary["eval"] = {{"images", eval.size()},
                     {"psnr", fin.psnr},
                     {"ssim", fin.ssim},
                     {"bicubic_psnr", bic.psnr},
                     {"bicubic_ssim", bic.ssim}};
  std::ofstream(cfg.output_dir / "summary.json") << summary.dump(2) << "\n";
  std::cout << "final psnr=" << fmt(fin.psnr) << " ssim=" << fmt(fin.ssim) << " bicubic_psnr=" << fmt(bic.psnr)
            << " bicubic_ssim=" << fmt(bic.ssim) << "\n";
  std::cout << "summary=" << (cfg.output_dir / "summary.json").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string config;
  std::string baseline;
  int scale = 0;
  std::string save_sr;
  int border_crop = -1;
  bool rgb = false;
  EvalDataFlags data;
};

int cmd_eval(const EvalArgs& a) {
  const bool bicubic = a.baseline == "bicubic";
  if (!a.baseline.empty() && !bicubic) throw UsageError("unknown baseline '" + a.baseline + "' (expected bicubic)");
  if (bicubic == !a.checkpoint.empty()) throw UsageError("give exactly one of --checkpoint or --baseline bicubic");

  Model model;
  int scale = a.scale;
  if (!bicubic) {
    model = load_checkpoint(a.checkpoint);
    if (!a.config.empty()) {
      const RunConfig cfg = load_run_config(a.config);
      if (!(cfg.model == model.config)) {
        throw ConfigError("checkpoint '" + a.checkpoint + "' holds " + to_json(model.config).dump() +
                          " but config '" + a.config + "' describes " + to_json(cfg.model).dump());
      }
    }
    if (scale != 0 && scale != model.config.scale) {
      throw UsageError("--scale " + std::to_string(scale) + " disagrees with the checkpoint (x" +
                       std::to_string(model.config.scale) + ")");
    }
    scale = model.config.scale;
  } else if (scale < 1) {
    throw UsageError("--baseline bicubic needs --scale");
  }

  const auto pairs = a.data.load(scale);
  const MetricConfig metric = metric_from(a.border_crop, a.rgb, scale);
  if (!a.save_sr.empty()) fs::create_directories(a.save_sr);
  auto on_output = [&](const SamplePair& p, const ImageRGB8& sr) {
    if (a.save_sr.empty()) return;
    fs::path name = fs::path(p.source).filename();
    name.replace_extension(".png");
    save_png(sr, fs::path(a.save_sr) / name);
  };
  const EvalResult res =
      bicubic ? evaluate_with(bicubic_upscale, pairs, metric, on_output)
              : evaluate_with([&](const ImageRGB8& lr, int, int) { return super_resolve(model, lr); }, pairs, metric,
                              on_output);
  for (const auto& s : res.images) {
    std::cout << "image=" << fs::path(s.name).filename().string() << " psnr=" << fmt(s.psnr) << " ssim=" << fmt(s.ssim)
              << "\n";
  }
  std::cout << "mean images=" << res.images.size() << " psnr=" << fmt(res.psnr) << " ssim=" << fmt(res.ssim) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------

struct BenchArgs {
  std::string checkpoint;
  std::string config;
  std::string preset;
  int scale = 4;
  int height = 64;
  int width = 64;
  int repeats = 10;
  int warmup = 3;
};

int cmd_bench(const BenchArgs& a) {
  const int sources = !a.checkpoint.empty() + !a.config.empty() + !a.preset.empty();
  if (sources != 1) throw UsageError("give exactly one of --checkpoint, --config or --preset");
  Model model;
  if (!a.checkpoint.empty()) {
    model = load_checkpoint(a.checkpoint);
  } else if (!a.config.empty()) {
    model = build_model(load_run_config(a.config).model, 0);
  } else if (a.preset == "rlfn") {
    model = build_model(ModelConfig::rlfn(a.scale), 0);
  } else if (a.preset == "rlfn-s") {
    model = build_model(ModelConfig::rlfn_s(a.scale), 0);
  } else {
    throw UsageError("unknown preset '" + a.preset + "' (expected rlfn or rlfn-s)");
  }
  if (a.height < kEsaMinSize || a.width < kEsaMinSize) {
    throw UsageError("input size must be at least " + std::to_string(kEsaMinSize) + "x" + std::to_string(kEsaMinSize));
  }
  const BenchResult r = bench_runtime(model, a.height, a.width, a.warmup, a.repeats);
  std::cout << "block=" << to_string(model.config.block_kind) << "\n";
  std::cout << "blocks=" << model.config.num_blocks << "\n";
  std::cout << "channels=" << model.config.channels << "\n";
  std::cout << "scale=" << model.config.scale << "\n";
  std::cout << "params=" << model.count_params() << "\n";
  std::cout << "flops=" << count_flops(model, a.height, a.width) << "\n";
  std::cout << "height=" << a.height << "\nwidth=" << a.width << "\n";
  std::cout << "warmup=" << a.warmup << "\nrepeats=" << a.repeats << "\n";
  std::cout << "mean_ms=" << fmt(r.mean_ms, 4) << "\n";
  std::cout << "std_ms=" << fmt(r.std_ms, 4) << "\n";
  std::string runs;
  for (double v : r.runs_ms) runs += (runs.empty() ? "" : ",") + fmt(v, 4);
  std::cout << "runs_ms=" << runs << "\n";
  std::cout << "threads=" << r.env.threads << "\n";
  std::cout << "compiler=" << r.env.compiler << "\n";
  std::cout << "build=" << r.env.build << "\n";
  std::cout << "cpu=" << r.env.cpu << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------

struct PruneArgs {
  std::string checkpoint;
  std::vector<double> ratios{0.1, 0.2, 0.3, 0.5};
  double reference_ratio = -1.0;
  std::vector<std::string> layers;
  std::string output_dir = ".";
  int border_crop = -1;
  bool rgb = false;
  EvalDataFlags data;
};

int cmd_prune_scan(const PruneArgs& a) {
  Model model = load_checkpoint(a.checkpoint);
  const auto pairs = a.data.load(model.config.scale);
  PruneOptions opt;
  opt.ratios = a.ratios;
  opt.reference_ratio = a.reference_ratio;
  opt.metric = metric_from(a.border_crop, a.rgb, model.config.scale);
  opt.layers = a.layers;
  const SensitivityReport rep = prune_sensitivity(model, pairs, opt);

  const fs::path dir = a.output_dir;
  fs::create_directories(dir);
  std::ofstream(dir / "sensitivity.csv") << rep.to_csv();
  std::ofstream(dir / "sensitivity.svg") << sensitivity_svg(rep);
  if (rep.untrained_warning) std::cerr << "warning: " << rep.warning << "\n";
  std::cout << "baseline_psnr=" << fmt(rep.baseline_psnr) << " bicubic_psnr=" << fmt(rep.bicubic_psnr)
            << " reference_ratio=" << rep.reference_ratio << "\n";
  int rank = 1;
  for (const auto& layer : rep.ranking) {
    std::cout << "rank=" << rank++ << " layer=" << layer << " drop=" << fmt(rep.drop(layer, rep.reference_ratio))
              << (is_conv_group(layer) ? " convgroup" : "") << "\n";
  }
  std::cout << "csv=" << (dir / "sensitivity.csv").string() << "\n";
  std::cout << "svg=" << (dir / "sensitivity.svg").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------

struct DiffmapArgs {
  std::string a;
  std::string b;
  std::uint64_t seed = 0;
  int width = kDefaultExtractorWidth;
  std::string out;
};

int cmd_diffmap(const DiffmapArgs& a) {
  const ImageRGB8 ia = load_png(a.a);
  const ImageRGB8 ib = load_png(a.b);
  if (ia.width != ib.width || ia.height != ib.height) {
    throw ImageError("diffmap: '" + a.a + "' is " + std::to_string(ia.width) + "x" + std::to_string(ia.height) +
                     " but '" + a.b + "' is " + std::to_string(ib.width) + "x" + std::to_string(ib.height));
  }
  const FeatureExtractor ex = build_random_extractor(a.seed, a.width);
  const Plane map = difference_map(to_tensor(ia), to_tensor(ib), ex);
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_png(normalize_map(map), out);
  std::cout << "width=" << map.width << " height=" << map.height << " min=" << fmt(*lo) << " max=" << fmt(*hi)
            << " out=" << out.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RLFN super-resolution toolkit"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run a training plan from a config file");
  t->add_option("--config,-c", train.config, "Config file")->required();
  t->add_option("--output-dir,-o", train.output_dir, "Override output_dir from the config");
  t->add_flag("--dry-run", train.dry_run, "Print the resolved plan and exit");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score a checkpoint (or bicubic) on an image set");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file");
  e->add_option("--config", eval.config, "Config the checkpoint must agree with");
  e->add_option("--baseline", eval.baseline, "Score a baseline instead of a model (bicubic)");
  e->add_option("--scale", eval.scale, "Upscaling factor for --baseline");
  e->add_option("--save-sr", eval.save_sr, "Write super-resolved images here");
  e->add_option("--border-crop", eval.border_crop, "Pixels cropped per edge (default: scale)");
  e->add_flag("--rgb", eval.rgb, "Score on RGB instead of Y");
  eval.data.add_to(e);

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Time forward passes");
  b->add_option("--checkpoint", bench.checkpoint, "Checkpoint file");
  b->add_option("--config", bench.config, "Config file (model section)");
  b->add_option("--preset", bench.preset, "rlfn or rlfn-s");
  b->add_option("--scale", bench.scale, "Scale for --preset")->capture_default_str();
  b->add_option("--height", bench.height, "LR input height")->capture_default_str();
  b->add_option("--width", bench.width, "LR input width")->capture_default_str();
  b->add_option("--repeats", bench.repeats, "Timed runs")->capture_default_str()->check(CLI::PositiveNumber);
  b->add_option("--warmup", bench.warmup, "Untimed runs")->capture_default_str()->check(CLI::NonNegativeNumber);

  PruneArgs prune;
  auto* p = app.add_subcommand("prune-scan", "L1-norm filter pruning sensitivity per layer");
  p->add_option("--checkpoint", prune.checkpoint, "Checkpoint file")->required();
  p->add_option("--ratios", prune.ratios, "Prune ratios in [0, 1)")->delimiter(',')->capture_default_str();
  p->add_option("--reference-ratio", prune.reference_ratio, "Ratio used for the ranking (default: largest)");
  p->add_option("--layers", prune.layers, "Restrict the scan to these layers")->delimiter(',');
  p->add_option("--output-dir,-o", prune.output_dir, "Where the CSV and SVG go")->capture_default_str();
  p->add_option("--border-crop", prune.border_crop, "Pixels cropped per edge (default: scale)");
  p->add_flag("--rgb", prune.rgb, "Score on RGB instead of Y");
  prune.data.add_to(p);

  DiffmapArgs diff;
  auto* d = app.add_subcommand("diffmap", "Feature difference map of two images");
  d->add_option("image_a", diff.a, "First image")->required();
  d->add_option("image_b", diff.b, "Second image")->required();
  d->add_option("--seed", diff.seed, "Extractor seed")->capture_default_str();
  d->add_option("--width", diff.width, "Extractor width")->capture_default_str()->check(CLI::PositiveNumber);
  d->add_option("--out,-o", diff.out, "Output PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitUsage;
  }

  try {
    apply_thread_override();
    if (*t) return cmd_train(train);
    if (*e) return cmd_eval(eval);
    if (*b) return cmd_bench(bench);
    if (*p) return cmd_prune_scan(prune);
    if (*d) return cmd_diffmap(diff);
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& ex) {
    std::cerr << "usage error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
