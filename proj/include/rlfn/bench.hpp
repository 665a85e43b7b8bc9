#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "rlfn/model.hpp"
#include "rlfn/random.hpp"

namespace rlfn {

struct Environment {
  int threads = 1;
  std::string compiler;
  std::string build;
  std::string cpu;
};

inline Environment environment() {
  Environment env;
#ifdef _OPENMP
  env.threads = omp_get_max_threads();
#endif
#if defined(__clang__)
  env.compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
  env.compiler = "gcc " __VERSION__;
#else
  env.compiler = "unknown";
#endif
#ifdef NDEBUG
  env.build = "release";
#else
  env.build = "debug";
#endif
#ifdef __AVX2__
  env.build += " avx2";
#endif
#ifdef __FMA__
  env.build += " fma";
#endif
#ifdef _OPENMP
  env.build += " openmp";
#endif
  std::ifstream cpuinfo("/proc/cpuinfo");
  for (std::string line; std::getline(cpuinfo, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) env.cpu = line.substr(colon + 2);
      break;
    }
  }
  if (env.cpu.empty()) env.cpu = "unknown";
  return env;
}

struct BenchResult {
  double mean_ms = 0.0;
  double std_ms = 0.0;  // population standard deviation
  std::vector<double> runs_ms;
  Environment env;
};

/// Wall-clock forward time on a fixed random (1, 3, h, w) input. Warmup runs are not recorded.
inline BenchResult bench_runtime(const Model& model, int lr_h, int lr_w, int warmup = 3, int repeats = 10) {
  if (repeats < 1) throw Error("bench: repeats must be >= 1");
  if (warmup < 0) throw Error("bench: warmup must be >= 0");
  if (lr_h < kEsaMinSize || lr_w < kEsaMinSize) {
    throw Error("bench: input " + std::to_string(lr_h) + "x" + std::to_string(lr_w) + " is below the minimum " +
                std::to_string(kEsaMinSize) + "x" + std::to_string(kEsaMinSize));
  }
  Rng rng(0);
  const Tensor x = random_uniform(Shape{1, model.config.in_channels, lr_h, lr_w}, rng, 0.0f, 1.0f);
  NoGradGuard no_grad;
  for (int i = 0; i < warmup; ++i) (void)forward(model, x);
  BenchResult res;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor y = forward(model, x);
    const auto t1 = std::chrono::steady_clock::now();
    res.runs_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  for (double v : res.runs_ms) res.mean_ms += v;
  res.mean_ms /= repeats;
  for (double v : res.runs_ms) res.std_ms += (v - res.mean_ms) * (v - res.mean_ms);
  res.std_ms = std::sqrt(res.std_ms / repeats);
  res.env = environment();
  return res;
}

}  // namespace rlfn
