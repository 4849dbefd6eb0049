#pragma once

#include <string>
#include <vector>

#include "latentcast/cli_support.hpp"

namespace latentcast {

struct GenerateOptions {
  std::string params_file;  // empty: defaults
  int count = 10;
  std::uint64_t seed = 1;
  std::string out_dir;
};

struct TrainOptions {
  std::string data_dir;
  std::string config_file;  // empty: defaults
  std::string out_dir;
  std::string resume;  // checkpoint path, empty: fresh run
  bool two_phase = false;
  bool flow = false;
  bool class_aware = false;
  bool filter_observable = false;  // OR-ed with the config file value
  std::uint64_t seed = 0;          // 0: use config value
};

struct EvalCliOptions {
  std::string weights;
  std::string data_dir;
  std::string out_dir;
  std::string horizons = "1..8";
  double calibrate_beta = 2.0;
  int grid_px = 64;
  double grid_m = 80.0;
  bool flow = false;
  bool two_phase = false;
  bool filter_observable = true;
};

struct ForecastOptions {
  std::string weights;
  std::string scenario;
  std::string out_dir;
  double horizon_s = 8.0;
  double past_window_s = 1.0;
  double calibrate_beta = 1.0;
  int grid_px = 64;
  double grid_m = 80.0;
  bool two_phase = false;
};

struct BenchCliOptions {
  std::string weights;  // empty: fresh full-size initialization
  std::string out_dir;
  int iters = 100;
  int query_px = 200;
  std::vector<std::string> modules;
  std::uint64_t seed = 7;
};

// Each command writes its manifest before any other output and returns a
// process exit code (0 on success).
int cmd_generate(const GenerateOptions& opts);
int cmd_train(const TrainOptions& opts);
int cmd_eval(const EvalCliOptions& opts);
int cmd_forecast(const ForecastOptions& opts);
int cmd_bench(const BenchCliOptions& opts);

// Scenario files listed by the index in a data directory.
std::vector<std::string> read_index(const std::string& data_dir);

}  // namespace latentcast
