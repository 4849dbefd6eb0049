#include <cstdio>
#include <exception>

#include <CLI11.hpp>

#include "latentcast/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"latentcast: streaming occupancy forecasting engine"};
  app.set_version_flag("--version", latentcast::kVersion);
  app.require_subcommand(1);

  latentcast::GenerateOptions gen;
  auto* sub_gen = app.add_subcommand("generate", "Generate synthetic scenarios");
  sub_gen->add_option("--params", gen.params_file, "Scenario parameter file (key=value)");
  sub_gen->add_option("--count", gen.count, "Number of scenarios")->capture_default_str();
  sub_gen->add_option("--seed", gen.seed, "Generation seed")->capture_default_str();
  sub_gen->add_option("--out", gen.out_dir, "Output directory")->required();

  latentcast::TrainOptions tr;
  auto* sub_train = app.add_subcommand("train", "Train a model on generated scenarios");
  sub_train->add_option("--data", tr.data_dir, "Scenario directory (with index.txt)")->required();
  sub_train->add_option("--config", tr.config_file, "Training config file (key=value)");
  sub_train->add_option("--out", tr.out_dir, "Output directory")->required();
  sub_train->add_option("--resume", tr.resume, "Checkpoint to resume from");
  sub_train->add_option("--seed", tr.seed, "Override the config seed");
  sub_train->add_flag("--two-phase", tr.two_phase, "Distinct past/future propagation");
  sub_train->add_flag("--flow", tr.flow, "Train the occupancy-flow head");
  sub_train->add_flag("--class-aware", tr.class_aware, "Per-class occupancy decoders");
  sub_train->add_flag("--filter-observable", tr.filter_observable,
                      "Drop never-observed agents from the targets");

  latentcast::EvalCliOptions ev;
  auto* sub_eval = app.add_subcommand("eval", "Waypoint evaluation of trained weights");
  sub_eval->add_option("--weights", ev.weights, "Weights file")->required();
  sub_eval->add_option("--data", ev.data_dir, "Scenario directory")->required();
  sub_eval->add_option("--out", ev.out_dir, "Output directory")->required();
  sub_eval->add_option("--horizons", ev.horizons, "e.g. 1..8 or 1,2,4")->capture_default_str();
  sub_eval->add_option("--calibrate-beta", ev.calibrate_beta, "Calibration scale")
      ->capture_default_str();
  sub_eval->add_option("--grid-px", ev.grid_px, "Evaluation grid resolution")
      ->capture_default_str();
  sub_eval->add_option("--grid-m", ev.grid_m, "Evaluation grid extent (m)")
      ->capture_default_str();
  sub_eval->add_flag("--flow", ev.flow, "Also report flow end-point error");
  sub_eval->add_flag("--two-phase", ev.two_phase, "Use the two-phase schedule");
  sub_eval->add_flag("!--no-filter-observable", ev.filter_observable,
                     "Keep never-observed agents in the targets");

  latentcast::ForecastOptions fc;
  auto* sub_fc = app.add_subcommand("forecast", "Forecast one scenario and write rasters");
  sub_fc->add_option("--weights", fc.weights, "Weights file")->required();
  sub_fc->add_option("--scenario", fc.scenario, "Scenario file")->required();
  sub_fc->add_option("--out", fc.out_dir, "Output directory")->required();
  sub_fc->add_option("--horizon", fc.horizon_s, "Forecast horizon (s)")->capture_default_str();
  sub_fc->add_option("--past-s", fc.past_window_s, "Observed window (s)")->capture_default_str();
  sub_fc->add_option("--calibrate-beta", fc.calibrate_beta, "Calibration scale")
      ->capture_default_str();
  sub_fc->add_option("--grid-px", fc.grid_px, "Raster resolution")->capture_default_str();
  sub_fc->add_option("--grid-m", fc.grid_m, "Raster extent (m)")->capture_default_str();
  sub_fc->add_flag("--two-phase", fc.two_phase, "Use the two-phase schedule");

  latentcast::BenchCliOptions bn;
  auto* sub_bench = app.add_subcommand("bench", "Per-module latency benchmark");
  sub_bench->add_option("--weights", bn.weights, "Weights file (default: fresh full-size)");
  sub_bench->add_option("--out", bn.out_dir, "Output directory")->required();
  sub_bench->add_option("--iters", bn.iters, "Iterations (min 100)")->capture_default_str();
  sub_bench->add_option("--grid-px", bn.query_px, "Query raster resolution")
      ->capture_default_str();
  sub_bench->add_option("--modules", bn.modules, "Module subset (default: all)");
  sub_bench->add_option("--seed", bn.seed, "Input seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sub_gen) return latentcast::cmd_generate(gen);
    if (*sub_train) return latentcast::cmd_train(tr);
    if (*sub_eval) return latentcast::cmd_eval(ev);
    if (*sub_fc) return latentcast::cmd_forecast(fc);
    if (*sub_bench) return latentcast::cmd_bench(bn);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
