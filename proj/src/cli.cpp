#include "latentcast/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "latentcast/metrics.hpp"
#include "latentcast/training.hpp"

namespace latentcast {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

ScenarioParams scenario_params_from(const KeyValueConfig& kv) {
  kv.ensure_known({"duration_s", "rate_hz", "roi_extent_m", "min_agents", "max_agents",
                   "speed_min", "speed_max", "v_max", "w_const_velocity", "w_stop_go", "w_turn",
                   "w_queue", "pedestrian_prob", "cyclist_prob", "with_signals", "occlude",
                   "final_observed_fraction", "onset_min_frac", "temporary_gap_prob", "gap_min_s",
                   "gap_max_s", "never_observed_prob", "force_onset_s"});
  ScenarioParams p;
  p.duration_s = kv.get_double("duration_s", p.duration_s);
  p.rate_hz = kv.get_double("rate_hz", p.rate_hz);
  const double extent = kv.get_double("roi_extent_m", p.roi.extent_x);
  p.roi.extent_x = p.roi.extent_y = extent;
  p.min_agents = kv.get_int("min_agents", p.min_agents);
  p.max_agents = kv.get_int("max_agents", p.max_agents);
  p.speed_min = kv.get_double("speed_min", p.speed_min);
  p.speed_max = kv.get_double("speed_max", p.speed_max);
  p.v_max = kv.get_double("v_max", p.v_max);
  p.w_const_velocity = kv.get_double("w_const_velocity", p.w_const_velocity);
  p.w_stop_go = kv.get_double("w_stop_go", p.w_stop_go);
  p.w_turn = kv.get_double("w_turn", p.w_turn);
  p.w_queue = kv.get_double("w_queue", p.w_queue);
  p.pedestrian_prob = kv.get_double("pedestrian_prob", p.pedestrian_prob);
  p.cyclist_prob = kv.get_double("cyclist_prob", p.cyclist_prob);
  p.with_signals = kv.get_bool("with_signals", p.with_signals);
  p.occlude = kv.get_bool("occlude", p.occlude);
  p.occlusion.final_observed_fraction =
      kv.get_double("final_observed_fraction", p.occlusion.final_observed_fraction);
  p.occlusion.onset_min_frac = kv.get_double("onset_min_frac", p.occlusion.onset_min_frac);
  p.occlusion.temporary_gap_prob =
      kv.get_double("temporary_gap_prob", p.occlusion.temporary_gap_prob);
  p.occlusion.gap_min_s = kv.get_double("gap_min_s", p.occlusion.gap_min_s);
  p.occlusion.gap_max_s = kv.get_double("gap_max_s", p.occlusion.gap_max_s);
  p.occlusion.never_observed_prob =
      kv.get_double("never_observed_prob", p.occlusion.never_observed_prob);
  p.occlusion.force_onset_s = kv.get_double("force_onset_s", p.occlusion.force_onset_s);
  return p;
}

std::vector<Scenario> load_dataset(const std::string& data_dir) {
  std::vector<Scenario> out;
  for (const auto& name : read_index(data_dir)) {
    out.push_back(load_scenario(join(data_dir, name)));
  }
  return out;
}

}  // namespace

std::vector<std::string> read_index(const std::string& data_dir) {
  const std::string index_path = join(data_dir, "index.txt");
  std::ifstream is(index_path);
  if (!is) throw IoError("cannot open scenario index: " + index_path);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) names.push_back(line);
  }
  return names;
}

int cmd_generate(const GenerateOptions& opts) {
  ensure_dir(opts.out_dir);
  KeyValueConfig kv;
  if (!opts.params_file.empty()) kv = KeyValueConfig::from_file(opts.params_file);
  const ScenarioParams params = scenario_params_from(kv);

  RunManifest manifest{"generate", fnv1a_hex(kv.canonical()), opts.seed, "", opts.out_dir,
                       kVersion};
  write_manifest(manifest, join(opts.out_dir, "manifest.json"));

  std::vector<std::string> names;
  for (int i = 0; i < opts.count; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scenario_%04d.jsonl", i);
    const Scenario sc =
        generate_scenario(params, derive_seed(opts.seed, static_cast<std::uint64_t>(i)));
    save_scenario(sc, join(opts.out_dir, buf));
    names.emplace_back(buf);
  }
  std::ofstream index(join(opts.out_dir, "index.txt"));
  if (!index) throw IoError("cannot write index in " + opts.out_dir);
  for (const auto& n : names) index << n << "\n";
  std::printf("generated %d scenarios in %s\n", opts.count, opts.out_dir.c_str());
  return 0;
}

int cmd_train(const TrainOptions& opts) {
  ensure_dir(opts.out_dir);
  KeyValueConfig kv;
  if (!opts.config_file.empty()) kv = KeyValueConfig::from_file(opts.config_file);
  kv.ensure_known({"preset", "n_latent", "c_latent", "raster_px", "use_road", "use_signals",
                   "class_aware", "gamma", "alpha", "lr", "epochs", "poly_power", "batch_size",
                   "sampled_steps", "flow_weight", "two_phase", "seed", "past_window_s",
                   "horizon_s", "grid_px", "grid_m", "filter_observable", "weight_decay",
                   "val_fraction"});

  ModelConfig mcfg =
      kv.get_string("preset", "tiny") == "full" ? ModelConfig::full() : ModelConfig::tiny();
  mcfg.n_latent = kv.get_int("n_latent", mcfg.n_latent);
  mcfg.c_latent = kv.get_int("c_latent", mcfg.c_latent);
  mcfg.raster_px = kv.get_int("raster_px", mcfg.raster_px);
  mcfg.use_road = kv.get_bool("use_road", mcfg.use_road);
  mcfg.use_signals = kv.get_bool("use_signals", mcfg.use_signals);
  mcfg.class_aware = kv.get_bool("class_aware", mcfg.class_aware) || opts.class_aware;

  TrainConfig tcfg;
  tcfg.gamma = kv.get_double("gamma", tcfg.gamma);
  tcfg.alpha = kv.get_double("alpha", tcfg.alpha);
  tcfg.lr = kv.get_double("lr", tcfg.lr);
  tcfg.epochs = kv.get_int("epochs", tcfg.epochs);
  tcfg.poly_power = kv.get_double("poly_power", tcfg.poly_power);
  tcfg.batch_size = kv.get_int("batch_size", tcfg.batch_size);
  tcfg.sampled_steps = kv.get_int("sampled_steps", tcfg.sampled_steps);
  tcfg.flow_weight = kv.get_double("flow_weight", opts.flow ? tcfg.flow_weight : 0.0);
  tcfg.two_phase = kv.get_bool("two_phase", false) || opts.two_phase;
  tcfg.seed = opts.seed ? opts.seed : static_cast<std::uint64_t>(kv.get_int("seed", 1));
  tcfg.past_window_s = kv.get_double("past_window_s", tcfg.past_window_s);
  tcfg.horizon_s = kv.get_double("horizon_s", tcfg.horizon_s);
  tcfg.grid.px = kv.get_int("grid_px", tcfg.grid.px);
  tcfg.grid.extent_m = kv.get_double("grid_m", tcfg.grid.extent_m);
  tcfg.filter_observable = kv.get_bool("filter_observable", false) || opts.filter_observable;
  tcfg.weight_decay = kv.get_double("weight_decay", tcfg.weight_decay);
  tcfg.val_fraction = kv.get_double("val_fraction", tcfg.val_fraction);

  RunManifest manifest{"train", fnv1a_hex(kv.canonical()), tcfg.seed, "", opts.out_dir, kVersion};
  write_manifest(manifest, join(opts.out_dir, "manifest.json"));

  const std::vector<Scenario> dataset = load_dataset(opts.data_dir);

  ModelWeights<float> resume_w;
  AdamW resume_opt;
  int start_epoch = 0;
  const bool resuming = !opts.resume.empty();
  if (resuming) {
    std::map<std::string, Tensor<float>> extra;
    resume_w = ModelWeights<float>::load(opts.resume, &extra);
    resume_opt.restore(extra);
    auto it = extra.find("train.epoch");
    if (it == extra.end()) throw IoError("checkpoint lacks a train.epoch marker");
    start_epoch = static_cast<int>(it->second.at(0)) + 1;
  }

  auto checkpoint = [&](int epoch, ModelWeights<float>& w, const AdamW& opt,
                        const std::vector<EpochStats>& history) {
    std::map<std::string, Tensor<float>> extra;
    opt.serialize(extra);
    extra["train.epoch"] = Tensor<float>::scalar(static_cast<float>(epoch));
    char buf[48];
    std::snprintf(buf, sizeof(buf), "checkpoint_epoch_%03d.lcwt", epoch);
    w.save(join(opts.out_dir, buf), &extra);
    std::ofstream csv(join(opts.out_dir, "curves.csv"));
    csv << "epoch,loss,soft_iou,auc,lr\n";
    for (const auto& h : history) {
      csv << h.epoch << "," << h.loss << "," << h.val_soft_iou << "," << h.val_auc << "," << h.lr
          << "\n";
    }
    std::printf("epoch %d: loss %.5f val_soft_iou %.4f val_auc %.4f lr %.2e\n", epoch,
                history.back().loss, history.back().val_soft_iou, history.back().val_auc,
                history.back().lr);
    std::fflush(stdout);
  };

  TrainResult result =
      train(dataset, mcfg, tcfg, checkpoint, resuming ? &resume_w : nullptr,
            resuming ? &resume_opt : nullptr, start_epoch);
  result.weights.save(join(opts.out_dir, "weights.lcwt"));
  if (tcfg.epochs == 0) {
    // Initialization-only run still leaves a usable checkpoint behind.
    std::ofstream csv(join(opts.out_dir, "curves.csv"));
    csv << "epoch,loss,soft_iou,auc,lr\n";
  }
  std::printf("final weights: %s\n", join(opts.out_dir, "weights.lcwt").c_str());
  return 0;
}

int cmd_eval(const EvalCliOptions& opts) {
  ensure_dir(opts.out_dir);
  const ModelWeights<float> w = ModelWeights<float>::load(opts.weights);
  const std::vector<double> horizons = parse_horizons(opts.horizons);

  RunManifest manifest{"eval", fnv1a_hex(opts.horizons), 0, opts.weights, opts.out_dir, kVersion};
  write_manifest(manifest, join(opts.out_dir, "manifest.json"));

  const std::vector<Scenario> dataset = load_dataset(opts.data_dir);
  EvalOptions eopt;
  eopt.beta = opts.calibrate_beta;
  eopt.two_phase = opts.two_phase;
  eopt.filter_observable = opts.filter_observable;
  eopt.flow = opts.flow;
  eopt.grid = GridGeometry{w.config.roi.center_x, w.config.roi.center_y, opts.grid_m,
                           opts.grid_px};
  const WaypointReport report = waypoint_eval(w, dataset, horizons, eopt);

  std::ofstream csv(join(opts.out_dir, "metrics.csv"));
  if (!csv) throw IoError("cannot write metrics.csv in " + opts.out_dir);
  csv << "scenario_id,horizon_s,soft_iou,soft_iou_calibrated,auc,flow_epe\n";
  for (const auto& r : report.rows) {
    csv << r.scenario_id << "," << r.horizon_s << "," << r.soft_iou << ","
        << r.soft_iou_calibrated << ",";
    if (r.auc_defined) csv << r.auc;
    else csv << "nan";
    csv << ",";
    if (r.flow_defined) csv << r.flow_epe;
    else csv << "nan";
    csv << "\n";
  }
  for (std::size_t i = 0; i < report.horizons.size(); ++i) {
    std::printf("+%.1fs  soft_iou %.4f  calibrated(beta=%.1f) %.4f  auc %.4f", report.horizons[i],
                report.mean_soft_iou[i], opts.calibrate_beta,
                report.mean_soft_iou_calibrated[i], report.mean_auc[i]);
    if (opts.flow) std::printf("  flow_epe %.3f m", report.mean_flow_epe[i]);
    std::printf("\n");
  }
  return 0;
}

int cmd_forecast(const ForecastOptions& opts) {
  ensure_dir(opts.out_dir);
  const ModelWeights<float> w = ModelWeights<float>::load(opts.weights);
  const Scenario sc = load_scenario(opts.scenario);

  RunManifest manifest{"forecast", fnv1a_hex(opts.scenario), sc.seed, opts.weights, opts.out_dir,
                       kVersion};
  write_manifest(manifest, join(opts.out_dir, "manifest.json"));

  StreamSession session(w, sc.splines,
                        ObservationBundle{0, sc.agent_observations(0), sc.signal_observations(0)});
  if (opts.two_phase) session.configure_two_phase();
  const std::int64_t present_ms =
      static_cast<std::int64_t>(opts.past_window_s * 1000.0 + 0.5);
  for (std::int64_t t = session.ingest_period_ms(); t <= present_ms;
       t += session.ingest_period_ms()) {
    const int f = sc.frame_at(t);
    session.ingest(ObservationBundle{t, sc.agent_observations(f), sc.signal_observations(f)});
  }

  const GridGeometry grid{w.config.roi.center_x, w.config.roi.center_y, opts.grid_m,
                          opts.grid_px};
  const QueryGrid query = QueryGrid::raster(grid, w.config.roi);
  session.set_calibration_beta(static_cast<float>(opts.calibrate_beta));
  const auto probs = session.forecast(opts.horizon_s, query);

  // Road overlay for the comparison images.
  const RoadRaster road = rasterize_roadgraph(sc.splines, RegionOfInterest{grid.center_x,
                                              grid.center_y, grid.extent_m, grid.extent_m},
                                              grid.px);

  const int present_frame = sc.frame_at(present_ms);
  for (std::size_t step = 0; step < probs.size(); ++step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "step_%02zu.pgm", step);
    write_pgm(join(opts.out_dir, buf), grid.px, grid.px, probs[step]);

    const std::int64_t t = present_ms + static_cast<std::int64_t>(step) *
                                            session.forecast_period_ms();
    if (t > sc.frames.back().t_ms) continue;
    TargetOptions topt;
    topt.filter_observable = true;
    topt.present_frame = present_frame;
    const TargetGrids target = render_targets(sc, grid, sc.frame_at(t), topt);
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(grid.cells()) * 3, 255);
    for (std::int64_t i = 0; i < grid.cells(); ++i) {
      const bool pred = probs[step][static_cast<std::size_t>(i)] > 0.5f;
      const bool truth = target.occupancy[static_cast<std::size_t>(i)] > 0.5f;
      std::uint8_t r = 255, g = 255, b = 255;
      if (road.image[static_cast<std::size_t>(i)] > 0.5f) r = g = b = 0;
      if (pred && truth) {  // true positive
        r = 0; g = 168; b = 0;
      } else if (pred) {  // false positive
        r = 0; g = 0; b = 255;
      } else if (truth) {  // false negative
        r = 255; g = 0; b = 0;
      }
      rgb[static_cast<std::size_t>(i) * 3 + 0] = r;
      rgb[static_cast<std::size_t>(i) * 3 + 1] = g;
      rgb[static_cast<std::size_t>(i) * 3 + 2] = b;
    }
    std::snprintf(buf, sizeof(buf), "cmp_%02zu.ppm", step);
    write_ppm(join(opts.out_dir, buf), grid.px, grid.px, rgb);
  }
  std::printf("wrote %zu forecast steps to %s\n", probs.size(), opts.out_dir.c_str());
  return 0;
}

int cmd_bench(const BenchCliOptions& opts) {
  ensure_dir(opts.out_dir);
  RunManifest manifest{"bench", fnv1a_hex(std::to_string(opts.iters)), opts.seed, opts.weights,
                       opts.out_dir, kVersion};
  write_manifest(manifest, join(opts.out_dir, "manifest.json"));

  ModelWeights<float> w = opts.weights.empty()
                              ? ModelWeights<float>::init(ModelConfig::full(), opts.seed)
                              : ModelWeights<float>::load(opts.weights);
  BenchConfig bcfg;
  bcfg.iters = std::max(100, opts.iters);
  bcfg.query_px = opts.query_px;
  bcfg.seed = opts.seed;
  const LatencyReport report = bench(w, opts.modules, bcfg);

  std::ofstream csv(join(opts.out_dir, "latency.csv"));
  if (!csv) throw IoError("cannot write latency.csv in " + opts.out_dir);
  csv << "module,iters,mean_ms,p50_ms,p99_ms,config\n";
  for (const auto& row : report.rows) {
    csv << row.module << "," << row.iters << "," << row.mean_ms << "," << row.p50_ms << ","
        << row.p99_ms << "," << report.config << "\n";
    std::printf("%-22s mean %8.3f ms  p50 %8.3f ms  p99 %8.3f ms\n", row.module.c_str(),
                row.mean_ms, row.p50_ms, row.p99_ms);
  }
  return 0;
}

}  // namespace latentcast
