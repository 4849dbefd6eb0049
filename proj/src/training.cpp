#include "latentcast/training.hpp"

#include <algorithm>
#include <cmath>

#include "latentcast/metrics.hpp"

namespace latentcast {

std::vector<int> sample_timesteps(int horizon_steps, int count, std::mt19937& rng) {
  if (count < 1 || count > horizon_steps + 1) {
    throw UsageError("sampled timestep count " + std::to_string(count) +
                     " outside [1, " + std::to_string(horizon_steps + 1) + "]");
  }
  std::vector<int> pool;
  for (int i = 1; i <= horizon_steps; ++i) pool.push_back(i);
  // Partial Fisher-Yates for count-1 draws without replacement.
  std::vector<int> out{0};
  for (int k = 0; k < count - 1; ++k) {
    const int j = k + static_cast<int>(std::uniform_int_distribution<std::size_t>(
                          0, pool.size() - 1 - static_cast<std::size_t>(k))(rng));
    std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(j)]);
    out.push_back(pool[static_cast<std::size_t>(k)]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double poly_lr(int epoch, double lr0, int epoch_target, double power) {
  if (epoch >= epoch_target) return 0.0;
  return lr0 * std::pow(1.0 - static_cast<double>(epoch) / epoch_target, power);
}

void AdamW::step(ModelWeights<float>& w, double lr) {
  t_ += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (auto& [name, p] : w.params) {
    if (!p.has_grad()) continue;
    auto& [m, v] = state_[name];
    if (m.empty()) {
      m.assign(static_cast<std::size_t>(p.numel()), 0.0f);
      v.assign(static_cast<std::size_t>(p.numel()), 0.0f);
    }
    float* x = p.data();
    const float* g = p.grad_data();
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      const std::size_t si = static_cast<std::size_t>(i);
      m[si] = static_cast<float>(beta1 * m[si] + (1.0 - beta1) * g[i]);
      v[si] = static_cast<float>(beta2 * v[si] + (1.0 - beta2) * g[i] * g[i]);
      const double mhat = m[si] / bc1;
      const double vhat = v[si] / bc2;
      x[i] = static_cast<float>(x[i] - lr * (mhat / (std::sqrt(vhat) + eps)) -
                                lr * weight_decay * x[i]);
    }
  }
}

void AdamW::serialize(std::map<std::string, Tensor<float>>& out) const {
  for (const auto& [name, mv] : state_) {
    out["adamw.m." + name] =
        Tensor<float>::from({static_cast<std::int64_t>(mv.first.size())}, mv.first);
    out["adamw.v." + name] =
        Tensor<float>::from({static_cast<std::int64_t>(mv.second.size())}, mv.second);
  }
  out["adamw.t"] = Tensor<float>::scalar(static_cast<float>(t_));
}

void AdamW::restore(const std::map<std::string, Tensor<float>>& in) {
  state_.clear();
  t_ = 0;
  for (const auto& [name, t] : in) {
    if (name == "adamw.t") {
      t_ = static_cast<std::int64_t>(t.at(0));
    } else if (name.rfind("adamw.m.", 0) == 0) {
      auto v = t.values();
      state_[name.substr(8)].first.assign(v.begin(), v.end());
    } else if (name.rfind("adamw.v.", 0) == 0) {
      auto v = t.values();
      state_[name.substr(8)].second.assign(v.begin(), v.end());
    }
  }
}

namespace {

struct RolloutPlan {
  std::int64_t present_ms = 0;
  int present_frame = 0;
  int obs_ms = 0;
  int future_ms = 0;
  int horizon_steps = 0;
  std::vector<int> loss_steps;  // step 0 = present
};

RolloutPlan make_plan(const Scenario& sc, const TrainConfig& cfg, std::uint64_t rollout_seed) {
  RolloutPlan p;
  p.obs_ms = cfg.obs_period_ms();
  p.future_ms = cfg.future_period_ms();
  const std::int64_t frame_ms = sc.frame_period_ms();
  if (p.obs_ms % frame_ms != 0 || p.future_ms % frame_ms != 0) {
    throw ConfigError("observation/forecast periods must be multiples of the frame period");
  }
  p.present_ms = static_cast<std::int64_t>(cfg.past_window_s * 1000.0 + 0.5);
  p.present_frame = sc.frame_at(p.present_ms);
  const double max_h = sc.duration_s - cfg.past_window_s;
  const double h = std::min(cfg.horizon_s, max_h);
  p.horizon_steps = static_cast<int>(h * 1000.0 + 0.5) / p.future_ms;
  std::mt19937 rng(static_cast<std::uint32_t>(rollout_seed));
  p.loss_steps =
      sample_timesteps(p.horizon_steps, std::min(cfg.sampled_steps, p.horizon_steps + 1), rng);
  return p;
}

}  // namespace

LossReport rollout_loss(ModelWeights<float>& w, const Scenario& sc, const TrainConfig& cfg,
                        std::uint64_t rollout_seed, double grad_scale) {
  cfg.validate();
  const RolloutPlan plan = make_plan(sc, cfg, rollout_seed);
  const auto& roi = w.config.roi;
  const QueryGrid query = QueryGrid::raster(cfg.grid, roi);
  const std::int64_t frame_ms = sc.frame_period_ms();
  const int flow_dt_frames =
      cfg.flow_weight > 0.0 && w.config.flow_head
          ? static_cast<int>(plan.future_ms / frame_ms)
          : 0;
  // Pixel flow -> ROI-normalized displacement.
  const float flow_norm = static_cast<float>(cfg.grid.m_per_px() / roi.half_x());

  RoadRaster raster;
  TokenSet<float> road_cached;
  if (w.config.use_road) {
    raster = rasterize_roadgraph(sc.splines, roi, w.config.raster_px);
    road_cached = encode_road_tokens(raster, w.est.road_encoder, w.banks);
  }

  LossReport report;
  const double n_steps = static_cast<double>(plan.loss_steps.size());

  // One tick runs on its own tape when a loss lands on it; the incoming
  // state is always a detached constant.
  auto apply_loss = [&](Tape<float>& tape, LatentState<float>& s, int step) {
    const std::int64_t t = plan.present_ms + static_cast<std::int64_t>(step) * plan.future_ms;
    const int frame = sc.frame_at(t);
    TargetOptions topt;
    topt.filter_observable = cfg.filter_observable;
    topt.present_frame = plan.present_frame;
    topt.flow_dt_frames = flow_dt_frames;
    const TargetGrids target = render_targets(sc, cfg.grid, frame, topt);

    Tensor<float> step_term;
    double flow_value = 0.0;
    if (flow_dt_frames > 0) {
      auto [occ, flow] = occupancy_and_flow_query(s, query, w, &tape);
      Tensor<float> focal = focal_loss(occ, target.occupancy, static_cast<float>(cfg.gamma),
                                       static_cast<float>(cfg.alpha), &tape);
      std::vector<float> tfx(target.flow_x.size()), tfy(target.flow_y.size());
      for (std::size_t i = 0; i < tfx.size(); ++i) {
        tfx[i] = target.flow_x[i] * flow_norm;
        tfy[i] = target.flow_y[i] * flow_norm;
      }
      Tensor<float> hub = huber_flow_loss(flow, tfx, tfy, target.flow_valid, 1.0f, &tape);
      flow_value = hub.item();
      step_term = add(focal, scale(hub, static_cast<float>(cfg.flow_weight), &tape), &tape);
      report.step_focal.emplace_back(step, focal.item());
    } else {
      Tensor<float> occ = occupancy_query(s, query, w, -1, &tape);
      step_term = focal_loss(occ, target.occupancy, static_cast<float>(cfg.gamma),
                             static_cast<float>(cfg.alpha), &tape);
      report.step_focal.emplace_back(step, step_term.item());
    }
    report.flow += flow_value / n_steps;
    if (!std::isfinite(step_term.item())) {
      throw NumericError("non-finite loss at step " + std::to_string(step) + " (t=" +
                         std::to_string(t) + " ms)");
    }
    Tensor<float> scaled =
        scale(step_term, static_cast<float>(grad_scale / n_steps), &tape);
    tape.backward(scaled);
  };

  auto observation_at = [&](std::int64_t t) {
    const int f = sc.frame_at(t);
    return std::pair{sc.agent_observations(f), sc.signal_observations(f)};
  };

  auto road_update_for = [&](const LatentState<float>& s, Tape<float>* tape) {
    if (!w.config.use_road) return s;
    if (tape) {
      TokenSet<float> road = encode_road_tokens(raster, w.est.road_encoder, w.banks, tape);
      return update_road(s, road, w, tape);
    }
    return update_road(s, road_cached, w);
  };

  const bool present_is_init = plan.present_ms == 0;

  // t = 0: initialization.
  LatentState<float> state;
  {
    Tape<float> tape;
    Tape<float>* tp = present_is_init ? &tape : nullptr;
    const auto [agents, signals] = observation_at(0);
    const TokenSet<float> a0 = tokenize_agents<float>(agents, roi, 0, w.banks);
    state = state_initialize(a0, w, tp);
    if (present_is_init) {
      apply_loss(tape, state, 0);
    }
    state = state.detached();
  }

  // Past observation ticks up to and including the present frame.
  for (std::int64_t t = plan.obs_ms; t <= plan.present_ms; t += plan.obs_ms) {
    const bool has_loss = t == plan.present_ms;  // step 0 is always sampled
    Tape<float> tape;
    Tape<float>* tp = has_loss ? &tape : nullptr;
    const auto [agents, signals] = observation_at(t);
    LatentState<float> s = time_propagate(state, plan.obs_ms, w, tp);
    s = road_update_for(s, tp);
    if (w.config.use_signals) {
      const TokenSet<float> tt = tokenize_signals<float>(signals, roi, t, w.banks);
      s = update_signals(s, tt, w, tp);
    }
    const TokenSet<float> at = tokenize_agents<float>(agents, roi, t, w.banks);
    s = update_agents(s, at, w, tp);
    if (has_loss) {
      apply_loss(tape, s, 0);
    }
    state = s.detached();
  }

  // Future propagation ticks.
  for (int step = 1; step <= plan.horizon_steps; ++step) {
    const bool has_loss =
        std::find(plan.loss_steps.begin(), plan.loss_steps.end(), step) != plan.loss_steps.end();
    Tape<float> tape;
    Tape<float>* tp = has_loss ? &tape : nullptr;
    LatentState<float> s = time_propagate(state, plan.future_ms, w, tp);
    s = road_update_for(s, tp);
    if (has_loss) {
      apply_loss(tape, s, step);
    }
    state = s.detached();
  }

  double focal_mean = 0.0;
  for (const auto& [step, value] : report.step_focal) focal_mean += value / n_steps;
  report.total = focal_mean + cfg.flow_weight * report.flow;

  double gn = 0.0;
  for (const auto& [name, p] : w.params) {
    if (!p.has_grad()) continue;
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      gn += static_cast<double>(p.grad_data()[i]) * p.grad_data()[i];
    }
  }
  report.grad_norm = std::sqrt(gn);
  return report;
}

TrainResult train(const std::vector<Scenario>& dataset, const ModelConfig& mcfg,
                  const TrainConfig& cfg, const CheckpointFn& checkpoint,
                  ModelWeights<float>* resume_weights, AdamW* resume_opt, int start_epoch) {
  cfg.validate();
  if (dataset.empty()) throw UsageError("training dataset is empty");

  ModelConfig model_cfg = mcfg;
  model_cfg.propagate_periods_ms = cfg.two_phase ? std::vector<int>{100, 1000}
                                                 : std::vector<int>{cfg.obs_period_ms()};
  model_cfg.flow_head = cfg.flow_weight > 0.0;

  TrainResult result;
  result.weights = resume_weights ? *resume_weights : ModelWeights<float>::init(model_cfg, cfg.seed);
  ModelWeights<float>& w = result.weights;
  w.set_requires_grad(true);

  AdamW opt;
  opt.weight_decay = cfg.weight_decay;
  if (resume_opt) opt = *resume_opt;

  // Deterministic split; validation takes the first slice of the shuffle.
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  {
    std::mt19937 rng(static_cast<std::uint32_t>(derive_seed(cfg.seed, 0x59117)));
    std::shuffle(order.begin(), order.end(), rng);
  }
  const std::size_t n_val = std::min(
      dataset.size() - 1,
      static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(dataset.size()))));
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<Scenario> val_set;
  for (auto i : val_idx) val_set.push_back(dataset[i]);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = poly_lr(epoch, cfg.lr, cfg.epochs, cfg.poly_power);
    std::vector<std::size_t> idx = train_idx;
    {
      std::mt19937 rng(static_cast<std::uint32_t>(
          derive_seed(cfg.seed, 0xe90c4, static_cast<std::uint64_t>(epoch))));
      std::shuffle(idx.begin(), idx.end(), rng);
    }

    double epoch_loss = 0.0;
    std::size_t pos = 0;
    while (pos < idx.size()) {
      const std::size_t batch_n =
          std::min(static_cast<std::size_t>(cfg.batch_size), idx.size() - pos);
      w.zero_grads();
      for (std::size_t b = 0; b < batch_n; ++b) {
        const std::size_t si = idx[pos + b];
        const std::uint64_t rseed = derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch),
                                                static_cast<std::uint64_t>(si), 0x1055);
        const LossReport rep =
            rollout_loss(w, dataset[si], cfg, rseed, 1.0 / static_cast<double>(batch_n));
        epoch_loss += rep.total;
      }
      opt.step(w, lr);
      pos += batch_n;
    }
    epoch_loss /= static_cast<double>(idx.size());

    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = epoch_loss;
    stats.lr = lr;
    if (!val_set.empty()) {
      EvalOptions eopt;
      eopt.beta = 1.0;
      eopt.two_phase = cfg.two_phase;
      eopt.filter_observable = cfg.filter_observable;
      eopt.past_window_s = cfg.past_window_s;
      eopt.grid = cfg.grid;
      const WaypointReport rep = waypoint_eval(w, val_set, {1.0}, eopt);
      stats.val_soft_iou = rep.mean_soft_iou.empty() ? 0.0 : rep.mean_soft_iou[0];
      stats.val_auc = rep.mean_auc.empty() ? 0.0 : rep.mean_auc[0];
    }
    result.history.push_back(stats);
    if (checkpoint) checkpoint(epoch, w, opt, result.history);
  }
  return result;
}

}  // namespace latentcast
