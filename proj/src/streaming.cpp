#include "latentcast/streaming.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

namespace latentcast {

namespace {

std::string period_list(const std::map<int, std::vector<AttentionWeights<float>>>& variants) {
  std::string s;
  for (const auto& [p, b] : variants) s += (s.empty() ? "" : ", ") + std::to_string(p) + " ms";
  return s;
}

}  // namespace

StreamSession::StreamSession(const ModelWeights<float>& w, std::span<const Polyline> splines,
                             const ObservationBundle& first)
    : w_(&w) {
  const auto& periods = w.config.propagate_periods_ms;
  ingest_period_ms_ = *std::min_element(periods.begin(), periods.end());
  forecast_period_ms_ = ingest_period_ms_;

  if (w.config.use_road) {
    const RoadRaster raster = rasterize_roadgraph(splines, w.config.roi, w.config.raster_px);
    road_ = encode_road_tokens(raster, w.est.road_encoder, w.banks);
    counters_.road_encode += 1;
    has_road_ = true;
  }
  const TokenSet<float> a0 =
      tokenize_agents<float>(first.agents, w.config.roi, first.t_ms, w.banks);
  state_ = state_initialize(a0, w);
}

void StreamSession::configure_two_phase(int past_period_ms, int future_period_ms) {
  if (!w_->est.propagate.count(past_period_ms) || !w_->est.propagate.count(future_period_ms)) {
    throw ConfigError("two-phase configuration needs propagation variants for " +
                      std::to_string(past_period_ms) + " and " +
                      std::to_string(future_period_ms) + " ms; weights provide " +
                      period_list(w_->est.propagate));
  }
  ingest_period_ms_ = past_period_ms;
  forecast_period_ms_ = future_period_ms;
}

LatentState<float> StreamSession::propagate_step(const LatentState<float>& s,
                                                 int period_ms) const {
  LatentState<float> next = time_propagate(s, period_ms, *w_);
  counters_.propagate += 1;
  counters_.propagate_by_period[period_ms] += 1;
  if (has_road_) {
    next = update_road(next, road_, *w_);
    counters_.road_update += 1;
  }
  return next;
}

void StreamSession::ingest(const ObservationBundle& obs) {
  const std::int64_t dt = obs.t_ms - state_.time_ms;
  if (dt < 0) {
    throw TemporalAlignError("observation at " + std::to_string(obs.t_ms) +
                             " ms precedes the session clock " + std::to_string(state_.time_ms) +
                             " ms");
  }
  if (dt % ingest_period_ms_ != 0) {
    throw TemporalAlignError("observation at " + std::to_string(obs.t_ms) +
                             " ms is not reachable from clock " + std::to_string(state_.time_ms) +
                             " ms with the ingest period " + std::to_string(ingest_period_ms_) +
                             " ms (variants: " + period_list(w_->est.propagate) + ")");
  }
  LatentState<float> s = state_;
  for (std::int64_t k = 0; k < dt / ingest_period_ms_; ++k) {
    s = propagate_step(s, ingest_period_ms_);
  }
  if (w_->config.use_signals) {
    const TokenSet<float> tt =
        tokenize_signals<float>(obs.signals, w_->config.roi, obs.t_ms, w_->banks);
    s = update_signals(s, tt, *w_);
    counters_.signal_update += 1;
  }
  const TokenSet<float> at =
      tokenize_agents<float>(obs.agents, w_->config.roi, obs.t_ms, w_->banks);
  s = update_agents(s, at, *w_);
  counters_.agent_update += 1;
  state_ = s;
}

std::vector<std::vector<float>> StreamSession::forecast_logits(double horizon_s,
                                                               const QueryGrid& query) const {
  const std::int64_t horizon_ms = static_cast<std::int64_t>(std::llround(horizon_s * 1000.0));
  if (horizon_ms < 0 || horizon_ms % forecast_period_ms_ != 0) {
    throw TemporalAlignError("forecast horizon " + std::to_string(horizon_ms) +
                             " ms is not a multiple of the forecast period " +
                             std::to_string(forecast_period_ms_) + " ms");
  }
  LatentState<float> s = state_.cloned();
  std::vector<std::vector<float>> out;
  auto query_now = [&]() {
    Tensor<float> logits = occupancy_query(s, query, *w_);
    out.emplace_back(logits.values().begin(), logits.values().end());
  };
  query_now();
  for (std::int64_t k = 0; k < horizon_ms / forecast_period_ms_; ++k) {
    s = propagate_step(s, forecast_period_ms_);
    query_now();
  }
  return out;
}

std::vector<std::vector<float>> StreamSession::forecast(double horizon_s,
                                                        const QueryGrid& query) const {
  auto grids = forecast_logits(horizon_s, query);
  for (auto& g : grids) {
    calibrate_inplace(std::span<float>(g.data(), g.size()), beta_);
    for (auto& v : g) v = 1.0f / (1.0f + std::exp(-v));
  }
  return grids;
}

StreamSession::FlowForecast StreamSession::forecast_with_flow(double horizon_s,
                                                              const QueryGrid& query) const {
  const std::int64_t horizon_ms = static_cast<std::int64_t>(std::llround(horizon_s * 1000.0));
  if (horizon_ms < 0 || horizon_ms % forecast_period_ms_ != 0) {
    throw TemporalAlignError("forecast horizon is not a multiple of the forecast period");
  }
  if (!query.has_geom) throw UsageError("flow forecast needs a rasterized query grid");
  // Normalized displacement -> pixels for this grid.
  const float to_px = static_cast<float>(w_->config.roi.half_x() / query.geom.m_per_px());
  LatentState<float> s = state_.cloned();
  FlowForecast out;
  auto query_now = [&]() {
    auto [occ, flow] = occupancy_and_flow_query(s, query, *w_);
    out.logits.emplace_back(occ.values().begin(), occ.values().end());
    std::vector<float> fx(static_cast<std::size_t>(flow.shape()[0]));
    std::vector<float> fy(fx.size());
    for (std::size_t i = 0; i < fx.size(); ++i) {
      fx[i] = flow.at(static_cast<std::int64_t>(i), 0) * to_px;
      fy[i] = flow.at(static_cast<std::int64_t>(i), 1) * to_px;
    }
    out.flow_x.push_back(std::move(fx));
    out.flow_y.push_back(std::move(fy));
  };
  query_now();
  for (std::int64_t k = 0; k < horizon_ms / forecast_period_ms_; ++k) {
    s = propagate_step(s, forecast_period_ms_);
    query_now();
  }
  return out;
}

StreamSession session_open(const ModelWeights<float>& w, std::span<const Polyline> splines,
                           const ObservationBundle& first) {
  return StreamSession(w, splines, first);
}

namespace {

struct Timing {
  double mean_ms, p50_ms, p99_ms;
};

template <typename F>
Timing time_fn(F&& fn, int iters, int warmup) {
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(iters));
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(samples.begin(), samples.end());
  double sum = 0.0;
  for (double s : samples) sum += s;
  auto pct = [&samples](double p) {
    const std::size_t idx = std::min(samples.size() - 1,
                                     static_cast<std::size_t>(p * (samples.size() - 1) + 0.5));
    return samples[idx];
  };
  return {sum / static_cast<double>(samples.size()), pct(0.5), pct(0.99)};
}

}  // namespace

LatencyReport bench(const ModelWeights<float>& w, const std::vector<std::string>& selector,
                    const BenchConfig& raw_cfg) {
  BenchConfig cfg = raw_cfg;
  cfg.iters = std::max(cfg.iters, 100);
  std::mt19937 rng(static_cast<std::uint32_t>(splitmix64(cfg.seed)));
  auto uni = [&rng](double a, double b) {
    return std::uniform_real_distribution<double>(a, b)(rng);
  };

  // Synthetic inputs at the configured sizes.
  std::vector<AgentObservation> agents;
  for (int i = 0; i < cfg.agent_tokens; ++i) {
    AgentObservation a;
    a.x = uni(-60.0, 60.0);
    a.y = uni(-60.0, 60.0);
    a.theta = uni(-3.1, 3.1);
    a.vx = uni(-10.0, 10.0);
    a.vy = uni(-10.0, 10.0);
    agents.push_back(a);
  }
  std::vector<SignalObservation> signals;
  for (int i = 0; i < cfg.signal_tokens; ++i) {
    signals.push_back({uni(-30.0, 30.0), uni(-30.0, 30.0), i % kSignalStates});
  }
  std::vector<Polyline> splines;
  for (int i = 0; i < 8; ++i) {
    splines.push_back({{uni(-70.0, 0.0), uni(-70.0, 70.0)}, {uni(0.0, 70.0), uni(-70.0, 70.0)}});
  }

  const TokenSet<float> a_tokens = tokenize_agents<float>(agents, w.config.roi, 0, w.banks);
  const TokenSet<float> t_tokens = tokenize_signals<float>(signals, w.config.roi, 0, w.banks);
  const RoadRaster raster = rasterize_roadgraph(splines, w.config.roi, w.config.raster_px);
  TokenSet<float> r_tokens;
  if (w.config.use_road) r_tokens = encode_road_tokens(raster, w.est.road_encoder, w.banks);
  LatentState<float> state = state_initialize(a_tokens, w);
  const QueryGrid query =
      QueryGrid::raster(GridGeometry{w.config.roi.center_x, w.config.roi.center_y,
                                     cfg.query_extent_m, cfg.query_px},
                        w.config.roi);
  const int period = *std::min_element(w.config.propagate_periods_ms.begin(),
                                       w.config.propagate_periods_ms.end());

  struct Module {
    const char* name;
    bool available;
    std::function<void()> fn;
  };
  const std::vector<Module> modules = {
      {"StateInitialisation", true, [&]() { state_initialize(a_tokens, w); }},
      {"OccupancyQuery", true, [&]() { occupancy_query(state, query, w); }},
      {"TimePropagate", true, [&]() { time_propagate(state, period, w); }},
      {"AgentObservation", true, [&]() { update_agents(state, a_tokens, w); }},
      {"SignalObservation", w.config.use_signals, [&]() { update_signals(state, t_tokens, w); }},
      {"RoadgraphEncoder", w.config.use_road,
       [&]() { encode_road_tokens(raster, w.est.road_encoder, w.banks); }},
      {"RoadContext", w.config.use_road, [&]() { update_road(state, r_tokens, w); }},
  };

  LatencyReport report;
  std::ostringstream cfgs;
  cfgs << "agents=" << cfg.agent_tokens << ";signals=" << cfg.signal_tokens << ";query="
       << cfg.query_px << "x" << cfg.query_px << ";raster=" << w.config.raster_px << ";latent="
       << w.config.n_latent << "x" << w.config.c_latent;
  report.config = cfgs.str();
  for (const auto& m : modules) {
    if (!m.available) continue;
    if (!selector.empty() &&
        std::find(selector.begin(), selector.end(), std::string(m.name)) == selector.end()) {
      continue;
    }
    const Timing t = time_fn(m.fn, cfg.iters, cfg.warmup);
    report.rows.push_back({m.name, cfg.iters, t.mean_ms, t.p50_ms, t.p99_ms});
  }
  return report;
}

}  // namespace latentcast
