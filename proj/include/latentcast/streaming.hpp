#pragma once

#include <map>
#include <string>
#include <vector>

#include "latentcast/estimator.hpp"
#include "latentcast/scenes.hpp"

namespace latentcast {

struct ObservationBundle {
  std::int64_t t_ms = 0;
  std::vector<AgentObservation> agents;
  std::vector<SignalObservation> signals;
};

struct SessionCounters {
  std::int64_t propagate = 0;
  std::int64_t road_update = 0;
  std::int64_t signal_update = 0;
  std::int64_t agent_update = 0;
  std::int64_t road_encode = 0;
  std::map<int, std::int64_t> propagate_by_period;
};

// One retained latent state plus the road token cache. The session is
// confined to one logical thread; many sessions may share the weights
// read-only.
class StreamSession {
 public:
  StreamSession(const ModelWeights<float>& w, std::span<const Polyline> splines,
                const ObservationBundle& first);

  // Distinct propagation functions for the observed past and the forecast
  // future. Requires both variants in the weights.
  void configure_two_phase(int past_period_ms = 100, int future_period_ms = 1000);

  void set_calibration_beta(float beta) { beta_ = beta; }

  // Propagates the retained state to obs.t_ms (road context each step), then
  // applies signal and agent updates and retains the result.
  void ingest(const ObservationBundle& obs);

  // Occupancy logits per step 0..horizon/period, present frame first. The
  // retained state is untouched.
  std::vector<std::vector<float>> forecast_logits(double horizon_s, const QueryGrid& query) const;

  // Occupancy probabilities with the session's calibration applied.
  std::vector<std::vector<float>> forecast(double horizon_s, const QueryGrid& query) const;

  // Flow (normalized displacement per forecast step) alongside logits.
  struct FlowForecast {
    std::vector<std::vector<float>> logits;
    std::vector<std::vector<float>> flow_x, flow_y;  // pixels
  };
  FlowForecast forecast_with_flow(double horizon_s, const QueryGrid& query) const;

  const LatentState<float>& retained() const { return state_; }
  std::int64_t clock_ms() const { return state_.time_ms; }
  int ingest_period_ms() const { return ingest_period_ms_; }
  int forecast_period_ms() const { return forecast_period_ms_; }
  const TokenSet<float>& road_cache() const { return road_; }
  const SessionCounters& counters() const { return counters_; }
  const ModelWeights<float>& weights() const { return *w_; }

 private:
  LatentState<float> propagate_step(const LatentState<float>& s, int period_ms) const;

  const ModelWeights<float>* w_;
  LatentState<float> state_;
  TokenSet<float> road_;
  bool has_road_ = false;
  int ingest_period_ms_ = 0;
  int forecast_period_ms_ = 0;
  float beta_ = 1.0f;
  mutable SessionCounters counters_;
};

// Spec-level conveniences mirroring the session API.
StreamSession session_open(const ModelWeights<float>& w, std::span<const Polyline> splines,
                           const ObservationBundle& first);

struct BenchConfig {
  int iters = 100;       // clamped to >= 100
  int warmup = 10;
  int agent_tokens = 128;
  int signal_tokens = 16;
  int query_px = 200;
  double query_extent_m = 80.0;
  std::uint64_t seed = 7;
};

struct LatencyRow {
  std::string module;
  int iters = 0;
  double mean_ms = 0.0, p50_ms = 0.0, p99_ms = 0.0;
};

struct LatencyReport {
  std::vector<LatencyRow> rows;
  std::string config;
};

// Times each module in isolation. An empty selector benches every module the
// weights provide, in the canonical order: StateInitialisation,
// OccupancyQuery, TimePropagate, AgentObservation, SignalObservation,
// RoadgraphEncoder, RoadContext.
LatencyReport bench(const ModelWeights<float>& w, const std::vector<std::string>& selector,
                    const BenchConfig& cfg);

}  // namespace latentcast
