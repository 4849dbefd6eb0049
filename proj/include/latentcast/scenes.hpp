#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "latentcast/tokenizer.hpp"

namespace latentcast {

// Ground-truth agent state at one frame. Track ids are stable across frames
// for ground-truth bookkeeping (flow, observability); they are never part of
// any model input.
struct AgentFrameState {
  int id = 0;
  double x = 0, y = 0, theta = 0;
  double vx = 0, vy = 0, vtheta = 0;
  double length = 4.5, width = 2.0;
  int cls = 0;  // AgentClass
  bool observed = true;
};

struct SignalFrameState {
  double x = 0, y = 0;
  int state = 0;
};

struct Frame {
  std::int64_t t_ms = 0;
  std::vector<AgentFrameState> agents;
  std::vector<SignalFrameState> signals;
};

struct Scenario {
  int schema_version = 1;
  double duration_s = 9.0;
  double rate_hz = 10.0;
  RegionOfInterest roi;
  std::vector<Polyline> splines;
  std::uint64_t seed = 0;
  std::vector<Frame> frames;

  int frame_count() const { return static_cast<int>(frames.size()); }
  std::int64_t frame_period_ms() const { return static_cast<std::int64_t>(1000.0 / rate_hz + 0.5); }
  int frame_at(std::int64_t t_ms) const;

  std::vector<AgentObservation> agent_observations(int frame_idx) const;
  std::vector<SignalObservation> signal_observations(int frame_idx) const;
};

struct OcclusionParams {
  // Probability that an agent is still observed at the final frame.
  double final_observed_fraction = 0.7;
  // Permanent occlusion onset is uniform in [onset_min_frac, 1) of duration.
  double onset_min_frac = 0.3;
  // Chance of one contiguous mid-sequence observation gap per agent.
  double temporary_gap_prob = 0.25;
  double gap_min_s = 0.3;
  double gap_max_s = 1.5;
  // Fraction of agents never observed at all (speculative-prediction probe).
  double never_observed_prob = 0.0;
  // When >= 0, every agent is unobserved from this time onward.
  double force_onset_s = -1.0;
};

struct ScenarioParams {
  double duration_s = 9.0;
  double rate_hz = 10.0;
  RegionOfInterest roi;
  int min_agents = 2;
  int max_agents = 6;
  double speed_min = 3.0;
  double speed_max = 12.0;
  double v_max = 15.0;
  // Behavior mix (normalized internally).
  double w_const_velocity = 0.55;
  double w_stop_go = 0.20;
  double w_turn = 0.15;
  double w_queue = 0.10;
  double pedestrian_prob = 0.08;
  double cyclist_prob = 0.04;
  bool with_signals = true;
  bool occlude = true;
  OcclusionParams occlusion;
};

// Deterministic in (params, seed). Behaviors cover free driving, signal
// stop/go, intersection turns and queue-and-merge chains on a two-road
// intersection world.
Scenario generate_scenario(const ScenarioParams& params, std::uint64_t seed);

// Stamps observed flags onto an all-observed scenario: contiguous unobserved
// intervals per agent, never-observed agents, permanent occlusion honoring
// the configured final observed fraction.
void apply_occlusion(Scenario& scenario, const OcclusionParams& params, std::uint64_t seed);

// Oriented-box occupancy: each agent is drawn by an inclusive point-in-
// rotated-box test of every pixel center. `out` has geom.cells() entries.
void rasterize_occupancy(std::span<const AgentFrameState> agents, const GridGeometry& geom,
                         std::span<float> out);

struct TargetOptions {
  bool filter_observable = false;  // drop agents never observed up to present
  int present_frame = 0;
  int flow_dt_frames = 0;  // 0 disables flow rendering
};

struct TargetGrids {
  std::vector<float> occupancy;     // binary
  std::vector<float> flow_x, flow_y;  // pixels, current position back toward origin
  std::vector<std::uint8_t> flow_valid;
};

TargetGrids render_targets(const Scenario& scenario, const GridGeometry& geom, int frame_idx,
                           const TargetOptions& opts);

// Agents of `frame_idx` never observed in frames [0, present_frame].
std::vector<int> never_observed_ids(const Scenario& scenario, int frame_idx, int present_frame);

// Line-delimited records: one header line, one line per frame.
void save_scenario(const Scenario& scenario, const std::string& path);
Scenario load_scenario(const std::string& path);

}  // namespace latentcast
