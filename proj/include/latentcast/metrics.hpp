#pragma once

#include <span>
#include <vector>

#include "latentcast/scenes.hpp"
#include "latentcast/streaming.hpp"

namespace latentcast {

// sum(o*p) / sum(o + p - o*p); 0 by convention when both sums are zero.
// Predictions must already be probabilities in [0,1], truth binary.
double soft_iou(std::span<const float> pred, std::span<const float> truth);

// Area under the ROC curve sampled at n evenly spaced thresholds in [0,1].
// Throws when the truth is single-class.
double auc(std::span<const float> pred, std::span<const float> truth, int n_thresholds = 100);

// Mean end-point error in meters over ground-truth-occupied pixels; flow
// fields are in pixels.
double flow_epe_m(std::span<const float> fx_hat, std::span<const float> fy_hat,
                  std::span<const float> fx, std::span<const float> fy,
                  std::span<const float> occupancy, double m_per_px);

struct WaypointRow {
  int scenario_id = 0;
  double horizon_s = 0.0;
  double soft_iou = 0.0;
  double soft_iou_calibrated = 0.0;
  double auc = 0.0;
  bool auc_defined = false;
  double flow_epe = 0.0;
  bool flow_defined = false;
};

struct WaypointReport {
  std::vector<WaypointRow> rows;
  std::vector<double> horizons;
  std::vector<double> mean_soft_iou, mean_soft_iou_calibrated, mean_auc, mean_flow_epe;
};

struct EvalOptions {
  double beta = 2.0;             // calibrated column scale
  bool two_phase = false;
  bool filter_observable = true;
  bool flow = false;
  double past_window_s = 1.0;
  GridGeometry grid{0.0, 0.0, 80.0, 64};
};

// Streams each scenario through a session, forecasts at every horizon and
// aggregates per-horizon means (uncalibrated and calibrated side by side).
WaypointReport waypoint_eval(const ModelWeights<float>& w, std::span<const Scenario> scenarios,
                             const std::vector<double>& horizons_s, const EvalOptions& opts);

// Repeat-last-observed-occupancy baseline: the binary raster of the agents
// observed at the present frame, scored against the target at present+h.
double persistence_soft_iou(const Scenario& scenario, const GridGeometry& grid,
                            int present_frame, int horizon_frames, bool filter_observable);

}  // namespace latentcast
