#include "latentcast/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace latentcast {

double soft_iou(std::span<const float> pred, std::span<const float> truth) {
  if (pred.size() != truth.size()) throw ShapeError("soft_iou: size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i];
    const double o = truth[i];
    if (p < 0.0 || p > 1.0) {
      throw UsageError("soft_iou expects probabilities in [0,1]; apply sigmoid first");
    }
    num += o * p;
    den += o + p - o * p;
  }
  if (den == 0.0) return 0.0;
  return num / den;
}

double auc(std::span<const float> pred, std::span<const float> truth, int n_thresholds) {
  if (pred.size() != truth.size()) throw ShapeError("auc: size mismatch");
  if (n_thresholds < 2) throw UsageError("auc needs at least 2 thresholds");
  std::size_t n_pos = 0, n_neg = 0;
  for (float o : truth) (o != 0.0f ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) {
    throw UsageError("auc undefined: ground truth has a single class");
  }
  // Sweep thresholds high to low so the curve runs (0,0) -> (1,1).
  std::vector<std::pair<double, double>> pts;  // (fpr, tpr)
  pts.emplace_back(0.0, 0.0);
  for (int i = n_thresholds - 1; i >= 0; --i) {
    const double tau = static_cast<double>(i) / (n_thresholds - 1);
    std::size_t tp = 0, fp = 0;
    for (std::size_t j = 0; j < pred.size(); ++j) {
      if (pred[j] > tau) (truth[j] != 0.0f ? tp : fp) += 1;
    }
    pts.emplace_back(static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos);
  }
  pts.emplace_back(1.0, 1.0);
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    area += (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second) / 2.0;
  }
  return area;
}

double flow_epe_m(std::span<const float> fx_hat, std::span<const float> fy_hat,
                  std::span<const float> fx, std::span<const float> fy,
                  std::span<const float> occupancy, double m_per_px) {
  if (fx_hat.size() != fx.size() || fy_hat.size() != fy.size() ||
      occupancy.size() != fx.size()) {
    throw ShapeError("flow_epe: size mismatch");
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < fx.size(); ++i) {
    if (occupancy[i] <= 0.5f) continue;
    sum += std::hypot(static_cast<double>(fx_hat[i]) - fx[i],
                      static_cast<double>(fy_hat[i]) - fy[i]);
    ++n;
  }
  if (n == 0) throw UsageError("flow_epe undefined: no occupied pixels");
  return sum / static_cast<double>(n) * m_per_px;
}

WaypointReport waypoint_eval(const ModelWeights<float>& w, std::span<const Scenario> scenarios,
                             const std::vector<double>& horizons_s, const EvalOptions& opts) {
  WaypointReport report;
  report.horizons = horizons_s;
  if (scenarios.empty() || horizons_s.empty()) return report;

  const int forecast_ms = opts.two_phase ? 1000 : 0;
  (void)forecast_ms;
  std::vector<double> sum_iou(horizons_s.size(), 0.0), sum_cal(horizons_s.size(), 0.0);
  std::vector<double> sum_auc(horizons_s.size(), 0.0), sum_epe(horizons_s.size(), 0.0);
  std::vector<int> n_auc(horizons_s.size(), 0), n_epe(horizons_s.size(), 0);
  std::vector<int> n_iou(horizons_s.size(), 0);

  int scenario_id = 0;
  for (const auto& sc : scenarios) {
    const std::int64_t frame_ms = sc.frame_period_ms();
    const std::int64_t present_ms = static_cast<std::int64_t>(opts.past_window_s * 1000.0 + 0.5);
    const int present_frame = sc.frame_at(present_ms);

    StreamSession session(w, sc.splines, ObservationBundle{0, sc.agent_observations(0),
                                                           sc.signal_observations(0)});
    if (opts.two_phase) session.configure_two_phase();
    const int obs_ms = session.ingest_period_ms();
    for (std::int64_t t = obs_ms; t <= present_ms; t += obs_ms) {
      const int f = sc.frame_at(t);
      session.ingest(ObservationBundle{t, sc.agent_observations(f), sc.signal_observations(f)});
    }

    const QueryGrid query = QueryGrid::raster(opts.grid, w.config.roi);
    const double max_h = *std::max_element(horizons_s.begin(), horizons_s.end());

    std::vector<std::vector<float>> logits;
    StreamSession::FlowForecast ff;
    if (opts.flow && w.config.flow_head) {
      ff = session.forecast_with_flow(max_h, query);
      logits = ff.logits;
    } else {
      logits = session.forecast_logits(max_h, query);
    }

    for (std::size_t hi = 0; hi < horizons_s.size(); ++hi) {
      const double h = horizons_s[hi];
      const std::int64_t h_ms = static_cast<std::int64_t>(h * 1000.0 + 0.5);
      if (h_ms % session.forecast_period_ms() != 0) {
        throw TemporalAlignError("horizon " + std::to_string(h) +
                                 " s is not a multiple of the forecast period");
      }
      const std::size_t step = static_cast<std::size_t>(h_ms / session.forecast_period_ms());
      if (step >= logits.size()) continue;
      const int target_frame = sc.frame_at(present_ms + h_ms);
      TargetOptions topt;
      topt.filter_observable = opts.filter_observable;
      topt.present_frame = present_frame;
      topt.flow_dt_frames = opts.flow
                                ? static_cast<int>(session.forecast_period_ms() / frame_ms)
                                : 0;
      const TargetGrids target = render_targets(sc, opts.grid, target_frame, topt);

      std::vector<float> probs(logits[step].size());
      std::vector<float> probs_cal(logits[step].size());
      for (std::size_t i = 0; i < probs.size(); ++i) {
        const float l = logits[step][i];
        probs[i] = 1.0f / (1.0f + std::exp(-l));
        const float lc = l < 0.0f ? l * static_cast<float>(opts.beta) : l;
        probs_cal[i] = 1.0f / (1.0f + std::exp(-lc));
      }

      WaypointRow row;
      row.scenario_id = scenario_id;
      row.horizon_s = h;
      row.soft_iou = soft_iou(probs, target.occupancy);
      row.soft_iou_calibrated = soft_iou(probs_cal, target.occupancy);
      sum_iou[hi] += row.soft_iou;
      sum_cal[hi] += row.soft_iou_calibrated;
      n_iou[hi] += 1;
      try {
        row.auc = auc(probs, target.occupancy);
        row.auc_defined = true;
        sum_auc[hi] += row.auc;
        n_auc[hi] += 1;
      } catch (const UsageError&) {
        row.auc_defined = false;
      }
      if (opts.flow && w.config.flow_head && !target.flow_valid.empty()) {
        std::vector<float> occ_valid(target.flow_valid.size());
        for (std::size_t i = 0; i < occ_valid.size(); ++i) {
          occ_valid[i] = target.flow_valid[i] ? 1.0f : 0.0f;
        }
        try {
          row.flow_epe = flow_epe_m(ff.flow_x[step], ff.flow_y[step], target.flow_x,
                                    target.flow_y, occ_valid, opts.grid.m_per_px());
          row.flow_defined = true;
          sum_epe[hi] += row.flow_epe;
          n_epe[hi] += 1;
        } catch (const UsageError&) {
          row.flow_defined = false;
        }
      }
      report.rows.push_back(row);
    }
    ++scenario_id;
  }

  for (std::size_t hi = 0; hi < horizons_s.size(); ++hi) {
    report.mean_soft_iou.push_back(n_iou[hi] ? sum_iou[hi] / n_iou[hi] : 0.0);
    report.mean_soft_iou_calibrated.push_back(n_iou[hi] ? sum_cal[hi] / n_iou[hi] : 0.0);
    report.mean_auc.push_back(n_auc[hi] ? sum_auc[hi] / n_auc[hi] : 0.0);
    report.mean_flow_epe.push_back(n_epe[hi] ? sum_epe[hi] / n_epe[hi] : 0.0);
  }
  return report;
}

double persistence_soft_iou(const Scenario& scenario, const GridGeometry& grid,
                            int present_frame, int horizon_frames, bool filter_observable) {
  // What a sensor saw last: agents flagged observed at the present frame.
  std::vector<AgentFrameState> observed;
  for (const auto& a : scenario.frames.at(static_cast<std::size_t>(present_frame)).agents) {
    if (a.observed) observed.push_back(a);
  }
  std::vector<float> pred(static_cast<std::size_t>(grid.cells()));
  rasterize_occupancy(observed, grid, pred);

  TargetOptions topt;
  topt.filter_observable = filter_observable;
  topt.present_frame = present_frame;
  const TargetGrids target =
      render_targets(scenario, grid, present_frame + horizon_frames, topt);
  return soft_iou(pred, target.occupancy);
}

}  // namespace latentcast
