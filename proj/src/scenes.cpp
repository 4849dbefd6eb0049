#include "latentcast/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "latentcast/kernels.hpp"

namespace latentcast {

namespace {

constexpr double kPi = std::numbers::pi;

// Intersection world constants (meters).
constexpr double kLaneOffset = 2.0;       // lane centerline distance from road axis
constexpr double kStopLine = 12.0;        // stop position (agent center) from center
constexpr double kIntersectionEdge = 6.0; // where turn arcs begin

struct PathPoint {
  double x, y;
};

// Arclength-parameterized polyline path.
struct Path {
  std::vector<PathPoint> pts;
  std::vector<double> cum;  // cumulative arclength

  void finalize() {
    cum.resize(pts.size());
    cum[0] = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      const double dx = pts[i].x - pts[i - 1].x;
      const double dy = pts[i].y - pts[i - 1].y;
      cum[i] = cum[i - 1] + std::hypot(dx, dy);
    }
  }

  double length() const { return cum.back(); }

  void sample(double s, double& x, double& y, double& heading) const {
    s = std::clamp(s, 0.0, length());
    std::size_t hi = 1;
    while (hi + 1 < cum.size() && cum[hi] < s) ++hi;
    const std::size_t lo = hi - 1;
    const double seg = std::max(cum[hi] - cum[lo], 1e-9);
    const double t = (s - cum[lo]) / seg;
    x = pts[lo].x + t * (pts[hi].x - pts[lo].x);
    y = pts[lo].y + t * (pts[hi].y - pts[lo].y);
    heading = std::atan2(pts[hi].y - pts[lo].y, pts[hi].x - pts[lo].x);
  }
};

Path straight_path(double x0, double y0, double heading, double len) {
  Path p;
  const int n = std::max(2, static_cast<int>(len / 4.0));
  for (int i = 0; i <= n; ++i) {
    const double s = len * i / n;
    p.pts.push_back({x0 + s * std::cos(heading), y0 + s * std::sin(heading)});
  }
  p.finalize();
  return p;
}

// Lane index: 0 eastbound (y=-2, +x), 1 westbound (y=+2, -x),
// 2 northbound (x=+2, +y), 3 southbound (x=-2, -y).
struct Lane {
  double heading;
  PathPoint entry(double dist_from_center) const {
    return {ox - dist_from_center * std::cos(heading), oy - dist_from_center * std::sin(heading)};
  }
  double ox, oy;  // lane point at road center
};

Lane lane_of(int idx) {
  switch (idx & 3) {
    case 0: return {0.0, 0.0, -kLaneOffset};
    case 1: return {kPi, 0.0, kLaneOffset};
    case 2: return {kPi / 2.0, kLaneOffset, 0.0};
    default: return {-kPi / 2.0, -kLaneOffset, 0.0};
  }
}

Path lane_path(int lane_idx, double start_dist, double total_len) {
  const Lane l = lane_of(lane_idx);
  const PathPoint a = l.entry(start_dist);
  return straight_path(a.x, a.y, l.heading, total_len);
}

// Quarter-arc turn from an approach lane onto the matching crossing lane.
Path turn_path(int lane_idx, double start_dist, bool left) {
  const Lane l = lane_of(lane_idx);
  const PathPoint a = l.entry(start_dist);
  Path p;
  const double approach = start_dist - kIntersectionEdge;
  const int n0 = std::max(2, static_cast<int>(approach / 2.0));
  for (int i = 0; i < n0; ++i) {
    const double s = approach * i / n0;
    p.pts.push_back({a.x + s * std::cos(l.heading), a.y + s * std::sin(l.heading)});
  }
  // Arc start at the intersection edge on the approach lane.
  const PathPoint arc_start{l.entry(kIntersectionEdge).x, l.entry(kIntersectionEdge).y};
  const double turn_sign = left ? 1.0 : -1.0;
  const double radius = left ? kIntersectionEdge + kLaneOffset : kIntersectionEdge - kLaneOffset;
  // Circle center perpendicular to the heading, on the turn side.
  const double cx = arc_start.x - turn_sign * radius * std::sin(l.heading);
  const double cy = arc_start.y + turn_sign * radius * std::cos(l.heading);
  const int n_arc = 14;
  const double a0 = std::atan2(arc_start.y - cy, arc_start.x - cx);
  for (int i = 0; i <= n_arc; ++i) {
    const double a1 = a0 + turn_sign * (kPi / 2.0) * i / n_arc;
    p.pts.push_back({cx + radius * std::cos(a1), cy + radius * std::sin(a1)});
  }
  // Exit straight along the new heading.
  const double exit_heading = l.heading + turn_sign * kPi / 2.0;
  const PathPoint last = p.pts.back();
  const int n2 = 20;
  for (int i = 1; i <= n2; ++i) {
    const double s = 80.0 * i / n2;
    p.pts.push_back({last.x + s * std::cos(exit_heading), last.y + s * std::sin(exit_heading)});
  }
  p.finalize();
  return p;
}

// Merge ramp: diagonal approach blending into a lane downstream of center.
Path merge_path(int lane_idx) {
  const Lane l = lane_of(lane_idx);
  const double join_dist = -14.0;  // join 14 m past the center
  const PathPoint join = l.entry(join_dist);
  const double side = (lane_idx == 0 || lane_idx == 3) ? -1.0 : 1.0;
  Path p;
  const PathPoint start{join.x - 28.0 * std::cos(l.heading) - side * 10.0 * std::sin(l.heading),
                        join.y - 28.0 * std::sin(l.heading) + side * 10.0 * std::cos(l.heading)};
  const PathPoint knee{join.x - 10.0 * std::cos(l.heading) - side * 2.5 * std::sin(l.heading),
                       join.y - 10.0 * std::sin(l.heading) + side * 2.5 * std::cos(l.heading)};
  p.pts = {start, knee, join};
  const int n2 = 16;
  for (int i = 1; i <= n2; ++i) {
    const double s = 70.0 * i / n2;
    p.pts.push_back({join.x + s * std::cos(l.heading), join.y + s * std::sin(l.heading)});
  }
  p.finalize();
  return p;
}

enum class Behavior { const_velocity, stop_go, turn, queue };

struct AgentScript {
  Path path;
  double s = 0.0;      // arclength position
  double v = 0.0;      // speed along path
  double cruise = 8.0;
  double length = 4.6, width = 2.0;
  int cls = 0;
  Behavior behavior = Behavior::const_velocity;
  int lane = -1;            // lane index for signal lookup, -1 none
  double stop_s = -1.0;     // arclength of the stop line on the path, -1 none
  int leader = -1;          // index of the agent ahead in a queue
  int id = 0;
};

int road_of_lane(int lane_idx) { return (lane_idx <= 1) ? 0 : 1; }  // 0 EW, 1 NS

struct SignalSchedule {
  bool enabled = false;
  double switch_t = 4.0;    // EW green before, NS green after
  double caution_len = 1.0;

  // Returns signal state for a road at time t: 1 stop, 2 caution, 3 go.
  int state(int road, double t) const {
    const bool ew_phase = t < switch_t;
    if (road == 0) {
      if (ew_phase) return t > switch_t - caution_len ? 2 : 3;
      return 1;
    }
    return ew_phase ? 1 : 3;
  }
};

}  // namespace

int Scenario::frame_at(std::int64_t t_ms) const {
  const std::int64_t period = frame_period_ms();
  if (t_ms % period != 0) {
    throw UsageError("time " + std::to_string(t_ms) + " ms is not on the frame grid (" +
                     std::to_string(period) + " ms)");
  }
  const int idx = static_cast<int>(t_ms / period);
  if (idx < 0 || idx >= frame_count()) {
    throw UsageError("time " + std::to_string(t_ms) + " ms outside scenario");
  }
  return idx;
}

std::vector<AgentObservation> Scenario::agent_observations(int frame_idx) const {
  std::vector<AgentObservation> out;
  for (const auto& a : frames[static_cast<std::size_t>(frame_idx)].agents) {
    AgentObservation o;
    o.x = a.x;
    o.y = a.y;
    o.theta = a.theta;
    o.vx = a.vx;
    o.vy = a.vy;
    o.vtheta = a.vtheta;
    o.length = a.length;
    o.width = a.width;
    o.cls = static_cast<AgentClass>(a.cls);
    o.observed = a.observed;
    out.push_back(o);
  }
  return out;
}

std::vector<SignalObservation> Scenario::signal_observations(int frame_idx) const {
  std::vector<SignalObservation> out;
  for (const auto& s : frames[static_cast<std::size_t>(frame_idx)].signals) {
    out.push_back({s.x, s.y, s.state});
  }
  return out;
}

Scenario generate_scenario(const ScenarioParams& params, std::uint64_t seed) {
  if (params.min_agents > params.max_agents || params.max_agents > 48) {
    throw UsageError("infeasible agent count range");
  }
  std::mt19937 rng(static_cast<std::uint32_t>(derive_seed(seed, 0x5ce9e5)));
  auto uni = [&rng](double a, double b) {
    return std::uniform_real_distribution<double>(a, b)(rng);
  };

  Scenario sc;
  sc.duration_s = params.duration_s;
  sc.rate_hz = params.rate_hz;
  sc.roi = params.roi;
  sc.seed = seed;

  // Lane centerlines across the ROI plus road edge markings that stop at the
  // intersection box.
  const double hx = params.roi.half_x(), hy = params.roi.half_y();
  const double cx = params.roi.center_x, cy = params.roi.center_y;
  auto line = [&](double x0, double y0, double x1, double y1) {
    sc.splines.push_back({{cx + x0, cy + y0}, {cx + x1, cy + y1}});
  };
  line(-hx, -kLaneOffset, hx, -kLaneOffset);
  line(-hx, kLaneOffset, hx, kLaneOffset);
  line(-kLaneOffset, -hy, -kLaneOffset, hy);
  line(kLaneOffset, -hy, kLaneOffset, hy);
  for (const double e : {kIntersectionEdge, -kIntersectionEdge}) {
    line(-hx, e, -kIntersectionEdge, e);
    line(kIntersectionEdge, e, hx, e);
    line(e, -hy, e, -kIntersectionEdge);
    line(e, kIntersectionEdge, e, hy);
  }

  SignalSchedule signals;
  signals.enabled = params.with_signals;
  signals.switch_t = uni(1.5, params.duration_s - 2.0);

  // Behavior assignment. lane_tail tracks the farthest upstream spawn per
  // lane so later spawns land behind earlier ones.
  const double wsum =
      params.w_const_velocity + params.w_stop_go + params.w_turn + params.w_queue;
  const int n_agents =
      std::uniform_int_distribution<int>(params.min_agents, params.max_agents)(rng);
  std::vector<AgentScript> scripts;
  std::vector<double> lane_tail(4, -1e9);

  auto vehicle_dims = [&](AgentScript& a) {
    a.length = uni(4.2, 5.2);
    a.width = uni(1.8, 2.1);
    a.cls = 0;
  };

  auto lane_spawn_dist = [&](int lane_idx, double draw) {
    const double dist = std::max(draw, lane_tail[static_cast<std::size_t>(lane_idx)] + 10.0);
    if (dist > 0.85 * hx) return -1.0;  // lane full
    lane_tail[static_cast<std::size_t>(lane_idx)] = dist;
    return dist;
  };

  int next_id = 0;
  int attempts = 0;
  while (static_cast<int>(scripts.size()) < n_agents && ++attempts < 40 * n_agents) {
    const double pick = uni(0.0, wsum);
    AgentScript a;
    a.id = next_id;
    a.cruise = uni(params.speed_min, params.speed_max);
    a.v = a.cruise;
    vehicle_dims(a);
    if (pick < params.w_const_velocity) {
      a.behavior = Behavior::const_velocity;
      const double u = uni(0.0, 1.0);
      if (u < params.pedestrian_prob) {
        a.cls = 1;
        a.length = a.width = 0.8;
        a.cruise = a.v = uni(0.8, 1.6);
      } else if (u < params.pedestrian_prob + params.cyclist_prob) {
        a.cls = 2;
        a.length = 1.8;
        a.width = 0.65;
        a.cruise = a.v = uni(3.0, 6.0);
      }
      if (a.cls == 0 && uni(0.0, 1.0) < 0.7) {
        // Through traffic on a lane, ignoring signals.
        const int lane_idx = std::uniform_int_distribution<int>(0, 3)(rng);
        const double dist = lane_spawn_dist(lane_idx, uni(20.0, 0.7 * hx));
        if (dist < 0.0) continue;
        a.lane = -1;
        a.path = lane_path(lane_idx, dist, dist + 2.0 * std::max(hx, hy));
      } else {
        const double px = cx + uni(-0.7 * hx, 0.7 * hx);
        const double py = cy + uni(-0.7 * hy, 0.7 * hy);
        const double heading = uni(-kPi, kPi);
        a.path = straight_path(px, py, heading, 3.0 * std::max(hx, hy));
      }
      scripts.push_back(std::move(a));
      ++next_id;
    } else if (pick < params.w_const_velocity + params.w_stop_go) {
      a.behavior = Behavior::stop_go;
      const int lane_idx = std::uniform_int_distribution<int>(0, 3)(rng);
      const double dist = lane_spawn_dist(lane_idx, uni(25.0, 0.7 * hx));
      if (dist < 0.0) continue;
      a.lane = lane_idx;
      a.path = lane_path(lane_idx, dist, dist + 2.0 * std::max(hx, hy));
      a.stop_s = dist - kStopLine;
      scripts.push_back(std::move(a));
      ++next_id;
    } else if (pick < params.w_const_velocity + params.w_stop_go + params.w_turn) {
      a.behavior = Behavior::turn;
      const int lane_idx = std::uniform_int_distribution<int>(0, 3)(rng);
      const double dist = lane_spawn_dist(lane_idx, uni(22.0, 0.55 * hx));
      if (dist < 0.0) continue;
      a.lane = lane_idx;
      a.path = turn_path(lane_idx, dist, uni(0.0, 1.0) < 0.5);
      a.stop_s = dist - kStopLine;
      scripts.push_back(std::move(a));
      ++next_id;
    } else {
      // Queue-and-merge: a chain on one lane plus, sometimes, a merging agent.
      const int lane_idx = std::uniform_int_distribution<int>(0, 3)(rng);
      const int chain = std::min(std::uniform_int_distribution<int>(2, 3)(rng),
                                 n_agents - static_cast<int>(scripts.size()));
      if (chain < 2) continue;
      int leader = -1;
      bool ok = true;
      for (int k = 0; k < chain && ok; ++k) {
        AgentScript q;
        q.id = next_id;
        q.behavior = Behavior::queue;
        q.cruise = uni(params.speed_min, params.speed_max);
        q.v = q.cruise;
        vehicle_dims(q);
        const double dist = lane_spawn_dist(lane_idx, uni(25.0, 0.4 * hx));
        if (dist < 0.0) {
          ok = false;
          break;
        }
        q.lane = lane_idx;
        q.path = lane_path(lane_idx, dist, dist + 2.0 * std::max(hx, hy));
        q.stop_s = dist - kStopLine;
        q.leader = leader;
        leader = static_cast<int>(scripts.size());
        scripts.push_back(std::move(q));
        ++next_id;
      }
      if (ok && static_cast<int>(scripts.size()) < n_agents && uni(0.0, 1.0) < 0.6) {
        AgentScript m;
        m.id = next_id;
        m.behavior = Behavior::queue;
        m.cruise = uni(params.speed_min, params.speed_max);
        m.v = m.cruise;
        vehicle_dims(m);
        m.path = merge_path(lane_idx);
        m.lane = -1;
        m.leader = leader;
        scripts.push_back(std::move(m));
        ++next_id;
      }
    }
  }
  if (scripts.empty() && n_agents > 0) {
    throw UsageError("scenario generation failed: agent count exceeds world capacity");
  }

  // Simulate. Positions are sampled for every agent first so follower gap
  // control sees the same frame.
  const int n_frames = static_cast<int>(params.duration_s * params.rate_hz + 0.5) + 1;
  const double dt = 1.0 / params.rate_hz;
  const std::size_t n_scripts = scripts.size();
  std::vector<double> prev_heading(n_scripts, 0.0);
  std::vector<double> xs(n_scripts), ys(n_scripts), hs(n_scripts);
  sc.frames.resize(static_cast<std::size_t>(n_frames));
  for (int f = 0; f < n_frames; ++f) {
    const double t = f * dt;
    Frame& frame = sc.frames[static_cast<std::size_t>(f)];
    frame.t_ms = static_cast<std::int64_t>(std::llround(t * 1000.0));

    if (signals.enabled) {
      const int ew = signals.state(0, t);
      const int ns = signals.state(1, t);
      frame.signals = {{cx - kStopLine + 2.0, cy - kLaneOffset, ew},
                       {cx + kStopLine - 2.0, cy + kLaneOffset, ew},
                       {cx + kLaneOffset, cy - kStopLine + 2.0, ns},
                       {cx - kLaneOffset, cy + kStopLine - 2.0, ns}};
    }

    for (std::size_t i = 0; i < n_scripts; ++i) {
      scripts[i].path.sample(scripts[i].s, xs[i], ys[i], hs[i]);
      const double vtheta = f == 0 ? 0.0 : (hs[i] - prev_heading[i]) / dt;
      prev_heading[i] = hs[i];

      const auto& a = scripts[i];
      const auto n = normalize_position(xs[i], ys[i], params.roi);
      if (std::abs(n[0]) <= 1.05 && std::abs(n[1]) <= 1.05) {
        AgentFrameState st;
        st.id = a.id;
        st.x = xs[i];
        st.y = ys[i];
        st.theta = hs[i];
        st.vx = a.v * std::cos(hs[i]);
        st.vy = a.v * std::sin(hs[i]);
        st.vtheta = vtheta;
        st.length = a.length;
        st.width = a.width;
        st.cls = a.cls;
        st.observed = true;
        frame.agents.push_back(st);
      }
    }

    for (std::size_t i = 0; i < n_scripts; ++i) {
      auto& a = scripts[i];
      double accel = a.cruise > a.v ? 2.0 : -0.6;  // relax toward cruise
      if (a.lane >= 0 && signals.enabled && a.stop_s >= 0.0 && a.s < a.stop_s) {
        const int st = signals.state(road_of_lane(a.lane), t);
        if (st != 3) {
          const double gap = a.stop_s - a.s;
          if (gap <= 0.2) {
            accel = -a.v / dt;  // hold at the line
          } else {
            const double a_req = a.v * a.v / (2.0 * gap);
            if (a_req > 1.0) accel = std::min(accel, -std::min(a_req, 6.0));
          }
        }
      }
      if (a.leader >= 0) {
        const auto& lead = scripts[static_cast<std::size_t>(a.leader)];
        const std::size_t li = static_cast<std::size_t>(a.leader);
        const double gap = std::hypot(xs[li] - xs[i], ys[li] - ys[i]) - lead.length / 2.0 -
                           a.length / 2.0 - 1.0;
        if (gap <= 0.5) {
          accel = std::min(accel, -a.v / dt);
        } else {
          const double closing = a.v - lead.v;
          if (closing > 0.0) {
            const double a_req = closing * closing / (2.0 * gap);
            if (a_req > 0.8) accel = std::min(accel, -std::min(a_req + 0.5, 6.0));
          }
          if (gap < 3.0 && a.v > lead.v * 0.9) accel = std::min(accel, -1.5);
        }
      }
      a.v = std::clamp(a.v + accel * dt, 0.0, params.v_max);
      a.s += a.v * dt;
    }
  }

  if (params.occlude) {
    apply_occlusion(sc, params.occlusion, derive_seed(seed, 0x0cc1));
  }
  return sc;
}

void apply_occlusion(Scenario& scenario, const OcclusionParams& params, std::uint64_t seed) {
  std::set<int> ids;
  for (const auto& f : scenario.frames) {
    for (const auto& a : f.agents) ids.insert(a.id);
  }
  const int n_frames = scenario.frame_count();
  const double dt = 1.0 / scenario.rate_hz;

  std::map<int, std::pair<int, int>> gaps;      // id -> [from, to) unobserved
  std::map<int, int> perm_onset;                // id -> unobserved from frame
  for (int id : ids) {
    std::mt19937 rng(static_cast<std::uint32_t>(derive_seed(seed, 0xa9e27, static_cast<std::uint64_t>(id))));
    auto uni = [&rng](double a, double b) {
      return std::uniform_real_distribution<double>(a, b)(rng);
    };
    if (params.force_onset_s >= 0.0) {
      perm_onset[id] = static_cast<int>(params.force_onset_s * scenario.rate_hz + 0.5);
      continue;
    }
    if (uni(0.0, 1.0) < params.never_observed_prob) {
      perm_onset[id] = 0;
      continue;
    }
    const double p_keep = params.never_observed_prob < 1.0
                              ? params.final_observed_fraction / (1.0 - params.never_observed_prob)
                              : 0.0;
    if (uni(0.0, 1.0) >= p_keep) {
      perm_onset[id] =
          static_cast<int>(uni(params.onset_min_frac, 1.0) * (n_frames - 1));
    }
    if (uni(0.0, 1.0) < params.temporary_gap_prob) {
      const int len = std::max(1, static_cast<int>(uni(params.gap_min_s, params.gap_max_s) / dt));
      const int from = static_cast<int>(uni(0.1, 0.8) * n_frames);
      gaps[id] = {from, from + len};
    }
  }

  for (int f = 0; f < n_frames; ++f) {
    for (auto& a : scenario.frames[static_cast<std::size_t>(f)].agents) {
      bool observed = true;
      auto po = perm_onset.find(a.id);
      if (po != perm_onset.end() && f >= po->second) observed = false;
      auto g = gaps.find(a.id);
      if (g != gaps.end() && f >= g->second.first && f < g->second.second) observed = false;
      a.observed = observed;
    }
  }
}

void rasterize_occupancy(std::span<const AgentFrameState> agents, const GridGeometry& geom,
                         std::span<float> out) {
  if (static_cast<std::int64_t>(out.size()) != geom.cells()) {
    throw ShapeError("occupancy buffer size does not match grid");
  }
  std::fill(out.begin(), out.end(), 0.0f);
  const int px = geom.px;
  struct Box {
    double cx, cy, cos_t, sin_t, hl, hw, radius;
    int row_lo, row_hi;
  };
  std::vector<Box> boxes;
  boxes.reserve(agents.size());
  const double half = geom.extent_m / 2.0;
  const double mpp = geom.m_per_px();
  for (const auto& a : agents) {
    Box b;
    b.cx = a.x;
    b.cy = a.y;
    b.cos_t = std::cos(a.theta);
    b.sin_t = std::sin(a.theta);
    b.hl = a.length / 2.0;
    b.hw = a.width / 2.0;
    b.radius = std::hypot(b.hl, b.hw);
    const double y_lo = a.y - b.radius, y_hi = a.y + b.radius;
    b.row_lo = std::max(0, static_cast<int>((y_lo - (geom.center_y - half)) / mpp) - 1);
    b.row_hi = std::min(px - 1, static_cast<int>((y_hi - (geom.center_y - half)) / mpp) + 1);
    if (b.row_lo <= b.row_hi) boxes.push_back(b);
  }

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(kernels::max_threads()) if (px >= 128 && boxes.size() > 1)
#endif
  for (int r = 0; r < px; ++r) {
    float* row = out.data() + static_cast<std::size_t>(r) * px;
    for (const auto& b : boxes) {
      if (r < b.row_lo || r > b.row_hi) continue;
      const double py = geom.center_y - half + (r + 0.5) * mpp;
      const double col_center = (b.cx - (geom.center_x - half)) / mpp;
      const int c_lo = std::max(0, static_cast<int>(col_center - b.radius / mpp) - 1);
      const int c_hi = std::min(px - 1, static_cast<int>(col_center + b.radius / mpp) + 1);
      for (int c = c_lo; c <= c_hi; ++c) {
        const double pxx = geom.center_x - half + (c + 0.5) * mpp;
        const double dx = pxx - b.cx;
        const double dy = py - b.cy;
        const double lx = b.cos_t * dx + b.sin_t * dy;
        const double ly = -b.sin_t * dx + b.cos_t * dy;
        if (std::abs(lx) <= b.hl && std::abs(ly) <= b.hw) row[c] = 1.0f;
      }
    }
  }
}

std::vector<int> never_observed_ids(const Scenario& scenario, int frame_idx, int present_frame) {
  std::set<int> seen;
  for (int f = 0; f <= present_frame && f < scenario.frame_count(); ++f) {
    for (const auto& a : scenario.frames[static_cast<std::size_t>(f)].agents) {
      if (a.observed) seen.insert(a.id);
    }
  }
  std::vector<int> out;
  for (const auto& a : scenario.frames[static_cast<std::size_t>(frame_idx)].agents) {
    if (!seen.count(a.id)) out.push_back(a.id);
  }
  return out;
}

TargetGrids render_targets(const Scenario& scenario, const GridGeometry& geom, int frame_idx,
                           const TargetOptions& opts) {
  const auto& frame = scenario.frames.at(static_cast<std::size_t>(frame_idx));
  std::vector<AgentFrameState> agents = frame.agents;
  if (opts.filter_observable) {
    const auto drop = never_observed_ids(scenario, frame_idx, opts.present_frame);
    std::erase_if(agents, [&drop](const AgentFrameState& a) {
      return std::find(drop.begin(), drop.end(), a.id) != drop.end();
    });
  }

  TargetGrids t;
  t.occupancy.resize(static_cast<std::size_t>(geom.cells()));
  rasterize_occupancy(agents, geom, t.occupancy);

  if (opts.flow_dt_frames > 0) {
    t.flow_x.assign(static_cast<std::size_t>(geom.cells()), 0.0f);
    t.flow_y.assign(static_cast<std::size_t>(geom.cells()), 0.0f);
    t.flow_valid.assign(static_cast<std::size_t>(geom.cells()), 0);
    const int prev_idx = frame_idx - opts.flow_dt_frames;
    std::map<int, const AgentFrameState*> prev;
    if (prev_idx >= 0) {
      for (const auto& a : scenario.frames[static_cast<std::size_t>(prev_idx)].agents) {
        prev[a.id] = &a;
      }
    }
    std::vector<float> one(static_cast<std::size_t>(geom.cells()));
    for (const auto& a : agents) {
      auto it = prev.find(a.id);
      if (it == prev.end()) continue;
      // Flow points from current occupancy back toward its origin, in pixels.
      const float fx = static_cast<float>((it->second->x - a.x) / geom.m_per_px());
      const float fy = static_cast<float>((it->second->y - a.y) / geom.m_per_px());
      rasterize_occupancy(std::span<const AgentFrameState>(&a, 1), geom, one);
      for (std::int64_t i = 0; i < geom.cells(); ++i) {
        if (one[static_cast<std::size_t>(i)] > 0.5f) {
          t.flow_x[static_cast<std::size_t>(i)] = fx;
          t.flow_y[static_cast<std::size_t>(i)] = fy;
          t.flow_valid[static_cast<std::size_t>(i)] = 1;
        }
      }
    }
  }
  return t;
}

namespace {

using nlohmann::json;

json roi_to_json(const RegionOfInterest& roi) {
  return json{roi.center_x, roi.center_y, roi.extent_x, roi.extent_y};
}

}  // namespace

void save_scenario(const Scenario& sc, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write scenario file: " + path);
  json header;
  header["schema_version"] = sc.schema_version;
  header["duration_s"] = sc.duration_s;
  header["rate_hz"] = sc.rate_hz;
  header["roi"] = roi_to_json(sc.roi);
  header["seed"] = sc.seed;
  json splines = json::array();
  for (const auto& line : sc.splines) {
    json jl = json::array();
    for (const auto& p : line) jl.push_back(json{p[0], p[1]});
    splines.push_back(jl);
  }
  header["splines"] = splines;
  os << header.dump() << "\n";

  for (const auto& f : sc.frames) {
    json rec;
    rec["t"] = f.t_ms;
    json agents = json::array();
    for (const auto& a : f.agents) {
      agents.push_back(json{{"id", a.id},
                            {"x", a.x},
                            {"y", a.y},
                            {"theta", a.theta},
                            {"vx", a.vx},
                            {"vy", a.vy},
                            {"vtheta", a.vtheta},
                            {"len", a.length},
                            {"wid", a.width},
                            {"class", a.cls},
                            {"observed", a.observed ? 1 : 0}});
    }
    rec["agents"] = agents;
    json signals = json::array();
    for (const auto& s : f.signals) {
      signals.push_back(json{{"x", s.x}, {"y", s.y}, {"state", s.state}});
    }
    rec["signals"] = signals;
    os << rec.dump() << "\n";
  }
  if (!os) throw IoError("failed writing scenario file: " + path);
}

Scenario load_scenario(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open scenario file: " + path);
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty scenario file: " + path);
  json header = json::parse(line);
  Scenario sc;
  sc.schema_version = header.at("schema_version").get<int>();
  if (sc.schema_version != 1) {
    throw IoError("unsupported scenario schema version " +
                  std::to_string(sc.schema_version));
  }
  sc.duration_s = header.at("duration_s").get<double>();
  sc.rate_hz = header.at("rate_hz").get<double>();
  const auto roi = header.at("roi");
  sc.roi = RegionOfInterest{roi[0], roi[1], roi[2], roi[3]};
  sc.seed = header.at("seed").get<std::uint64_t>();
  for (const auto& jl : header.at("splines")) {
    Polyline poly;
    for (const auto& p : jl) poly.push_back({p[0].get<double>(), p[1].get<double>()});
    sc.splines.push_back(std::move(poly));
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    Frame f;
    f.t_ms = rec.at("t").get<std::int64_t>();
    for (const auto& ja : rec.at("agents")) {
      AgentFrameState a;
      a.id = ja.at("id").get<int>();
      a.x = ja.at("x").get<double>();
      a.y = ja.at("y").get<double>();
      a.theta = ja.at("theta").get<double>();
      a.vx = ja.at("vx").get<double>();
      a.vy = ja.at("vy").get<double>();
      a.vtheta = ja.at("vtheta").get<double>();
      a.length = ja.at("len").get<double>();
      a.width = ja.at("wid").get<double>();
      a.cls = ja.at("class").get<int>();
      a.observed = ja.at("observed").get<int>() != 0;
      f.agents.push_back(a);
    }
    for (const auto& js : rec.at("signals")) {
      f.signals.push_back({js.at("x").get<double>(), js.at("y").get<double>(),
                           js.at("state").get<int>()});
    }
    sc.frames.push_back(std::move(f));
  }
  return sc;
}

}  // namespace latentcast
