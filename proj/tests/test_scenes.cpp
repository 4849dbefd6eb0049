#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "latentcast/scenes.hpp"
#include "oracles.hpp"

using namespace latentcast;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("generation is a pure function of (params, seed)") {
  ScenarioParams p;
  p.max_agents = 5;
  auto a = generate_scenario(p, 42);
  auto b = generate_scenario(p, 42);
  save_scenario(a, "/tmp/latentcast_sc_a.jsonl");
  save_scenario(b, "/tmp/latentcast_sc_b.jsonl");
  CHECK(slurp("/tmp/latentcast_sc_a.jsonl") == slurp("/tmp/latentcast_sc_b.jsonl"));
  auto c = generate_scenario(p, 43);
  save_scenario(c, "/tmp/latentcast_sc_c.jsonl");
  CHECK(slurp("/tmp/latentcast_sc_a.jsonl") != slurp("/tmp/latentcast_sc_c.jsonl"));
}

TEST_CASE("zero agents yields a valid empty scenario") {
  ScenarioParams p;
  p.min_agents = p.max_agents = 0;
  auto sc = generate_scenario(p, 1);
  CHECK(sc.frame_count() == 91);
  for (const auto& f : sc.frames) CHECK(f.agents.empty());
}

TEST_CASE("constant-velocity kinematics advance v*dt per frame") {
  ScenarioParams p;
  p.w_const_velocity = 1.0;
  p.w_stop_go = p.w_turn = p.w_queue = 0.0;
  p.pedestrian_prob = p.cyclist_prob = 0.0;
  p.min_agents = p.max_agents = 3;
  p.occlude = false;
  auto sc = generate_scenario(p, 7);
  const double dt = 1.0 / p.rate_hz;
  for (int f = 1; f < sc.frame_count(); ++f) {
    for (const auto& a : sc.frames[static_cast<std::size_t>(f)].agents) {
      for (const auto& prev : sc.frames[static_cast<std::size_t>(f - 1)].agents) {
        if (prev.id != a.id) continue;
        const double speed = std::hypot(a.vx, a.vy);
        const double step = std::hypot(a.x - prev.x, a.y - prev.y);
        CHECK(step == doctest::Approx(speed * dt).epsilon(0.05));
      }
    }
  }
}

TEST_CASE("kinematic continuity bound |dp| <= v_max * dt") {
  ScenarioParams p;
  p.max_agents = 6;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto sc = generate_scenario(p, seed);
    const double limit = p.v_max / p.rate_hz + 1e-6;
    for (int f = 1; f < sc.frame_count(); ++f) {
      for (const auto& a : sc.frames[static_cast<std::size_t>(f)].agents) {
        for (const auto& prev : sc.frames[static_cast<std::size_t>(f - 1)].agents) {
          if (prev.id != a.id) continue;
          CHECK(std::hypot(a.x - prev.x, a.y - prev.y) <= limit);
        }
      }
    }
  }
}

TEST_CASE("oriented box rasterization") {
  const GridGeometry geom{0.0, 0.0, 80.0, 256};
  SUBCASE("axis-aligned 4x2 vehicle area") {
    AgentFrameState a;
    a.x = 3.0;
    a.y = -5.0;
    a.theta = 0.0;
    a.length = 4.0;
    a.width = 2.0;
    std::vector<float> grid(static_cast<std::size_t>(geom.cells()));
    rasterize_occupancy(std::vector{a}, geom, grid);
    int count = 0;
    for (float v : grid) count += v > 0.5f;
    CHECK(std::abs(count - 81.92) <= 8.0);  // 8 m^2 at (256/80)^2 px/m^2
  }
  SUBCASE("agent fully outside the grid marks nothing") {
    AgentFrameState a;
    a.x = 100.0;
    std::vector<float> grid(static_cast<std::size_t>(geom.cells()));
    rasterize_occupancy(std::vector{a}, geom, grid);
    for (float v : grid) CHECK(v == 0.0f);
  }
  SUBCASE("rotating by 90 degrees swaps the footprint axes") {
    AgentFrameState a;
    a.x = -7.0;
    a.y = 2.0;
    a.theta = 0.3;
    a.length = 5.0;
    a.width = 2.0;
    std::vector<float> g0(static_cast<std::size_t>(geom.cells()));
    std::vector<float> g1(g0.size());
    rasterize_occupancy(std::vector{a}, geom, g0);
    AgentFrameState b = a;
    b.theta += std::numbers::pi / 2.0;
    rasterize_occupancy(std::vector{b}, geom, g1);
    int c0 = 0, c1 = 0;
    for (float v : g0) c0 += v > 0.5f;
    for (float v : g1) c1 += v > 0.5f;
    CHECK(std::abs(c0 - c1) <= 2);
  }
  SUBCASE("matches the scanline oracle pixel for pixel") {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> pos(-35.0, 35.0);
    std::uniform_real_distribution<double> ang(-3.14, 3.14);
    std::uniform_real_distribution<double> len(0.8, 6.0);
    for (int trial = 0; trial < 50; ++trial) {
      AgentFrameState a;
      a.x = pos(rng);
      a.y = pos(rng);
      a.theta = ang(rng);
      a.length = len(rng);
      a.width = len(rng) / 2.0;
      std::vector<float> ours(static_cast<std::size_t>(geom.cells()));
      std::vector<float> oracle(ours.size(), 0.0f);
      rasterize_occupancy(std::vector{a}, geom, ours);
      oracles::scanline_rasterize({a.x, a.y, a.theta, a.length, a.width}, geom.center_x,
                                  geom.center_y, geom.extent_m, geom.px, oracle);
      for (std::size_t i = 0; i < ours.size(); ++i) {
        REQUIRE(ours[i] == oracle[i]);
      }
    }
  }
}

TEST_CASE("occlusion schedules") {
  ScenarioParams p;
  p.min_agents = 3;
  p.max_agents = 5;
  p.occlude = false;
  SUBCASE("probability zero keeps everything observed") {
    auto sc = generate_scenario(p, 11);
    OcclusionParams occ;
    occ.final_observed_fraction = 1.0;
    occ.temporary_gap_prob = 0.0;
    occ.never_observed_prob = 0.0;
    apply_occlusion(sc, occ, 1);
    for (const auto& f : sc.frames) {
      for (const auto& a : f.agents) CHECK(a.observed);
    }
  }
  SUBCASE("forced onset hides every agent afterwards") {
    auto sc = generate_scenario(p, 12);
    OcclusionParams occ;
    occ.force_onset_s = 2.0;
    apply_occlusion(sc, occ, 1);
    for (const auto& f : sc.frames) {
      for (const auto& a : f.agents) {
        if (f.t_ms >= 2000) CHECK_FALSE(a.observed);
        else CHECK(a.observed);
      }
    }
  }
  SUBCASE("unobserved intervals are contiguous") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      auto sc = generate_scenario(p, 50 + seed);
      OcclusionParams occ;
      occ.final_observed_fraction = 0.5;
      occ.temporary_gap_prob = 0.5;
      apply_occlusion(sc, occ, seed);
      std::map<int, std::vector<int>> observed;  // id -> flags by frame
      for (int f = 0; f < sc.frame_count(); ++f) {
        for (const auto& a : sc.frames[static_cast<std::size_t>(f)].agents) {
          observed[a.id].push_back(a.observed ? 1 : 0);
        }
      }
      for (const auto& [id, flags] : observed) {
        // At most two transitions of each direction: 1->0 and 0->1.
        int drops = 0, rises = 0;
        for (std::size_t i = 1; i < flags.size(); ++i) {
          if (flags[i - 1] == 1 && flags[i] == 0) ++drops;
          if (flags[i - 1] == 0 && flags[i] == 1) ++rises;
        }
        CHECK(drops <= 2);
        CHECK(rises <= 1);
      }
    }
  }
  SUBCASE("final-frame observed fraction tracks the target") {
    ScenarioParams q;
    q.min_agents = q.max_agents = 4;
    q.duration_s = 3.0;
    q.occlude = false;
    OcclusionParams occ;
    occ.final_observed_fraction = 0.7;
    occ.temporary_gap_prob = 0.0;
    int observed = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 400; ++seed) {
      auto sc = generate_scenario(q, 1000 + seed);
      apply_occlusion(sc, occ, seed);
      const auto& last = sc.frames.back();
      for (const auto& a : last.agents) {
        total += 1;
        observed += a.observed ? 1 : 0;
      }
    }
    const double frac = static_cast<double>(observed) / total;
    CHECK(std::abs(frac - 0.7) < 0.05);
  }
}

TEST_CASE("observable filtering") {
  ScenarioParams p;
  p.min_agents = p.max_agents = 3;
  p.occlude = false;
  auto sc = generate_scenario(p, 33);
  const GridGeometry geom{0.0, 0.0, 80.0, 64};

  SUBCASE("with everything observed, filtering is the identity") {
    TargetOptions with;
    with.filter_observable = true;
    with.present_frame = 10;
    TargetOptions without;
    without.filter_observable = false;
    without.present_frame = 10;
    for (int f : {0, 10, 40}) {
      auto a = render_targets(sc, geom, f, with);
      auto b = render_targets(sc, geom, f, without);
      CHECK(a.occupancy == b.occupancy);
    }
  }
  SUBCASE("a never-observed agent loses its pixels at every timestep") {
    auto occluded = sc;
    // Hide agent id 0 for the whole sequence.
    for (auto& f : occluded.frames) {
      for (auto& a : f.agents) {
        if (a.id == 0) a.observed = false;
      }
    }
    TargetOptions opts;
    opts.filter_observable = true;
    opts.present_frame = 10;
    for (int f : {0, 10, 40, 80}) {
      auto filtered = render_targets(occluded, geom, f, opts);
      // Rasterize id 0 alone; none of its pixels may appear in the target.
      std::vector<AgentFrameState> only;
      for (const auto& a : occluded.frames[static_cast<std::size_t>(f)].agents) {
        if (a.id == 0) only.push_back(a);
      }
      if (only.empty()) continue;
      std::vector<float> ghost(static_cast<std::size_t>(geom.cells()));
      rasterize_occupancy(only, geom, ghost);
      // Unless another agent overlaps, those pixels must be empty.
      std::vector<AgentFrameState> others;
      for (const auto& a : occluded.frames[static_cast<std::size_t>(f)].agents) {
        if (a.id != 0) others.push_back(a);
      }
      std::vector<float> other_grid(static_cast<std::size_t>(geom.cells()));
      rasterize_occupancy(others, geom, other_grid);
      for (std::size_t i = 0; i < ghost.size(); ++i) {
        if (ghost[i] > 0.5f && other_grid[i] < 0.5f) {
          CHECK(filtered.occupancy[i] == 0.0f);
        }
      }
    }
  }
}

TEST_CASE("flow ground truth equals per-agent displacement on its pixels") {
  ScenarioParams p;
  p.w_const_velocity = 1.0;
  p.w_stop_go = p.w_turn = p.w_queue = 0.0;
  p.pedestrian_prob = p.cyclist_prob = 0.0;
  p.min_agents = p.max_agents = 2;
  p.occlude = false;
  auto sc = generate_scenario(p, 44);
  const GridGeometry geom{0.0, 0.0, 80.0, 64};
  TargetOptions opts;
  opts.flow_dt_frames = 5;
  const int f = 30;
  auto t = render_targets(sc, geom, f, opts);
  REQUIRE_FALSE(t.flow_x.empty());

  // Every valid flow pixel carries exactly the displacement of one of the
  // agents present at the frame (overlaps resolve to the last-drawn agent).
  std::vector<std::pair<float, float>> expected;
  for (const auto& a : sc.frames[static_cast<std::size_t>(f)].agents) {
    for (const auto& b : sc.frames[static_cast<std::size_t>(f - 5)].agents) {
      if (b.id == a.id) {
        expected.emplace_back(static_cast<float>((b.x - a.x) / geom.m_per_px()),
                              static_cast<float>((b.y - a.y) / geom.m_per_px()));
      }
    }
  }
  REQUIRE_FALSE(expected.empty());
  int checked = 0;
  for (std::size_t i = 0; i < t.flow_valid.size(); ++i) {
    if (!t.flow_valid[i]) continue;
    bool found = false;
    for (const auto& [fx, fy] : expected) {
      if (t.flow_x[i] == fx && t.flow_y[i] == fy) found = true;
    }
    CHECK(found);
    ++checked;
  }
  CHECK(checked > 0);
  // Flow is zero outside occupancy.
  for (std::size_t i = 0; i < t.occupancy.size(); ++i) {
    if (t.occupancy[i] < 0.5f) {
      CHECK(t.flow_x[i] == 0.0f);
      CHECK(t.flow_y[i] == 0.0f);
      CHECK(t.flow_valid[i] == 0);
    }
  }
}

TEST_CASE("scenario serialization round trip") {
  ScenarioParams p;
  p.max_agents = 4;
  auto sc = generate_scenario(p, 55);
  save_scenario(sc, "/tmp/latentcast_roundtrip.jsonl");
  auto loaded = load_scenario("/tmp/latentcast_roundtrip.jsonl");
  save_scenario(loaded, "/tmp/latentcast_roundtrip2.jsonl");
  CHECK(slurp("/tmp/latentcast_roundtrip.jsonl") == slurp("/tmp/latentcast_roundtrip2.jsonl"));
  CHECK(loaded.frame_count() == sc.frame_count());
  CHECK(loaded.splines.size() == sc.splines.size());
  CHECK(loaded.seed == sc.seed);
}
