#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "latentcast/tokenizer.hpp"

using namespace latentcast;

namespace {

const FeatureBanks& banks() {
  static FeatureBanks b = FeatureBanks::from(ModelConfig::full());
  return b;
}

RegionOfInterest roi() { return {}; }

}  // namespace

TEST_CASE("agent tokenization") {
  SUBCASE("empty list produces one valid all-zero dummy token") {
    auto set = tokenize_agents<float>({}, roi(), 0, banks());
    CHECK(set.tokens.shape()[0] == kAgentCapacity);
    CHECK(set.tokens.shape()[1] == kAgentTokenWidth);
    CHECK(set.valid_count() == 1);
    CHECK(set.mask[0] == 1);
    for (std::int64_t j = 0; j < kAgentTokenWidth; ++j) CHECK(set.tokens.at(0, j) == 0.0f);
  }
  SUBCASE("agent at the ROI center matches the composed encoding") {
    AgentObservation a;
    a.x = a.y = a.theta = 0.0;
    a.vx = a.vy = a.vtheta = 0.0;
    a.length = 4.0;
    a.width = 2.0;
    a.cls = AgentClass::vehicle;
    auto set = tokenize_agents<float>(std::vector{a}, roi(), 0, banks());
    CHECK(set.valid_count() == 1);
    // Pose sinusoid of p = 0: per element 64 sines (0) then 64 cosines (1).
    for (int e = 0; e < 3; ++e) {
      for (int i = 0; i < 64; ++i) {
        CHECK(set.tokens.at(0, e * 128 + i) == 0.0f);
        CHECK(set.tokens.at(0, e * 128 + 64 + i) == 1.0f);
      }
    }
    CHECK(set.tokens.at(0, 384) == 0.0f);
    CHECK(set.tokens.at(0, 385) == 0.0f);
    CHECK(set.tokens.at(0, 386) == 0.0f);
    CHECK(set.tokens.at(0, 387) == doctest::Approx(0.4));
    CHECK(set.tokens.at(0, 388) == doctest::Approx(0.2));
    CHECK(set.tokens.at(0, 389) == 1.0f);
    CHECK(set.tokens.at(0, 390) == 0.0f);
    CHECK(set.tokens.at(0, 391) == 0.0f);
  }
  SUBCASE("overflow keeps the 128 agents nearest the ROI center") {
    std::vector<AgentObservation> obs;
    for (int i = 0; i < 200; ++i) {
      AgentObservation a;
      a.x = 0.35 * i;  // increasing distance from center
      a.y = 0.0;
      obs.push_back(a);
    }
    auto set = tokenize_agents<float>(obs, roi(), 0, banks());
    CHECK(set.valid_count() == kAgentCapacity);
    // The survivors are the 128 nearest: indices 0..127, i.e. x in [0, 44.45].
    // Check via the raw normalized x recovered from the size/rate channels
    // being impossible; instead re-tokenize just the nearest 128 and compare.
    auto expected =
        tokenize_agents<float>(std::span(obs.data(), 128), roi(), 0, banks());
    for (std::int64_t i = 0; i < set.tokens.numel(); ++i) {
      CHECK(set.tokens.at(i) == expected.tokens.at(i));
    }
  }
  SUBCASE("unobserved and out-of-ROI agents are dropped") {
    AgentObservation hidden;
    hidden.observed = false;
    AgentObservation outside;
    outside.x = 90.0;  // beyond the 80 m half extent
    auto set = tokenize_agents<float>(std::vector{hidden, outside}, roi(), 0, banks());
    CHECK(set.valid_count() == 1);  // dummy only
    for (std::int64_t j = 0; j < kAgentTokenWidth; ++j) CHECK(set.tokens.at(0, j) == 0.0f);
  }
  SUBCASE("valid token rows are a set: input order does not matter") {
    std::mt19937 rng(9);
    std::uniform_real_distribution<double> d(-70.0, 70.0);
    std::vector<AgentObservation> obs;
    for (int i = 0; i < 7; ++i) {
      AgentObservation a;
      a.x = d(rng);
      a.y = d(rng);
      a.theta = d(rng) / 30.0;
      a.vx = d(rng) / 10.0;
      obs.push_back(a);
    }
    auto fwd = tokenize_agents<float>(obs, roi(), 0, banks());
    std::reverse(obs.begin(), obs.end());
    auto rev = tokenize_agents<float>(obs, roi(), 0, banks());

    auto row_set = [](const TokenSet<float>& s) {
      std::set<std::vector<float>> rows;
      for (std::int64_t i = 0; i < s.tokens.shape()[0]; ++i) {
        if (!s.mask[static_cast<std::size_t>(i)]) continue;
        std::vector<float> row;
        for (std::int64_t j = 0; j < s.tokens.shape()[1]; ++j) row.push_back(s.tokens.at(i, j));
        rows.insert(std::move(row));
      }
      return rows;
    };
    CHECK(row_set(fwd) == row_set(rev));
  }
  SUBCASE("masked rows are all zero") {
    AgentObservation a;
    auto set = tokenize_agents<float>(std::vector{a}, roi(), 0, banks());
    for (std::int64_t i = 0; i < set.tokens.shape()[0]; ++i) {
      if (set.mask[static_cast<std::size_t>(i)]) continue;
      for (std::int64_t j = 0; j < set.tokens.shape()[1]; ++j) {
        CHECK(set.tokens.at(i, j) == 0.0f);
      }
    }
  }
}

TEST_CASE("signal tokenization") {
  SUBCASE("token width is 30*2*2 + 8 = 128") {
    SignalObservation s{0.0, 0.0, 0};
    auto set = tokenize_signals<float>(std::vector{s}, roi(), 0, banks());
    CHECK(set.tokens.shape()[0] == kSignalCapacity);
    CHECK(set.tokens.shape()[1] == 128);
    // Center position: 60 sin entries 0, 60 cos entries 1 (30 per coord).
    for (int e = 0; e < 2; ++e) {
      for (int i = 0; i < 30; ++i) {
        CHECK(set.tokens.at(0, e * 60 + i) == 0.0f);
        CHECK(set.tokens.at(0, e * 60 + 30 + i) == 1.0f);
      }
    }
    CHECK(set.tokens.at(0, 120) == 1.0f);
    for (int i = 1; i < 8; ++i) CHECK(set.tokens.at(0, 120 + i) == 0.0f);
  }
  SUBCASE("empty list produces a dummy token") {
    auto set = tokenize_signals<float>({}, roi(), 0, banks());
    CHECK(set.valid_count() == 1);
  }
  SUBCASE("state outside [0,8) is rejected") {
    SignalObservation s{0.0, 0.0, 8};
    CHECK_THROWS_AS(tokenize_signals<float>(std::vector{s}, roi(), 0, banks()), UsageError);
  }
}

TEST_CASE("pad_or_dummy") {
  std::vector<std::vector<float>> none;
  auto d = pad_or_dummy<float>(none, 4, 3, TokenKind::signal, 0);
  CHECK(d.valid_count() == 1);
  CHECK(d.tokens.shape()[0] == 4);

  std::vector<std::vector<float>> two{{1, 2, 3}, {4, 5, 6}};
  auto p = pad_or_dummy<float>(two, 4, 3, TokenKind::signal, 0);
  CHECK(p.valid_count() == 2);
  CHECK(p.mask[0] == 1);
  CHECK(p.mask[3] == 0);
  CHECK(p.tokens.at(1, 2) == 6.0f);
  CHECK(p.tokens.at(2, 0) == 0.0f);

  std::vector<std::vector<float>> four{{1, 1, 1}, {2, 2, 2}, {3, 3, 3}, {4, 4, 4}};
  auto f = pad_or_dummy<float>(four, 4, 3, TokenKind::signal, 0);
  CHECK(f.valid_count() == 4);
}

TEST_CASE("roadgraph rasterization") {
  SUBCASE("no splines leaves the raster empty") {
    auto raster = rasterize_roadgraph({}, roi(), 256);
    for (float v : raster.image) CHECK(v == 0.0f);
  }
  SUBCASE("horizontal line through the center fills one pixel row") {
    std::vector<Polyline> lines{{{-80.0, 0.0}, {80.0, 0.0}}};
    auto raster = rasterize_roadgraph(lines, roi(), 256);
    int total = 0;
    std::set<int> rows_hit;
    for (int r = 0; r < 256; ++r) {
      for (int c = 0; c < 256; ++c) {
        if (raster.at(r, c) > 0.5f) {
          ++total;
          rows_hit.insert(r);
        }
      }
    }
    CHECK(total >= 254);
    CHECK(total <= 258);
    CHECK(rows_hit.size() <= 2);  // within one row of the center, no AA
  }
  SUBCASE("spline outside the ROI leaves the raster empty") {
    std::vector<Polyline> lines{{{200.0, 300.0}, {400.0, 300.0}}};
    auto raster = rasterize_roadgraph(lines, roi(), 128);
    for (float v : raster.image) CHECK(v == 0.0f);
  }
}

TEST_CASE("road token encoding") {
  std::mt19937 rng(21);
  RoadEncoderWeights<float> w;
  w.w1 = glorot_uniform<float>(1024, kRoadMlpWidth, rng);
  w.b1 = Tensor<float>::zeros({kRoadMlpWidth});
  w.w2 = glorot_uniform<float>(kRoadMlpWidth, kRoadMlpWidth, rng);
  w.b2 = Tensor<float>::zeros({kRoadMlpWidth});

  SUBCASE("64 tokens of width 190 + 66 = 256") {
    RoadRaster raster{256, std::vector<float>(256 * 256, 0.0f)};
    auto set = encode_road_tokens(raster, w, banks());
    CHECK(set.tokens.shape()[0] == 64);
    CHECK(set.tokens.shape()[1] == 256);
    CHECK(set.valid_count() == 64);
  }
  SUBCASE("zero raster with zero bias zeroes the content dims only") {
    RoadRaster raster{256, std::vector<float>(256 * 256, 0.0f)};
    auto set = encode_road_tokens(raster, w, banks());
    for (std::int64_t t = 0; t < 64; ++t) {
      for (std::int64_t j = 0; j < kRoadMlpWidth; ++j) CHECK(set.tokens.at(t, j) == 0.0f);
    }
    // Positional dims still distinguish tokens.
    bool all_same = true;
    for (std::int64_t t = 1; t < 64 && all_same; ++t) {
      for (std::int64_t j = kRoadMlpWidth; j < 256; ++j) {
        if (set.tokens.at(t, j) != set.tokens.at(0, j)) {
          all_same = false;
          break;
        }
      }
    }
    CHECK_FALSE(all_same);
  }
  SUBCASE("translating the raster by one patch permutes token contents") {
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    RoadRaster raster{256, std::vector<float>(256 * 256)};
    for (auto& v : raster.image) v = d(rng) > 0.9f ? 1.0f : 0.0f;
    RoadRaster shifted{256, std::vector<float>(256 * 256, 0.0f)};
    for (int r = 0; r < 256; ++r) {
      for (int c = 32; c < 256; ++c) {
        shifted.image[static_cast<std::size_t>(r) * 256 + c] =
            raster.image[static_cast<std::size_t>(r) * 256 + c - 32];
      }
    }
    auto base = encode_road_tokens(raster, w, banks());
    auto moved = encode_road_tokens(shifted, w, banks());
    for (int pi = 0; pi < 8; ++pi) {
      for (int pj = 0; pj + 1 < 8; ++pj) {
        for (std::int64_t j = 0; j < kRoadMlpWidth; ++j) {
          CHECK(moved.tokens.at(pi * 8 + pj + 1, j) ==
                doctest::Approx(base.tokens.at(pi * 8 + pj, j)).epsilon(1e-6));
        }
      }
    }
  }
  SUBCASE("weight shape mismatch is a configuration error") {
    RoadRaster raster{64, std::vector<float>(64 * 64, 0.0f)};
    // 64 px raster has 2x2 patches of 32 px; weights expect 1024 inputs, so
    // this is fine. A wrong-size raster must fail.
    auto ok = encode_road_tokens(raster, w, banks());
    CHECK(ok.tokens.shape()[0] == 4);
    RoadRaster bad{100, std::vector<float>(100 * 100, 0.0f)};
    CHECK_THROWS_AS(encode_road_tokens(bad, w, banks()), ConfigError);
  }
}
