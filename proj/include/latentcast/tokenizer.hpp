#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "latentcast/weights.hpp"

namespace latentcast {

enum class AgentClass : int { vehicle = 0, pedestrian = 1, cyclist = 2 };

struct AgentObservation {
  double x = 0, y = 0, theta = 0;     // meters, radians
  double vx = 0, vy = 0, vtheta = 0;  // m/s, rad/s
  double length = 4.5, width = 2.0;   // meters
  AgentClass cls = AgentClass::vehicle;
  bool observed = true;
};

struct SignalObservation {
  double x = 0, y = 0;
  int state = 0;  // [0, kSignalStates)
};

struct RoadRaster {
  int px = 0;
  std::vector<float> image;  // px*px, row 0 at minimum y, values in [0,1]

  float at(int row, int col) const { return image[static_cast<std::size_t>(row) * px + col]; }
};

using Polyline = std::vector<std::array<double, 2>>;

enum class TokenKind { agent, signal, road };

// Fixed-capacity token matrix with a validity mask. Masked rows are always
// all-zero; an empty observation set is represented by one valid all-zero
// dummy token so downstream attention stays well-defined.
template <typename T>
struct TokenSet {
  TokenKind kind = TokenKind::agent;
  std::int64_t time_ms = 0;
  Tensor<T> tokens;                // capacity x width
  std::vector<std::uint8_t> mask;  // capacity

  int valid_count() const {
    int n = 0;
    for (auto m : mask) n += (m != 0);
    return n;
  }

  // Valid rows only, order preserved. Equivalent to masked attention because
  // masked keys carry exactly zero weight.
  TokenSet compact() const {
    TokenSet out;
    out.kind = kind;
    out.time_ms = time_ms;
    const std::int64_t w = tokens.shape()[1];
    const int n = valid_count();
    out.tokens = Tensor<T>::zeros({n, w});
    out.mask.assign(static_cast<std::size_t>(n), 1);
    std::int64_t r = 0;
    for (std::int64_t i = 0; i < tokens.shape()[0]; ++i) {
      if (!mask[static_cast<std::size_t>(i)]) continue;
      for (std::int64_t j = 0; j < w; ++j) out.tokens.at(r, j) = tokens.at(i, j);
      ++r;
    }
    return out;
  }
};

// Packs rows into a capacity-sized TokenSet; empty input becomes a single
// valid dummy token of all zeros.
template <typename T>
TokenSet<T> pad_or_dummy(const std::vector<std::vector<T>>& rows, int capacity, int width,
                         TokenKind kind, std::int64_t time_ms) {
  if (capacity < 1) throw UsageError("token capacity must be >= 1");
  TokenSet<T> set;
  set.kind = kind;
  set.time_ms = time_ms;
  set.tokens = Tensor<T>::zeros({capacity, width});
  set.mask.assign(static_cast<std::size_t>(capacity), 0);
  if (rows.empty()) {
    set.mask[0] = 1;  // dummy token
    return set;
  }
  if (static_cast<int>(rows.size()) > capacity) {
    throw UsageError("token rows exceed capacity");
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<int>(rows[i].size()) != width) {
      throw ShapeError("token row width mismatch");
    }
    for (int j = 0; j < width; ++j) set.tokens.at(static_cast<std::int64_t>(i), j) = rows[i][static_cast<std::size_t>(j)];
    set.mask[i] = 1;
  }
  return set;
}

// Agent token: 384 pose sinusoid dims, 3 normalized rates, 2 sizes (meters
// over 10), 3-way class one-hot. Unobserved and out-of-ROI agents are
// dropped; overflow keeps the tokens nearest the ROI center.
template <typename T>
TokenSet<T> tokenize_agents(std::span<const AgentObservation> obs, const RegionOfInterest& roi,
                            std::int64_t time_ms, const FeatureBanks& banks) {
  struct Candidate {
    double dist2;
    std::size_t index;
  };
  std::vector<Candidate> keep;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (!obs[i].observed) continue;
    const auto n = normalize_position(obs[i].x, obs[i].y, roi);
    if (std::abs(n[0]) > 1.0 || std::abs(n[1]) > 1.0) continue;
    keep.push_back({n[0] * n[0] + n[1] * n[1], i});
  }
  if (static_cast<int>(keep.size()) > kAgentCapacity) {
    std::stable_sort(keep.begin(), keep.end(),
                     [](const Candidate& a, const Candidate& b) { return a.dist2 < b.dist2; });
    keep.resize(kAgentCapacity);
    // Restore input order among the survivors so permutation tests see a set.
    std::stable_sort(keep.begin(), keep.end(),
                     [](const Candidate& a, const Candidate& b) { return a.index < b.index; });
  }

  const std::array<FrequencyBank, 3> pose_banks{banks.agent_pose, banks.agent_pose,
                                                banks.agent_pose};
  std::vector<std::vector<T>> rows;
  rows.reserve(keep.size());
  for (const auto& c : keep) {
    const auto& a = obs[c.index];
    const auto n = normalize_position(a.x, a.y, roi);
    std::vector<T> row(kAgentTokenWidth, T(0));
    const std::array<double, 3> pose{n[0], n[1], normalize_heading(a.theta)};
    sin_encode_vector<T>(pose, pose_banks, std::span<T>(row.data(), 384));
    row[384] = static_cast<T>(a.vx / roi.half_x());
    row[385] = static_cast<T>(a.vy / roi.half_y());
    row[386] = static_cast<T>(a.vtheta / std::numbers::pi);
    row[387] = static_cast<T>(a.length / 10.0);
    row[388] = static_cast<T>(a.width / 10.0);
    row[389 + static_cast<int>(a.cls)] = T(1);
    rows.push_back(std::move(row));
  }
  return pad_or_dummy(rows, kAgentCapacity, kAgentTokenWidth, TokenKind::agent, time_ms);
}

// Signal token: 120 position sinusoid dims plus an 8-way state one-hot.
template <typename T>
TokenSet<T> tokenize_signals(std::span<const SignalObservation> obs, const RegionOfInterest& roi,
                             std::int64_t time_ms, const FeatureBanks& banks) {
  const std::array<FrequencyBank, 2> pos_banks{banks.signal_pos, banks.signal_pos};
  std::vector<std::vector<T>> rows;
  for (const auto& s : obs) {
    if (s.state < 0 || s.state >= kSignalStates) {
      throw UsageError("signal state " + std::to_string(s.state) + " outside [0,8)");
    }
    if (static_cast<int>(rows.size()) >= kSignalCapacity) break;
    const auto n = normalize_position(s.x, s.y, roi);
    std::vector<T> row(kSignalTokenWidth, T(0));
    const std::array<double, 2> pos{n[0], n[1]};
    sin_encode_vector<T>(pos, pos_banks, std::span<T>(row.data(), 120));
    row[120 + s.state] = T(1);
    rows.push_back(std::move(row));
  }
  return pad_or_dummy(rows, kSignalCapacity, kSignalTokenWidth, TokenKind::signal, time_ms);
}

// 1-pixel-wide polyline rasterization of lane markings over the ROI, no
// anti-aliasing. Row 0 sits at the minimum y edge.
RoadRaster rasterize_roadgraph(std::span<const Polyline> splines, const RegionOfInterest& roi,
                               int px);

// Patch-MLP road encoder: the raster splits into 32x32 patches, each patch
// flattens through a learned two-layer MLP into 190 channels and is
// concatenated with the sinusoidal encoding of its center (64 dims) plus the
// two raw normalized center coordinates.
template <typename T>
TokenSet<T> encode_road_tokens(const RoadRaster& raster, const RoadEncoderWeights<T>& w,
                               const FeatureBanks& banks, Tape<T>* tape = nullptr) {
  if (raster.px <= 0 || raster.px % kRoadPatchPx != 0) {
    throw ConfigError("road raster resolution " + std::to_string(raster.px) +
                      " is not a multiple of the patch size " + std::to_string(kRoadPatchPx));
  }
  const int pps = raster.px / kRoadPatchPx;
  const int n_tokens = pps * pps;
  const int patch_pixels = kRoadPatchPx * kRoadPatchPx;
  if (w.w1.shape()[0] != patch_pixels || w.w1.shape()[1] != kRoadMlpWidth) {
    throw ConfigError("road encoder weight shape " + w.w1.shape_string() +
                      " does not match patch size");
  }

  Tensor<T> patches = Tensor<T>::zeros({n_tokens, patch_pixels});
  for (int pi = 0; pi < pps; ++pi) {
    for (int pj = 0; pj < pps; ++pj) {
      const int t = pi * pps + pj;
      for (int r = 0; r < kRoadPatchPx; ++r) {
        for (int c = 0; c < kRoadPatchPx; ++c) {
          patches.at(t, r * kRoadPatchPx + c) =
              static_cast<T>(raster.at(pi * kRoadPatchPx + r, pj * kRoadPatchPx + c));
        }
      }
    }
  }
  Tensor<T> h = gelu(add_rowvec(matmul(patches, w.w1, tape), w.b1, tape), tape);
  Tensor<T> content = add_rowvec(matmul(h, w.w2, tape), w.b2, tape);

  const std::array<FrequencyBank, 2> pos_banks{banks.road_pos, banks.road_pos};
  Tensor<T> pos = Tensor<T>::zeros({n_tokens, kRoadTokenWidth - kRoadMlpWidth});
  for (int pi = 0; pi < pps; ++pi) {
    for (int pj = 0; pj < pps; ++pj) {
      const int t = pi * pps + pj;
      const double cx = -1.0 + (2.0 * pj + 1.0) / pps;
      const double cy = -1.0 + (2.0 * pi + 1.0) / pps;
      std::vector<T> enc = sin_encode_vector<T>(std::array<double, 2>{cx, cy}, pos_banks);
      for (std::size_t j = 0; j < enc.size(); ++j) pos.at(t, static_cast<std::int64_t>(j)) = enc[j];
      pos.at(t, static_cast<std::int64_t>(enc.size())) = static_cast<T>(cx);
      pos.at(t, static_cast<std::int64_t>(enc.size()) + 1) = static_cast<T>(cy);
    }
  }

  TokenSet<T> set;
  set.kind = TokenKind::road;
  set.time_ms = 0;
  set.tokens = concat_cols<T>({content, pos}, tape);
  set.mask.assign(static_cast<std::size_t>(n_tokens), 1);
  return set;
}

}  // namespace latentcast
