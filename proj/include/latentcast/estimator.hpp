#pragma once

#include <string>

#include "latentcast/tokenizer.hpp"
#include "latentcast/weights.hpp"

namespace latentcast {

// The evolving scene representation: a fixed n_latent x c_latent matrix, a
// clock and a provenance note. Owned by exactly one session at a time.
template <typename T>
struct LatentState {
  Tensor<T> s;
  std::int64_t time_ms = 0;
  std::string last_update;

  LatentState detached() const { return {s.detached(), time_ms, last_update}; }
  LatentState cloned() const { return {s.clone(), time_ms, last_update}; }
};

// Query positions in ROI-normalized coordinates, optionally carrying the
// raster geometry they were generated from.
struct QueryGrid {
  std::vector<std::array<double, 2>> positions;
  GridGeometry geom;
  bool has_geom = false;

  static QueryGrid raster(const GridGeometry& g, const RegionOfInterest& roi) {
    QueryGrid q;
    q.geom = g;
    q.has_geom = true;
    q.positions.reserve(static_cast<std::size_t>(g.cells()));
    for (int r = 0; r < g.px; ++r) {
      for (int c = 0; c < g.px; ++c) {
        const auto m = g.pixel_center(r, c);
        const auto n = normalize_position(m[0], m[1], roi);
        if (std::abs(n[0]) > 1.0 || std::abs(n[1]) > 1.0) {
          throw UsageError("query grid extends outside the region of interest");
        }
        q.positions.push_back(n);
      }
    }
    return q;
  }
};

// Learned queries cross-attend to the first agent observation, followed by
// `depth` self-attention blocks.
template <typename T>
LatentState<T> state_initialize(const TokenSet<T>& a0, const ModelWeights<T>& w,
                                Tape<T>* tape = nullptr) {
  if (a0.kind != TokenKind::agent) {
    throw UsageError("state_initialize requires an agent token set");
  }
  const TokenSet<T> kv = a0.compact();
  Tensor<T> s = transformer_block(w.est.init_queries, kv.tokens, kv.tokens, w.est.init_cross,
                                  nullptr, tape);
  for (const auto& block : w.est.init_self) {
    s = self_attention_block(s, block, tape);
  }
  return {s, a0.time_ms, "init"};
}

// Markovian time evolution: `depth` self-attention blocks; the output depends
// only on the incoming state.
template <typename T>
LatentState<T> time_propagate(const LatentState<T>& state, int period_ms,
                              const ModelWeights<T>& w, Tape<T>* tape = nullptr) {
  auto it = w.est.propagate.find(period_ms);
  if (it == w.est.propagate.end()) {
    std::string have;
    for (const auto& [p, b] : w.est.propagate) have += (have.empty() ? "" : ",") + std::to_string(p);
    throw ConfigError("no propagation variant for period " + std::to_string(period_ms) +
                      " ms (available: " + have + ")");
  }
  Tensor<T> s = state.s;
  for (const auto& block : it->second) {
    s = self_attention_block(s, block, tape);
  }
  return {s, state.time_ms + period_ms, "propagate"};
}

namespace detail {

template <typename T>
void check_alignment(const LatentState<T>& state, const TokenSet<T>& tokens, const char* what) {
  if (state.time_ms != tokens.time_ms) {
    throw TemporalAlignError(std::string(what) + ": state clock " +
                             std::to_string(state.time_ms) + " ms does not match observation at " +
                             std::to_string(tokens.time_ms) + " ms");
  }
}

}  // namespace detail

// Observation updates. The propagated latent state queries the tokenized
// observation; road and signal updates apply one further self-attention.
template <typename T>
LatentState<T> update_agents(const LatentState<T>& state, const TokenSet<T>& at,
                             const ModelWeights<T>& w, Tape<T>* tape = nullptr) {
  if (at.kind != TokenKind::agent) throw UsageError("update_agents requires agent tokens");
  detail::check_alignment(state, at, "update_agents");
  const TokenSet<T> kv = at.compact();
  Tensor<T> s = transformer_block(state.s, kv.tokens, kv.tokens, w.est.agent_cross, nullptr, tape);
  return {s, state.time_ms, "agents"};
}

template <typename T>
LatentState<T> update_signals(const LatentState<T>& state, const TokenSet<T>& tt,
                              const ModelWeights<T>& w, Tape<T>* tape = nullptr) {
  if (tt.kind != TokenKind::signal) throw UsageError("update_signals requires signal tokens");
  if (!w.config.use_signals) throw ConfigError("model was built without the signal pathway");
  detail::check_alignment(state, tt, "update_signals");
  const TokenSet<T> kv = tt.compact();
  Tensor<T> s =
      transformer_block(state.s, kv.tokens, kv.tokens, w.est.signal_cross, nullptr, tape);
  s = self_attention_block(s, w.est.signal_self, tape);
  return {s, state.time_ms, "signals"};
}

template <typename T>
LatentState<T> update_road(const LatentState<T>& state, const TokenSet<T>& road,
                           const ModelWeights<T>& w, Tape<T>* tape = nullptr) {
  if (road.kind != TokenKind::road) throw UsageError("update_road requires road tokens");
  if (!w.config.use_road) throw ConfigError("model was built without the road pathway");
  Tensor<T> s =
      transformer_block(state.s, road.tokens, road.tokens, w.est.road_cross, nullptr, tape);
  s = self_attention_block(s, w.est.road_self, tape);
  return {s, state.time_ms, "road"};
}

// Sinusoidal encodings of the query positions, one row per query. Constant
// per grid, so callers streaming many steps encode once and reuse.
template <typename T>
Tensor<T> encode_query_positions(const QueryGrid& grid, const ModelWeights<T>& w) {
  const std::int64_t nq = static_cast<std::int64_t>(grid.positions.size());
  Tensor<T> q = Tensor<T>::zeros({nq, kQueryWidth});
  const std::array<FrequencyBank, 2> banks{w.banks.query_pos, w.banks.query_pos};
  std::vector<T> enc(static_cast<std::size_t>(kQueryWidth));
  for (std::int64_t i = 0; i < nq; ++i) {
    const auto& p = grid.positions[static_cast<std::size_t>(i)];
    sin_encode_vector<T>(std::array<double, 2>{p[0], p[1]}, banks, std::span<T>(enc));
    for (int j = 0; j < kQueryWidth; ++j) q.at(i, j) = enc[static_cast<std::size_t>(j)];
  }
  return q;
}

// Shared emission pathway: sinusoidally encoded query positions cross-attend
// into the latent state (no attention residual), yielding per-query features.
template <typename T>
Tensor<T> query_features(const LatentState<T>& state, const Tensor<T>& encoded_queries,
                         const ModelWeights<T>& w, Tape<T>* tape = nullptr) {
  return transformer_block(encoded_queries, state.s, state.s, w.est.out_cross, nullptr, tape);
}

template <typename T>
Tensor<T> query_features(const LatentState<T>& state, const QueryGrid& grid,
                         const ModelWeights<T>& w, Tape<T>* tape = nullptr) {
  return query_features(state, encode_query_positions(grid, w), w, tape);
}

// Occupancy logits, one per query position. class_id selects a per-class
// decoder when the model was built class-aware.
template <typename T>
Tensor<T> occupancy_query(const LatentState<T>& state, const QueryGrid& grid,
                          const ModelWeights<T>& w, int class_id = -1, Tape<T>* tape = nullptr) {
  Tensor<T> h = query_features(state, grid, w, tape);
  const Tensor<T>* head_w = &w.est.out_w;
  const Tensor<T>* head_b = &w.est.out_b;
  if (class_id >= 0) {
    if (!w.config.class_aware) {
      throw ConfigError("class_id given but the model has no class-aware decoders");
    }
    if (class_id >= static_cast<int>(w.est.class_heads.size())) {
      throw ConfigError("class_id " + std::to_string(class_id) + " out of range");
    }
    head_w = &w.est.class_heads[static_cast<std::size_t>(class_id)].first;
    head_b = &w.est.class_heads[static_cast<std::size_t>(class_id)].second;
  }
  return add_rowvec(matmul(h, *head_w, tape), *head_b, tape);
}

// Two-channel occupancy-flow output sharing the emission pathway, in
// normalized displacement units per forecast step.
template <typename T>
Tensor<T> flow_query(const LatentState<T>& state, const QueryGrid& grid, const ModelWeights<T>& w,
                     Tape<T>* tape = nullptr) {
  if (!w.config.flow_head) throw ConfigError("flow head is not enabled in this model");
  Tensor<T> h = query_features(state, grid, w, tape);
  return add_rowvec(matmul(h, w.est.flow_w, tape), w.est.flow_b, tape);
}

// Occupancy and flow from one shared feature pass (training fast path).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> occupancy_and_flow_query(const LatentState<T>& state,
                                                         const QueryGrid& grid,
                                                         const ModelWeights<T>& w,
                                                         Tape<T>* tape = nullptr) {
  Tensor<T> h = query_features(state, grid, w, tape);
  Tensor<T> occ = add_rowvec(matmul(h, w.est.out_w, tape), w.est.out_b, tape);
  Tensor<T> flow;
  if (w.config.flow_head) {
    flow = add_rowvec(matmul(h, w.est.flow_w, tape), w.est.flow_b, tape);
  }
  return {occ, flow};
}

// Sharpens the decay of predicted occupancy: negative logits scale by beta,
// non-negative logits pass through.
template <typename T>
void calibrate_inplace(std::span<T> logits, T beta) {
  if (beta < T(1)) {
    static bool warned = false;
    if (!warned) {
      std::fputs("warning: calibration beta < 1 softens rather than sharpens decay\n", stderr);
      warned = true;
    }
  }
  for (auto& v : logits) {
    if (v < T(0)) v *= beta;
  }
}

template <typename T>
Tensor<T> calibrate(const Tensor<T>& logits, T beta) {
  Tensor<T> out = logits.clone();
  auto vals = out.values();
  calibrate_inplace(std::span<T>(vals.data(), vals.size()), beta);
  return out;
}

}  // namespace latentcast
