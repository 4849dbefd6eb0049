#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "latentcast/attention.hpp"
#include "latentcast/encoding.hpp"
#include "latentcast/tensor.hpp"

namespace latentcast {

// Token geometry is fixed by the architecture.
inline constexpr int kAgentPoseFreqs = 64;     // per pose element (x, y, heading)
inline constexpr int kSignalPosFreqs = 30;     // per coordinate
inline constexpr int kRoadPosFreqs = 16;       // per patch-center coordinate
inline constexpr int kQueryPosFreqs = 32;      // per query coordinate
inline constexpr int kAgentTokenWidth = 392;   // 64*2*3 + 3 + 2 + 3
inline constexpr int kSignalTokenWidth = 128;  // 30*2*2 + 8
inline constexpr int kRoadTokenWidth = 256;    // 190 + 16*2*2 + 2
inline constexpr int kQueryWidth = 128;        // 32*2*2
inline constexpr int kAgentCapacity = 128;
inline constexpr int kSignalCapacity = 16;
inline constexpr int kSignalStates = 8;
inline constexpr int kAgentClasses = 3;
inline constexpr int kRoadPatchPx = 32;
inline constexpr int kRoadMlpWidth = 190;

struct ModelConfig {
  int n_latent = 128;
  int c_latent = 256;
  int heads = 4;
  int depth = 6;  // self-attention applications per module
  std::vector<int> propagate_periods_ms = {500};
  bool use_road = true;
  bool use_signals = true;
  bool flow_head = false;
  bool class_aware = false;
  int raster_px = 256;  // road raster resolution; must be a multiple of the patch size

  // Sinusoidal frequency ranges (Hz). Small grids want a lower ceiling so
  // neighbouring query pixels stay below the encoding's Nyquist rate.
  double f_min = 1.0;
  double f_max_agent = 200.0;
  double f_max_signal = 200.0;
  double f_max_road = 200.0;
  double f_max_query = 256.0;

  RegionOfInterest roi{};  // 160 x 160 m around the origin

  static ModelConfig full() { return ModelConfig{}; }

  // Desk-scale preset used throughout the tests.
  static ModelConfig tiny() {
    ModelConfig c;
    c.n_latent = 16;
    c.c_latent = 32;
    c.f_max_agent = 48.0;
    c.f_max_signal = 48.0;
    c.f_max_road = 16.0;
    c.f_max_query = 24.0;
    return c;
  }

  int road_patches_per_side() const { return raster_px / kRoadPatchPx; }
  int road_token_count() const { return road_patches_per_side() * road_patches_per_side(); }
};

// Prebuilt frequency banks for every encoder.
struct FeatureBanks {
  FrequencyBank agent_pose;   // used for x, y and heading
  FrequencyBank signal_pos;   // used for x and y
  FrequencyBank road_pos;     // patch centers
  FrequencyBank query_pos;    // occupancy query positions

  static FeatureBanks from(const ModelConfig& c) {
    FeatureBanks b;
    b.agent_pose = FrequencyBank::linspace(c.f_min, c.f_max_agent, kAgentPoseFreqs);
    b.signal_pos = FrequencyBank::linspace(c.f_min, c.f_max_signal, kSignalPosFreqs);
    b.road_pos = FrequencyBank::linspace(c.f_min, c.f_max_road, kRoadPosFreqs);
    b.query_pos = FrequencyBank::linspace(c.f_min, c.f_max_query, kQueryPosFreqs);
    return b;
  }
};

template <typename T>
struct RoadEncoderWeights {
  Tensor<T> w1, b1, w2, b2;  // patch pixels -> 190 -> 190
};

template <typename T>
struct EstimatorWeights {
  Tensor<T> init_queries;  // n_latent x c_latent
  AttentionWeights<T> init_cross;
  std::vector<AttentionWeights<T>> init_self;
  std::map<int, std::vector<AttentionWeights<T>>> propagate;  // period_ms -> depth blocks
  AttentionWeights<T> agent_cross;
  AttentionWeights<T> signal_cross, signal_self;
  AttentionWeights<T> road_cross, road_self;
  RoadEncoderWeights<T> road_encoder;
  AttentionWeights<T> out_cross;
  Tensor<T> out_w, out_b;                                 // c_latent -> 1
  std::vector<std::pair<Tensor<T>, Tensor<T>>> class_heads;  // per class, c_latent -> 1
  Tensor<T> flow_w, flow_b;                               // c_latent -> 2
};

// All learned parameters plus the model configuration, with a flat name ->
// tensor map (the serialization authority) and a structured view bound to
// the same storage.
template <typename T>
class ModelWeights {
 public:
  ModelConfig config;
  FeatureBanks banks;
  EstimatorWeights<T> est;
  std::map<std::string, Tensor<T>> params;

  static ModelWeights init(const ModelConfig& cfg, std::uint64_t seed);

  template <typename U>
  ModelWeights<U> cast() const {
    ModelWeights<U> out = ModelWeights<U>::init(config, 0);
    for (auto& [name, t] : out.params) {
      const auto& src = params.at(name);
      for (std::int64_t i = 0; i < t.numel(); ++i) {
        t.data()[i] = static_cast<U>(src.data()[i]);
      }
    }
    return out;
  }

  void set_requires_grad(bool b) {
    for (auto& [name, t] : params) t.set_requires_grad(b);
  }

  void zero_grads() {
    for (auto& [name, t] : params) t.zero_grad();
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
  }

  // Extra entries (e.g. optimizer state) are stored alongside the parameters.
  void save(const std::string& path,
            const std::map<std::string, Tensor<T>>* extra = nullptr) const;
  static ModelWeights load(const std::string& path,
                           std::map<std::string, Tensor<T>>* extra = nullptr);
};

using ModelWeightsF = ModelWeights<float>;
using ModelWeightsD = ModelWeights<double>;

}  // namespace latentcast
