#pragma once

#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "latentcast/estimator.hpp"
#include "latentcast/scenes.hpp"

namespace latentcast {

// Focal loss for binary occupancy with positive weighting, averaged over all
// entries. Targets must be exactly 0 or 1.
template <typename T>
Tensor<T> focal_loss(const Tensor<T>& logits, const std::vector<float>& targets, T gamma,
                     T alpha, Tape<T>* tape = nullptr) {
  if (static_cast<std::int64_t>(targets.size()) != logits.numel()) {
    throw ShapeError("focal loss: logits and targets differ in size");
  }
  if (gamma < T(0)) throw UsageError("focal gamma must be >= 0");
  for (float t : targets) {
    if (t != 0.0f && t != 1.0f) throw UsageError("focal loss targets must be binary");
  }
  const std::int64_t n = logits.numel();
  const T eps = sizeof(T) == 4 ? T(1e-7) : T(1e-12);
  T total = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const T s = T(1) / (T(1) + std::exp(-logits.data()[i]));
    const bool pos = targets[static_cast<std::size_t>(i)] != 0.0f;
    const T pt = std::max(pos ? s : T(1) - s, eps);
    const T af = pos ? alpha : T(1) - alpha;
    total += -af * std::pow(T(1) - pt, gamma) * std::log(pt);
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(n));
  if (detail::track(tape, {&logits})) {
    out.set_requires_grad(true);
    tape->record([logits, targets, gamma, alpha, out, n, eps]() mutable {
      const T g = out.grad_data()[0] / static_cast<T>(n);
      for (std::int64_t i = 0; i < n; ++i) {
        const T s = T(1) / (T(1) + std::exp(-logits.data()[i]));
        const bool pos = targets[static_cast<std::size_t>(i)] != 0.0f;
        const T pt = std::max(pos ? s : T(1) - s, eps);
        const T af = pos ? alpha : T(1) - alpha;
        const T sign = pos ? T(1) : T(-1);
        const T one_m = T(1) - pt;
        const T d = af * sign *
                    (gamma * std::pow(one_m, gamma) * pt * std::log(pt) -
                     std::pow(one_m, gamma + T(1)));
        logits.grad_data()[i] += g * d;
      }
    });
  }
  return out;
}

// Pixel-wise Huber loss on flow, restricted to ground-truth-occupied pixels
// with a known origin; mean over the components of those pixels.
template <typename T>
Tensor<T> huber_flow_loss(const Tensor<T>& flow, const std::vector<float>& target_x,
                          const std::vector<float>& target_y,
                          const std::vector<std::uint8_t>& valid, T delta = T(1),
                          Tape<T>* tape = nullptr) {
  const std::int64_t n = flow.rank() == 2 ? flow.shape()[0] : 0;
  if (flow.rank() != 2 || flow.shape()[1] != 2 ||
      static_cast<std::int64_t>(target_x.size()) != n ||
      static_cast<std::int64_t>(target_y.size()) != n ||
      static_cast<std::int64_t>(valid.size()) != n) {
    throw ShapeError("huber flow loss: shape mismatch");
  }
  std::int64_t n_valid = 0;
  for (auto v : valid) n_valid += (v != 0);
  if (n_valid == 0) return Tensor<T>::scalar(T(0));

  auto huber = [delta](T r) {
    const T a = std::abs(r);
    return a <= delta ? T(0.5) * r * r : delta * (a - T(0.5) * delta);
  };
  T total = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (!valid[static_cast<std::size_t>(i)]) continue;
    total += huber(flow.at(i, 0) - static_cast<T>(target_x[static_cast<std::size_t>(i)]));
    total += huber(flow.at(i, 1) - static_cast<T>(target_y[static_cast<std::size_t>(i)]));
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(2 * n_valid));
  if (detail::track(tape, {&flow})) {
    out.set_requires_grad(true);
    tape->record([flow, target_x, target_y, valid, delta, out, n, n_valid]() mutable {
      const T g = out.grad_data()[0] / static_cast<T>(2 * n_valid);
      for (std::int64_t i = 0; i < n; ++i) {
        if (!valid[static_cast<std::size_t>(i)]) continue;
        for (int c = 0; c < 2; ++c) {
          const T target = static_cast<T>(c == 0 ? target_x[static_cast<std::size_t>(i)]
                                                 : target_y[static_cast<std::size_t>(i)]);
          const T r = flow.at(i, c) - target;
          const T d = std::abs(r) <= delta ? r : (r > 0 ? delta : -delta);
          flow.grad_data()[i * 2 + c] += g * d;
        }
      }
    });
  }
  return out;
}

// Uniform sample without replacement from {0..horizon}, always including 0.
std::vector<int> sample_timesteps(int horizon_steps, int count, std::mt19937& rng);

// lr0 * (1 - epoch/target)^power, clamped at zero past the target.
double poly_lr(int epoch, double lr0, int epoch_target, double power);

struct TrainConfig {
  double gamma = 2.0;
  double alpha = 0.75;
  double lr = 1e-3;
  int epochs = 10;
  double poly_power = 0.9;
  int batch_size = 8;
  int sampled_steps = 4;     // loss timesteps per sequence (incl. present)
  double flow_weight = 0.1;  // 0 disables the flow term
  bool two_phase = false;
  std::uint64_t seed = 1;
  double past_window_s = 1.0;
  double horizon_s = 6.0;  // loss horizon beyond the present frame
  GridGeometry grid{0.0, 0.0, 80.0, 64};
  bool filter_observable = true;
  double weight_decay = 0.01;
  double val_fraction = 0.1;

  int obs_period_ms() const { return two_phase ? 100 : 500; }
  int future_period_ms() const { return two_phase ? 1000 : 500; }
  void validate() const {
    if (gamma < 0.0) throw ConfigError("gamma must be >= 0");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must be in [0,1]");
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
  }
};

struct LossReport {
  double total = 0.0;
  std::vector<std::pair<int, double>> step_focal;  // (step index, focal term)
  double flow = 0.0;
  double grad_norm = 0.0;
};

// Decoupled-weight-decay Adam over the parameter map, iterated in name order.
class AdamW {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.01;

  void step(ModelWeights<float>& w, double lr);
  void serialize(std::map<std::string, Tensor<float>>& out) const;
  void restore(const std::map<std::string, Tensor<float>>& in);

 private:
  std::map<std::string, std::pair<std::vector<float>, std::vector<float>>> state_;
  std::int64_t t_ = 0;
};

// Runs the estimator schedule over one scenario and accumulates gradients
// into the weights. Gradients never cross a timestep boundary: each tick
// starts from a detached copy of the incoming state. `grad_scale` lets the
// caller average over a mini-batch.
LossReport rollout_loss(ModelWeights<float>& w, const Scenario& scenario, const TrainConfig& cfg,
                        std::uint64_t rollout_seed, double grad_scale = 1.0);

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double val_soft_iou = 0.0;
  double val_auc = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ModelWeights<float> weights;
  std::vector<EpochStats> history;
};

using CheckpointFn = std::function<void(int epoch, ModelWeights<float>&, const AdamW&,
                                        const std::vector<EpochStats>&)>;

// Full training loop: shuffled mini-batches, polynomial schedule, per-epoch
// validation soft IoU/AUC on a held-out split. Deterministic in (cfg.seed,
// dataset); resuming from a checkpoint reproduces the uninterrupted run.
TrainResult train(const std::vector<Scenario>& dataset, const ModelConfig& mcfg,
                  const TrainConfig& cfg, const CheckpointFn& checkpoint = nullptr,
                  ModelWeights<float>* resume_weights = nullptr, AdamW* resume_opt = nullptr,
                  int start_epoch = 0);

}  // namespace latentcast
