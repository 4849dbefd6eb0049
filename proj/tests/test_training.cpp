#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>
#include <random>

#include "latentcast/training.hpp"
#include "oracles.hpp"

using namespace latentcast;

TEST_CASE("focal loss closed forms") {
  SUBCASE("gamma=0, alpha=0.5 is exactly half the binary cross entropy") {
    std::mt19937 rng(1);
    std::uniform_real_distribution<float> d(-3.0f, 3.0f);
    std::vector<float> raw(64), targets(64);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      raw[i] = d(rng);
      targets[i] = (i % 3 == 0) ? 1.0f : 0.0f;
    }
    auto logits = Tensor<float>::from({64}, raw);
    const double fl = focal_loss(logits, targets, 0.0f, 0.5f).item();
    const double bce = oracles::bce_from_logits(raw, targets);
    CHECK(std::abs(fl - 0.5 * bce) < 1e-6);
  }
  SUBCASE("logit 0, positive target, gamma=2, alpha=0.75") {
    auto logits = Tensor<float>::from({1}, {0.0f});
    const double v = focal_loss(logits, {1.0f}, 2.0f, 0.75f).item();
    CHECK(v == doctest::Approx(0.75 * 0.25 * std::log(2.0)).epsilon(1e-5));  // 0.12996
    CHECK(v == doctest::Approx(0.12996).epsilon(1e-3));
  }
  SUBCASE("confident correct predictions drive the loss to zero") {
    auto logits = Tensor<float>::from({2}, {14.0f, -14.0f});
    const double v = focal_loss(logits, {1.0f, 0.0f}, 2.0f, 0.75f).item();
    CHECK(v < 1e-9);
  }
  SUBCASE("non-binary targets are rejected") {
    auto logits = Tensor<float>::from({1}, {0.0f});
    CHECK_THROWS_AS(focal_loss(logits, {0.5f}, 2.0f, 0.75f), UsageError);
  }
  SUBCASE("gradient matches finite differences in double") {
    std::mt19937 rng(2);
    auto logits = Tensor<double>::zeros({12});
    fill_uniform(logits, rng, -2.0, 2.0);
    std::vector<float> targets(12);
    for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = (i % 2) ? 1.0f : 0.0f;
    const double err = grad_check<double>(
        [&targets](Tape<double>* tape, std::vector<Tensor<double>>& in) {
          return focal_loss(in[0], targets, 2.0, 0.75, tape);
        },
        {logits}, 1e-6);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("huber flow loss") {
  auto flow = Tensor<float>::from({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  std::vector<std::uint8_t> all{1, 1};
  SUBCASE("exact match gives zero") {
    const double v = huber_flow_loss(flow, {1.0f, 3.0f}, {2.0f, 4.0f}, all).item();
    CHECK(v == 0.0);
  }
  SUBCASE("quadratic branch: residual 0.5 costs 0.125 per component") {
    const double v = huber_flow_loss(flow, {0.5f, 2.5f}, {1.5f, 3.5f}, all).item();
    CHECK(v == doctest::Approx(0.125));
  }
  SUBCASE("linear branch: residual 3 costs 2.5 per component") {
    const double v = huber_flow_loss(flow, {-2.0f, 0.0f}, {-1.0f, 1.0f}, all).item();
    CHECK(v == doctest::Approx(2.5));
  }
  SUBCASE("errors on unmasked pixels do not count") {
    std::vector<std::uint8_t> first_only{1, 0};
    const double v = huber_flow_loss(flow, {1.0f, 99.0f}, {2.0f, -99.0f}, first_only).item();
    CHECK(v == 0.0);
  }
  SUBCASE("gradient matches finite differences") {
    std::mt19937 rng(3);
    auto f = Tensor<double>::zeros({4, 2});
    fill_uniform(f, rng, -2.0, 2.0);
    std::vector<std::uint8_t> mask{1, 0, 1, 1};
    const double err = grad_check<double>(
        [&mask](Tape<double>* tape, std::vector<Tensor<double>>& in) {
          return huber_flow_loss(in[0], {0.1f, 0.2f, 0.3f, 0.4f}, {0.5f, 0.6f, 0.7f, 0.8f},
                                 mask, 1.0, tape);
        },
        {f}, 1e-6);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("timestep sampling") {
  std::mt19937 rng(4);
  SUBCASE("full draw returns every step") {
    auto all = sample_timesteps(6, 7, rng);
    CHECK(all == std::vector<int>{0, 1, 2, 3, 4, 5, 6});
  }
  SUBCASE("always contains step zero, sorted unique") {
    for (int trial = 0; trial < 50; ++trial) {
      auto s = sample_timesteps(12, 4, rng);
      REQUIRE(s.size() == 4);
      CHECK(s[0] == 0);
      for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i] > s[i - 1]);
    }
  }
  SUBCASE("fixed seed reproduces the set") {
    std::mt19937 a(77), b(77);
    CHECK(sample_timesteps(10, 4, a) == sample_timesteps(10, 4, b));
  }
  SUBCASE("draws beyond the horizon are rejected") {
    CHECK_THROWS_AS(sample_timesteps(3, 5, rng), UsageError);
  }
  SUBCASE("nonzero steps are uniformly covered (10k draws)") {
    std::mt19937 r(5);
    std::map<int, int> hits;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      for (int s : sample_timesteps(6, 3, r)) {
        if (s > 0) hits[s] += 1;
      }
    }
    for (int s = 1; s <= 6; ++s) {
      const double freq = static_cast<double>(hits[s]) / draws;
      CHECK(freq == doctest::Approx(2.0 / 6.0).epsilon(0.06));  // 2/6 +- 0.02
      CHECK(std::abs(freq - 2.0 / 6.0) < 0.02);
    }
  }
}

TEST_CASE("poly learning rate schedule") {
  CHECK(poly_lr(0, 1e-3, 75, 0.9) == doctest::Approx(1e-3));
  CHECK(poly_lr(75, 1e-3, 75, 0.9) == 0.0);
  CHECK(poly_lr(50, 1e-3, 100, 0.9) == doctest::Approx(5.359e-4).epsilon(1e-3));
  // Non-increasing.
  double prev = 1.0;
  for (int e = 0; e <= 20; ++e) {
    const double lr = poly_lr(e, 1e-3, 20, 0.9);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("adamw closed forms") {
  auto cfg = ModelConfig::tiny();
  cfg.n_latent = 4;
  cfg.c_latent = 8;
  cfg.depth = 1;
  cfg.use_road = false;
  cfg.use_signals = false;
  auto w = ModelWeights<float>::init(cfg, 5);
  w.set_requires_grad(true);

  SUBCASE("zero gradient and zero decay leave weights unchanged") {
    auto before = w.params.at("init.queries").clone();
    AdamW opt;
    opt.weight_decay = 0.0;
    w.zero_grads();
    opt.step(w, 1e-3);
    const auto& after = w.params.at("init.queries");
    for (std::int64_t i = 0; i < after.numel(); ++i) CHECK(after.at(i) == before.at(i));
  }
  SUBCASE("first step moves approximately by -lr * sign(g)") {
    auto& t = w.params.at("init.queries");
    auto before = t.clone();
    w.zero_grads();
    for (std::int64_t i = 0; i < t.numel(); ++i) t.grad_data()[i] = (i % 2) ? 0.5f : -0.25f;
    AdamW opt;
    opt.weight_decay = 0.0;
    const double lr = 1e-3;
    opt.step(w, lr);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const double moved = static_cast<double>(t.at(i)) - before.at(i);
      const double expect = (i % 2) ? -lr : lr;
      CHECK(moved == doctest::Approx(expect).epsilon(1e-3));
    }
  }
  SUBCASE("decay-only step shrinks weights by (1 - lr * decay)") {
    auto& t = w.params.at("init.queries");
    auto before = t.clone();
    w.zero_grads();
    AdamW opt;
    opt.weight_decay = 0.1;
    opt.step(w, 1e-2);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      CHECK(t.at(i) == doctest::Approx(before.at(i) * (1.0 - 1e-2 * 0.1)).epsilon(1e-6));
    }
  }
}

namespace {

ScenarioParams fast_params() {
  ScenarioParams p;
  p.duration_s = 5.0;
  p.min_agents = 2;
  p.max_agents = 3;
  p.occlude = false;
  return p;
}

TrainConfig fast_train_cfg() {
  TrainConfig cfg;
  cfg.grid.px = 16;
  cfg.sampled_steps = 2;
  cfg.horizon_s = 2.0;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.val_fraction = 0.0;
  cfg.flow_weight = 0.0;
  return cfg;
}

ModelConfig micro_model() {
  auto cfg = ModelConfig::tiny();
  cfg.n_latent = 8;
  cfg.c_latent = 16;
  cfg.depth = 2;
  return cfg;
}

}  // namespace

TEST_CASE("rollout detaches gradients between timesteps") {
  const Scenario sc = generate_scenario(fast_params(), 21);
  auto w = ModelWeights<float>::init(micro_model(), 6);
  w.set_requires_grad(true);
  w.zero_grads();
  TrainConfig cfg = fast_train_cfg();
  rollout_loss(w, sc, cfg, 77);

  // Initialization weights only act at t=0, strictly before the first loss
  // (the present frame at 1 s), so their gradients must be exactly zero.
  for (const auto& [name, t] : w.params) {
    if (name.rfind("init.", 0) != 0) continue;
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      CHECK(t.grad_data()[i] == 0.0f);
    }
  }
  // The present-tick pathways do receive gradient.
  double agent_grad = 0.0;
  for (const auto& [name, t] : w.params) {
    if (name.rfind("agent.", 0) != 0) continue;
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      agent_grad += std::abs(static_cast<double>(t.grad_data()[i]));
    }
  }
  CHECK(agent_grad > 0.0);
}

TEST_CASE("rollout loss accounting") {
  const Scenario sc = generate_scenario(fast_params(), 22);
  auto w = ModelWeights<float>::init(micro_model(), 7);
  w.set_requires_grad(true);
  TrainConfig cfg = fast_train_cfg();

  SUBCASE("total is the uniform average of the per-step focal terms") {
    w.zero_grads();
    auto rep = rollout_loss(w, sc, cfg, 3);
    REQUIRE(rep.step_focal.size() == 2);
    const double mean = (rep.step_focal[0].second + rep.step_focal[1].second) / 2.0;
    CHECK(rep.total == doctest::Approx(mean).epsilon(1e-9));
  }
  SUBCASE("a single sampled step reduces to the present-frame focal term") {
    cfg.sampled_steps = 1;
    w.zero_grads();
    auto rep = rollout_loss(w, sc, cfg, 3);
    REQUIRE(rep.step_focal.size() == 1);
    CHECK(rep.step_focal[0].first == 0);
    CHECK(rep.total == doctest::Approx(rep.step_focal[0].second));
  }
  SUBCASE("NaN weights abort with a step diagnostic") {
    w.params.at("out.head.w").at(0) = std::numeric_limits<float>::quiet_NaN();
    w.zero_grads();
    bool threw = false;
    try {
      rollout_loss(w, sc, cfg, 3);
    } catch (const NumericError& e) {
      threw = true;
      CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
    CHECK(threw);
  }
}

TEST_CASE("training loop determinism") {
  std::vector<Scenario> data;
  for (int i = 0; i < 3; ++i) data.push_back(generate_scenario(fast_params(), 100 + static_cast<unsigned>(i)));

  SUBCASE("zero epochs returns the initialization unchanged") {
    TrainConfig cfg = fast_train_cfg();
    cfg.epochs = 0;
    auto r = train(data, micro_model(), cfg);
    ModelConfig expect_cfg = micro_model();
    expect_cfg.propagate_periods_ms = {500};
    expect_cfg.flow_head = false;
    auto fresh = ModelWeights<float>::init(expect_cfg, cfg.seed);
    for (const auto& [name, t] : fresh.params) {
      const auto& rt = r.weights.params.at(name);
      for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(rt.at(i) == t.at(i));
    }
    CHECK(r.history.empty());
  }
  SUBCASE("fixed seed gives bit-identical weights across runs") {
    TrainConfig cfg = fast_train_cfg();
    auto a = train(data, micro_model(), cfg);
    auto b = train(data, micro_model(), cfg);
    for (const auto& [name, t] : a.weights.params) {
      const auto& tb = b.weights.params.at(name);
      CHECK(std::memcmp(t.data(), tb.data(),
                        static_cast<std::size_t>(t.numel()) * sizeof(float)) == 0);
    }
  }
}
