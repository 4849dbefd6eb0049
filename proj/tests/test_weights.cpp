#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "latentcast/weights.hpp"

using namespace latentcast;

namespace {

std::string tmp_path(const char* name) { return std::string("/tmp/latentcast_test_") + name; }

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("initialization is deterministic in the seed") {
  auto cfg = ModelConfig::tiny();
  auto a = ModelWeights<float>::init(cfg, 42);
  auto b = ModelWeights<float>::init(cfg, 42);
  auto c = ModelWeights<float>::init(cfg, 43);
  bool all_equal = true;
  bool any_diff_seed = false;
  for (const auto& [name, t] : a.params) {
    const auto& tb = b.params.at(name);
    const auto& tc = c.params.at(name);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      if (t.at(i) != tb.at(i)) all_equal = false;
      if (t.at(i) != tc.at(i)) any_diff_seed = true;
    }
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
}

TEST_CASE("weight container round trip") {
  auto cfg = ModelConfig::tiny();
  cfg.flow_head = true;
  cfg.class_aware = true;
  cfg.propagate_periods_ms = {100, 1000};
  auto w = ModelWeights<float>::init(cfg, 7);
  const auto path = tmp_path("roundtrip.lcwt");
  w.save(path);
  auto r = ModelWeights<float>::load(path);

  CHECK(r.config.n_latent == cfg.n_latent);
  CHECK(r.config.c_latent == cfg.c_latent);
  CHECK(r.config.flow_head);
  CHECK(r.config.class_aware);
  CHECK(r.config.propagate_periods_ms == cfg.propagate_periods_ms);
  REQUIRE(r.params.size() == w.params.size());
  for (const auto& [name, t] : w.params) {
    const auto& rt = r.params.at(name);
    REQUIRE(rt.shape() == t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(rt.at(i) == t.at(i));
  }

  // Saving twice produces identical bytes (deterministic entry order).
  const auto path2 = tmp_path("roundtrip2.lcwt");
  w.save(path2);
  CHECK(file_bytes(path) == file_bytes(path2));
}

TEST_CASE("container begins with the magic string and rejects corruption") {
  auto w = ModelWeights<float>::init(ModelConfig::tiny(), 1);
  const auto path = tmp_path("magic.lcwt");
  w.save(path);
  auto bytes = file_bytes(path);
  REQUIRE(bytes.size() > 8);
  CHECK(bytes.substr(0, 4) == "LCWT");

  const auto bad = tmp_path("corrupt.lcwt");
  bytes[0] = 'X';
  std::ofstream os(bad, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  os.close();
  CHECK_THROWS_AS(ModelWeights<float>::load(bad), IoError);
}

TEST_CASE("extra entries ride along and come back") {
  auto w = ModelWeights<float>::init(ModelConfig::tiny(), 3);
  std::map<std::string, Tensor<float>> extra;
  extra["adamw.t"] = Tensor<float>::scalar(5.0f);
  extra["train.epoch"] = Tensor<float>::scalar(2.0f);
  const auto path = tmp_path("extra.lcwt");
  w.save(path, &extra);
  std::map<std::string, Tensor<float>> got;
  auto r = ModelWeights<float>::load(path, &got);
  REQUIRE(got.count("adamw.t") == 1);
  CHECK(got.at("adamw.t").at(0) == 5.0f);
  CHECK(got.at("train.epoch").at(0) == 2.0f);
}

TEST_CASE("cast preserves values across precisions") {
  auto wd = ModelWeights<double>::init(ModelConfig::tiny(), 9);
  auto wf = wd.cast<float>();
  for (const auto& [name, t] : wd.params) {
    const auto& tf = wf.params.at(name);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      CHECK(tf.at(i) == doctest::Approx(t.at(i)).epsilon(1e-6));
    }
  }
}

TEST_CASE("full-size parameter budget is in the expected range") {
  auto w = ModelWeights<float>::init(ModelConfig::full(), 1);
  const auto n = w.param_count();
  // Single propagation variant: roughly 7.5M learned parameters.
  CHECK(n > 6'000'000);
  CHECK(n < 9'500'000);

  auto cfg2 = ModelConfig::full();
  cfg2.propagate_periods_ms = {100, 1000};
  auto w2 = ModelWeights<float>::init(cfg2, 1);
  CHECK(w2.param_count() > n + 1'500'000);  // second variant adds a full stack
}
