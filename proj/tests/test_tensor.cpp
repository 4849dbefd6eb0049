#include <doctest.h>

#include <cmath>
#include <random>

#include "latentcast/tensor.hpp"

using namespace latentcast;

TEST_CASE("matmul hand cases") {
  // I2 * B == B
  auto i2 = Tensor<float>::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor<float>::from({2, 2}, {3.5f, -1, 2, 7});
  auto ib = matmul(i2, b);
  for (int i = 0; i < 4; ++i) CHECK(ib.at(i) == b.at(i));

  auto a = Tensor<float>::from({2, 2}, {1, 2, 3, 4});
  auto col = Tensor<float>::from({2, 1}, {0, 1});
  auto r = matmul(a, col);
  CHECK(r.at(0, 0) == 2);
  CHECK(r.at(1, 0) == 4);

  auto zero = Tensor<float>::zeros({2, 2});
  auto zb = matmul(zero, b);
  for (int i = 0; i < 4; ++i) CHECK(zb.at(i) == 0);
}

TEST_CASE("matmul shape error names both shapes") {
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({2, 2});
  bool threw = false;
  try {
    matmul(a, b);
  } catch (const ShapeError& e) {
    threw = true;
    const std::string what = e.what();
    CHECK(what.find("[2x3]") != std::string::npos);
    CHECK(what.find("[2x2]") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("softmax values and invariants") {
  auto eq = softmax_rows(Tensor<float>::from({1, 4}, {2, 2, 2, 2}));
  for (int i = 0; i < 4; ++i) CHECK(eq.at(i) == doctest::Approx(0.25));

  auto x = softmax_rows(Tensor<float>::from({1, 2}, {0.0f, std::log(3.0f)}));
  CHECK(x.at(0) == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(x.at(1) == doctest::Approx(0.75).epsilon(1e-6));

  // Shift invariance and row normalization on random rows.
  std::mt19937 rng(11);
  std::uniform_real_distribution<float> d(-4.0f, 4.0f);
  auto raw = Tensor<float>::zeros({5, 7});
  for (auto& v : raw.values()) v = d(rng);
  auto shifted = Tensor<float>::zeros({5, 7});
  for (std::int64_t i = 0; i < 5; ++i) {
    for (std::int64_t j = 0; j < 7; ++j) shifted.at(i, j) = raw.at(i, j) + 3.25f;
  }
  auto y0 = softmax_rows(raw);
  auto y1 = softmax_rows(shifted);
  for (std::int64_t i = 0; i < 5; ++i) {
    float sum = 0;
    for (std::int64_t j = 0; j < 7; ++j) {
      sum += y0.at(i, j);
      CHECK(y0.at(i, j) == doctest::Approx(y1.at(i, j)).epsilon(1e-5));
      CHECK(y0.at(i, j) > 0.0f);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("softmax rejects non-finite input") {
  auto x = Tensor<float>::from({1, 2}, {1.0f, std::numeric_limits<float>::infinity()});
  CHECK_THROWS_AS(softmax_rows(x), NumericError);
}

TEST_CASE("backward basics") {
  SUBCASE("sum gives unit gradients") {
    auto x = Tensor<float>::from({2, 2}, {1, 2, 3, 4}, true);
    Tape<float> tape;
    auto loss = sum(x, &tape);
    tape.backward(loss);
    for (int i = 0; i < 4; ++i) CHECK(x.grad_data()[i] == 1.0f);
  }
  SUBCASE("sum of squares") {
    auto x = Tensor<float>::from({2}, {1, 2}, true);
    Tape<float> tape;
    auto loss = sum(mul(x, x, &tape), &tape);
    tape.backward(loss);
    CHECK(x.grad_data()[0] == doctest::Approx(2.0));
    CHECK(x.grad_data()[1] == doctest::Approx(4.0));
  }
  SUBCASE("a tape is consumed by backward") {
    auto x = Tensor<float>::from({2}, {1, 2}, true);
    Tape<float> tape;
    auto loss = sum(x, &tape);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), UsageError);
  }
  SUBCASE("non-scalar loss is rejected") {
    auto x = Tensor<float>::from({2}, {1, 2}, true);
    Tape<float> tape;
    auto y = mul(x, x, &tape);
    CHECK_THROWS_AS(tape.backward(y), UsageError);
  }
}

TEST_CASE("grad_check on composed ops") {
  SUBCASE("matmul + sum in double is tight") {
    std::mt19937 rng(3);
    auto a = Tensor<double>::zeros({3, 3});
    auto b = Tensor<double>::zeros({3, 3});
    fill_uniform(a, rng, -1.0, 1.0);
    fill_uniform(b, rng, -1.0, 1.0);
    const double err = grad_check<double>(
        [](Tape<double>* tape, std::vector<Tensor<double>>& in) {
          return sum(matmul(in[0], in[1], tape), tape);
        },
        {a, b}, 1e-5);
    CHECK(err < 1e-6);
  }
  SUBCASE("constant function reports zero") {
    auto x = Tensor<double>::from({3}, {1, 2, 3});
    const double err = grad_check<double>(
        [](Tape<double>*, std::vector<Tensor<double>>&) { return Tensor<double>::scalar(4.2); },
        {x}, 1e-5);
    CHECK(err == 0.0);
  }
  SUBCASE("elementwise chain in float") {
    std::mt19937 rng(5);
    auto x = Tensor<float>::zeros({4, 6});
    fill_uniform(x, rng, -1.0f, 1.0f);
    const double err = grad_check<float>(
        [](Tape<float>* tape, std::vector<Tensor<float>>& in) {
          return mean(gelu(in[0], tape), tape);
        },
        {x}, 1e-3f);
    CHECK(err < 1e-3);
  }
}

TEST_CASE("float and double forward passes agree within 1e-4") {
  std::mt19937 rng(17);
  auto ad = Tensor<double>::zeros({6, 8});
  auto bd = Tensor<double>::zeros({8, 5});
  fill_uniform(ad, rng, -1.0, 1.0);
  fill_uniform(bd, rng, -1.0, 1.0);
  auto af = Tensor<float>::zeros({6, 8});
  auto bf = Tensor<float>::zeros({8, 5});
  for (std::int64_t i = 0; i < ad.numel(); ++i) af.at(i) = static_cast<float>(ad.at(i));
  for (std::int64_t i = 0; i < bd.numel(); ++i) bf.at(i) = static_cast<float>(bd.at(i));

  auto cd = matmul(ad, bd);
  auto cf = matmul(af, bf);
  for (std::int64_t i = 0; i < cd.numel(); ++i) {
    CHECK(std::abs(cd.at(i) - static_cast<double>(cf.at(i))) < 1e-4);
  }

  auto sd = softmax_rows(cd);
  auto sf = softmax_rows(cf);
  for (std::int64_t i = 0; i < sd.numel(); ++i) {
    CHECK(std::abs(sd.at(i) - static_cast<double>(sf.at(i))) < 1e-4);
  }
}

TEST_CASE("detached tensors share values but drop gradient tracking") {
  auto x = Tensor<float>::from({2}, {1, 2}, true);
  auto d = x.detached();
  CHECK_FALSE(d.requires_grad());
  CHECK(d.data() == x.data());
  auto c = x.clone();
  CHECK(c.data() != x.data());
  CHECK(c.at(1) == 2.0f);
}
