#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "latentcast/common.hpp"
#include "latentcast/kernels.hpp"

namespace latentcast {

template <typename T>
class Tape;

// Dense row-major tensor handle. Copies are aliases: they share the value
// and gradient storage, and the requires_grad flag lives in that shared
// storage so every alias agrees. detached() yields an alias that opts out of
// gradient tracking without touching the storage. Rank 0..2 is all the model
// needs.
template <typename T>
class Tensor {
 public:
  using Buffer = std::vector<T>;

  Tensor() = default;

  static Tensor zeros(std::vector<std::int64_t> shape, bool requires_grad = false) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.st_ = std::make_shared<Storage>();
    t.st_->data.assign(static_cast<std::size_t>(t.numel_from_shape()), T(0));
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static Tensor from(std::vector<std::int64_t> shape, Buffer values, bool requires_grad = false) {
    Tensor t;
    t.shape_ = std::move(shape);
    if (static_cast<std::int64_t>(values.size()) != t.numel_from_shape()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_string(t.shape_));
    }
    t.st_ = std::make_shared<Storage>();
    t.st_->data = std::move(values);
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static Tensor scalar(T v) { return from({}, Buffer{v}); }

  bool defined() const { return static_cast<bool>(st_); }
  const std::vector<std::int64_t>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t numel() const { return st_ ? static_cast<std::int64_t>(st_->data.size()) : 0; }
  std::int64_t rows() const { return rank() >= 1 ? shape_[0] : 1; }
  std::int64_t cols() const { return rank() >= 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 1); }

  std::span<T> values() { return {st_->data.data(), st_->data.size()}; }
  std::span<const T> values() const { return {st_->data.data(), st_->data.size()}; }
  T* data() { return st_->data.data(); }
  const T* data() const { return st_->data.data(); }

  T& at(std::int64_t i) { return st_->data[static_cast<std::size_t>(i)]; }
  T at(std::int64_t i) const { return st_->data[static_cast<std::size_t>(i)]; }
  T& at(std::int64_t i, std::int64_t j) { return st_->data[static_cast<std::size_t>(i * cols() + j)]; }
  T at(std::int64_t i, std::int64_t j) const {
    return st_->data[static_cast<std::size_t>(i * cols() + j)];
  }

  T item() const {
    if (numel() != 1) throw UsageError("item() requires a scalar tensor");
    return st_->data[0];
  }

  bool requires_grad() const { return st_ && tracking_ && st_->requires_grad; }

  void set_requires_grad(bool b) {
    if (b) tracking_ = true;
    st_->requires_grad = b;
    if (b && st_->grad.empty()) st_->grad.assign(st_->data.size(), T(0));
  }

  bool has_grad() const { return st_ && !st_->grad.empty(); }
  // The gradient buffer is shared mutable state of all aliases (closures on
  // the tape accumulate into it), so access is const-qualified.
  T* grad_data() const { return st_->grad.data(); }
  std::span<T> grad() const { return {st_->grad.data(), st_->grad.size()}; }

  void zero_grad() const {
    if (st_) std::fill(st_->grad.begin(), st_->grad.end(), T(0));
  }

  // Same storage, no gradient tracking through this handle. Ops never mutate
  // their inputs, so sharing values is safe.
  Tensor detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.st_ = st_;
    t.tracking_ = false;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.st_ = std::make_shared<Storage>();
    t.st_->data = st_->data;
    return t;
  }

  static std::string shape_string(const std::vector<std::int64_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
  }
  std::string shape_string() const { return shape_string(shape_); }

 private:
  struct Storage {
    Buffer data;
    Buffer grad;  // allocated when requires_grad is first set
    bool requires_grad = false;
  };

  std::int64_t numel_from_shape() const {
    std::int64_t n = 1;
    for (auto d : shape_) n *= d;
    return n;
  }

  std::vector<std::int64_t> shape_;
  std::shared_ptr<Storage> st_;
  bool tracking_ = true;
};

// Ordered record of differentiable operations. backward() replays the
// record in exact reverse execution order, then the tape is consumed.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void backward(Tensor<T>& loss) {
    if (consumed_) throw UsageError("tape already consumed by a previous backward call");
    if (loss.numel() != 1) throw UsageError("backward requires a scalar loss");
    if (!loss.requires_grad()) {
      throw UsageError("loss is not connected to this tape (requires_grad is false)");
    }
    loss.grad_data()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
    consumed_ = true;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

namespace detail {

template <typename T>
inline bool track(const Tape<T>* tape, std::initializer_list<const Tensor<T>*> ins) {
  if (!tape) return false;
  for (const auto* t : ins) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace detail

// ---- differentiable operations ------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul shape mismatch: " + a.shape_string() + " x " + b.shape_string());
  }
  const int m = static_cast<int>(a.shape()[0]);
  const int k = static_cast<int>(a.shape()[1]);
  const int n = static_cast<int>(b.shape()[1]);
  Tensor<T> out = Tensor<T>::zeros({m, n});
  kernels::matmul_nn(a.data(), b.data(), out.data(), m, k, n);
  if (detail::track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out, m, k, n]() mutable {
      if (a.requires_grad()) kernels::matmul_nt(out.grad_data(), b.data(), a.grad_data(), m, n, k, true);
      if (b.requires_grad()) kernels::matmul_tn(a.data(), out.grad_data(), b.grad_data(), m, k, n, true);
    });
  }
  return out;
}

// a [m x k] * b[n x k]^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) {
    throw ShapeError("matmul_nt shape mismatch: " + a.shape_string() + " x " + b.shape_string() +
                     "^T");
  }
  const int m = static_cast<int>(a.shape()[0]);
  const int k = static_cast<int>(a.shape()[1]);
  const int n = static_cast<int>(b.shape()[0]);
  Tensor<T> out = Tensor<T>::zeros({m, n});
  kernels::matmul_nt(a.data(), b.data(), out.data(), m, k, n);
  if (detail::track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out, m, k, n]() mutable {
      // dA += dC * B ; dB += dC^T * A
      if (a.requires_grad()) kernels::matmul_nn(out.grad_data(), b.data(), a.grad_data(), m, n, k, true);
      if (b.requires_grad()) kernels::matmul_tn(out.grad_data(), a.data(), b.grad_data(), m, n, k, true);
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
  }
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (detail::track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out, n]() mutable {
      if (a.requires_grad()) {
        for (std::int64_t i = 0; i < n; ++i) a.grad_data()[i] += out.grad_data()[i];
      }
      if (b.requires_grad()) {
        for (std::int64_t i = 0; i < n; ++i) b.grad_data()[i] += out.grad_data()[i];
      }
    });
  }
  return out;
}

// a [m x n] + row vector v [n], broadcast over rows (bias add)
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& v, Tape<T>* tape = nullptr) {
  if (a.rank() != 2 || v.rank() != 1 || a.shape()[1] != v.shape()[0]) {
    throw ShapeError("add_rowvec shape mismatch: " + a.shape_string() + " + " + v.shape_string());
  }
  const std::int64_t m = a.shape()[0], n = a.shape()[1];
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + v.at(j);
  }
  if (detail::track(tape, {&a, &v})) {
    out.set_requires_grad(true);
    tape->record([a, v, out, m, n]() mutable {
      if (a.requires_grad()) {
        for (std::int64_t i = 0; i < m * n; ++i) a.grad_data()[i] += out.grad_data()[i];
      }
      if (v.requires_grad()) {
        for (std::int64_t i = 0; i < m; ++i) {
          for (std::int64_t j = 0; j < n; ++j) v.grad_data()[j] += out.grad_data()[i * n + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
  }
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (detail::track(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out, n]() {
      if (a.requires_grad()) {
        for (std::int64_t i = 0; i < n; ++i) a.grad_data()[i] += b.data()[i] * out.grad_data()[i];
      }
      if (b.requires_grad()) {
        for (std::int64_t i = 0; i < n; ++i) b.grad_data()[i] += a.data()[i] * out.grad_data()[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c, Tape<T>* tape = nullptr) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  if (detail::track(tape, {&a})) {
    out.set_requires_grad(true);
    tape->record([a, out, c, n]() mutable {
      for (std::int64_t i = 0; i < n; ++i) a.grad_data()[i] += c * out.grad_data()[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts, Tape<T>* tape = nullptr) {
  if (parts.empty()) throw UsageError("concat_cols needs at least one input");
  const std::int64_t m = parts[0].shape()[0];
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.shape()[0] != m) {
      throw ShapeError("concat_cols row mismatch at " + p.shape_string());
    }
    total += p.shape()[1];
  }
  Tensor<T> out = Tensor<T>::zeros({m, total});
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.shape()[1];
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < w; ++j) out.at(i, off + j) = p.at(i, j);
    }
    off += w;
  }
  bool any = false;
  if (tape) {
    for (const auto& p : parts) any = any || p.requires_grad();
  }
  if (any) {
    out.set_requires_grad(true);
    tape->record([parts, out, m, total]() mutable {
      std::int64_t off2 = 0;
      for (auto& p : parts) {
        const std::int64_t w = p.shape()[1];
        if (p.requires_grad()) {
          for (std::int64_t i = 0; i < m; ++i) {
            for (std::int64_t j = 0; j < w; ++j) {
              p.grad_data()[i * w + j] += out.grad_data()[i * total + off2 + j];
            }
          }
        }
        off2 += w;
      }
    });
  }
  return out;
}

// Row-wise softmax with optional key-validity mask shared by all rows.
// Invalid columns receive exactly zero weight.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, Tape<T>* tape = nullptr,
                       const std::vector<std::uint8_t>* valid = nullptr) {
  if (x.rank() != 2) throw ShapeError("softmax_rows expects rank-2 input, got " + x.shape_string());
  const int m = static_cast<int>(x.shape()[0]);
  const int n = static_cast<int>(x.shape()[1]);
  if (valid) {
    if (static_cast<int>(valid->size()) != n) {
      throw ShapeError("softmax mask length does not match column count");
    }
    bool any = false;
    for (auto v : *valid) any = any || (v != 0);
    if (!any) throw UsageError("softmax: all keys masked");
  }
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    if (!std::isfinite(x.data()[i])) throw NumericError("softmax: non-finite input");
  }
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  kernels::softmax_rows(x.data(), out.data(), m, n, valid ? valid->data() : nullptr);
  if (detail::track(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, m, n]() mutable {
      for (int i = 0; i < m; ++i) {
        const T* y = out.data() + static_cast<std::int64_t>(i) * n;
        const T* dy = out.grad_data() + static_cast<std::int64_t>(i) * n;
        T dot = 0;
        for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
        T* dx = x.grad_data() + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& sc, const Tensor<T>& off,
                          Tape<T>* tape = nullptr) {
  if (x.rank() != 2 || sc.numel() != x.shape()[1] || off.numel() != x.shape()[1]) {
    throw ShapeError("layer_norm shape mismatch: " + x.shape_string());
  }
  const int m = static_cast<int>(x.shape()[0]);
  const int n = static_cast<int>(x.shape()[1]);
  const T eps = T(1e-5);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  kernels::layer_norm_rows(x.data(), sc.data(), off.data(), out.data(), m, n, eps);
  if (detail::track(tape, {&x, &sc, &off})) {
    out.set_requires_grad(true);
    tape->record([x, sc, off, out, m, n, eps]() mutable {
      std::vector<T> xhat(static_cast<std::size_t>(n));
      for (int i = 0; i < m; ++i) {
        const T* xr = x.data() + static_cast<std::int64_t>(i) * n;
        const T* dy = out.grad_data() + static_cast<std::int64_t>(i) * n;
        T mean = 0;
        for (int j = 0; j < n; ++j) mean += xr[j];
        mean /= static_cast<T>(n);
        T var = 0;
        for (int j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<T>(n);
        const T inv_sd = T(1) / std::sqrt(var + eps);
        for (int j = 0; j < n; ++j) xhat[j] = (xr[j] - mean) * inv_sd;

        if (sc.requires_grad()) {
          for (int j = 0; j < n; ++j) sc.grad_data()[j] += dy[j] * xhat[j];
        }
        if (off.requires_grad()) {
          for (int j = 0; j < n; ++j) off.grad_data()[j] += dy[j];
        }
        if (x.requires_grad()) {
          // dxhat = dy*scale; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_sd
          T sum_dxhat = 0, sum_dxhat_xhat = 0;
          for (int j = 0; j < n; ++j) {
            const T dxh = dy[j] * sc.data()[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat[j];
          }
          const T inv_n = T(1) / static_cast<T>(n);
          T* dx = x.grad_data() + static_cast<std::int64_t>(i) * n;
          for (int j = 0; j < n; ++j) {
            const T dxh = dy[j] * sc.data()[j];
            dx[j] += (dxh - sum_dxhat * inv_n - xhat[j] * sum_dxhat_xhat * inv_n) * inv_sd;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  kernels::gelu(x.data(), out.data(), x.numel());
  if (detail::track(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out]() mutable {
      kernels::gelu_backward(x.data(), out.grad_data(), x.grad_data(), x.numel());
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  T s = 0;
  for (std::int64_t i = 0; i < x.numel(); ++i) s += x.data()[i];
  Tensor<T> out = Tensor<T>::scalar(s);
  if (detail::track(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out]() mutable {
      const T g = out.grad_data()[0];
      for (std::int64_t i = 0; i < x.numel(); ++i) x.grad_data()[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  const T inv = T(1) / static_cast<T>(x.numel());
  Tensor<T> s = sum(x, tape);
  return scale(s, inv, tape);
}

// ---- initialization helpers ----------------------------------------------

template <typename T>
void fill_uniform(Tensor<T>& t, std::mt19937& rng, T lo, T hi) {
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill_normal(Tensor<T>& t, std::mt19937& rng, T stddev) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

// Glorot-style uniform init used for every projection and MLP weight.
template <typename T>
Tensor<T> glorot_uniform(std::int64_t fan_in, std::int64_t fan_out, std::mt19937& rng) {
  Tensor<T> t = Tensor<T>::zeros({fan_in, fan_out});
  const T bound = std::sqrt(T(6) / static_cast<T>(fan_in + fan_out));
  fill_uniform(t, rng, -bound, bound);
  return t;
}

// ---- gradient checking ----------------------------------------------------

// Compares analytic gradients against central finite differences for a
// scalar-valued function of `inputs`. Returns the maximum absolute
// discrepancy normalized by the largest gradient magnitude observed, so a
// constant function reports exactly 0.
template <typename T>
double grad_check(const std::function<Tensor<T>(Tape<T>*, std::vector<Tensor<T>>&)>& f,
                  std::vector<Tensor<T>> inputs, T step) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  Tape<T> tape;
  Tensor<T> loss = f(&tape, inputs);
  if (loss.numel() != 1) throw UsageError("grad_check requires a scalar-valued function");
  std::vector<std::vector<T>> analytic;
  if (loss.requires_grad()) {
    tape.backward(loss);
  }
  for (auto& in : inputs) {
    analytic.emplace_back(in.grad().begin(), in.grad().end());
  }

  double max_abs_diff = 0.0;
  double max_mag = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& in = inputs[t];
    for (std::int64_t i = 0; i < in.numel(); ++i) {
      const T saved = in.data()[i];
      in.data()[i] = saved + step;
      const double up = static_cast<double>(f(nullptr, inputs).item());
      in.data()[i] = saved - step;
      const double dn = static_cast<double>(f(nullptr, inputs).item());
      in.data()[i] = saved;
      const double numeric = (up - dn) / (2.0 * static_cast<double>(step));
      const double a = static_cast<double>(analytic[t][static_cast<std::size_t>(i)]);
      max_abs_diff = std::max(max_abs_diff, std::abs(a - numeric));
      max_mag = std::max({max_mag, std::abs(a), std::abs(numeric)});
    }
  }
  if (max_mag < 1e-12) return 0.0;
  return max_abs_diff / max_mag;
}

}  // namespace latentcast
