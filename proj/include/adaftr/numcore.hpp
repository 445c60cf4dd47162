// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense numeric primitives with exact analytic gradients. Everything is
// 64-bit, row-major, batch-leading. Ops are pure functions; the only mutable
// state is what the caller passes in explicitly (Adam moments, gradient
// accumulators).

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace adaftr {

class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2 from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  bool same_shape(const Tensor2& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  void fill(double v);
  Tensor2& operator+=(const Tensor2& other);
  Tensor2& operator*=(double s);

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Throws DimensionError unless a and b have identical shapes.
void require_same_shape(const Tensor2& a, const Tensor2& b, std::string_view what);

bool all_finite(std::span<const double> values) noexcept;

// Worker threads for row-parallel kernels, read once from ADAFTR_THREADS
// (default 1). Row partitioning is a pure function of the row count and the
// thread count, so results are bit-identical for a fixed setting.
std::size_t worker_threads();
void parallel_rows(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

// ---------------------------------------------------------------- linear

// out = x * W + b, x: [B x n], W: [n x m], b: [m].
Tensor2 linear_forward(const Tensor2& x, const Tensor2& W, std::span<const double> b);

struct LinearGrads {
  Tensor2 x;  // [B x n], empty when not requested
  Tensor2 W;  // [n x m]
  Tensor2 b;  // [1 x m]
};

LinearGrads linear_backward(const Tensor2& x, const Tensor2& W, const Tensor2& upstream,
                            bool want_input_grad = true);

// Plain products: a*b, a*b^T and a^T*b.
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b);
Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b);

// ---------------------------------------------------------------- embedding

// Looks up one row per field and concatenates them in field order.
// `ids` is row-major [batch x F]. Field names are only used for error text.
Tensor2 embedding_forward(std::span<const Tensor2* const> tables,
                          std::span<const std::uint32_t> ids, std::size_t batch,
                          std::span<const std::string> field_names = {});

// Scatter-adds upstream [batch x F*E] into the per-field gradient tables.
void embedding_backward(std::span<const std::uint32_t> ids, std::size_t batch,
                        const Tensor2& upstream, std::span<Tensor2* const> table_grads);

// ---------------------------------------------------------------- activations

enum class Activation { relu, sigmoid, linear };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

double sigmoid(double x) noexcept;

inline constexpr double kProbFloor = 1e-7;
inline constexpr double kProbCeil = 1.0 - 1e-7;

Tensor2 activate(const Tensor2& pre, Activation kind);
// Gradient w.r.t. `pre`, given the forward input and output.
Tensor2 activate_backward(const Tensor2& pre, const Tensor2& out, const Tensor2& upstream,
                          Activation kind);

// Sigmoid of a [B x 1] logit column, clamped into [kProbFloor, kProbCeil].
std::vector<double> probability_forward(const Tensor2& logits);
// d prob / d logit applied to upstream; zero where the clamp is active.
Tensor2 probability_backward(const Tensor2& logits, std::span<const double> upstream);

// ---------------------------------------------------------------- softmax

std::vector<double> softmax(std::span<const double> logits);
Tensor2 softmax_rows(const Tensor2& logits);
Tensor2 softmax_rows_backward(const Tensor2& probs, const Tensor2& upstream);

// Max-subtracted log(sum(exp(x))).
double log_sum_exp(std::span<const double> x);

// ---------------------------------------------------------------- Adam

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Tensor2 m;
  Tensor2 v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const Tensor2& param);
};

// Bias-corrected Adam update in place. Throws TrainingError naming `name`
// if the gradient contains a non-finite value; param and state are untouched
// in that case.
void adam_step(Tensor2& param, const Tensor2& grad, AdamState& state, const AdamConfig& cfg,
               std::string_view name = "param");

// ---------------------------------------------------------------- oracle

// Central differences (f(t+eps) - f(t-eps)) / (2 eps) per coordinate.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> theta, double eps = 1e-5);

// Same, perturbing `theta` in place and restoring it after each coordinate.
// Useful when theta lives inside a larger structure that `f` reads.
std::vector<double> finite_diff_grad_inplace(const std::function<double()>& f,
                                             std::span<double> theta, double eps = 1e-5);

// |a-b| / max(1e-8, |a|, |b|)
double relative_error(double a, double b) noexcept;

}  // namespace adaftr
