// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaftr/numcore.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "adaftr/errors.hpp"

namespace adaftr {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap view(const Tensor2& t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

MutMap view(Tensor2& t) {
  return MutMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

}  // namespace

// ---------------------------------------------------------------- Tensor2

Tensor2::Tensor2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    std::ostringstream msg;
    msg << "Tensor2: data length " << data_.size() << " does not match " << rows_ << "x"
        << cols_;
    throw DimensionError(msg.str());
  }
}

Tensor2 Tensor2::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("Tensor2::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor2(r, c, std::move(data));
}

std::string Tensor2::shape_string() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

void Tensor2::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor2& Tensor2::operator+=(const Tensor2& other) {
  require_same_shape(*this, other, "Tensor2::operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor2& Tensor2::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

void require_same_shape(const Tensor2& a, const Tensor2& b, std::string_view what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

bool all_finite(std::span<const double> values) noexcept {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------- threads

std::size_t worker_threads() {
  static const std::size_t n = [] {
    const char* env = std::getenv("ADAFTR_THREADS");
    if (env == nullptr) return std::size_t{1};
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || v < 1) return std::size_t{1};
    return static_cast<std::size_t>(v);
  }();
  return n;
}

void parallel_rows(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
  const std::size_t threads = std::min(worker_threads(), n);
  if (threads <= 1) {
    body(0, n);
    return;
  }
  const std::size_t chunk = (n + threads - 1) / threads;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------- linear

Tensor2 linear_forward(const Tensor2& x, const Tensor2& W, std::span<const double> b) {
  if (x.cols() != W.rows()) {
    throw DimensionError("linear_forward: input x " + x.shape_string() +
                         " does not conform to weight W " + W.shape_string());
  }
  if (b.size() != W.cols()) {
    throw DimensionError("linear_forward: bias b has " + std::to_string(b.size()) +
                         " entries, weight W " + W.shape_string() + " needs " +
                         std::to_string(W.cols()));
  }
  Tensor2 out(x.rows(), W.cols());
  const auto w = view(W);
  const Eigen::Map<const Eigen::RowVectorXd> bias(b.data(), static_cast<Eigen::Index>(b.size()));
  parallel_rows(x.rows(), [&](std::size_t begin, std::size_t end) {
    const auto rows = static_cast<Eigen::Index>(end - begin);
    ConstMap xs(x.data() + begin * x.cols(), rows, static_cast<Eigen::Index>(x.cols()));
    MutMap os(out.data() + begin * out.cols(), rows, static_cast<Eigen::Index>(out.cols()));
    os.noalias() = xs * w;
    os.rowwise() += bias;
  });
  return out;
}

LinearGrads linear_backward(const Tensor2& x, const Tensor2& W, const Tensor2& upstream,
                            bool want_input_grad) {
  if (x.cols() != W.rows() || upstream.rows() != x.rows() || upstream.cols() != W.cols()) {
    throw DimensionError("linear_backward: x " + x.shape_string() + ", W " + W.shape_string() +
                         ", upstream " + upstream.shape_string() + " do not conform");
  }
  LinearGrads g;
  g.W = Tensor2(W.rows(), W.cols());
  view(g.W).noalias() = view(x).transpose() * view(upstream);

  g.b = Tensor2(1, W.cols());
  for (std::size_t i = 0; i < upstream.rows(); ++i) {
    const auto row = upstream.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) g.b(0, j) += row[j];
  }

  if (want_input_grad) {
    g.x = Tensor2(x.rows(), x.cols());
    const auto w = view(W);
    parallel_rows(x.rows(), [&](std::size_t begin, std::size_t end) {
      const auto rows = static_cast<Eigen::Index>(end - begin);
      ConstMap us(upstream.data() + begin * upstream.cols(), rows,
                  static_cast<Eigen::Index>(upstream.cols()));
      MutMap gx(g.x.data() + begin * x.cols(), rows, static_cast<Eigen::Index>(x.cols()));
      gx.noalias() = us * w.transpose();
    });
  }
  return g;
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.shape_string() + " * " + b.shape_string());
  }
  Tensor2 out(a.rows(), b.cols());
  view(out).noalias() = view(a) * view(b);
  return out;
}

Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + a.shape_string() + " * " + b.shape_string() + "^T");
  }
  Tensor2 out(a.rows(), b.rows());
  view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: " + a.shape_string() + "^T * " + b.shape_string());
  }
  Tensor2 out(a.cols(), b.cols());
  view(out).noalias() = view(a).transpose() * view(b);
  return out;
}

// ---------------------------------------------------------------- embedding

Tensor2 embedding_forward(std::span<const Tensor2* const> tables,
                          std::span<const std::uint32_t> ids, std::size_t batch,
                          std::span<const std::string> field_names) {
  const std::size_t fields = tables.size();
  if (ids.size() != batch * fields) {
    throw DimensionError("embedding_forward: expected " + std::to_string(batch * fields) +
                         " ids for " + std::to_string(batch) + " records x " +
                         std::to_string(fields) + " fields, got " + std::to_string(ids.size()));
  }
  if (fields == 0) return Tensor2(batch, 0);
  const std::size_t dim = tables[0]->cols();
  for (std::size_t f = 1; f < fields; ++f) {
    if (tables[f]->cols() != dim) {
      throw DimensionError("embedding_forward: tables disagree on embedding width");
    }
  }
  Tensor2 out(batch, fields * dim);
  for (std::size_t i = 0; i < batch; ++i) {
    auto dst = out.row(i);
    for (std::size_t f = 0; f < fields; ++f) {
      const std::uint32_t id = ids[i * fields + f];
      if (id >= tables[f]->rows()) {
        const std::string name =
            f < field_names.size() ? field_names[f] : "field#" + std::to_string(f);
        throw RangeError("embedding_forward: id " + std::to_string(id) + " out of range for " +
                         name + " (cardinality " + std::to_string(tables[f]->rows()) + ")");
      }
      const auto src = tables[f]->row(id);
      std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(f * dim));
    }
  }
  return out;
}

void embedding_backward(std::span<const std::uint32_t> ids, std::size_t batch,
                        const Tensor2& upstream, std::span<Tensor2* const> table_grads) {
  const std::size_t fields = table_grads.size();
  if (fields == 0) return;
  const std::size_t dim = table_grads[0]->cols();
  if (ids.size() != batch * fields || upstream.rows() != batch || upstream.cols() != fields * dim) {
    throw DimensionError("embedding_backward: upstream " + upstream.shape_string() +
                         " does not match " + std::to_string(batch) + " records x " +
                         std::to_string(fields) + " fields");
  }
  for (std::size_t i = 0; i < batch; ++i) {
    const auto src = upstream.row(i);
    for (std::size_t f = 0; f < fields; ++f) {
      auto dst = table_grads[f]->row(ids[i * fields + f]);
      for (std::size_t d = 0; d < dim; ++d) dst[d] += src[f * dim + d];
    }
  }
}

// ---------------------------------------------------------------- activations

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::sigmoid:
      return "sigmoid";
    case Activation::linear:
      return "linear";
  }
  return "relu";
}

Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "linear") return Activation::linear;
  throw ConfigError("unknown activation '" + std::string(s) + "' (relu|sigmoid|linear)");
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor2 activate(const Tensor2& pre, Activation kind) {
  Tensor2 out = pre;
  auto v = out.values();
  switch (kind) {
    case Activation::relu:
      for (double& x : v) x = x > 0.0 ? x : 0.0;
      break;
    case Activation::sigmoid:
      for (double& x : v) x = sigmoid(x);
      break;
    case Activation::linear:
      break;
  }
  return out;
}

Tensor2 activate_backward(const Tensor2& pre, const Tensor2& out, const Tensor2& upstream,
                          Activation kind) {
  require_same_shape(pre, upstream, "activate_backward");
  require_same_shape(out, upstream, "activate_backward");
  Tensor2 g = upstream;
  auto gv = g.values();
  switch (kind) {
    case Activation::relu: {
      const auto p = pre.values();
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = p[i] > 0.0 ? gv[i] : 0.0;
      break;
    }
    case Activation::sigmoid: {
      const auto o = out.values();
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= o[i] * (1.0 - o[i]);
      break;
    }
    case Activation::linear:
      break;
  }
  return g;
}

std::vector<double> probability_forward(const Tensor2& logits) {
  if (logits.cols() != 1) {
    throw DimensionError("probability_forward: expected a [B x 1] logit column, got " +
                         logits.shape_string());
  }
  std::vector<double> p(logits.rows());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::clamp(sigmoid(logits(i, 0)), kProbFloor, kProbCeil);
  }
  return p;
}

Tensor2 probability_backward(const Tensor2& logits, std::span<const double> upstream) {
  if (logits.cols() != 1 || upstream.size() != logits.rows()) {
    throw DimensionError("probability_backward: logits " + logits.shape_string() +
                         " vs upstream of length " + std::to_string(upstream.size()));
  }
  Tensor2 g(logits.rows(), 1);
  for (std::size_t i = 0; i < upstream.size(); ++i) {
    const double s = sigmoid(logits(i, 0));
    if (s < kProbFloor || s > kProbCeil) continue;
    g(i, 0) = upstream[i] * s * (1.0 - s);
  }
  return g;
}

// ---------------------------------------------------------------- softmax

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

Tensor2 softmax_rows(const Tensor2& logits) {
  Tensor2 out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto p = softmax(logits.row(i));
    std::copy(p.begin(), p.end(), out.row(i).begin());
  }
  return out;
}

Tensor2 softmax_rows_backward(const Tensor2& probs, const Tensor2& upstream) {
  require_same_shape(probs, upstream, "softmax_rows_backward");
  Tensor2 g(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const auto p = probs.row(i);
    const auto u = upstream.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) dot += p[j] * u[j];
    auto dst = g.row(i);
    for (std::size_t j = 0; j < p.size(); ++j) dst[j] = p[j] * (u[j] - dot);
  }
  return g;
}

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -INFINITY;
  const double mx = *std::max_element(x.begin(), x.end());
  double total = 0.0;
  for (double v : x) total += std::exp(v - mx);
  return mx + std::log(total);
}

// ---------------------------------------------------------------- Adam

AdamState AdamState::zeros_like(const Tensor2& param) {
  return AdamState{Tensor2(param.rows(), param.cols()), Tensor2(param.rows(), param.cols()), 0};
}

void adam_step(Tensor2& param, const Tensor2& grad, AdamState& state, const AdamConfig& cfg,
               std::string_view name) {
  require_same_shape(param, grad, "adam_step");
  if (!param.same_shape(state.m) || !param.same_shape(state.v)) {
    throw DimensionError("adam_step: moment shape does not match parameter " +
                         std::string(name));
  }
  if (!all_finite(grad.values())) {
    throw TrainingError("adam_step: non-finite gradient for parameter " + std::string(name));
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  auto p = param.values();
  const auto g = grad.values();
  auto m = state.m.values();
  auto v = state.v.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    p[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

// ---------------------------------------------------------------- oracle

std::vector<double> finite_diff_grad_inplace(const std::function<double()>& f,
                                             std::span<double> theta, double eps) {
  std::vector<double> grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + eps;
    const double up = f();
    theta[i] = saved - eps;
    const double down = f();
    theta[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw OracleError("finite_diff_grad: objective is non-finite at coordinate " +
                        std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> theta, double eps) {
  std::vector<double> work(theta.begin(), theta.end());
  return finite_diff_grad_inplace([&] { return f(work); }, work, eps);
}

double relative_error(double a, double b) noexcept {
  const double denom = std::max({1e-8, std::abs(a), std::abs(b)});
  return std::abs(a - b) / denom;
}

}  // namespace adaftr
