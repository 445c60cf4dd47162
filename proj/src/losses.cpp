// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaftr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "adaftr/datasets.hpp"
#include "adaftr/errors.hpp"
#include "adaftr/model.hpp"

namespace adaftr {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": length " + std::to_string(a) + " vs " +
                         std::to_string(b));
  }
}

// log(1 + exp(x)) without overflow.
double softplus(double x) noexcept {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_tau(std::span<const double> tau, std::size_t batch) {
  require_same_length(tau.size(), batch, "infonce tau");
  for (std::size_t r = 0; r < tau.size(); ++r) {
    if (!(tau[r] > 0.0)) {
      throw DomainError("infonce: temperature at row " + std::to_string(r) +
                        " must be positive, got " + std::to_string(tau[r]));
    }
  }
}

// Row-wise softmax of s_r. / tau_r, plus the per-row loss term.
struct ScaledLogits {
  Tensor2 sim;
  Tensor2 probs;
  std::vector<double> terms;
};

ScaledLogits scaled_logits(const Tensor2& h_ctr, const Tensor2& h_cvr,
                           std::span<const double> tau) {
  require_same_shape(h_ctr, h_cvr, "infonce");
  check_tau(tau, h_ctr.rows());
  ScaledLogits out;
  out.sim = matmul_nt(h_ctr, h_cvr);
  const std::size_t B = h_ctr.rows();
  out.probs = Tensor2(B, B);
  out.terms.resize(B);
  std::vector<double> a(B);
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t j = 0; j < B; ++j) a[j] = out.sim(r, j) / tau[r];
    const double lse = log_sum_exp(a);
    for (std::size_t j = 0; j < B; ++j) out.probs(r, j) = std::exp(a[j] - lse);
    // Never negative in exact arithmetic; clamp the rounding residue.
    out.terms[r] = std::max(0.0, lse - a[r]);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- BCE

double bce(std::span<const double> prob, std::span<const double> labels) {
  require_same_length(prob.size(), labels.size(), "bce");
  if (prob.empty()) throw DimensionError("bce: empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    sum -= labels[i] * std::log(prob[i]) + (1.0 - labels[i]) * std::log(1.0 - prob[i]);
  }
  return sum / static_cast<double>(prob.size());
}

std::vector<double> bce_backward(std::span<const double> prob, std::span<const double> labels) {
  require_same_length(prob.size(), labels.size(), "bce_backward");
  const double inv = 1.0 / static_cast<double>(prob.size());
  std::vector<double> g(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) {
    g[i] = (-labels[i] / prob[i] + (1.0 - labels[i]) / (1.0 - prob[i])) * inv;
  }
  return g;
}

// ---------------------------------------------------------------- alignment

double reg_align(const Tensor2& h_ctr, const Tensor2& h_cvr, RegKind kind) {
  require_same_shape(h_ctr, h_cvr, "reg_align");
  if (h_ctr.empty()) return 0.0;
  const auto a = h_ctr.values();
  const auto b = h_cvr.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += kind == RegKind::mse ? d * d : std::abs(d);
  }
  return sum / static_cast<double>(a.size());
}

PairGrads reg_align_backward(const Tensor2& h_ctr, const Tensor2& h_cvr, RegKind kind) {
  require_same_shape(h_ctr, h_cvr, "reg_align_backward");
  PairGrads g{Tensor2(h_ctr.rows(), h_ctr.cols()), Tensor2(h_ctr.rows(), h_ctr.cols())};
  if (h_ctr.empty()) return g;
  const double inv = 1.0 / static_cast<double>(h_ctr.size());
  const auto a = h_ctr.values();
  const auto b = h_cvr.values();
  auto ga = g.ctr.values();
  auto gb = g.cvr.values();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    // sign(0) = 0: the subgradient at a kink.
    const double v = kind == RegKind::mse ? 2.0 * d * inv : (d > 0.0 ? inv : d < 0.0 ? -inv : 0.0);
    ga[i] = v;
    gb[i] = -v;
  }
  return g;
}

std::vector<std::size_t> sample_negatives(std::size_t batch, std::uint64_t seed) {
  std::vector<std::size_t> neg;
  if (batch < 2) return neg;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dist(0, batch - 2);
  neg.resize(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    const std::size_t j = dist(rng);
    neg[r] = j >= r ? j + 1 : j;
  }
  return neg;
}

namespace {

void check_negatives(const Tensor2& h_ctr, const Tensor2& h_cvr,
                     std::span<const std::size_t> negatives) {
  require_same_shape(h_ctr, h_cvr, "scl");
  const std::size_t B = h_ctr.rows();
  if (B < 2) return;
  require_same_length(negatives.size(), B, "scl negatives");
  for (std::size_t r = 0; r < B; ++r) {
    if (negatives[r] >= B || negatives[r] == r) {
      throw RangeError("scl: invalid negative index " + std::to_string(negatives[r]) +
                       " for row " + std::to_string(r));
    }
  }
}

}  // namespace

double scl(const Tensor2& h_ctr, const Tensor2& h_cvr, std::span<const std::size_t> negatives) {
  check_negatives(h_ctr, h_cvr, negatives);
  const std::size_t B = h_ctr.rows();
  if (B < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t r = 0; r < B; ++r) {
    const auto c = h_ctr.row(r);
    const double d = dot(c, h_cvr.row(r)) - dot(c, h_cvr.row(negatives[r]));
    sum += softplus(-d);
  }
  return sum / static_cast<double>(B);
}

PairGrads scl_backward(const Tensor2& h_ctr, const Tensor2& h_cvr,
                       std::span<const std::size_t> negatives) {
  check_negatives(h_ctr, h_cvr, negatives);
  const std::size_t B = h_ctr.rows();
  PairGrads g{Tensor2(B, h_ctr.cols()), Tensor2(B, h_ctr.cols())};
  if (B < 2) return g;
  const double inv = 1.0 / static_cast<double>(B);
  for (std::size_t r = 0; r < B; ++r) {
    const auto c = h_ctr.row(r);
    const auto pos = h_cvr.row(r);
    const auto neg = h_cvr.row(negatives[r]);
    const double d = dot(c, pos) - dot(c, neg);
    const double coef = (sigmoid(d) - 1.0) * inv;
    auto gc = g.ctr.row(r);
    auto gp = g.cvr.row(r);
    auto gn = g.cvr.row(negatives[r]);
    for (std::size_t j = 0; j < c.size(); ++j) {
      gc[j] += coef * (pos[j] - neg[j]);
      gp[j] += coef * c[j];
      gn[j] -= coef * c[j];
    }
  }
  return g;
}

std::vector<double> infonce_terms(const Tensor2& h_ctr, const Tensor2& h_cvr,
                                  std::span<const double> tau) {
  return scaled_logits(h_ctr, h_cvr, tau).terms;
}

double infonce(const Tensor2& h_ctr, const Tensor2& h_cvr, std::span<const double> tau) {
  if (h_ctr.rows() == 0) throw DimensionError("infonce: empty batch");
  const auto terms = infonce_terms(h_ctr, h_cvr, tau);
  double sum = 0.0;
  for (double t : terms) sum += t;
  return sum / static_cast<double>(terms.size());
}

InfoNceGrads infonce_backward(const Tensor2& h_ctr, const Tensor2& h_cvr,
                              std::span<const double> tau) {
  if (h_ctr.rows() == 0) throw DimensionError("infonce_backward: empty batch");
  const ScaledLogits s = scaled_logits(h_ctr, h_cvr, tau);
  const std::size_t B = h_ctr.rows();
  const double inv = 1.0 / static_cast<double>(B);

  // G_rj = (p_rj - [r == j]) / (tau_r B)
  Tensor2 G(B, B);
  InfoNceGrads out;
  out.tau.assign(B, 0.0);
  for (std::size_t r = 0; r < B; ++r) {
    double dtau = 0.0;
    for (std::size_t j = 0; j < B; ++j) {
      const double e = s.probs(r, j) - (r == j ? 1.0 : 0.0);
      G(r, j) = e * inv / tau[r];
      dtau -= e * s.sim(r, j);
    }
    out.tau[r] = dtau * inv / (tau[r] * tau[r]);
  }
  out.ctr = matmul(G, h_cvr);
  out.cvr = matmul_tn(G, h_ctr);
  return out;
}

// ---------------------------------------------------------------- relatedness

double relatedness_label(double y_ctr, double y_cvr) noexcept {
  return y_ctr == y_cvr ? 1.0 : 0.0;
}

std::vector<double> relatedness_labels(std::span<const double> y_ctr,
                                       std::span<const double> y_cvr) {
  require_same_length(y_ctr.size(), y_cvr.size(), "relatedness_labels");
  std::vector<double> y(y_ctr.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = relatedness_label(y_ctr[i], y_cvr[i]);
  return y;
}

std::vector<double> temperature(std::span<const double> y_rel, const LossConfig& config,
                                std::optional<double> learnable_scalar) {
  if (!(config.tau_lower > 0.0) || !(config.tau_lower < config.tau_upper)) {
    throw ConfigError("temperature: need 0 < tau-lower < tau-upper");
  }
  std::vector<double> tau(y_rel.size());
  switch (config.temperature_mode) {
    case TemperatureMode::adaptive: {
      const double span = config.tau_upper - config.tau_lower;
      for (std::size_t i = 0; i < tau.size(); ++i) {
        tau[i] = span * (1.0 - y_rel[i]) + config.tau_lower;
      }
      break;
    }
    case TemperatureMode::fixed:
      std::fill(tau.begin(), tau.end(), config.fixed_tau);
      break;
    case TemperatureMode::learnable_scalar: {
      if (!learnable_scalar) {
        throw ConfigError("temperature: learnable_scalar mode needs the scalar parameter");
      }
      const double v = std::clamp(*learnable_scalar, config.tau_lower, config.tau_upper);
      std::fill(tau.begin(), tau.end(), v);
      break;
    }
  }
  return tau;
}

double temperature_scalar_slope(double scalar, const LossConfig& config) noexcept {
  return scalar >= config.tau_lower && scalar <= config.tau_upper ? 1.0 : 0.0;
}

// ---------------------------------------------------------------- combined

double l2_penalty(const ModelParams& params) {
  double sum = 0.0;
  for (const Param& p : params) {
    if (p.group != ParamGroup::theta || p.name == kTemperatureParam) continue;
    for (double v : p.value.values()) sum += v * v;
  }
  return 0.5 * sum;
}

double alignment_loss(const ForwardTrace& trace, const LossConfig& config,
                      std::span<const std::size_t> negatives) {
  if (config.alignment_mode == AlignmentMode::none) return 0.0;
  const Tensor2& hc = trace.hidden(Task::ctr, config.contrast_layer);
  const Tensor2& hv = trace.hidden(Task::cvr, config.contrast_layer);
  switch (config.alignment_mode) {
    case AlignmentMode::reg:
      return reg_align(hc, hv, config.reg_kind);
    case AlignmentMode::scl:
      return scl(hc, hv, negatives);
    case AlignmentMode::infonce:
      return infonce(hc, hv, trace.tau);
    case AlignmentMode::none:
      break;
  }
  return 0.0;
}

LossBreakdown total_loss(const ForwardTrace& trace, const Batch& batch, const LossConfig& config,
                         const ModelParams& params, std::span<const std::size_t> negatives) {
  LossBreakdown l;
  l.ctr = bce(trace.prob(Task::ctr), batch.y_ctr);
  l.cvr = bce(trace.prob(Task::cvr), batch.y_cvr);
  l.rel = bce(trace.prob_rel(), relatedness_labels(batch.y_ctr, batch.y_cvr));
  l.align = alignment_loss(trace, config, negatives);
  l.l2 = l2_penalty(params);
  l.total = l.ctr + l.cvr + config.alpha * l.rel + config.beta * l.align + config.lambda * l.l2;
  return l;
}

}  // namespace adaftr
