// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives and their analytic gradients. All losses are batch
// means. Backward functions return gradients of the unweighted loss; callers
// apply alpha/beta/lambda.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "adaftr/config.hpp"
#include "adaftr/numcore.hpp"

namespace adaftr {

struct Batch;
struct ForwardTrace;
class ModelParams;

// ---------------------------------------------------------------- BCE

double bce(std::span<const double> prob, std::span<const double> labels);
// d bce / d prob, per instance.
std::vector<double> bce_backward(std::span<const double> prob, std::span<const double> labels);

// ---------------------------------------------------------------- alignment

struct PairGrads {
  Tensor2 ctr;
  Tensor2 cvr;
};

double reg_align(const Tensor2& h_ctr, const Tensor2& h_cvr, RegKind kind);
PairGrads reg_align_backward(const Tensor2& h_ctr, const Tensor2& h_cvr, RegKind kind);

// One negative index per row, uniform over the batch minus the row itself.
// Empty for B = 1.
std::vector<std::size_t> sample_negatives(std::size_t batch, std::uint64_t seed);

// mean_r softplus(-(h_r^ctr . h_r^cvr - h_r^ctr . h_neg(r)^cvr)).
// Zero when the batch has a single row (no negative exists).
double scl(const Tensor2& h_ctr, const Tensor2& h_cvr, std::span<const std::size_t> negatives);
PairGrads scl_backward(const Tensor2& h_ctr, const Tensor2& h_cvr,
                       std::span<const std::size_t> negatives);

// Per-row terms log-sum-exp_j(s_rj / tau_r) - s_rr / tau_r with
// s = H_ctr H_cvr^T. Throws DomainError on tau_r <= 0.
std::vector<double> infonce_terms(const Tensor2& h_ctr, const Tensor2& h_cvr,
                                  std::span<const double> tau);
double infonce(const Tensor2& h_ctr, const Tensor2& h_cvr, std::span<const double> tau);

struct InfoNceGrads {
  Tensor2 ctr;
  Tensor2 cvr;
  std::vector<double> tau;  // d loss / d tau_r
};
InfoNceGrads infonce_backward(const Tensor2& h_ctr, const Tensor2& h_cvr,
                              std::span<const double> tau);

// ---------------------------------------------------------------- relatedness

double relatedness_label(double y_ctr, double y_cvr) noexcept;
std::vector<double> relatedness_labels(std::span<const double> y_ctr,
                                       std::span<const double> y_cvr);

// Per-instance tau. `learnable_scalar` is read only in learnable_scalar mode.
std::vector<double> temperature(std::span<const double> y_rel, const LossConfig& config,
                                std::optional<double> learnable_scalar = std::nullopt);

// 1 when the learnable scalar sits inside [tau_lower, tau_upper] (clip passes
// the gradient), else 0.
double temperature_scalar_slope(double scalar, const LossConfig& config) noexcept;

// ---------------------------------------------------------------- combined

struct LossBreakdown {
  double ctr = 0.0;
  double cvr = 0.0;
  double rel = 0.0;
  double align = 0.0;  // whichever alignment the config selects; 0 for none
  double l2 = 0.0;
  double total = 0.0;
};

// 1/2 sum of squares over theta, the learnable temperature excluded.
double l2_penalty(const ModelParams& params);

// Alignment loss on the configured tower layer. `negatives` is used by scl.
double alignment_loss(const ForwardTrace& trace, const LossConfig& config,
                      std::span<const std::size_t> negatives);

LossBreakdown total_loss(const ForwardTrace& trace, const Batch& batch, const LossConfig& config,
                         const ModelParams& params, std::span<const std::size_t> negatives = {});

}  // namespace adaftr
