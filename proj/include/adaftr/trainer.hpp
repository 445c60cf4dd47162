// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Alternating optimization of the base parameters (theta) and the
// relatedness network (omega).
//
// Per step, one forward pass feeds two gradient sets:
//   omega: alpha * dL_rel/d omega, with v^ctr and v^cvr held constant
//   theta: d(L_ctr + L_cvr + beta*L_align + lambda*L_l2)/d theta, with tau held
//          constant (except the learnable scalar, which is itself in theta)
// Both are computed before either Adam update is applied.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adaftr/config.hpp"
#include "adaftr/datasets.hpp"
#include "adaftr/losses.hpp"
#include "adaftr/metrics.hpp"
#include "adaftr/model.hpp"

namespace adaftr {

// init_params plus the learnable temperature when the mode needs one.
ModelParams init_training_params(const TrainConfig& config);
void ensure_temperature_param(ModelParams& params, const LossConfig& config);

std::vector<AdamState> init_adam_states(const ModelParams& params);

struct BackpropOptions {
  bool corrupt = false;  // negative control: scales one tower gradient by 1.5
};

struct StepGradients {
  Gradients grads;
  LossBreakdown losses;
};

// Throws TrainingError naming the loss component when it is not finite.
StepGradients compute_gradients(const ModelParams& params, const Batch& batch,
                                const TrainConfig& config,
                                std::span<const std::size_t> negatives,
                                const BackpropOptions& options = {});

// Negatives for scl drawn from `step_seed`; empty for other modes.
std::vector<std::size_t> step_negatives(std::size_t batch, const LossConfig& config,
                                        std::uint64_t step_seed);

// One update of both groups. On a non-finite gradient nothing is modified.
LossBreakdown train_step(ModelParams& params, std::vector<AdamState>& states, const Batch& batch,
                         const TrainConfig& config, std::uint64_t step_seed);

std::uint64_t step_seed(std::uint64_t seed, std::uint64_t step) noexcept;

// ---------------------------------------------------------------- training loop

struct StepRecord {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  LossBreakdown losses;
  double wall_seconds = 0.0;
};

struct EvalRecord {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  MetricsReport report;
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  bool stopped_early = false;
};

struct TrainOptions {
  const Dataset* eval_data = nullptr;      // no evaluation when null
  std::filesystem::path checkpoint_path;   // empty: no checkpoints
  std::ostream* log = nullptr;             // JSON lines
  bool log_wall_clock = false;             // off keeps logs byte-reproducible
  // Theta tensors copied by matching name and shape; omega stays fresh.
  const ModelParams* warm_start = nullptr;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const TrainOptions& options = {});

// Intermediate checkpoints go next to the final one: `<stem>.epoch<N><ext>`.
std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& final_path,
                                            std::size_t epoch);

// ---------------------------------------------------------------- gradient check

struct GradCheckOptions {
  std::uint64_t seed = 0;
  std::size_t batch_size = 4;
  double eps = 1e-5;
  bool break_backprop = false;
};

struct GroupError {
  std::string group;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GroupError> groups;  // in parameter order, each group once
  double max_error() const noexcept;
};

// Micro setup: E=4, three fields of cardinality 5, k=2 experts, shared
// width 8, towers [8,4], relatedness [8], beta=0.5.
TrainConfig micro_config(Backbone backbone, AlignmentMode alignment, TemperatureMode temperature);

// Deterministic labelled micro-batch for `config.model.fields`.
Batch micro_batch(const ModelConfig& config, std::size_t batch_size, std::uint64_t seed);

// Central differences on every coordinate of a seeded micro-model.
// Theta is checked against L_ctr + L_cvr + beta*L_align + lambda*L_l2 with
// tau frozen (adaptive mode), omega against alpha*L_rel.
GradCheckReport grad_check(const TrainConfig& config, const GradCheckOptions& options = {});

std::string to_json(const GradCheckReport& report, double tolerance);

}  // namespace adaftr
