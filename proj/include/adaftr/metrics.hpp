// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Ranking metrics and the evaluation report.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "adaftr/config.hpp"
#include "adaftr/datasets.hpp"
#include "adaftr/losses.hpp"

namespace adaftr {

class ModelParams;

// Rank-sum AUC with average ranks for ties. Throws MetricError unless both
// classes are present.
double auc(std::span<const double> scores, std::span<const double> labels);

struct GaucResult {
  double value = 0.0;
  std::size_t evaluated_users = 0;
  std::size_t skipped_users = 0;  // single-class groups
};

// Unweighted mean of per-user AUC over users with both classes, reduced in
// ascending user-id order. Throws MetricError when every user is skipped.
GaucResult gauc(std::span<const double> scores, std::span<const double> labels,
                std::span<const std::uint64_t> user_ids);

struct TaskMetrics {
  std::optional<double> auc;
  std::optional<double> gauc;
  std::size_t records = 0;
  std::size_t evaluated_users = 0;
  std::size_t skipped_users = 0;
  std::string error;  // set when a metric is undefined for this task
};

struct MetricsReport {
  TaskMetrics ctr;
  TaskMetrics cvr;
  std::size_t records = 0;
  std::size_t total_users = 0;
  LossBreakdown losses;  // record-weighted means over evaluation batches
};

// Batched forward passes in record order, no updates. An undefined metric
// on one task is recorded in that task's `error` and does not abort the other.
MetricsReport evaluate(const ModelParams& params, const Dataset& dataset,
                       const TrainConfig& config);

// Single JSON object. Keys: auc_ctr, gauc_ctr, auc_cvr, gauc_cvr,
// skipped_users_ctr, skipped_users_cvr, evaluated_users_*, loss_*. Undefined
// metrics are null. `percent` scales AUC values by 100.
std::string to_json(const MetricsReport& report, bool percent = false);

}  // namespace adaftr
