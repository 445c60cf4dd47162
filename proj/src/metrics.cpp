// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaftr/metrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "adaftr/errors.hpp"
#include "adaftr/model.hpp"

namespace adaftr {

double auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // ranks i+1..j share their average
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] > 0.5) {
        pos_rank_sum += rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw MetricError("auc: undefined without both positive and negative labels");
  }
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

GaucResult gauc(std::span<const double> scores, std::span<const double> labels,
                std::span<const std::uint64_t> user_ids) {
  if (scores.size() != labels.size() || scores.size() != user_ids.size()) {
    throw DimensionError("gauc: scores, labels and user ids differ in length");
  }
  if (scores.empty()) throw MetricError("gauc: empty input");

  std::map<std::uint64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < user_ids.size(); ++i) groups[user_ids[i]].push_back(i);

  GaucResult out;
  double sum = 0.0;
  std::vector<double> s;
  std::vector<double> y;
  for (const auto& [user, idx] : groups) {
    s.clear();
    y.clear();
    std::size_t pos = 0;
    for (std::size_t i : idx) {
      s.push_back(scores[i]);
      y.push_back(labels[i]);
      if (labels[i] > 0.5) ++pos;
    }
    if (pos == 0 || pos == idx.size()) {
      ++out.skipped_users;
      continue;
    }
    sum += auc(s, y);
    ++out.evaluated_users;
  }
  if (out.evaluated_users == 0) {
    throw MetricError("gauc: every user has single-class labels");
  }
  out.value = sum / static_cast<double>(out.evaluated_users);
  return out;
}

namespace {

TaskMetrics task_metrics(std::span<const double> scores, std::span<const double> labels,
                         std::span<const std::uint64_t> users) {
  TaskMetrics m;
  m.records = scores.size();
  try {
    m.auc = auc(scores, labels);
  } catch (const MetricError& e) {
    m.error = e.what();
  }
  try {
    const GaucResult g = gauc(scores, labels, users);
    m.gauc = g.value;
    m.evaluated_users = g.evaluated_users;
    m.skipped_users = g.skipped_users;
  } catch (const MetricError& e) {
    if (m.error.empty()) m.error = e.what();
    m.skipped_users = std::set<std::uint64_t>(users.begin(), users.end()).size();
  }
  return m;
}

}  // namespace

MetricsReport evaluate(const ModelParams& params, const Dataset& dataset,
                       const TrainConfig& config) {
  if (dataset.size() == 0) throw ConfigError("evaluate: empty dataset");
  const std::size_t n = dataset.size();
  std::vector<double> p_ctr, p_cvr, y_ctr, y_cvr, p_rel;
  std::vector<std::uint64_t> users;
  p_ctr.reserve(n);
  p_cvr.reserve(n);
  p_rel.reserve(n);

  double align_sum = 0.0;
  const std::size_t bs = std::max<std::size_t>(1, config.batch_size);
  std::uint64_t batch_index = 0;
  for (std::size_t begin = 0; begin < n; begin += bs, ++batch_index) {
    const Batch batch = make_batch(dataset, begin, std::min(n, begin + bs));
    const ForwardTrace tr = model_forward(params, batch, config);
    const auto negatives = config.loss.alignment_mode == AlignmentMode::scl
                               ? sample_negatives(batch.size, mix_seed(config.seed, batch_index))
                               : std::vector<std::size_t>{};
    align_sum += alignment_loss(tr, config.loss, negatives) * static_cast<double>(batch.size);
    const auto& pc = tr.prob(Task::ctr);
    const auto& pv = tr.prob(Task::cvr);
    p_ctr.insert(p_ctr.end(), pc.begin(), pc.end());
    p_cvr.insert(p_cvr.end(), pv.begin(), pv.end());
    p_rel.insert(p_rel.end(), tr.prob_rel().begin(), tr.prob_rel().end());
    y_ctr.insert(y_ctr.end(), batch.y_ctr.begin(), batch.y_ctr.end());
    y_cvr.insert(y_cvr.end(), batch.y_cvr.begin(), batch.y_cvr.end());
    users.insert(users.end(), batch.user_ids.begin(), batch.user_ids.end());
  }

  MetricsReport r;
  r.records = n;
  r.total_users = std::set<std::uint64_t>(users.begin(), users.end()).size();
  r.ctr = task_metrics(p_ctr, y_ctr, users);
  if (config.cvr_on_clicks_only) {
    std::vector<double> s, y;
    std::vector<std::uint64_t> u;
    for (std::size_t i = 0; i < n; ++i) {
      if (y_ctr[i] < 0.5) continue;
      s.push_back(p_cvr[i]);
      y.push_back(y_cvr[i]);
      u.push_back(users[i]);
    }
    r.cvr = task_metrics(s, y, u);
    if (s.empty()) r.cvr.error = "no clicked records for CVR evaluation";
  } else {
    r.cvr = task_metrics(p_cvr, y_cvr, users);
  }

  const LossConfig& lc = config.loss;
  r.losses.ctr = bce(p_ctr, y_ctr);
  r.losses.cvr = bce(p_cvr, y_cvr);
  r.losses.rel = bce(p_rel, relatedness_labels(y_ctr, y_cvr));
  r.losses.align = align_sum / static_cast<double>(n);
  r.losses.l2 = l2_penalty(params);
  r.losses.total = r.losses.ctr + r.losses.cvr + lc.alpha * r.losses.rel +
                   lc.beta * r.losses.align + lc.lambda * r.losses.l2;
  return r;
}

std::string to_json(const MetricsReport& report, bool percent) {
  const double scale = percent ? 100.0 : 1.0;
  auto metric = [&](const std::optional<double>& v) -> nlohmann::json {
    if (!v) return nullptr;
    return *v * scale;
  };
  nlohmann::ordered_json j;
  j["auc_ctr"] = metric(report.ctr.auc);
  j["gauc_ctr"] = metric(report.ctr.gauc);
  j["auc_cvr"] = metric(report.cvr.auc);
  j["gauc_cvr"] = metric(report.cvr.gauc);
  j["evaluated_users_ctr"] = report.ctr.evaluated_users;
  j["evaluated_users_cvr"] = report.cvr.evaluated_users;
  j["skipped_users_ctr"] = report.ctr.skipped_users;
  j["skipped_users_cvr"] = report.cvr.skipped_users;
  j["records"] = report.records;
  j["records_cvr"] = report.cvr.records;
  j["users"] = report.total_users;
  j["percent"] = percent;
  j["loss_ctr"] = report.losses.ctr;
  j["loss_cvr"] = report.losses.cvr;
  j["loss_rel"] = report.losses.rel;
  j["loss_align"] = report.losses.align;
  j["loss_l2"] = report.losses.l2;
  j["loss_total"] = report.losses.total;
  if (!report.ctr.error.empty()) j["error_ctr"] = report.ctr.error;
  if (!report.cvr.error.empty()) j["error_cvr"] = report.cvr.error;
  return j.dump();
}

}  // namespace adaftr
