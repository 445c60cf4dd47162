// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaftr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <ostream>
#include <random>

#include <json.hpp>

#include "adaftr/checkpoint.hpp"
#include "adaftr/errors.hpp"

namespace adaftr {

namespace {

constexpr std::uint64_t kStepStream = 0x57e95eedULL;

void require_finite(const LossBreakdown& l) {
  const std::pair<const char*, double> parts[] = {
      {"L_ctr", l.ctr}, {"L_cvr", l.cvr}, {"L_rel", l.rel},
      {"L_align", l.align}, {"L_l2", l.l2}, {"L_total", l.total}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) {
      throw TrainingError(std::string("non-finite loss component ") + name);
    }
  }
}

}  // namespace

ModelParams init_training_params(const TrainConfig& config) {
  ModelParams p = init_params(config.model);
  ensure_temperature_param(p, config.loss);
  return p;
}

void ensure_temperature_param(ModelParams& params, const LossConfig& config) {
  if (config.temperature_mode != TemperatureMode::learnable_scalar) return;
  if (params.contains(kTemperatureParam)) return;
  params.add(std::string(kTemperatureParam), Tensor2(1, 1, config.learnable_tau_init),
             ParamGroup::theta);
}

std::vector<AdamState> init_adam_states(const ModelParams& params) {
  std::vector<AdamState> s;
  s.reserve(params.size());
  for (const Param& p : params) s.push_back(AdamState::zeros_like(p.value));
  return s;
}

std::uint64_t step_seed(std::uint64_t seed, std::uint64_t step) noexcept {
  return mix_seed(mix_seed(seed, kStepStream), step);
}

std::vector<std::size_t> step_negatives(std::size_t batch, const LossConfig& config,
                                        std::uint64_t seed) {
  if (config.alignment_mode != AlignmentMode::scl) return {};
  return sample_negatives(batch, seed);
}

StepGradients compute_gradients(const ModelParams& params, const Batch& batch,
                                const TrainConfig& config,
                                std::span<const std::size_t> negatives,
                                const BackpropOptions& options) {
  const ModelConfig& mc = config.model;
  const LossConfig& lc = config.loss;
  const ForwardTrace tr = model_forward(params, batch, config);

  StepGradients out;
  out.losses = total_loss(tr, batch, lc, params, negatives);
  require_finite(out.losses);
  out.grads = zero_gradients(params);
  Gradients& grads = out.grads;

  // ---- theta: task losses and alignment
  const std::vector<double>* labels[2] = {&batch.y_ctr, &batch.y_cvr};
  std::vector<Tensor2> hidden[2] = {std::vector<Tensor2>(mc.tower_depth()),
                                    std::vector<Tensor2>(mc.tower_depth())};
  if (lc.alignment_mode != AlignmentMode::none && lc.beta != 0.0) {
    const std::size_t c = lc.contrast_layer;
    const Tensor2& hc = tr.hidden(Task::ctr, c);
    const Tensor2& hv = tr.hidden(Task::cvr, c);
    PairGrads g;
    switch (lc.alignment_mode) {
      case AlignmentMode::reg:
        g = reg_align_backward(hc, hv, lc.reg_kind);
        break;
      case AlignmentMode::scl:
        g = scl_backward(hc, hv, negatives);
        break;
      case AlignmentMode::infonce: {
        InfoNceGrads ig = infonce_backward(hc, hv, tr.tau);
        // tau is a constant here unless it is the learnable scalar.
        if (lc.temperature_mode == TemperatureMode::learnable_scalar) {
          const std::size_t ti = params.index(kTemperatureParam);
          const double slope = temperature_scalar_slope(params[ti].value(0, 0), lc);
          double dtau = 0.0;
          for (double d : ig.tau) dtau += d;
          grads[ti](0, 0) += lc.beta * slope * dtau;
        }
        g = PairGrads{std::move(ig.ctr), std::move(ig.cvr)};
        break;
      }
      case AlignmentMode::none:
        break;
    }
    g.ctr *= lc.beta;
    g.cvr *= lc.beta;
    hidden[0][c - 1] = std::move(g.ctr);
    hidden[1][c - 1] = std::move(g.cvr);
  }

  Tensor2 dv[2];
  for (Task t : {Task::ctr, Task::cvr}) {
    const int i = static_cast<int>(t);
    const auto dprob = bce_backward(tr.prob(t), *labels[i]);
    const Tensor2 dlogit = probability_backward(tr.tower[i].logit, dprob);
    dv[i] = mlp_backward(params, tower_prefix(t), tr.tower[i], mc.activation, dlogit, hidden[i],
                         grads, true);
  }
  shared_backward(params, mc, batch, tr.shared, dv[0], dv[1], grads);

  if (lc.lambda != 0.0) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Param& p = params[i];
      if (p.group != ParamGroup::theta || p.name == kTemperatureParam) continue;
      const auto v = p.value.values();
      auto g = grads[i].values();
      for (std::size_t j = 0; j < v.size(); ++j) g[j] += lc.lambda * v[j];
    }
  }

  // ---- omega: relatedness supervision only; v_rel is an input, not a path
  if (lc.alpha != 0.0) {
    auto dprob = bce_backward(tr.prob_rel(), relatedness_labels(batch.y_ctr, batch.y_cvr));
    for (double& d : dprob) d *= lc.alpha;
    const Tensor2 dlogit = probability_backward(tr.relatedness.logit, dprob);
    mlp_backward(params, kRelatednessPrefix, tr.relatedness, mc.activation, dlogit, {}, grads,
                 false);
  }

  if (options.corrupt) {
    grads[params.index(tower_prefix(Task::ctr) + ".1.W")] *= 1.5;
  }
  return out;
}

LossBreakdown train_step(ModelParams& params, std::vector<AdamState>& states, const Batch& batch,
                         const TrainConfig& config, std::uint64_t seed) {
  if (batch.size == 0) throw ConfigError("train_step: empty batch");
  if (states.size() != params.size()) {
    throw DimensionError("train_step: " + std::to_string(states.size()) + " Adam states for " +
                         std::to_string(params.size()) + " parameters");
  }
  const auto negatives = step_negatives(batch.size, config.loss, seed);
  StepGradients sg = compute_gradients(params, batch, config, negatives);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!all_finite(sg.grads[i].values())) {
      throw TrainingError("non-finite gradient for " + params[i].name);
    }
  }
  AdamConfig adam;
  adam.lr = config.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_step(params[i].value, sg.grads[i], states[i], adam, params[i].name);
  }
  return sg.losses;
}

// ---------------------------------------------------------------- training loop

std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& final_path,
                                            std::size_t epoch) {
  std::filesystem::path p = final_path;
  p.replace_filename(final_path.stem().string() + ".epoch" + std::to_string(epoch) +
                     final_path.extension().string());
  return p;
}

namespace {

nlohmann::ordered_json loss_json(const LossBreakdown& l) {
  nlohmann::ordered_json j;
  j["loss_ctr"] = l.ctr;
  j["loss_cvr"] = l.cvr;
  j["loss_rel"] = l.rel;
  j["loss_align"] = l.align;
  j["loss_l2"] = l.l2;
  j["loss_total"] = l.total;
  return j;
}

}  // namespace

TrainResult train(const Dataset& dataset, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (dataset.size() == 0) throw ConfigError("train: empty dataset");
  if (dataset.schema.fields != config.model.fields) {
    throw ConfigError("train: dataset schema does not match the model fields");
  }

  TrainResult result;
  result.params = init_training_params(config);
  if (options.warm_start != nullptr) {
    // Base tensors only; the relatedness network always starts fresh.
    ModelParams base;
    for (const Param& p : *options.warm_start) {
      if (p.group == ParamGroup::theta) base.add(p.name, p.value, p.group);
    }
    copy_matching(result.params, base);
  }
  std::vector<AdamState> states = init_adam_states(result.params);

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  auto emit = [&](nlohmann::ordered_json j, double wall) {
    if (options.log == nullptr) return;
    if (options.log_wall_clock) j["wall_seconds"] = wall;
    *options.log << j.dump() << '\n';
  };

  std::optional<double> best_cvr_auc;
  std::size_t stale_evals = 0;
  bool stop = false;
  auto run_eval = [&](std::uint64_t step, std::size_t epoch) {
    if (options.eval_data == nullptr) return;
    EvalRecord rec{step, epoch, evaluate(result.params, *options.eval_data, config), elapsed()};
    nlohmann::ordered_json j;
    j["type"] = "eval";
    j["step"] = step;
    j["epoch"] = epoch;
    j["metrics"] = nlohmann::ordered_json::parse(to_json(rec.report));
    emit(std::move(j), rec.wall_seconds);
    const auto cvr = rec.report.cvr.auc;
    result.history.evals.push_back(std::move(rec));
    if (cvr && (!best_cvr_auc || *cvr > *best_cvr_auc)) {
      best_cvr_auc = cvr;
      stale_evals = 0;
    } else {
      ++stale_evals;
    }
    if (config.patience > 0 && stale_evals >= config.patience) stop = true;
  };

  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs && !stop; ++epoch) {
    BatchIter it(dataset, config.batch_size, config.seed, epoch, config.shuffle);
    while (auto batch = it.next()) {
      ++step;
      StepRecord rec{step, epoch,
                     train_step(result.params, states, *batch, config, step_seed(config.seed, step)),
                     elapsed()};
      nlohmann::ordered_json j;
      j["type"] = "step";
      j["step"] = step;
      j["epoch"] = epoch;
      j.update(loss_json(rec.losses));
      emit(std::move(j), rec.wall_seconds);
      result.history.steps.push_back(rec);
      if (config.eval_every > 0 && step % config.eval_every == 0) {
        run_eval(step, epoch);
        if (stop) break;
      }
    }
    if (config.eval_every == 0) run_eval(step, epoch);
    const bool last = epoch + 1 == config.epochs || stop;
    if (!options.checkpoint_path.empty() && !last && config.checkpoint_every > 0 &&
        (epoch + 1) % config.checkpoint_every == 0) {
      save_checkpoint(result.params, config.model,
                      epoch_checkpoint_path(options.checkpoint_path, epoch + 1));
    }
  }
  result.history.stopped_early = stop;
  if (!options.checkpoint_path.empty()) {
    save_checkpoint(result.params, config.model, options.checkpoint_path);
  }
  if (options.log != nullptr) options.log->flush();
  return result;
}

// ---------------------------------------------------------------- gradient check

double GradCheckReport::max_error() const noexcept {
  double m = 0.0;
  for (const auto& g : groups) m = std::max(m, g.max_rel_error);
  return m;
}

TrainConfig micro_config(Backbone backbone, AlignmentMode alignment,
                         TemperatureMode temperature) {
  TrainConfig c;
  c.model.backbone = backbone;
  c.model.fields = {{"user", 5}, {"c01", 5}, {"c02", 5}};
  c.model.embed_dim = 4;
  c.model.expert_count = 2;
  c.model.shared_dim = 8;
  c.model.tower_hidden = {8, 4};
  c.model.relatedness_hidden = {8};
  c.model.embed_init_bound = 0.5;
  c.model.init_seed = 11;
  c.loss.alignment_mode = alignment;
  c.loss.temperature_mode = temperature;
  c.loss.beta = 0.5;
  c.batch_size = 4;
  return c;
}

Batch micro_batch(const ModelConfig& config, std::size_t batch_size, std::uint64_t seed) {
  Batch b;
  b.size = batch_size;
  b.fields = config.fields.size();
  std::mt19937_64 rng(mix_seed(seed, 0xba7c4));
  for (std::size_t r = 0; r < batch_size; ++r) {
    for (const Field& f : config.fields) {
      b.feature_ids.push_back(
          std::uniform_int_distribution<std::uint32_t>(0, f.cardinality - 1)(rng));
    }
    b.user_ids.push_back(b.feature_ids[r * b.fields]);
    // Mixed labels respecting the funnel: (1,1), (0,0), (1,0), (0,0), ...
    b.y_ctr.push_back(r % 2 == 0 ? 1.0 : 0.0);
    b.y_cvr.push_back(r % 4 == 0 ? 1.0 : 0.0);
  }
  return b;
}

GradCheckReport grad_check(const TrainConfig& config, const GradCheckOptions& options) {
  config.validate();
  const LossConfig& lc = config.loss;
  ModelParams params = init_training_params(config);
  // Zero biases make many units symmetric; jitter them so every path carries signal.
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = params[i];
    if (p.value.rows() != 1 || p.name == kTemperatureParam) continue;
    std::mt19937_64 rng(mix_seed(options.seed, hash_name(p.name)));
    std::uniform_real_distribution<double> dist(-0.1, 0.1);
    for (double& v : p.value.values()) v += dist(rng);
  }
  const Batch batch = micro_batch(config.model, options.batch_size, options.seed);
  const auto negatives = step_negatives(batch.size, lc, step_seed(options.seed, 1));

  BackpropOptions bp;
  bp.corrupt = options.break_backprop;
  const StepGradients analytic = compute_gradients(params, batch, config, negatives, bp);

  const std::vector<double> frozen_tau = model_forward(params, batch, config).tau;
  const bool freeze_tau = lc.temperature_mode == TemperatureMode::adaptive;
  const auto y_rel = relatedness_labels(batch.y_ctr, batch.y_cvr);

  auto theta_objective = [&] {
    ForwardTrace tr = model_forward(params, batch, config);
    if (freeze_tau) tr.tau = frozen_tau;
    const LossBreakdown l = total_loss(tr, batch, lc, params, negatives);
    return l.ctr + l.cvr + lc.beta * l.align + lc.lambda * l.l2;
  };
  auto omega_objective = [&] {
    const ForwardTrace tr = model_forward(params, batch, config);
    return lc.alpha * bce(tr.prob_rel(), y_rel);
  };

  GradCheckReport report;
  auto group_slot = [&](const std::string& label) -> GroupError& {
    for (auto& g : report.groups) {
      if (g.group == label) return g;
    }
    GroupError fresh;
    fresh.group = label;
    report.groups.push_back(std::move(fresh));
    return report.groups.back();
  };

  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string label = group_label(params[i]);
    const std::string name = params[i].name;
    const bool omega = params[i].group == ParamGroup::omega;
    const std::vector<double> numeric = finite_diff_grad_inplace(
        omega ? std::function<double()>(omega_objective) : std::function<double()>(theta_objective),
        params[i].value.values(), options.eps);
    const auto a = analytic.grads[i].values();
    GroupError& g = group_slot(label);
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      const double err = relative_error(a[j], numeric[j]);
      ++g.coordinates;
      if (g.worst_param.empty() || err > g.max_rel_error) {
        g.max_rel_error = err;
        g.worst_param = name;
        g.worst_index = j;
        g.analytic = a[j];
        g.numeric = numeric[j];
      }
    }
  }
  return report;
}

std::string to_json(const GradCheckReport& report, double tolerance) {
  nlohmann::ordered_json j;
  j["tolerance"] = tolerance;
  j["max_rel_error"] = report.max_error();
  j["passed"] = report.max_error() < tolerance;
  nlohmann::ordered_json groups = nlohmann::ordered_json::array();
  for (const auto& g : report.groups) {
    nlohmann::ordered_json e;
    e["group"] = g.group;
    e["coordinates"] = g.coordinates;
    e["max_rel_error"] = g.max_rel_error;
    e["worst_param"] = g.worst_param;
    e["worst_index"] = g.worst_index;
    e["analytic"] = g.analytic;
    e["numeric"] = g.numeric;
    e["passed"] = g.max_rel_error < tolerance;
    groups.push_back(std::move(e));
  }
  j["groups"] = std::move(groups);
  return j.dump();
}

}  // namespace adaftr
