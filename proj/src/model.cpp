// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaftr/model.hpp"

#include <cmath>
#include <random>

#include "adaftr/errors.hpp"
#include "adaftr/losses.hpp"

namespace adaftr {

namespace {

constexpr Task kTasks[2] = {Task::ctr, Task::cvr};

std::string layer_name(std::string_view prefix, std::size_t layer, std::string_view leaf) {
  return std::string(prefix) + "." + std::to_string(layer) + "." + std::string(leaf);
}

std::string head_name(std::string_view prefix, std::string_view leaf) {
  return std::string(prefix) + ".head." + std::string(leaf);
}

std::string embedding_name(const ModelConfig& config, std::optional<Task> task,
                           const Field& field) {
  if (config.backbone == Backbone::single_dnn) {
    return "emb." + std::string(to_string(task.value_or(Task::ctr))) + "." + field.name;
  }
  return "emb." + field.name;
}

Tensor2 uniform_tensor(std::size_t rows, std::size_t cols, double bound, std::uint64_t seed) {
  Tensor2 t(rows, cols);
  if (bound <= 0.0) return t;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

struct Initializer {
  const ModelConfig& config;
  ModelParams& params;

  void linear(const std::string& prefix_w, const std::string& prefix_b, std::size_t in,
              std::size_t out, ParamGroup group) {
    const double bound = config.init == InitScheme::zeros
                             ? 0.0
                             : std::sqrt(6.0 / static_cast<double>(in + out));
    params.add(prefix_w, uniform_tensor(in, out, bound, mix_seed(config.init_seed, hash_name(prefix_w))),
               group);
    params.add(prefix_b, Tensor2(1, out), group);
  }

  void mlp(std::string_view prefix, std::size_t in, const std::vector<std::size_t>& hidden,
           ParamGroup group) {
    std::size_t width = in;
    for (std::size_t l = 0; l < hidden.size(); ++l) {
      linear(layer_name(prefix, l + 1, "W"), layer_name(prefix, l + 1, "b"), width, hidden[l],
             group);
      width = hidden[l];
    }
    linear(head_name(prefix, "W"), head_name(prefix, "b"), width, 1, group);
  }

  void embeddings(std::optional<Task> task) {
    const double bound = config.init == InitScheme::zeros ? 0.0 : config.embed_init_bound;
    for (const auto& f : config.fields) {
      const auto name = embedding_name(config, task, f);
      params.add(name,
                 uniform_tensor(f.cardinality, config.embed_dim, bound,
                                mix_seed(config.init_seed, hash_name(name))),
                 ParamGroup::theta);
    }
  }
};

}  // namespace

std::string_view to_string(Task t) { return t == Task::ctr ? "ctr" : "cvr"; }

std::string tower_prefix(Task t) { return "tower." + std::string(to_string(t)); }

// ---------------------------------------------------------------- params

std::size_t ModelParams::add(std::string name, Tensor2 value, ParamGroup group) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
  const std::size_t idx = params_.size();
  index_.emplace(name, idx);
  params_.push_back({std::move(name), std::move(value), group});
  return idx;
}

bool ModelParams::contains(std::string_view name) const {
  return index_.count(std::string(name)) > 0;
}

std::size_t ModelParams::index(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter " + std::string(name));
  return it->second;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].group != b[i].group || !(a[i].value == b[i].value)) {
      return false;
    }
  }
  return true;
}

Gradients zero_gradients(const ModelParams& params) {
  Gradients g;
  g.reserve(params.size());
  for (const auto& p : params) g.emplace_back(p.value.rows(), p.value.cols());
  return g;
}

std::string group_label(const Param& p) {
  const std::string_view n = p.name;
  if (p.group == ParamGroup::omega) return "omega/relatedness";
  if (n.starts_with("emb.")) return "theta/embedding";
  if (n.starts_with("expert.")) return "theta/experts";
  if (n.starts_with("gate.")) return "theta/gates";
  if (n.starts_with("bottom.")) return "theta/bottom";
  if (n.starts_with("tower.ctr.")) return "theta/tower_ctr";
  if (n.starts_with("tower.cvr.")) return "theta/tower_cvr";
  if (n == kTemperatureParam) return "theta/temperature";
  return "theta/other";
}

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  ModelParams params;
  Initializer init{config, params};
  const std::size_t in = config.input_width();
  const std::size_t d = config.shared_dim;

  switch (config.backbone) {
    case Backbone::mmoe:
      init.embeddings(std::nullopt);
      for (std::size_t i = 1; i <= config.expert_count; ++i) {
        init.linear(layer_name("expert", i, "W"), layer_name("expert", i, "b"), in, d,
                    ParamGroup::theta);
      }
      for (Task t : kTasks) {
        const std::string g = "gate." + std::string(to_string(t));
        init.linear(g + ".W", g + ".b", in, config.expert_count, ParamGroup::theta);
      }
      break;
    case Backbone::shared_bottom:
      init.embeddings(std::nullopt);
      init.linear("bottom.W", "bottom.b", in, d, ParamGroup::theta);
      break;
    case Backbone::single_dnn:
      for (Task t : kTasks) init.embeddings(t);
      for (Task t : kTasks) {
        const std::string b = "bottom." + std::string(to_string(t));
        init.linear(b + ".W", b + ".b", in, d, ParamGroup::theta);
      }
      break;
  }
  for (Task t : kTasks) init.mlp(tower_prefix(t), d, config.tower_hidden, ParamGroup::theta);
  init.mlp(kRelatednessPrefix, d, config.relatedness_hidden, ParamGroup::omega);
  return params;
}

std::size_t copy_matching(ModelParams& target, const ModelParams& source) {
  std::size_t copied = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    auto& p = target[i];
    if (!source.contains(p.name)) continue;
    const auto& src = source.at(p.name);
    if (!src.same_shape(p.value)) continue;
    p.value = src;
    ++copied;
  }
  return copied;
}

// ---------------------------------------------------------------- forward

const Tensor2& ForwardTrace::hidden(Task t, std::size_t layer) const {
  const auto& outs = tower[static_cast<int>(t)].out;
  if (layer < 1 || layer > outs.size()) {
    throw ConfigError("tower layer " + std::to_string(layer) + " out of range [1, " +
                      std::to_string(outs.size()) + "]");
  }
  return outs[layer - 1];
}

Tensor2 embed(const ModelParams& params, const ModelConfig& config, const Batch& batch,
              std::optional<Task> task) {
  if (batch.fields != config.fields.size()) {
    throw DimensionError("batch has " + std::to_string(batch.fields) + " fields, model expects " +
                         std::to_string(config.fields.size()));
  }
  std::vector<const Tensor2*> tables;
  std::vector<std::string> names;
  tables.reserve(config.fields.size());
  for (const auto& f : config.fields) {
    tables.push_back(&params.at(embedding_name(config, task, f)));
    names.push_back(f.name);
  }
  return embedding_forward(tables, batch.feature_ids, batch.size, names);
}

namespace {

MlpTrace mlp_forward(const ModelParams& params, std::string_view prefix, Tensor2 input,
                     std::size_t depth, Activation act) {
  MlpTrace tr;
  tr.input = std::move(input);
  const Tensor2* x = &tr.input;
  tr.pre.reserve(depth);
  tr.out.reserve(depth);
  for (std::size_t l = 1; l <= depth; ++l) {
    tr.pre.push_back(linear_forward(*x, params.at(layer_name(prefix, l, "W")),
                                    params.at(layer_name(prefix, l, "b")).values()));
    tr.out.push_back(activate(tr.pre.back(), act));
    x = &tr.out.back();
  }
  tr.logit = linear_forward(*x, params.at(head_name(prefix, "W")),
                            params.at(head_name(prefix, "b")).values());
  tr.prob = probability_forward(tr.logit);
  return tr;
}

}  // namespace

SharedTrace shared_forward(const ModelParams& params, std::vector<Tensor2> embedded,
                           const ModelConfig& config) {
  const std::size_t expected_inputs = config.backbone == Backbone::single_dnn ? 2 : 1;
  if (embedded.size() != expected_inputs) {
    throw DimensionError("shared_forward: expected " + std::to_string(expected_inputs) +
                         " embedded inputs");
  }
  for (const auto& e : embedded) {
    if (e.cols() != config.input_width()) {
      throw DimensionError("shared_forward: e_r has width " + std::to_string(e.cols()) +
                           ", expected F*E = " + std::to_string(config.input_width()));
    }
  }
  SharedTrace tr;
  tr.embedded = std::move(embedded);
  const Activation act = config.activation;

  switch (config.backbone) {
    case Backbone::mmoe: {
      const Tensor2& e = tr.embedded[0];
      const std::size_t k = config.expert_count;
      for (std::size_t i = 1; i <= k; ++i) {
        tr.expert_pre.push_back(linear_forward(e, params.at(layer_name("expert", i, "W")),
                                               params.at(layer_name("expert", i, "b")).values()));
        tr.expert_out.push_back(activate(tr.expert_pre.back(), act));
      }
      for (Task t : kTasks) {
        const int ti = static_cast<int>(t);
        const std::string g = "gate." + std::string(to_string(t));
        tr.gate[ti] = softmax_rows(linear_forward(e, params.at(g + ".W"), params.at(g + ".b").values()));
        Tensor2 v(e.rows(), config.shared_dim);
        for (std::size_t r = 0; r < e.rows(); ++r) {
          auto dst = v.row(r);
          for (std::size_t i = 0; i < k; ++i) {
            const double w = tr.gate[ti](r, i);
            const auto src = tr.expert_out[i].row(r);
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += w * src[j];
          }
        }
        tr.v[ti] = std::move(v);
      }
      break;
    }
    case Backbone::shared_bottom: {
      tr.bottom_pre[0] =
          linear_forward(tr.embedded[0], params.at("bottom.W"), params.at("bottom.b").values());
      tr.v[0] = activate(tr.bottom_pre[0], act);
      tr.v[1] = tr.v[0];
      break;
    }
    case Backbone::single_dnn: {
      for (Task t : kTasks) {
        const int ti = static_cast<int>(t);
        const std::string b = "bottom." + std::string(to_string(t));
        tr.bottom_pre[ti] =
            linear_forward(tr.embedded[ti], params.at(b + ".W"), params.at(b + ".b").values());
        tr.v[ti] = activate(tr.bottom_pre[ti], act);
      }
      break;
    }
  }
  return tr;
}

MlpTrace tower_forward(const ModelParams& params, const Tensor2& v, Task task,
                       const ModelConfig& config) {
  if (v.cols() != config.shared_dim) {
    throw DimensionError("tower_forward: v has width " + std::to_string(v.cols()) +
                         ", tower expects " + std::to_string(config.shared_dim));
  }
  return mlp_forward(params, tower_prefix(task), v, config.tower_hidden.size(), config.activation);
}

MlpTrace relatedness_forward(const ModelParams& params, const Tensor2& v_ctr,
                             const Tensor2& v_cvr, const ModelConfig& config,
                             Tensor2* v_rel_out) {
  if (!v_ctr.same_shape(v_cvr)) {
    throw DimensionError("relatedness_forward: v_ctr " + v_ctr.shape_string() + " vs v_cvr " +
                         v_cvr.shape_string());
  }
  Tensor2 v_rel = v_ctr;
  auto out = v_rel.values();
  const auto other = v_cvr.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= other[i];
  if (v_rel_out != nullptr) *v_rel_out = v_rel;
  return mlp_forward(params, kRelatednessPrefix, std::move(v_rel),
                     config.relatedness_hidden.size(), config.activation);
}

ForwardTrace model_forward(const ModelParams& params, const Batch& batch,
                           const TrainConfig& config) {
  const ModelConfig& mc = config.model;
  ForwardTrace tr;
  tr.batch = batch.size;

  std::vector<Tensor2> embedded;
  if (mc.backbone == Backbone::single_dnn) {
    embedded.push_back(embed(params, mc, batch, Task::ctr));
    embedded.push_back(embed(params, mc, batch, Task::cvr));
  } else {
    embedded.push_back(embed(params, mc, batch));
  }
  tr.shared = shared_forward(params, std::move(embedded), mc);
  for (Task t : kTasks) {
    tr.tower[static_cast<int>(t)] = tower_forward(params, tr.v(t), t, mc);
  }
  tr.relatedness = relatedness_forward(params, tr.v(Task::ctr), tr.v(Task::cvr), mc, &tr.v_rel);

  std::optional<double> scalar;
  if (config.loss.temperature_mode == TemperatureMode::learnable_scalar) {
    scalar = params.at(kTemperatureParam)(0, 0);
  }
  tr.tau = temperature(tr.prob_rel(), config.loss, scalar);
  return tr;
}

// ---------------------------------------------------------------- backward

Tensor2 mlp_backward(const ModelParams& params, std::string_view prefix, const MlpTrace& trace,
                     Activation act, const Tensor2& dlogit,
                     std::span<const Tensor2> hidden_grads, Gradients& grads,
                     bool want_input_grad) {
  const std::size_t depth = trace.out.size();
  auto accumulate = [&](const std::string& name, const Tensor2& g) {
    grads[params.index(name)] += g;
  };

  const Tensor2& top = depth == 0 ? trace.input : trace.out.back();
  const auto hw = head_name(prefix, "W");
  auto head = linear_backward(top, params.at(hw), dlogit, depth > 0 || want_input_grad);
  accumulate(hw, head.W);
  accumulate(head_name(prefix, "b"), head.b);
  if (depth == 0) return head.x;

  Tensor2 d_out = std::move(head.x);
  for (std::size_t l = depth; l >= 1; --l) {
    if (l - 1 < hidden_grads.size() && !hidden_grads[l - 1].empty()) {
      d_out += hidden_grads[l - 1];
    }
    const Tensor2 d_pre = activate_backward(trace.pre[l - 1], trace.out[l - 1], d_out, act);
    const Tensor2& x = l == 1 ? trace.input : trace.out[l - 2];
    const auto wname = layer_name(prefix, l, "W");
    auto g = linear_backward(x, params.at(wname), d_pre, l > 1 || want_input_grad);
    accumulate(wname, g.W);
    accumulate(layer_name(prefix, l, "b"), g.b);
    d_out = std::move(g.x);
  }
  return d_out;
}

namespace {

void embedding_grads(const ModelParams& params, const ModelConfig& config, const Batch& batch,
                     std::optional<Task> task, const Tensor2& de, Gradients& grads) {
  std::vector<Tensor2*> targets;
  targets.reserve(config.fields.size());
  for (const auto& f : config.fields) {
    targets.push_back(&grads[params.index(embedding_name(config, task, f))]);
  }
  embedding_backward(batch.feature_ids, batch.size, de, targets);
}

}  // namespace

void shared_backward(const ModelParams& params, const ModelConfig& config, const Batch& batch,
                     const SharedTrace& trace, const Tensor2& dv_ctr, const Tensor2& dv_cvr,
                     Gradients& grads) {
  const Tensor2* dv[2] = {&dv_ctr, &dv_cvr};
  const Activation act = config.activation;
  auto accumulate = [&](const std::string& name, const Tensor2& g) {
    grads[params.index(name)] += g;
  };

  switch (config.backbone) {
    case Backbone::mmoe: {
      const Tensor2& e = trace.embedded[0];
      const std::size_t k = config.expert_count;
      const std::size_t B = e.rows();
      Tensor2 de(B, e.cols());
      std::vector<Tensor2> d_expert(k, Tensor2(B, config.shared_dim));
      for (Task t : kTasks) {
        const int ti = static_cast<int>(t);
        const Tensor2& gate = trace.gate[ti];
        Tensor2 d_gate(B, k);
        for (std::size_t r = 0; r < B; ++r) {
          const auto up = dv[ti]->row(r);
          for (std::size_t i = 0; i < k; ++i) {
            const auto g = trace.expert_out[i].row(r);
            auto dst = d_expert[i].row(r);
            const double w = gate(r, i);
            double dot = 0.0;
            for (std::size_t j = 0; j < up.size(); ++j) {
              dot += up[j] * g[j];
              dst[j] += w * up[j];
            }
            d_gate(r, i) = dot;
          }
        }
        const Tensor2 d_logits = softmax_rows_backward(gate, d_gate);
        const std::string gname = "gate." + std::string(to_string(t));
        auto lg = linear_backward(e, params.at(gname + ".W"), d_logits);
        accumulate(gname + ".W", lg.W);
        accumulate(gname + ".b", lg.b);
        de += lg.x;
      }
      for (std::size_t i = 0; i < k; ++i) {
        const Tensor2 d_pre =
            activate_backward(trace.expert_pre[i], trace.expert_out[i], d_expert[i], act);
        const auto wname = layer_name("expert", i + 1, "W");
        auto lg = linear_backward(e, params.at(wname), d_pre);
        accumulate(wname, lg.W);
        accumulate(layer_name("expert", i + 1, "b"), lg.b);
        de += lg.x;
      }
      embedding_grads(params, config, batch, std::nullopt, de, grads);
      break;
    }
    case Backbone::shared_bottom: {
      Tensor2 dv_sum = dv_ctr;
      dv_sum += dv_cvr;
      const Tensor2 d_pre = activate_backward(trace.bottom_pre[0], trace.v[0], dv_sum, act);
      auto lg = linear_backward(trace.embedded[0], params.at("bottom.W"), d_pre);
      accumulate("bottom.W", lg.W);
      accumulate("bottom.b", lg.b);
      embedding_grads(params, config, batch, std::nullopt, lg.x, grads);
      break;
    }
    case Backbone::single_dnn: {
      for (Task t : kTasks) {
        const int ti = static_cast<int>(t);
        const std::string b = "bottom." + std::string(to_string(t));
        const Tensor2 d_pre = activate_backward(trace.bottom_pre[ti], trace.v[ti], *dv[ti], act);
        auto lg = linear_backward(trace.embedded[ti], params.at(b + ".W"), d_pre);
        accumulate(b + ".W", lg.W);
        accumulate(b + ".b", lg.b);
        embedding_grads(params, config, batch, t, lg.x, grads);
      }
      break;
    }
  }
}

}  // namespace adaftr
