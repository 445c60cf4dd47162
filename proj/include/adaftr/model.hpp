// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Backbones (single_dnn, shared_bottom, mmoe), the two task towers and the
// relatedness network. Forward passes cache every intermediate needed by the
// matching backward functions.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "adaftr/config.hpp"
#include "adaftr/datasets.hpp"
#include "adaftr/numcore.hpp"

namespace adaftr {

enum class Task { ctr = 0, cvr = 1 };
std::string_view to_string(Task t);

// theta: base parameters (embeddings, shared layers, towers, learnable tau).
// omega: relatedness network only.
enum class ParamGroup { theta, omega };

struct Param {
  std::string name;
  Tensor2 value;
  ParamGroup group = ParamGroup::theta;
};

class ModelParams {
 public:
  std::size_t add(std::string name, Tensor2 value, ParamGroup group);

  std::size_t size() const noexcept { return params_.size(); }
  bool contains(std::string_view name) const;
  std::size_t index(std::string_view name) const;  // throws ConfigError if absent

  const Tensor2& at(std::string_view name) const { return params_[index(name)].value; }
  Tensor2& at(std::string_view name) { return params_[index(name)].value; }

  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// One gradient tensor per parameter, aligned with ModelParams indices.
using Gradients = std::vector<Tensor2>;
Gradients zero_gradients(const ModelParams& params);

// Coarse label used by gradient-check reports: "theta/embedding",
// "theta/experts", "theta/gates", "theta/bottom", "theta/tower_ctr",
// "theta/tower_cvr", "theta/temperature", "omega/relatedness".
std::string group_label(const Param& p);

// Deterministic in (config, init_seed); each tensor draws from its own
// stream keyed by its name, so tensors never influence each other's values.
ModelParams init_params(const ModelConfig& config);

// Copies every tensor of `source` whose name and shape match one in
// `target`; returns the number copied. Used for warm starts.
std::size_t copy_matching(ModelParams& target, const ModelParams& source);

// ---------------------------------------------------------------- traces

struct MlpTrace {
  Tensor2 input;
  std::vector<Tensor2> pre;  // per hidden layer, before activation
  std::vector<Tensor2> out;  // per hidden layer, after activation (h^(l))
  Tensor2 logit;             // [B x 1]
  std::vector<double> prob;  // clamped sigmoid(logit)
};

struct SharedTrace {
  std::vector<Tensor2> embedded;    // e_r; one entry, or one per task for single_dnn
  std::vector<Tensor2> expert_pre;  // mmoe
  std::vector<Tensor2> expert_out;  // mmoe, g_i(e_r)
  Tensor2 gate[2];                  // mmoe, softmax gate weights per task [B x k]
  Tensor2 bottom_pre[2];            // shared_bottom uses [0]; single_dnn both
  Tensor2 v[2];                     // v^ctr, v^cvr
};

struct ForwardTrace {
  std::size_t batch = 0;
  SharedTrace shared;
  MlpTrace tower[2];
  Tensor2 v_rel;
  MlpTrace relatedness;
  std::vector<double> tau;

  const Tensor2& v(Task t) const { return shared.v[static_cast<int>(t)]; }
  const std::vector<double>& prob(Task t) const { return tower[static_cast<int>(t)].prob; }
  const std::vector<double>& prob_rel() const { return relatedness.prob; }
  // Output of tower layer `layer` (1-based).
  const Tensor2& hidden(Task t, std::size_t layer) const;
};

// ---------------------------------------------------------------- forward

Tensor2 embed(const ModelParams& params, const ModelConfig& config, const Batch& batch,
              std::optional<Task> task = std::nullopt);

SharedTrace shared_forward(const ModelParams& params, std::vector<Tensor2> embedded,
                           const ModelConfig& config);

MlpTrace tower_forward(const ModelParams& params, const Tensor2& v, Task task,
                       const ModelConfig& config);

// v_rel = v_ctr (elementwise) v_cvr, then MLP + sigmoid. Returns the trace;
// `v_rel_out` receives the product.
MlpTrace relatedness_forward(const ModelParams& params, const Tensor2& v_ctr,
                             const Tensor2& v_cvr, const ModelConfig& config,
                             Tensor2* v_rel_out = nullptr);

// Embedding, backbone, both towers, relatedness network, then the
// per-instance temperature.
ForwardTrace model_forward(const ModelParams& params, const Batch& batch,
                           const TrainConfig& config);

// ---------------------------------------------------------------- backward

// Backprop through an MLP with a scalar head. `dlogit` is [B x 1];
// `hidden_grads[l]`, when non-empty, is added to the gradient of the layer-l
// output (0-based). Accumulates into `grads`; returns d input when asked.
Tensor2 mlp_backward(const ModelParams& params, std::string_view prefix, const MlpTrace& trace,
                     Activation act, const Tensor2& dlogit,
                     std::span<const Tensor2> hidden_grads, Gradients& grads,
                     bool want_input_grad);

// Backprop d v^ctr, d v^cvr through the backbone and embeddings.
void shared_backward(const ModelParams& params, const ModelConfig& config, const Batch& batch,
                     const SharedTrace& trace, const Tensor2& dv_ctr, const Tensor2& dv_cvr,
                     Gradients& grads);

std::string tower_prefix(Task t);
inline constexpr std::string_view kRelatednessPrefix = "rel";
inline constexpr std::string_view kTemperatureParam = "temperature.tau";

}  // namespace adaftr
