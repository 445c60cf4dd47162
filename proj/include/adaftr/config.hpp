// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Configuration records for the model, the objective and the training loop.
// Defaults follow the published hyper-parameter table (E=8, L=3, k=3,
// tau in [0.05, 1], alpha=1, beta=0.01, lambda=1, B=1024, lr=5e-4).

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "adaftr/datasets.hpp"
#include "adaftr/numcore.hpp"

namespace adaftr {

enum class Backbone { single_dnn, shared_bottom, mmoe };
enum class InitScheme { xavier_uniform, zeros };
enum class TemperatureMode { adaptive, learnable_scalar, fixed };
enum class AlignmentMode { infonce, scl, reg, none };
enum class RegKind { mse, mae };

std::string_view to_string(Backbone v);
std::string_view to_string(InitScheme v);
std::string_view to_string(TemperatureMode v);
std::string_view to_string(AlignmentMode v);
std::string_view to_string(RegKind v);

Backbone backbone_from_string(std::string_view s);
InitScheme init_scheme_from_string(std::string_view s);
TemperatureMode temperature_mode_from_string(std::string_view s);
AlignmentMode alignment_mode_from_string(std::string_view s);
RegKind reg_kind_from_string(std::string_view s);

struct ModelConfig {
  Backbone backbone = Backbone::mmoe;
  std::vector<Field> fields;  // embedding tables, in schema order
  std::size_t embed_dim = 8;
  std::size_t expert_count = 3;
  // Width of the shared representation v (expert output / shared bottom).
  std::size_t shared_dim = 128;
  std::vector<std::size_t> tower_hidden = {128, 64, 32};
  std::vector<std::size_t> relatedness_hidden = {64};
  Activation activation = Activation::relu;
  InitScheme init = InitScheme::xavier_uniform;
  std::uint64_t init_seed = 0;
  double embed_init_bound = 0.05;

  std::size_t tower_depth() const noexcept { return tower_hidden.size(); }
  std::size_t input_width() const noexcept { return fields.size() * embed_dim; }
  void validate() const;  // throws ConfigError

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LossConfig {
  double alpha = 1.0;    // relatedness BCE weight
  double beta = 0.01;    // alignment weight
  double lambda = 1.0;   // L2 weight on base parameters
  double tau_upper = 1.0;
  double tau_lower = 0.05;
  TemperatureMode temperature_mode = TemperatureMode::adaptive;
  double fixed_tau = 0.05;
  double learnable_tau_init = 0.5;
  AlignmentMode alignment_mode = AlignmentMode::infonce;
  RegKind reg_kind = RegKind::mse;
  std::size_t contrast_layer = 1;  // 1-based tower layer whose output is aligned

  void validate(std::size_t tower_depth) const;

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  double learning_rate = 5e-4;
  std::size_t batch_size = 1024;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  bool shuffle = true;
  std::size_t eval_every = 0;       // steps; 0 evaluates at the end of each epoch
  std::size_t checkpoint_every = 1; // epochs; 0 disables intermediate checkpoints
  std::size_t patience = 0;         // evals without CVR AUC improvement; 0 disables
  bool cvr_on_clicks_only = false;  // CVR evaluation population

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

using KeyValues = std::map<std::string, std::string>;

// key=value forms, used by the checkpoint metadata, manifests and config
// files. Keys match the CLI long flag names.
KeyValues to_key_values(const ModelConfig& c);
KeyValues to_key_values(const TrainConfig& c);
// Applies known keys on top of `base`; unknown keys throw ConfigError.
ModelConfig model_config_from(const KeyValues& kv, ModelConfig base = {});
TrainConfig train_config_from(const KeyValues& kv, TrainConfig base = {});
// Applies one key; returns false when the key is not a TrainConfig key.
bool apply_train_key(TrainConfig& c, const std::string& key, const std::string& value);

std::string format_key_values(const KeyValues& kv);
KeyValues parse_key_values(std::string_view text);

std::string format_double(double v);
std::string format_sizes(const std::vector<std::size_t>& v);
std::vector<std::size_t> parse_sizes(std::string_view s, std::string_view what);
std::string format_fields(const std::vector<Field>& fields);
std::vector<Field> parse_fields(std::string_view s);

}  // namespace adaftr
