// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaftr/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "adaftr/errors.hpp"

namespace adaftr {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::pair<E, std::string_view> (&table)[N],
             std::string_view what) {
  for (const auto& [value, name] : table) {
    if (name == s) return value;
  }
  std::string options;
  for (const auto& [value, name] : table) {
    if (!options.empty()) options += "|";
    options += name;
  }
  throw ConfigError("unknown " + std::string(what) + " '" + std::string(s) + "' (" + options +
                    ")");
}

template <typename E, std::size_t N>
std::string_view enum_name(E v, const std::pair<E, std::string_view> (&table)[N]) {
  for (const auto& [value, name] : table) {
    if (value == v) return name;
  }
  return "?";
}

constexpr std::pair<Backbone, std::string_view> kBackbones[] = {
    {Backbone::single_dnn, "single_dnn"},
    {Backbone::shared_bottom, "shared_bottom"},
    {Backbone::mmoe, "mmoe"}};
constexpr std::pair<InitScheme, std::string_view> kInits[] = {
    {InitScheme::xavier_uniform, "xavier_uniform"}, {InitScheme::zeros, "zeros"}};
constexpr std::pair<TemperatureMode, std::string_view> kTempModes[] = {
    {TemperatureMode::adaptive, "adaptive"},
    {TemperatureMode::learnable_scalar, "learnable_scalar"},
    {TemperatureMode::fixed, "fixed"}};
constexpr std::pair<AlignmentMode, std::string_view> kAlignModes[] = {
    {AlignmentMode::infonce, "infonce"},
    {AlignmentMode::scl, "scl"},
    {AlignmentMode::reg, "reg"},
    {AlignmentMode::none, "none"}};
constexpr std::pair<RegKind, std::string_view> kRegKinds[] = {{RegKind::mse, "mse"},
                                                              {RegKind::mae, "mae"}};

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size() || value.empty()) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

bool apply_model_key(ModelConfig& c, const std::string& key, const std::string& value) {
  if (key == "backbone") {
    c.backbone = backbone_from_string(value);
  } else if (key == "fields") {
    c.fields = parse_fields(value);
  } else if (key == "embed-dim") {
    c.embed_dim = parse_u64(key, value);
  } else if (key == "experts") {
    c.expert_count = parse_u64(key, value);
  } else if (key == "shared-dim") {
    c.shared_dim = parse_u64(key, value);
  } else if (key == "tower-hidden") {
    c.tower_hidden = parse_sizes(value, key);
  } else if (key == "relatedness-hidden") {
    c.relatedness_hidden = parse_sizes(value, key);
  } else if (key == "activation") {
    c.activation = activation_from_string(value);
  } else if (key == "init") {
    c.init = init_scheme_from_string(value);
  } else if (key == "init-seed") {
    c.init_seed = parse_u64(key, value);
  } else if (key == "embed-init-bound") {
    c.embed_init_bound = parse_double(key, value);
  } else {
    return false;
  }
  return true;
}

}  // namespace

std::string_view to_string(Backbone v) { return enum_name(v, kBackbones); }
std::string_view to_string(InitScheme v) { return enum_name(v, kInits); }
std::string_view to_string(TemperatureMode v) { return enum_name(v, kTempModes); }
std::string_view to_string(AlignmentMode v) { return enum_name(v, kAlignModes); }
std::string_view to_string(RegKind v) { return enum_name(v, kRegKinds); }

Backbone backbone_from_string(std::string_view s) { return parse_enum(s, kBackbones, "backbone"); }
InitScheme init_scheme_from_string(std::string_view s) {
  return parse_enum(s, kInits, "init scheme");
}
TemperatureMode temperature_mode_from_string(std::string_view s) {
  return parse_enum(s, kTempModes, "temperature mode");
}
AlignmentMode alignment_mode_from_string(std::string_view s) {
  return parse_enum(s, kAlignModes, "alignment mode");
}
RegKind reg_kind_from_string(std::string_view s) { return parse_enum(s, kRegKinds, "reg kind"); }

// ---------------------------------------------------------------- validation

void ModelConfig::validate() const {
  if (fields.empty()) throw ConfigError("model: at least one feature field is required");
  Schema{fields, true}.validate();
  if (embed_dim < 1) throw ConfigError("model: embed-dim must be >= 1");
  if (shared_dim < 1) throw ConfigError("model: shared-dim must be >= 1");
  if (tower_hidden.empty()) throw ConfigError("model: tower needs at least one hidden layer");
  for (auto h : tower_hidden) {
    if (h < 1) throw ConfigError("model: tower hidden sizes must be >= 1");
  }
  for (auto h : relatedness_hidden) {
    if (h < 1) throw ConfigError("model: relatedness hidden sizes must be >= 1");
  }
  if (backbone == Backbone::mmoe && expert_count < 1) {
    throw ConfigError("model: mmoe needs at least one expert");
  }
  if (!(embed_init_bound >= 0.0)) throw ConfigError("model: embed-init-bound must be >= 0");
}

void LossConfig::validate(std::size_t tower_depth) const {
  if (!(alpha >= 0.0)) throw ConfigError("loss: alpha must be >= 0");
  if (!(beta >= 0.0)) throw ConfigError("loss: beta must be >= 0");
  if (!(lambda >= 0.0)) throw ConfigError("loss: lambda must be >= 0");
  if (!(tau_lower > 0.0)) throw ConfigError("loss: tau-lower must be > 0");
  if (!(tau_upper > 0.0)) throw ConfigError("loss: tau-upper must be > 0");
  if (!(tau_lower < tau_upper)) throw ConfigError("loss: tau-lower must be < tau-upper");
  if (temperature_mode == TemperatureMode::fixed &&
      !(fixed_tau >= tau_lower && fixed_tau <= tau_upper)) {
    throw ConfigError("loss: fixed-tau " + format_double(fixed_tau) + " outside [tau-lower, " +
                      "tau-upper] = [" + format_double(tau_lower) + ", " +
                      format_double(tau_upper) + "]");
  }
  if (temperature_mode == TemperatureMode::learnable_scalar && !(learnable_tau_init > 0.0)) {
    throw ConfigError("loss: learnable-tau-init must be > 0");
  }
  if (contrast_layer < 1 || contrast_layer > tower_depth) {
    throw ConfigError("loss: contrast-layer must lie in [1, " + std::to_string(tower_depth) +
                      "]");
  }
}

void TrainConfig::validate() const {
  model.validate();
  loss.validate(model.tower_depth());
  if (!(learning_rate > 0.0)) throw ConfigError("train: lr must be > 0");
  if (batch_size < 1) throw ConfigError("train: batch-size must be >= 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
}

// ---------------------------------------------------------------- key=value

std::string format_double(double v) {
  // Shortest text that parses back to the same bits.
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::size_t> parse_sizes(std::string_view s, std::string_view what) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = std::min(s.find(',', start), s.size());
    const std::string item(s.substr(start, end - start));
    out.push_back(parse_u64(std::string(what), item));
    start = end + 1;
  }
  return out;
}

std::string format_fields(const std::vector<Field>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += fields[i].name + ":" + std::to_string(fields[i].cardinality);
  }
  return out;
}

std::vector<Field> parse_fields(std::string_view s) {
  std::vector<Field> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = std::min(s.find(',', start), s.size());
    const auto item = s.substr(start, end - start);
    const auto colon = item.rfind(':');
    if (colon == std::string_view::npos) {
      throw ConfigError("fields: expected name:cardinality, got '" + std::string(item) + "'");
    }
    out.push_back({std::string(item.substr(0, colon)),
                   static_cast<std::uint32_t>(
                       parse_u64("fields", std::string(item.substr(colon + 1))))});
    start = end + 1;
  }
  return out;
}

KeyValues to_key_values(const ModelConfig& c) {
  return {
      {"backbone", std::string(to_string(c.backbone))},
      {"fields", format_fields(c.fields)},
      {"embed-dim", std::to_string(c.embed_dim)},
      {"experts", std::to_string(c.expert_count)},
      {"shared-dim", std::to_string(c.shared_dim)},
      {"tower-hidden", format_sizes(c.tower_hidden)},
      {"relatedness-hidden", format_sizes(c.relatedness_hidden)},
      {"activation", std::string(to_string(c.activation))},
      {"init", std::string(to_string(c.init))},
      {"init-seed", std::to_string(c.init_seed)},
      {"embed-init-bound", format_double(c.embed_init_bound)},
  };
}

KeyValues to_key_values(const TrainConfig& c) {
  KeyValues kv = to_key_values(c.model);
  const auto& l = c.loss;
  kv.insert({
      {"alpha", format_double(l.alpha)},
      {"beta", format_double(l.beta)},
      {"lambda", format_double(l.lambda)},
      {"tau-upper", format_double(l.tau_upper)},
      {"tau-lower", format_double(l.tau_lower)},
      {"temperature-mode", std::string(to_string(l.temperature_mode))},
      {"fixed-tau", format_double(l.fixed_tau)},
      {"learnable-tau-init", format_double(l.learnable_tau_init)},
      {"alignment-mode", std::string(to_string(l.alignment_mode))},
      {"reg-kind", std::string(to_string(l.reg_kind))},
      {"contrast-layer", std::to_string(l.contrast_layer)},
      {"lr", format_double(c.learning_rate)},
      {"batch-size", std::to_string(c.batch_size)},
      {"epochs", std::to_string(c.epochs)},
      {"seed", std::to_string(c.seed)},
      {"shuffle", c.shuffle ? "true" : "false"},
      {"eval-every", std::to_string(c.eval_every)},
      {"checkpoint-every", std::to_string(c.checkpoint_every)},
      {"patience", std::to_string(c.patience)},
      {"cvr-on-clicks-only", c.cvr_on_clicks_only ? "true" : "false"},
  });
  return kv;
}

bool apply_train_key(TrainConfig& c, const std::string& key, const std::string& value) {
  if (apply_model_key(c.model, key, value)) return true;
  auto& l = c.loss;
  if (key == "alpha") {
    l.alpha = parse_double(key, value);
  } else if (key == "beta") {
    l.beta = parse_double(key, value);
  } else if (key == "lambda") {
    l.lambda = parse_double(key, value);
  } else if (key == "tau-upper") {
    l.tau_upper = parse_double(key, value);
  } else if (key == "tau-lower") {
    l.tau_lower = parse_double(key, value);
  } else if (key == "temperature-mode") {
    l.temperature_mode = temperature_mode_from_string(value);
  } else if (key == "fixed-tau") {
    l.fixed_tau = parse_double(key, value);
  } else if (key == "learnable-tau-init") {
    l.learnable_tau_init = parse_double(key, value);
  } else if (key == "alignment-mode") {
    l.alignment_mode = alignment_mode_from_string(value);
  } else if (key == "reg-kind") {
    l.reg_kind = reg_kind_from_string(value);
  } else if (key == "contrast-layer") {
    l.contrast_layer = parse_u64(key, value);
  } else if (key == "lr") {
    c.learning_rate = parse_double(key, value);
  } else if (key == "batch-size") {
    c.batch_size = parse_u64(key, value);
  } else if (key == "epochs") {
    c.epochs = parse_u64(key, value);
  } else if (key == "seed") {
    c.seed = parse_u64(key, value);
  } else if (key == "shuffle") {
    c.shuffle = parse_bool(key, value);
  } else if (key == "eval-every") {
    c.eval_every = parse_u64(key, value);
  } else if (key == "checkpoint-every") {
    c.checkpoint_every = parse_u64(key, value);
  } else if (key == "patience") {
    c.patience = parse_u64(key, value);
  } else if (key == "cvr-on-clicks-only") {
    c.cvr_on_clicks_only = parse_bool(key, value);
  } else {
    return false;
  }
  return true;
}

ModelConfig model_config_from(const KeyValues& kv, ModelConfig base) {
  for (const auto& [k, v] : kv) {
    if (!apply_model_key(base, k, v)) throw ConfigError("unknown model key '" + k + "'");
  }
  return base;
}

TrainConfig train_config_from(const KeyValues& kv, TrainConfig base) {
  for (const auto& [k, v] : kv) {
    if (!apply_train_key(base, k, v)) throw ConfigError("unknown config key '" + k + "'");
  }
  return base;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) continue;
    line = line.substr(first, line.find_last_not_of(" \t\r") - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
    }
    auto key = line.substr(0, eq);
    auto value = line.substr(eq + 1);
    key = key.substr(0, key.find_last_not_of(" \t") + 1);
    const auto vfirst = value.find_first_not_of(" \t");
    value = vfirst == std::string_view::npos ? std::string_view{} : value.substr(vfirst);
    kv[std::string(key)] = std::string(value);
  }
  return kv;
}

}  // namespace adaftr
