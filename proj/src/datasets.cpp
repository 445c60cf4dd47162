// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaftr/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string_view>
#include <unordered_map>

#include "adaftr/errors.hpp"
#include "adaftr/numcore.hpp"

namespace adaftr {

namespace {

constexpr std::string_view kUserCol = "user_id";
constexpr std::string_view kClickCol = "y_click";
constexpr std::string_view kConvCol = "y_conversion";
constexpr std::string_view kFeaturePrefix = "f_";

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

template <typename T>
bool parse_uint(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string read_file(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(std::string("cannot open ") + what + " file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------- schema

std::vector<std::string> Schema::field_names() const {
  std::vector<std::string> names;
  names.reserve(fields.size());
  for (const auto& f : fields) names.push_back(f.name);
  return names;
}

void Schema::validate() const {
  std::set<std::string> seen;
  for (const auto& f : fields) {
    if (f.name.empty()) throw ConfigError("schema: empty field name");
    if (f.cardinality < 1) throw ConfigError("schema: field " + f.name + " has cardinality 0");
    if (!seen.insert(f.name).second) throw ConfigError("schema: duplicate field " + f.name);
  }
}

Schema parse_schema(const std::string& text, const std::string& origin) {
  Schema schema;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const auto where = origin + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw LoadError(where + ": expected key=value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key == "funnel") {
      if (value == "true") {
        schema.funnel = true;
      } else if (value == "false") {
        schema.funnel = false;
      } else {
        throw LoadError(where + ": funnel must be true or false");
      }
      continue;
    }
    std::uint32_t card = 0;
    if (!parse_uint(value, card) || card < 1) {
      throw LoadError(where + ": cardinality of " + std::string(key) +
                      " must be a positive integer");
    }
    schema.fields.push_back({std::string(key), card});
  }
  try {
    schema.validate();
  } catch (const ConfigError& e) {
    throw LoadError(origin + ": " + e.what());
  }
  return schema;
}

Schema load_schema(const std::filesystem::path& path) {
  return parse_schema(read_file(path, "schema"), path.string());
}

std::string format_schema(const Schema& schema) {
  std::ostringstream out;
  out << "funnel=" << (schema.funnel ? "true" : "false") << "\n";
  for (const auto& f : schema.fields) out << f.name << "=" << f.cardinality << "\n";
  return out.str();
}

void write_schema(const Schema& schema, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write schema file " + path.string());
  out << format_schema(schema);
  if (!out) throw LoadError("failed writing schema file " + path.string());
}

void Dataset::validate() const {
  schema.validate();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.feature_ids.size() != schema.fields.size()) {
      throw DimensionError("record " + std::to_string(i) + " has " +
                           std::to_string(r.feature_ids.size()) + " features, schema has " +
                           std::to_string(schema.fields.size()));
    }
    for (std::size_t f = 0; f < r.feature_ids.size(); ++f) {
      if (r.feature_ids[f] >= schema.fields[f].cardinality) {
        throw RangeError("record " + std::to_string(i) + ": id " +
                         std::to_string(r.feature_ids[f]) + " out of range for field " +
                         schema.fields[f].name);
      }
    }
    if (r.y_ctr > 1 || r.y_cvr > 1) {
      throw RangeError("record " + std::to_string(i) + ": labels must be 0 or 1");
    }
    if (schema.funnel && r.y_cvr > r.y_ctr) {
      throw RangeError("record " + std::to_string(i) + ": conversion without click");
    }
  }
}

// ---------------------------------------------------------------- CSV

Dataset load_csv(const std::filesystem::path& data_path, const std::filesystem::path& schema_path) {
  return load_csv(data_path, load_schema(schema_path));
}

Dataset load_csv(const std::filesystem::path& data_path, const Schema& schema) {
  const std::string text = read_file(data_path, "data");
  const std::string file = data_path.string();
  Dataset ds;
  ds.schema = schema;

  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&](std::string_view& out) {
    if (pos >= text.size()) return false;
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    out = std::string_view(text).substr(pos, end - pos);
    if (!out.empty() && out.back() == '\r') out.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    return true;
  };

  std::string_view line;
  if (!next_line(line)) throw LoadError(file + ": missing header row");
  const auto header = split_commas(line);
  std::unordered_map<std::string, std::size_t> col_of;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name(trim(header[c]));
    if (!col_of.emplace(name, c).second) {
      throw LoadError(file + ":1: duplicate column " + name);
    }
  }
  auto require = [&](const std::string& name) {
    const auto it = col_of.find(name);
    if (it == col_of.end()) throw LoadError(file + ":1: missing column " + name);
    return it->second;
  };
  const std::size_t user_col = require(std::string(kUserCol));
  const std::size_t click_col = require(std::string(kClickCol));
  const std::size_t conv_col = require(std::string(kConvCol));
  std::vector<std::size_t> feature_cols;
  for (const auto& f : schema.fields) {
    feature_cols.push_back(require(std::string(kFeaturePrefix) + f.name));
  }
  if (header.size() != 3 + schema.fields.size()) {
    for (const auto& [name, c] : col_of) {
      const bool known = name == kUserCol || name == kClickCol || name == kConvCol ||
                         std::find(feature_cols.begin(), feature_cols.end(), c) !=
                             feature_cols.end();
      if (!known) throw LoadError(file + ":1: unexpected column " + name);
    }
  }

  while (next_line(line)) {
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    const std::string where = file + ":" + std::to_string(line_no);
    if (cells.size() != header.size()) {
      throw LoadError(where + ": expected " + std::to_string(header.size()) + " cells, got " +
                      std::to_string(cells.size()));
    }
    ImpressionRecord r;
    if (!parse_uint(cells[user_col], r.user_id)) {
      throw LoadError(where + ": non-integer user_id");
    }
    unsigned click = 0;
    unsigned conv = 0;
    if (!parse_uint(cells[click_col], click) || click > 1) {
      throw LoadError(where + ": y_click must be 0 or 1");
    }
    if (!parse_uint(cells[conv_col], conv) || conv > 1) {
      throw LoadError(where + ": y_conversion must be 0 or 1");
    }
    r.y_ctr = static_cast<std::uint8_t>(click);
    r.y_cvr = static_cast<std::uint8_t>(conv);
    if (schema.funnel && r.y_cvr > r.y_ctr) {
      throw LoadError(where + ": funnel violation (conversion without click)");
    }
    r.feature_ids.resize(schema.fields.size());
    for (std::size_t f = 0; f < schema.fields.size(); ++f) {
      std::uint32_t id = 0;
      if (!parse_uint(cells[feature_cols[f]], id)) {
        throw LoadError(where + ": non-integer id in field " + schema.fields[f].name);
      }
      if (id >= schema.fields[f].cardinality) {
        throw LoadError(where + ": id " + std::to_string(id) + " out of range for field " +
                        schema.fields[f].name + " (cardinality " +
                        std::to_string(schema.fields[f].cardinality) + ")");
      }
      r.feature_ids[f] = id;
    }
    ds.records.push_back(std::move(r));
  }
  return ds;
}

void write_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write data file " + path.string());
  out << kUserCol << ',' << kClickCol << ',' << kConvCol;
  for (const auto& f : dataset.schema.fields) out << ',' << kFeaturePrefix << f.name;
  out << '\n';
  std::string line;
  for (const auto& r : dataset.records) {
    line.clear();
    line += std::to_string(r.user_id);
    line += ',';
    line += static_cast<char>('0' + r.y_ctr);
    line += ',';
    line += static_cast<char>('0' + r.y_cvr);
    for (auto id : r.feature_ids) {
      line += ',';
      line += std::to_string(id);
    }
    line += '\n';
    out << line;
  }
  if (!out) throw LoadError("failed writing data file " + path.string());
}

// ---------------------------------------------------------------- seeds

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_name(std::string_view name) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------- synthetic

Schema GenConfig::schema() const {
  Schema s;
  s.funnel = funnel;
  s.fields.push_back({"user", static_cast<std::uint32_t>(n_users)});
  for (std::size_t f = 1; f < n_fields; ++f) {
    char name[16];
    std::snprintf(name, sizeof(name), "c%02zu", f);
    s.fields.push_back({name, field_cardinality});
  }
  return s;
}

void GenConfig::validate() const {
  if (n_fields < 1) throw ConfigError("synth: fields must be >= 1");
  if (n_users < 1) throw ConfigError("synth: users must be >= 1");
  if (n_users > 0xffffffffULL) throw ConfigError("synth: too many users");
  if (field_cardinality < 1) throw ConfigError("synth: cardinality must be >= 1");
  if (latent_dim < 1) throw ConfigError("synth: latent dimension must be >= 1");
  if (!(rho >= -1.0 && rho <= 1.0)) throw ConfigError("synth: rho must lie in [-1, 1]");
  if (!(ctr_rate > 0.0 && ctr_rate < 1.0)) throw ConfigError("synth: ctr-rate must lie in (0, 1)");
  if (!(cvr_rate > 0.0 && cvr_rate < 1.0)) throw ConfigError("synth: cvr-rate must lie in (0, 1)");
  if (!(signal_scale >= 0.0)) throw ConfigError("synth: signal scale must be >= 0");
  if (!(record_noise >= 0.0 && record_noise <= 1.0)) {
    throw ConfigError("synth: record noise must lie in [0, 1]");
  }
}

namespace {

// Solves mean_i w_i * sigmoid(scale * x_i + b) / mean_i w_i = target for b.
double calibrate_bias(std::span<const double> logits, std::span<const double> weights,
                      double scale, double target) {
  auto rate = [&](double b) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double w = weights.empty() ? 1.0 : weights[i];
      num += w / (1.0 + std::exp(-(scale * logits[i] + b)));
      den += w;
    }
    return den > 0.0 ? num / den : target;
  };
  double lo = -60.0;
  double hi = 60.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (rate(mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

Dataset synth_generate(const GenConfig& config, std::uint64_t seed, LatentLogits* latents) {
  config.validate();
  Dataset ds;
  ds.schema = config.schema();
  const std::size_t F = ds.schema.fields.size();
  const std::size_t D = config.latent_dim;

  // Per-(component, field, id) latent effect vectors; components are
  // 0 = shared across tasks, 1 = click-only, 2 = conversion-only.
  std::mt19937_64 world(mix_seed(seed, 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<std::vector<double>>> effects(3, std::vector<std::vector<double>>(F));
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t f = 0; f < F; ++f) {
      auto& table = effects[k][f];
      table.resize(static_cast<std::size_t>(ds.schema.fields[f].cardinality) * D);
      for (double& v : table) v = normal(world);
    }
  }

  std::mt19937_64 draw(mix_seed(seed, 2));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double inv_sqrt_f = 1.0 / std::sqrt(static_cast<double>(F));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(D));
  const double inv_sqrt_2d = 1.0 / std::sqrt(2.0 * static_cast<double>(D));
  const double norm = 1.0 / std::sqrt(1.0 + config.interaction * config.interaction);
  const double keep = std::sqrt(1.0 - config.record_noise);
  const double noise = std::sqrt(config.record_noise);
  const double shared_w = std::sqrt(std::abs(config.rho));
  const double own_w = std::sqrt(1.0 - std::abs(config.rho));
  const double sign = config.rho < 0.0 ? -1.0 : 1.0;

  const std::size_t n = config.n_records;
  std::vector<double> logit_ctr(n);
  std::vector<double> logit_cvr(n);
  ds.records.resize(n);
  std::vector<double> z(D);
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = ds.records[i];
    r.feature_ids.resize(F);
    r.user_id = std::min<std::uint64_t>(static_cast<std::uint64_t>(unit(draw) * config.n_users),
                                        config.n_users - 1);
    r.feature_ids[0] = static_cast<std::uint32_t>(r.user_id);
    for (std::size_t f = 1; f < F; ++f) {
      // Skewed popularity: low ids are drawn far more often.
      const double u = unit(draw);
      const auto card = ds.schema.fields[f].cardinality;
      r.feature_ids[f] = std::min<std::uint32_t>(static_cast<std::uint32_t>(u * u * card), card - 1);
    }
    double g[3];
    for (std::size_t k = 0; k < 3; ++k) {
      std::fill(z.begin(), z.end(), 0.0);
      for (std::size_t f = 0; f < F; ++f) {
        const double* v = effects[k][f].data() + static_cast<std::size_t>(r.feature_ids[f]) * D;
        for (std::size_t d = 0; d < D; ++d) z[d] += v[d];
      }
      double first = 0.0;
      double second = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        const double zd = z[d] * inv_sqrt_f;
        first += zd;
        second += zd * zd - 1.0;
      }
      const double structured = norm * (first * inv_sqrt_d + config.interaction * second * inv_sqrt_2d);
      g[k] = keep * structured + noise * normal(draw);
    }
    logit_ctr[i] = shared_w * g[0] + own_w * g[1];
    logit_cvr[i] = sign * shared_w * g[0] + own_w * g[2];
  }

  const double b_ctr = calibrate_bias(logit_ctr, {}, config.signal_scale, config.ctr_rate);
  std::vector<double> p_ctr(n);
  for (std::size_t i = 0; i < n; ++i) p_ctr[i] = sigmoid(config.signal_scale * logit_ctr[i] + b_ctr);
  const double b_cvr = config.funnel
                           ? calibrate_bias(logit_cvr, p_ctr, config.signal_scale, config.cvr_rate)
                           : calibrate_bias(logit_cvr, {}, config.signal_scale, config.cvr_rate);

  std::mt19937_64 labels(mix_seed(seed, 3));
  for (std::size_t i = 0; i < n; ++i) {
    const double p_cvr = sigmoid(config.signal_scale * logit_cvr[i] + b_cvr);
    const bool click = unit(labels) < p_ctr[i];
    const bool conv = unit(labels) < p_cvr;
    ds.records[i].y_ctr = click ? 1 : 0;
    ds.records[i].y_cvr = (conv && (click || !config.funnel)) ? 1 : 0;
  }

  if (latents != nullptr) {
    latents->ctr = std::move(logit_ctr);
    latents->cvr = std::move(logit_cvr);
  }
  return ds;
}

// ---------------------------------------------------------------- batching

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  Batch b;
  b.size = indices.size();
  b.fields = dataset.schema.fields.size();
  b.feature_ids.reserve(b.size * b.fields);
  b.user_ids.reserve(b.size);
  b.y_ctr.reserve(b.size);
  b.y_cvr.reserve(b.size);
  for (std::size_t idx : indices) {
    const auto& r = dataset.records.at(idx);
    b.feature_ids.insert(b.feature_ids.end(), r.feature_ids.begin(), r.feature_ids.end());
    b.user_ids.push_back(r.user_id);
    b.y_ctr.push_back(r.y_ctr);
    b.y_cvr.push_back(r.y_cvr);
  }
  return b;
}

Batch make_batch(const Dataset& dataset, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return make_batch(dataset, idx);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch,
                                     bool shuffle) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    std::mt19937_64 rng(mix_seed(mix_seed(seed, 0x5eedULL), epoch));
    std::shuffle(order.begin(), order.end(), rng);
  }
  return order;
}

BatchIter::BatchIter(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed,
                     std::uint64_t epoch, bool shuffle)
    : dataset_(&dataset), batch_size_(batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  order_ = epoch_order(dataset.size(), seed, epoch, shuffle);
}

std::optional<Batch> BatchIter::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  Batch b = make_batch(*dataset_, std::span<const std::size_t>(order_).subspan(cursor_, end - cursor_));
  cursor_ = end;
  return b;
}

std::size_t BatchIter::batch_count() const noexcept {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

std::vector<Batch> batch_iter(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed,
                              bool shuffle, std::uint64_t epoch) {
  BatchIter it(dataset, batch_size, seed, epoch, shuffle);
  std::vector<Batch> out;
  out.reserve(it.batch_count());
  while (auto b = it.next()) out.push_back(std::move(*b));
  return out;
}

}  // namespace adaftr
