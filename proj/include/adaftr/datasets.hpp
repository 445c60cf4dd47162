// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Impression data: schema, CSV ingestion, the synthetic two-task generator,
// and deterministic batching.
//
// On-disk layout
//   data CSV : header `user_id,y_click,y_conversion,f_<name>...`, one
//              impression per row, LF line endings.
//   schema   : line-oriented `name=cardinality`, plus an optional
//              `funnel=true|false`; `#` starts a comment.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace adaftr {

struct Field {
  std::string name;
  std::uint32_t cardinality = 1;

  friend bool operator==(const Field&, const Field&) = default;
};

struct Schema {
  std::vector<Field> fields;
  bool funnel = true;  // enforce y_cvr <= y_ctr

  std::size_t field_count() const noexcept { return fields.size(); }
  std::vector<std::string> field_names() const;
  // Throws ConfigError on empty/duplicate names or zero cardinality.
  void validate() const;

  friend bool operator==(const Schema&, const Schema&) = default;
};

struct ImpressionRecord {
  std::uint64_t user_id = 0;
  std::vector<std::uint32_t> feature_ids;
  std::uint8_t y_ctr = 0;
  std::uint8_t y_cvr = 0;

  friend bool operator==(const ImpressionRecord&, const ImpressionRecord&) = default;
};

struct Dataset {
  Schema schema;
  std::vector<ImpressionRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  // Throws RangeError/ConfigError for the first record that violates the schema.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

Schema parse_schema(const std::string& text, const std::string& origin = "<schema>");
Schema load_schema(const std::filesystem::path& path);
std::string format_schema(const Schema& schema);
void write_schema(const Schema& schema, const std::filesystem::path& path);

// Errors are LoadError with the file name and 1-based line number.
Dataset load_csv(const std::filesystem::path& data_path, const std::filesystem::path& schema_path);
Dataset load_csv(const std::filesystem::path& data_path, const Schema& schema);
void write_csv(const Dataset& dataset, const std::filesystem::path& path);

// ---------------------------------------------------------------- synthetic

struct GenConfig {
  std::size_t n_records = 10000;
  // Field 0 is the user field (`user`), its id doubles as the record user id.
  std::size_t n_users = 1000;
  std::size_t n_fields = 8;  // including the user field
  std::uint32_t field_cardinality = 100;
  std::size_t latent_dim = 8;
  double rho = 0.6;         // task correlation of the latent logits
  double ctr_rate = 0.1;    // P(click)
  double cvr_rate = 0.1;    // P(conversion | click) with funnel, P(conversion) without
  bool funnel = true;
  double signal_scale = 2.0;    // logit scale before calibration
  double interaction = 0.5;     // weight of the second-order term
  double record_noise = 0.25;   // variance share of per-record noise

  Schema schema() const;
  void validate() const;  // throws ConfigError
};

struct LatentLogits {
  std::vector<double> ctr;
  std::vector<double> cvr;
};

// Fully determined by (config, seed). `latents`, when given, receives the
// two standardized latent logits of every record before calibration.
Dataset synth_generate(const GenConfig& config, std::uint64_t seed,
                       LatentLogits* latents = nullptr);

// ---------------------------------------------------------------- batching

struct Batch {
  std::size_t size = 0;
  std::size_t fields = 0;
  std::vector<std::uint32_t> feature_ids;  // row-major [size x fields]
  std::vector<std::uint64_t> user_ids;
  std::vector<double> y_ctr;
  std::vector<double> y_cvr;
};

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);
Batch make_batch(const Dataset& dataset, std::size_t begin, std::size_t end);

// Record order for one epoch; a pure function of (n, seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch,
                                     bool shuffle);

class BatchIter {
 public:
  // Throws ConfigError when batch_size == 0.
  BatchIter(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed,
            std::uint64_t epoch, bool shuffle);

  std::optional<Batch> next();
  std::size_t batch_count() const noexcept;

 private:
  const Dataset* dataset_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Convenience: every batch of one epoch.
std::vector<Batch> batch_iter(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed,
                              bool shuffle, std::uint64_t epoch = 0);

// SplitMix64 finalizer, used to derive independent RNG streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept;
std::uint64_t hash_name(std::string_view name) noexcept;

}  // namespace adaftr
