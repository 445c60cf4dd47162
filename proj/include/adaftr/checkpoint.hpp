// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint, little-endian:
//   "ADFT"  u32 version  u32 n_entries
//   n_entries x { u32 name_len, name, u32 rank, u32 dims[rank], f64 row-major data }
//   (always written with rank 2; rank 1 is read as a single row)
//   u32 len("__meta__") "__meta__"  u32 text_len  ModelConfig as key=value text
// Entries appear in ModelParams order, so equal parameters give equal bytes.
// Theta/omega membership is not stored; it is recovered from the config.

#pragma once

#include <cstdint>
#include <filesystem>

#include "adaftr/config.hpp"
#include "adaftr/model.hpp"

namespace adaftr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  ModelConfig config;
};

// Throws Error naming the path when the file cannot be written.
void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::filesystem::path& path);

// LoadError (with the path) on bad magic, unknown version, truncation, or
// tensors that do not match the layout implied by the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Additionally requires the stored layout to match `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

// Throws LoadError unless `params` has exactly the tensors `config` implies
// (plus, optionally, the learnable temperature).
void check_layout(const ModelParams& params, const ModelConfig& config, std::string_view origin);

}  // namespace adaftr
