// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaftr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "adaftr/errors.hpp"

namespace adaftr {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'D', 'F', 'T'};
constexpr std::string_view kMetaName = "__meta__";
constexpr std::uint32_t kMaxName = 4096;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string origin)
      : data_(std::move(data)), origin_(std::move(origin)) {}

  void bytes(void* p, std::size_t n) {
    if (n > data_.size() - pos_) {
      throw LoadError(origin_ + ": truncated checkpoint (needed " + std::to_string(n) +
                      " bytes at offset " + std::to_string(pos_) + ")");
    }
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str(std::uint32_t limit) {
    const std::uint32_t n = u32();
    if (n > limit) throw LoadError(origin_ + ": implausible string length " + std::to_string(n));
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool at_end() const noexcept { return pos_ == data_.size(); }
  const std::string& origin() const noexcept { return origin_; }

 private:
  std::vector<char> data_;
  std::size_t pos_ = 0;
  std::string origin_;
};

}  // namespace

void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Param& p : params) {
    w.str(p.name);
    w.u32(2);  // rank
    w.u32(static_cast<std::uint32_t>(p.value.rows()));
    w.u32(static_cast<std::uint32_t>(p.value.cols()));
    w.bytes(p.value.data(), p.value.size() * sizeof(double));
  }
  w.str(kMetaName);
  w.str(format_key_values(to_key_values(config)));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open checkpoint for writing: " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  out.close();
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string origin = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint: " + origin);
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), origin);

  char magic[4];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw LoadError(origin + ": not a checkpoint (bad magic bytes)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw LoadError(origin + ": unsupported checkpoint version " + std::to_string(version) +
                    " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t n = r.u32();

  struct Entry {
    std::string name;
    Tensor2 value;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str(kMaxName);
    const std::uint32_t rank = r.u32();
    if (rank < 1 || rank > 2) {
      throw LoadError(origin + ": unsupported rank " + std::to_string(rank) + " for " + name);
    }
    const std::uint32_t rows = rank == 2 ? r.u32() : 1;
    const std::uint32_t cols = r.u32();
    const std::uint64_t count = std::uint64_t{rows} * cols;
    if (count > (std::uint64_t{1} << 32)) {
      throw LoadError(origin + ": implausible tensor shape for " + name);
    }
    std::vector<double> values(count);
    r.bytes(values.data(), count * sizeof(double));
    entries.push_back({std::move(name), Tensor2(rows, cols, std::move(values))});
  }
  if (r.str(kMaxName) != kMetaName) throw LoadError(origin + ": missing metadata entry");
  const std::string meta = r.str(1u << 24);
  if (!r.at_end()) throw LoadError(origin + ": trailing bytes after metadata");

  Checkpoint ck;
  try {
    ck.config = model_config_from(parse_key_values(meta));
    ck.config.validate();
  } catch (const ConfigError& e) {
    throw LoadError(origin + ": bad metadata: " + e.what());
  }
  // Groups are not stored; they follow from the layout the config implies.
  ModelConfig shape_only = ck.config;
  shape_only.init = InitScheme::zeros;
  const ModelParams layout = init_params(shape_only);
  for (Entry& e : entries) {
    const ParamGroup group =
        layout.contains(e.name) ? layout[layout.index(e.name)].group : ParamGroup::theta;
    try {
      ck.params.add(std::move(e.name), std::move(e.value), group);
    } catch (const Error& err) {
      throw LoadError(origin + ": " + err.what());
    }
  }
  check_layout(ck.params, ck.config, origin);
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  check_layout(ck.params, expected, path.string());
  return ck;
}

void check_layout(const ModelParams& params, const ModelConfig& config, std::string_view origin) {
  ModelConfig shape_only = config;
  shape_only.init = InitScheme::zeros;
  const ModelParams expected = init_params(shape_only);
  const std::string where(origin);
  for (const Param& e : expected) {
    if (!params.contains(e.name)) {
      throw LoadError(where + ": shape inconsistency, missing tensor " + e.name);
    }
    const Param& got = params[params.index(e.name)];
    if (!got.value.same_shape(e.value) || got.group != e.group) {
      throw LoadError(where + ": shape inconsistency for " + e.name + ": stored " +
                      got.value.shape_string() + ", config implies " + e.value.shape_string());
    }
  }
  for (const Param& p : params) {
    if (expected.contains(p.name)) continue;
    if (p.name == kTemperatureParam && p.value.rows() == 1 && p.value.cols() == 1) continue;
    throw LoadError(where + ": shape inconsistency, unexpected tensor " + p.name);
  }
}

}  // namespace adaftr
