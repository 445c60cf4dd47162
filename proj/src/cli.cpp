// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0

#include "adaftr/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "adaftr/checkpoint.hpp"
#include "adaftr/config.hpp"
#include "adaftr/datasets.hpp"
#include "adaftr/errors.hpp"
#include "adaftr/metrics.hpp"
#include "adaftr/trainer.hpp"

#ifndef ADAFTR_VERSION
#define ADAFTR_VERSION "0.0.0"
#endif

namespace adaftr {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr double kGradTolerance = 1e-4;

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

fs::path ensure_dir(const std::string& dir) {
  const fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error("cannot create output directory " + dir + ": " + ec.message());
  return p;
}

std::string absolute_string(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

// ---------------------------------------------------------------- synth

struct SynthArgs {
  GenConfig gen;
  std::uint64_t seed = 0;
  std::size_t test_records = 0;
  std::string out;
};

json label_summary(const Dataset& ds) {
  std::size_t clicks = 0;
  std::size_t conversions = 0;
  for (const auto& r : ds.records) {
    clicks += r.y_ctr;
    conversions += r.y_cvr;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, ds.size()));
  json j;
  j["records"] = ds.size();
  j["clicks"] = clicks;
  j["conversions"] = conversions;
  j["ctr_rate"] = static_cast<double>(clicks) / n;
  j["cvr_rate"] = static_cast<double>(conversions) / n;
  j["cvr_given_click"] =
      clicks == 0 ? 0.0 : static_cast<double>(conversions) / static_cast<double>(clicks);
  return j;
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  a.gen.validate();
  GenConfig all = a.gen;
  all.n_records = a.gen.n_records + a.test_records;
  Dataset ds = synth_generate(all, a.seed);

  Dataset test{ds.schema, {}};
  test.records.assign(ds.records.begin() + static_cast<std::ptrdiff_t>(a.gen.n_records),
                      ds.records.end());
  ds.records.resize(a.gen.n_records);

  const fs::path dir = ensure_dir(a.out);
  write_csv(ds, dir / "data.csv");
  write_schema(ds.schema, dir / "schema.txt");
  json j;
  j["seed"] = a.seed;
  j["fields"] = ds.schema.fields.size();
  j["users"] = a.gen.n_users;
  j["funnel"] = a.gen.funnel;
  j["train"] = label_summary(ds);
  j["files"]["data"] = (dir / "data.csv").string();
  j["files"]["schema"] = (dir / "schema.txt").string();
  if (a.test_records > 0) {
    write_csv(test, dir / "test.csv");
    j["test"] = label_summary(test);
    j["files"]["test"] = (dir / "test.csv").string();
  }
  out << j.dump() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string schema;
  std::string eval_data;
  std::string out;
  std::string config_file;
  std::string manifest;
  std::string warm_start;
  bool log_wall_clock = false;
  std::map<std::string, std::string> keys;  // flag values, keyed like the config file
};

KeyValues json_to_key_values(const json& obj, const std::string& origin) {
  if (!obj.is_object()) throw ConfigError(origin + ": config must be an object");
  KeyValues kv;
  for (const auto& [k, v] : obj.items()) {
    if (!v.is_string()) throw ConfigError(origin + ": config value for '" + k + "' must be a string");
    kv[k] = v.get<std::string>();
  }
  return kv;
}

json load_manifest(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError("manifest " + path + ": " + e.what());
  }
}

std::string manifest_input(const json& m, const char* key) {
  if (!m.contains("inputs") || !m["inputs"].contains(key) || m["inputs"][key].is_null()) return {};
  return m["inputs"][key].get<std::string>();
}

fs::path schema_for(const std::string& schema, const std::string& data) {
  if (!schema.empty()) return schema;
  return fs::path(data).parent_path() / "schema.txt";
}

int cmd_train(const TrainArgs& a, const CLI::App& sub, std::ostream& out) {
  TrainConfig cfg;
  std::string data = a.data;
  std::string schema_path = a.schema;
  std::string eval_path = a.eval_data;
  std::string warm = a.warm_start;
  bool wall = a.log_wall_clock;

  // defaults < manifest < config file < flags
  std::vector<Field> manifest_fields;
  if (!a.manifest.empty()) {
    const json m = load_manifest(a.manifest);
    if (!m.contains("config")) throw ConfigError("manifest " + a.manifest + " has no config");
    KeyValues kv = json_to_key_values(m["config"], a.manifest);
    if (auto it = kv.find("fields"); it != kv.end()) {
      manifest_fields = parse_fields(it->second);
      kv.erase(it);
    }
    cfg = train_config_from(kv, cfg);
    if (data.empty()) data = manifest_input(m, "data");
    if (schema_path.empty()) schema_path = manifest_input(m, "schema");
    if (eval_path.empty()) eval_path = manifest_input(m, "eval_data");
    if (warm.empty()) warm = manifest_input(m, "warm_start");
    if (sub.count("--log-wall-clock") == 0 && m.contains("log_wall_clock")) {
      wall = m["log_wall_clock"].get<bool>();
    }
  }
  if (!a.config_file.empty()) {
    KeyValues kv = parse_key_values(read_text(a.config_file));
    if (kv.count("fields")) throw ConfigError(a.config_file + ": fields come from the schema file");
    cfg = train_config_from(kv, cfg);
  }
  for (const auto& [key, value] : a.keys) {
    if (sub.count("--" + key) > 0) apply_train_key(cfg, key, value);
  }
  if (data.empty()) throw ConfigError("--data is required (directly or via --manifest)");

  const fs::path schema_file = schema_for(schema_path, data);
  const Schema schema = load_schema(schema_file);
  if (!manifest_fields.empty() && manifest_fields != schema.fields) {
    throw ConfigError("schema " + schema_file.string() + " does not match the manifest fields");
  }
  cfg.model.fields = schema.fields;
  cfg.validate();

  const Dataset ds = load_csv(data, schema);
  std::optional<Dataset> eval_ds;
  if (!eval_path.empty()) eval_ds = load_csv(eval_path, schema);
  std::optional<Checkpoint> warm_ck;
  if (!warm.empty()) warm_ck = load_checkpoint(warm);

  const fs::path dir = ensure_dir(a.out);
  const fs::path ckpt = dir / "model.ckpt";
  const fs::path history = dir / "history.jsonl";
  const fs::path manifest_out = dir / "manifest.json";

  json m;
  m["engine"] = "adaftr";
  m["engine_version"] = ADAFTR_VERSION;
  m["command"] = "train";
  m["seed"] = cfg.seed;
  json kv = json::object();
  for (const auto& [k, v] : to_key_values(cfg)) kv[k] = v;
  m["config"] = std::move(kv);
  m["inputs"]["data"] = absolute_string(data);
  m["inputs"]["schema"] = absolute_string(schema_file);
  m["inputs"]["eval_data"] = eval_path.empty() ? json(nullptr) : json(absolute_string(eval_path));
  m["inputs"]["warm_start"] = warm.empty() ? json(nullptr) : json(absolute_string(warm));
  m["outputs"]["checkpoint"] = absolute_string(ckpt);
  m["outputs"]["history"] = absolute_string(history);
  m["outputs"]["manifest"] = absolute_string(manifest_out);
  m["log_wall_clock"] = wall;
  m["threads"] = worker_threads();
  m["started_at"] = utc_now();
  m["finished_at"] = nullptr;
  write_text(manifest_out, m.dump(2) + "\n");

  std::ofstream log(history, std::ios::binary | std::ios::trunc);
  if (!log) throw Error("cannot write " + history.string());
  TrainOptions opts;
  opts.eval_data = eval_ds ? &*eval_ds : nullptr;
  opts.checkpoint_path = ckpt;
  opts.log = &log;
  opts.log_wall_clock = wall;
  opts.warm_start = warm_ck ? &warm_ck->params : nullptr;
  const TrainResult result = train(ds, cfg, opts);
  log.close();
  if (!log) throw Error("failed writing " + history.string());

  m["finished_at"] = utc_now();
  write_text(manifest_out, m.dump(2) + "\n");

  json s;
  s["steps"] = result.history.steps.size();
  s["stopped_early"] = result.history.stopped_early;
  if (!result.history.steps.empty()) {
    const LossBreakdown& l = result.history.steps.back().losses;
    s["final_loss"] = {{"ctr", l.ctr}, {"cvr", l.cvr}, {"rel", l.rel},
                       {"align", l.align}, {"l2", l.l2}, {"total", l.total}};
  }
  if (!result.history.evals.empty()) {
    s["last_eval"] = json::parse(to_json(result.history.evals.back().report));
  }
  s["checkpoint"] = ckpt.string();
  s["history"] = history.string();
  s["manifest"] = manifest_out.string();
  out << s.dump() << '\n';
  return kExitOk;
}

std::string_view train_key_help(std::string_view key) {
  static const std::pair<std::string_view, std::string_view> table[] = {
      {"activation", "Hidden activation: relu|sigmoid|linear"},
      {"alignment-mode", "infonce|scl|reg|none"},
      {"alpha", "Relatedness loss weight"},
      {"backbone", "single_dnn|shared_bottom|mmoe"},
      {"batch-size", "Records per step"},
      {"beta", "Alignment loss weight"},
      {"checkpoint-every", "Epochs between intermediate checkpoints (0: final only)"},
      {"contrast-layer", "Tower layer (1-based) whose output is aligned"},
      {"cvr-on-clicks-only", "Score CVR on clicked records only (true|false)"},
      {"embed-dim", "Embedding width per field"},
      {"embed-init-bound", "Embedding init range +-bound"},
      {"epochs", "Passes over the data"},
      {"eval-every", "Steps between evaluations (0: end of each epoch)"},
      {"experts", "MMoE expert count"},
      {"fixed-tau", "Temperature when temperature-mode=fixed"},
      {"init", "xavier_uniform|zeros"},
      {"init-seed", "Parameter init seed"},
      {"lambda", "L2 weight on base parameters"},
      {"learnable-tau-init", "Start value of the learnable temperature"},
      {"lr", "Adam learning rate"},
      {"patience", "Evaluations without CVR AUC gain before stopping (0: off)"},
      {"reg-kind", "mse|mae, for alignment-mode=reg"},
      {"relatedness-hidden", "Relatedness MLP widths, comma separated"},
      {"seed", "Shuffle and negative-sampling seed"},
      {"shared-dim", "Expert / shared-bottom output width"},
      {"shuffle", "Shuffle records each epoch (true|false)"},
      {"tau-lower", "Lowest temperature"},
      {"tau-upper", "Highest temperature"},
      {"temperature-mode", "adaptive|learnable_scalar|fixed"},
      {"tower-hidden", "Tower widths, comma separated"},
  };
  for (const auto& [k, text] : table) {
    if (k == key) return text;
  }
  return {};
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string schema;
  std::string manifest;
  std::size_t batch_size = 1024;
  bool percent = false;
  bool cvr_on_clicks_only = false;
};

int cmd_eval(const EvalArgs& a, const CLI::App& sub, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  TrainConfig cfg;
  if (!a.manifest.empty()) {
    const json m = load_manifest(a.manifest);
    KeyValues kv = json_to_key_values(m.at("config"), a.manifest);
    kv.erase("fields");
    cfg = train_config_from(kv, cfg);
  }
  cfg.model = ck.config;
  if (ck.params.contains(kTemperatureParam)) {
    cfg.loss.temperature_mode = TemperatureMode::learnable_scalar;
  } else if (cfg.loss.temperature_mode == TemperatureMode::learnable_scalar) {
    throw LoadError(a.checkpoint + ": no learnable temperature stored");
  }
  if (sub.count("--batch-size") > 0 || a.manifest.empty()) cfg.batch_size = a.batch_size;
  if (sub.count("--cvr-on-clicks-only") > 0) cfg.cvr_on_clicks_only = a.cvr_on_clicks_only;
  if (cfg.batch_size < 1) throw ConfigError("--batch-size must be >= 1");

  const fs::path schema_file = schema_for(a.schema, a.data);
  const Schema schema = load_schema(schema_file);
  if (schema.fields != ck.config.fields) {
    throw LoadError("checkpoint " + a.checkpoint + " does not match schema " +
                    schema_file.string());
  }
  const Dataset ds = load_csv(a.data, schema);
  const MetricsReport report = evaluate(ck.params, ds, cfg);
  out << to_json(report, a.percent) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradCheckArgs {
  std::string backbone;
  std::string alignment;
  std::string temperature;
  std::uint64_t seed = 0;
  bool break_backprop = false;
};

int cmd_gradcheck(const GradCheckArgs& a, std::ostream& out) {
  std::vector<Backbone> backbones = {Backbone::shared_bottom, Backbone::mmoe};
  std::vector<AlignmentMode> alignments = {AlignmentMode::none, AlignmentMode::reg,
                                           AlignmentMode::scl, AlignmentMode::infonce};
  std::vector<TemperatureMode> temperatures = {TemperatureMode::fixed, TemperatureMode::adaptive};
  if (!a.backbone.empty()) backbones = {backbone_from_string(a.backbone)};
  if (!a.alignment.empty()) alignments = {alignment_mode_from_string(a.alignment)};
  if (!a.temperature.empty()) temperatures = {temperature_mode_from_string(a.temperature)};

  GradCheckOptions opts;
  opts.seed = a.seed;
  opts.break_backprop = a.break_backprop;

  json runs = json::array();
  double worst = 0.0;
  for (Backbone b : backbones) {
    for (AlignmentMode al : alignments) {
      for (TemperatureMode t : temperatures) {
        const GradCheckReport r = grad_check(micro_config(b, al, t), opts);
        worst = std::max(worst, r.max_error());
        json run;
        run["backbone"] = to_string(b);
        run["alignment"] = to_string(al);
        run["temperature"] = to_string(t);
        run.update(json::parse(to_json(r, kGradTolerance)));
        runs.push_back(std::move(run));
      }
    }
  }
  json j;
  j["tolerance"] = kGradTolerance;
  j["max_rel_error"] = worst;
  j["passed"] = worst < kGradTolerance;
  j["break_backprop"] = a.break_backprop;
  j["runs"] = std::move(runs);
  out << j.dump() << '\n';
  return worst < kGradTolerance ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint CTR/CVR training with adaptive-temperature contrastive alignment",
               "adaftr"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ADAFTR_VERSION);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic two-task impression dataset");
  synth->add_option("--records", sa.gen.n_records, "Training records")->capture_default_str();
  synth->add_option("--test-records", sa.test_records, "Extra records written to test.csv")
      ->capture_default_str();
  synth->add_option("--users", sa.gen.n_users, "Distinct users")->capture_default_str();
  synth->add_option("--fields", sa.gen.n_fields, "Feature fields, user field included")
      ->capture_default_str();
  synth->add_option("--cardinality", sa.gen.field_cardinality, "Ids per non-user field")
      ->capture_default_str();
  synth->add_option("--latent-dim", sa.gen.latent_dim, "Latent factor width")
      ->capture_default_str();
  synth->add_option("--rho", sa.gen.rho, "Correlation of the CTR and CVR latent logits")
      ->check(CLI::Range(-1.0, 1.0))
      ->capture_default_str();
  synth->add_option("--ctr-rate", sa.gen.ctr_rate, "Target click rate")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  synth->add_option("--cvr-rate", sa.gen.cvr_rate,
                    "Target conversion rate (per click when the funnel is on)")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  synth->add_option("--funnel", sa.gen.funnel, "Conversions only after clicks (true|false)")
      ->capture_default_str();
  synth->add_option("--signal-scale", sa.gen.signal_scale, "Latent logit scale")
      ->capture_default_str();
  synth->add_option("--interaction", sa.gen.interaction, "Weight of second-order terms")
      ->capture_default_str();
  synth->add_option("--noise", sa.gen.record_noise, "Per-record noise share in [0, 1]")
      ->capture_default_str();
  synth->add_option("--seed", sa.seed, "Generator seed")->capture_default_str();
  synth->add_option("--out", sa.out, "Output directory")->required();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--data", ta.data, "Training CSV");
  train_cmd->add_option("--schema", ta.schema, "Schema file (default: schema.txt next to --data)");
  train_cmd->add_option("--eval-data", ta.eval_data, "CSV evaluated during training");
  train_cmd->add_option("--out", ta.out, "Output directory")->required();
  train_cmd->add_option("--config", ta.config_file, "key=value config file");
  train_cmd->add_option("--manifest", ta.manifest, "Replay a previous run's manifest.json");
  train_cmd->add_option("--warm-start", ta.warm_start, "Checkpoint whose base tensors seed the model");
  train_cmd->add_flag("--log-wall-clock", ta.log_wall_clock, "Add elapsed seconds to log lines");
  const TrainConfig defaults;
  for (const auto& [key, value] : to_key_values(defaults)) {
    if (key == "fields") continue;
    ta.keys[key] = value;
    train_cmd->add_option("--" + key, ta.keys[key], std::string(train_key_help(key)))
        ->default_str(value);
  }

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint, print metrics as JSON");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ea.data, "CSV to evaluate")->required();
  eval_cmd->add_option("--schema", ea.schema, "Schema file (default: schema.txt next to --data)");
  eval_cmd->add_option("--manifest", ea.manifest, "Training manifest supplying loss settings");
  eval_cmd->add_option("--batch-size", ea.batch_size, "Evaluation batch size")
      ->capture_default_str();
  eval_cmd->add_flag("--cvr-on-clicks-only", ea.cvr_on_clicks_only,
                     "Score CVR on clicked records only");
  eval_cmd->add_flag("--percent", ea.percent, "Report AUC values x100");

  GradCheckArgs ga;
  auto* grad_cmd =
      app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  grad_cmd->add_option("--backbone", ga.backbone, "Restrict to one backbone");
  grad_cmd->add_option("--alignment-mode", ga.alignment, "Restrict to one alignment mode");
  grad_cmd->add_option("--temperature-mode", ga.temperature, "Restrict to one temperature mode");
  grad_cmd->add_option("--seed", ga.seed, "Micro-model seed")->capture_default_str();
  grad_cmd->add_flag("--break-backprop", ga.break_backprop,
                     "Corrupt one gradient on purpose (negative control)");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(sa, out);
    if (*train_cmd) return cmd_train(ta, *train_cmd, out);
    if (*eval_cmd) return cmd_eval(ea, *eval_cmd, out);
    if (*grad_cmd) return cmd_gradcheck(ga, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitConfig;
}

}  // namespace adaftr
