// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <json.hpp>

#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "adaftr/cli.hpp"
#include "adaftr/datasets.hpp"
#include "temp_dir.hpp"

using namespace adaftr;
using Catch::Matchers::ContainsSubstring;
using json = nlohmann::json;
using testing::read_text;
using testing::TempDir;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(std::move(args), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Small data set plus a compact architecture, shared by several cases.
std::vector<std::string> small_train_args(const TempDir& dir, const std::string& out) {
  return {"train",         "--data",        (dir / "data/data.csv").string(),
          "--out",         (dir / out).string(),
          "--epochs",      "1",             "--batch-size", "64",
          "--embed-dim",   "4",             "--experts",    "2",
          "--shared-dim",  "8",             "--tower-hidden", "8,4",
          "--relatedness-hidden", "4",      "--backbone",   "mmoe",
          "--seed",        "3"};
}

void make_small_data(const TempDir& dir) {
  const Run r = run({"synth", "--records", "600", "--fields", "4", "--users", "40",
                     "--cardinality", "10", "--ctr-rate", "0.3", "--cvr-rate", "0.3",
                     "--seed", "1", "--test-records", "200", "--out", (dir / "data").string()});
  REQUIRE(r.code == 0);
}

}  // namespace

TEST_CASE("synth is deterministic and prints a summary", "[cli]") {
  TempDir dir("cli");
  const Run a = run({"synth", "--records", "1000", "--seed", "7", "--out", (dir / "a").string()});
  const Run b = run({"synth", "--records", "1000", "--seed", "7", "--out", (dir / "b").string()});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(read_text(dir / "a/data.csv") == read_text(dir / "b/data.csv"));
  CHECK(read_text(dir / "a/schema.txt") == read_text(dir / "b/schema.txt"));
  const json summary = json::parse(a.out);
  CHECK(summary.at("train").at("records") == 1000);
}

TEST_CASE("synth rejects an out-of-range rate", "[cli]") {
  TempDir dir("cli");
  const Run r = run({"synth", "--ctr-rate", "1.5", "--out", (dir / "x").string()});
  CHECK(r.code == 2);
  CHECK_THAT(r.err, ContainsSubstring("--ctr-rate"));
  CHECK_FALSE(std::filesystem::exists(dir / "x/data.csv"));
}

TEST_CASE("synth click rate tracks the flag at 100k records", "[cli]") {
  TempDir dir("cli");
  REQUIRE(run({"synth", "--records", "100000", "--ctr-rate", "0.04", "--seed", "2", "--out",
               (dir / "d").string()})
              .code == 0);
  const Dataset d = load_csv(dir / "d/data.csv", dir / "d/schema.txt");
  double clicks = 0;
  for (const auto& rec : d.records) clicks += rec.y_ctr;
  const double rate = clicks / static_cast<double>(d.size());
  CHECK(std::abs(rate - 0.04) < 0.2 * 0.04);
}

TEST_CASE("train, replay and eval", "[cli]") {
  TempDir dir("cli");
  make_small_data(dir);

  const Run first = run(small_train_args(dir, "run1"));
  REQUIRE(first.code == 0);
  INFO(first.err);
  CHECK(std::filesystem::exists(dir / "run1/model.ckpt"));
  CHECK(std::filesystem::exists(dir / "run1/history.jsonl"));
  const json manifest = json::parse(read_text(dir / "run1/manifest.json"));
  CHECK(manifest.at("config").at("backbone") == "mmoe");
  CHECK(manifest.at("seed") == 3);
  const std::string log = read_text(dir / "run1/history.jsonl");
  CHECK_FALSE(log.empty());
  std::istringstream lines(log);
  for (std::string line; std::getline(lines, line);) CHECK(json::accept(line));

  const Run replay = run({"train", "--manifest", (dir / "run1/manifest.json").string(), "--out",
                          (dir / "run2").string()});
  REQUIRE(replay.code == 0);
  CHECK(read_text(dir / "run1/model.ckpt") == read_text(dir / "run2/model.ckpt"));
  CHECK(read_text(dir / "run1/history.jsonl") == read_text(dir / "run2/history.jsonl"));

  // Flags override the manifest.
  const Run changed = run({"train", "--manifest", (dir / "run1/manifest.json").string(), "--out",
                           (dir / "run3").string(), "--seed", "4"});
  REQUIRE(changed.code == 0);
  CHECK(read_text(dir / "run1/model.ckpt") != read_text(dir / "run3/model.ckpt"));

  const std::string ckpt = (dir / "run1/model.ckpt").string();
  const std::string test = (dir / "data/test.csv").string();
  const Run plain = run({"eval", "--checkpoint", ckpt, "--data", test});
  const Run pct = run({"eval", "--checkpoint", ckpt, "--data", test, "--percent"});
  REQUIRE(plain.code == 0);
  REQUIRE(pct.code == 0);
  const json jp = json::parse(plain.out);
  const json jq = json::parse(pct.out);
  for (const char* key : {"auc_ctr", "gauc_ctr", "auc_cvr", "gauc_cvr"})
    CHECK(std::abs(jq.at(key).get<double>() - 100.0 * jp.at(key).get<double>()) < 1e-9);
  CHECK(jp.contains("skipped_users_ctr"));
}

TEST_CASE("train reports configuration errors with exit 2", "[cli]") {
  TempDir dir("cli");
  make_small_data(dir);
  auto args = small_train_args(dir, "bad");
  args.insert(args.end(), {"--temperature-mode", "fixed", "--fixed-tau", "3"});
  CHECK(run(args).code == 2);

  auto unknown = small_train_args(dir, "bad2");
  unknown.insert(unknown.end(), {"--backbone", "ple"});
  CHECK(run(unknown).code == 2);
}

TEST_CASE("config file sits between defaults and flags", "[cli]") {
  TempDir dir("cli");
  make_small_data(dir);
  testing::write_text(dir / "cfg.txt", "# overrides\nalpha=0.5\nbeta=0.2\n");
  auto args = small_train_args(dir, "cfg");
  args.insert(args.end(), {"--config", (dir / "cfg.txt").string(), "--beta", "0.3"});
  REQUIRE(run(args).code == 0);
  const json m = json::parse(read_text(dir / "cfg/manifest.json"));
  CHECK(m.at("config").at("alpha") == "0.5");
  CHECK(m.at("config").at("beta") == "0.3");
  CHECK(m.at("config").at("tau-lower") == "0.05");
}

TEST_CASE("eval failures exit 1", "[cli]") {
  TempDir dir("cli");
  make_small_data(dir);
  const Run missing = run({"eval", "--checkpoint", (dir / "nope.ckpt").string(), "--data",
                           (dir / "data/test.csv").string()});
  CHECK(missing.code == 1);
  CHECK_THAT(missing.err, ContainsSubstring("nope.ckpt"));

  REQUIRE(run(small_train_args(dir, "run")).code == 0);
  REQUIRE(run({"synth", "--records", "50", "--fields", "5", "--out", (dir / "other").string()})
              .code == 0);
  const Run mismatch = run({"eval", "--checkpoint", (dir / "run/model.ckpt").string(), "--data",
                            (dir / "other/data.csv").string()});
  CHECK(mismatch.code == 1);
}

TEST_CASE("untrained model ranks at chance", "[cli]") {
  TempDir dir("cli");
  REQUIRE(run({"synth", "--records", "10000", "--ctr-rate", "0.5", "--cvr-rate", "0.5",
               "--seed", "5", "--out", (dir / "d").string()})
              .code == 0);
  // A vanishing learning rate leaves the seeded initialization in the checkpoint.
  CHECK(run({"train", "--data", (dir / "d/data.csv").string(), "--out", (dir / "r0").string(),
             "--lr", "0"})
            .code == 2);
  const Run init = run({"train", "--data", (dir / "d/data.csv").string(), "--out",
                        (dir / "r").string(), "--lr", "1e-300", "--epochs", "1",
                        "--alignment-mode", "none", "--seed", "5"});
  REQUIRE(init.code == 0);
  const Run e = run({"eval", "--checkpoint", (dir / "r/model.ckpt").string(), "--data",
                     (dir / "d/data.csv").string()});
  REQUIRE(e.code == 0);
  const json j = json::parse(e.out);
  CHECK(std::abs(j.at("auc_ctr").get<double>() - 0.5) < 0.05);
  CHECK(std::abs(j.at("auc_cvr").get<double>() - 0.5) < 0.05);
}

TEST_CASE("gradcheck exit codes", "[cli]") {
  const Run ok = run({"gradcheck"});
  CHECK(ok.code == 0);
  const json j = json::parse(ok.out);
  CHECK(j.at("runs").size() == 16);
  // Every run lists each group once, omega included.
  for (const auto& r : j.at("runs")) {
    std::set<std::string> seen;
    bool omega = false;
    for (const auto& g : r.at("groups")) {
      CHECK(seen.insert(g.at("group").get<std::string>()).second);
      omega |= g.at("group").get<std::string>().rfind("omega", 0) == 0;
    }
    CHECK(omega);
  }
  CHECK(run({"gradcheck", "--break-backprop"}).code == 1);
  CHECK(run({"gradcheck", "--backbone", "nope"}).code == 2);
}

TEST_CASE("usage errors exit 2", "[cli]") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}
