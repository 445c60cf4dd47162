// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "adaftr/errors.hpp"
#include "adaftr/metrics.hpp"
#include "adaftr/model.hpp"
#include "adaftr/trainer.hpp"
#include "oracles.hpp"

using namespace adaftr;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

struct Sample {
  std::vector<double> s;
  std::vector<double> y;
};

// Scores drawn from a small grid so ties are common.
Sample random_sample(std::size_t n, std::mt19937_64& rng, int levels = 7) {
  Sample out;
  std::uniform_int_distribution<int> level(0, levels - 1);
  out.s.resize(n);
  out.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.s[i] = level(rng) / static_cast<double>(levels);
    out.y[i] = static_cast<double>(i % 2 == 0 ? 1 : (rng() & 1U));
  }
  out.y[1] = 0.0;
  return out;
}

Dataset small_dataset(std::size_t n, std::uint64_t seed) {
  GenConfig g;
  g.n_records = n;
  g.n_fields = 4;
  g.n_users = 20;
  g.field_cardinality = 10;
  g.ctr_rate = 0.3;
  g.cvr_rate = 0.3;
  return synth_generate(g, seed);
}

TrainConfig config_for(const Dataset& d) {
  TrainConfig tc;
  tc.model.fields = d.schema.fields;
  tc.model.embed_dim = 4;
  tc.model.expert_count = 2;
  tc.model.shared_dim = 8;
  tc.model.tower_hidden = {8, 4};
  tc.model.relatedness_hidden = {4};
  tc.batch_size = 64;
  return tc;
}

}  // namespace

TEST_CASE("auc examples", "[metrics]") {
  CHECK(auc(std::vector<double>{0.9, 0.1}, std::vector<double>{1, 0}) == 1.0);
  CHECK(auc(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 0}) == 0.5);
  CHECK(auc(std::vector<double>{0.1, 0.9}, std::vector<double>{1, 0}) == 0.0);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.9}, std::vector<double>{1, 1}), MetricError);
  CHECK_THROWS_AS(auc(std::vector<double>{}, std::vector<double>{}), MetricError);
}

TEST_CASE("auc matches pairwise counting", "[metrics]") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Sample smp = random_sample(2 + static_cast<std::size_t>(trial) * 2, rng);
    CHECK_THAT(auc(smp.s, smp.y), WithinAbs(oracle::pairwise_auc(smp.s, smp.y), 1e-12));
  }
}

TEST_CASE("auc rank invariances", "[metrics]") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(150), y(150), t(150), neg(150);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = nd(rng);
      y[i] = (i % 3 == 0) ? 1.0 : 0.0;
      t[i] = std::exp(3.0 * s[i]) + 5.0;
      neg[i] = -s[i];
    }
    CHECK(auc(s, y) == auc(t, y));
    CHECK_THAT(auc(s, y) + auc(neg, y), WithinAbs(1.0, 1e-12));
  }
}

TEST_CASE("gauc examples", "[metrics]") {
  const std::vector<double> s{0.2, 0.7, 0.4, 0.1};
  const std::vector<double> y{0, 1, 1, 0};
  const std::vector<std::uint64_t> one_user(4, 9);
  const GaucResult single = gauc(s, y, one_user);
  CHECK(single.value == auc(s, y));
  CHECK(single.evaluated_users == 1);

  // User 1 ranks perfectly, user 2 ties.
  const std::vector<double> s2{0.9, 0.1, 0.5, 0.5, 0.3};
  const std::vector<double> y2{1, 0, 1, 0, 1};
  const std::vector<std::uint64_t> u2{1, 1, 2, 2, 3};
  const GaucResult two = gauc(s2, y2, u2);
  CHECK_THAT(two.value, WithinAbs(0.75, 1e-15));
  CHECK(two.evaluated_users == 2);
  CHECK(two.skipped_users == 1);

  const std::vector<std::uint64_t> u3{1, 2, 3, 4, 5};
  CHECK_THROWS_AS(gauc(s2, y2, u3), MetricError);
}

TEST_CASE("gauc is the mean of per-user pairwise auc", "[metrics]") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const Sample smp = random_sample(120, rng);
    std::vector<std::uint64_t> users(smp.s.size());
    for (auto& u : users) u = rng() % 8;
    std::map<std::uint64_t, Sample> groups;
    for (std::size_t i = 0; i < users.size(); ++i) {
      groups[users[i]].s.push_back(smp.s[i]);
      groups[users[i]].y.push_back(smp.y[i]);
    }
    double sum = 0.0;
    std::size_t used = 0, skipped = 0;
    for (const auto& [u, g] : groups) {
      const bool mixed = std::count(g.y.begin(), g.y.end(), 1.0) % static_cast<long>(g.y.size()) != 0;
      if (!mixed) {
        ++skipped;
        continue;
      }
      sum += oracle::pairwise_auc(g.s, g.y);
      ++used;
    }
    const GaucResult r = gauc(smp.s, smp.y, users);
    CHECK_THAT(r.value, WithinAbs(sum / static_cast<double>(used), 1e-12));
    CHECK(r.evaluated_users == used);
    CHECK(r.skipped_users == skipped);
    CHECK(r.evaluated_users + r.skipped_users == groups.size());
  }
}

TEST_CASE("evaluate on a zero model ties everything", "[metrics]") {
  const Dataset d = small_dataset(300, 1);
  TrainConfig tc = config_for(d);
  tc.model.init = InitScheme::zeros;
  const MetricsReport r = evaluate(init_params(tc.model), d, tc);
  REQUIRE(r.ctr.auc);
  REQUIRE(r.cvr.auc);
  CHECK(*r.ctr.auc == 0.5);
  CHECK(*r.cvr.auc == 0.5);
  CHECK(r.records == 300);
  CHECK(r.ctr.evaluated_users + r.ctr.skipped_users == r.total_users);
}

TEST_CASE("evaluate mirrors direct metric calls", "[metrics]") {
  const Dataset d = small_dataset(300, 2);
  const TrainConfig tc = config_for(d);
  const ModelParams p = init_params(tc.model);
  const MetricsReport r = evaluate(p, d, tc);

  std::vector<double> pc, pv, yc, yv;
  std::vector<std::uint64_t> users;
  for (std::size_t begin = 0; begin < d.size(); begin += tc.batch_size) {
    const Batch b = make_batch(d, begin, std::min(d.size(), begin + tc.batch_size));
    const ForwardTrace tr = model_forward(p, b, tc);
    pc.insert(pc.end(), tr.prob(Task::ctr).begin(), tr.prob(Task::ctr).end());
    pv.insert(pv.end(), tr.prob(Task::cvr).begin(), tr.prob(Task::cvr).end());
    yc.insert(yc.end(), b.y_ctr.begin(), b.y_ctr.end());
    yv.insert(yv.end(), b.y_cvr.begin(), b.y_cvr.end());
    users.insert(users.end(), b.user_ids.begin(), b.user_ids.end());
  }
  CHECK(*r.ctr.auc == auc(pc, yc));
  CHECK(*r.cvr.auc == auc(pv, yv));
  CHECK(*r.ctr.gauc == gauc(pc, yc, users).value);
  CHECK(*r.cvr.gauc == gauc(pv, yv, users).value);
  CHECK(r.cvr.skipped_users == gauc(pv, yv, users).skipped_users);
  for (double a : {*r.ctr.auc, *r.cvr.auc, *r.ctr.gauc, *r.cvr.gauc}) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }

  const MetricsReport again = evaluate(p, d, tc);
  CHECK(to_json(again) == to_json(r));
}

TEST_CASE("an undefined task metric does not abort the other", "[metrics]") {
  Dataset d = small_dataset(200, 3);
  for (auto& rec : d.records) rec.y_cvr = 0;
  const TrainConfig tc = config_for(d);
  const MetricsReport r = evaluate(init_params(tc.model), d, tc);
  CHECK(r.ctr.auc.has_value());
  CHECK_FALSE(r.cvr.auc.has_value());
  CHECK_FALSE(r.cvr.error.empty());
  const std::string json = to_json(r);
  CHECK_THAT(json, ContainsSubstring("\"auc_cvr\":null"));
}

TEST_CASE("cvr on clicks only restricts the population", "[metrics]") {
  const Dataset d = small_dataset(400, 4);
  TrainConfig tc = config_for(d);
  tc.cvr_on_clicks_only = true;
  const MetricsReport r = evaluate(init_params(tc.model), d, tc);
  std::size_t clicks = 0;
  for (const auto& rec : d.records) clicks += rec.y_ctr;
  CHECK(r.cvr.records == clicks);
  CHECK(r.ctr.records == d.size());
}

TEST_CASE("report json scales auc in percent mode", "[metrics]") {
  const Dataset d = small_dataset(200, 5);
  const TrainConfig tc = config_for(d);
  const MetricsReport r = evaluate(init_params(tc.model), d, tc);
  const std::string plain = to_json(r);
  const std::string pct = to_json(r, true);
  for (const char* key : {"auc_ctr", "gauc_ctr", "auc_cvr", "gauc_cvr", "skipped_users_ctr",
                          "skipped_users_cvr", "loss_total"})
    CHECK_THAT(plain, ContainsSubstring(std::string("\"") + key + "\""));
  CHECK(plain != pct);
}
