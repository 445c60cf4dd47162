// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <string>

#include "adaftr/datasets.hpp"
#include "adaftr/errors.hpp"
#include "temp_dir.hpp"

using namespace adaftr;
using Catch::Matchers::ContainsSubstring;

namespace {

namespace fs = std::filesystem;
using testing::TempDir;
using testing::write_text;

Schema small_schema() {
  Schema s;
  s.fields = {{"user", 10}, {"c01", 3}, {"c02", 4}};
  s.funnel = true;
  return s;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("schema text round-trips", "[datasets]") {
  const Schema s = small_schema();
  CHECK(parse_schema(format_schema(s)) == s);

  const Schema parsed = parse_schema("# comment\nuser=10\n\nc01=3 # trailing\nfunnel=false\n");
  REQUIRE(parsed.field_count() == 2);
  CHECK(parsed.fields[1] == Field{"c01", 3});
  CHECK_FALSE(parsed.funnel);
}

TEST_CASE("schema errors", "[datasets]") {
  CHECK_THROWS_AS(parse_schema("user\n"), LoadError);
  CHECK_THROWS_AS(parse_schema("funnel=maybe\n"), LoadError);
  CHECK_THROWS_AS(parse_schema("a=1\na=2\n"), LoadError);
  CHECK_THROWS_AS(parse_schema("a=0\n"), LoadError);
  Schema dup;
  dup.fields = {{"a", 1}, {"a", 2}};
  CHECK_THROWS_AS(dup.validate(), ConfigError);
}

TEST_CASE("load_csv with header only gives an empty dataset", "[datasets]") {
  TempDir dir;
  write_text(dir / "d.csv", "user_id,y_click,y_conversion,f_user,f_c01,f_c02\n");
  const Dataset d = load_csv(dir / "d.csv", small_schema());
  CHECK(d.size() == 0);
}

TEST_CASE("load_csv reads one row in schema order", "[datasets]") {
  TempDir dir;
  // Columns deliberately out of schema order.
  write_text(dir / "d.csv", "f_c02,user_id,y_conversion,f_user,y_click,f_c01\n3,7,1,7,1,2\n");
  const Dataset d = load_csv(dir / "d.csv", small_schema());
  REQUIRE(d.size() == 1);
  CHECK(d.records[0].user_id == 7);
  CHECK(d.records[0].feature_ids == std::vector<std::uint32_t>{7, 2, 3});
  CHECK(d.records[0].y_ctr == 1);
  CHECK(d.records[0].y_cvr == 1);
}

TEST_CASE("load_csv errors cite file and line", "[datasets]") {
  TempDir dir;
  const std::string header = "user_id,y_click,y_conversion,f_user,f_c01,f_c02\n";
  const fs::path p = dir / "d.csv";

  SECTION("id equal to cardinality") {
    write_text(p, header + "1,0,0,1,3,0\n");
    CHECK_THROWS_WITH(load_csv(p, small_schema()),
                      ContainsSubstring("d.csv:2") && ContainsSubstring("c01"));
  }
  SECTION("missing column") {
    write_text(p, "user_id,y_click,y_conversion,f_user,f_c01\n");
    CHECK_THROWS_WITH(load_csv(p, small_schema()), ContainsSubstring("missing column f_c02"));
  }
  SECTION("unexpected column") {
    write_text(p, "user_id,y_click,y_conversion,f_user,f_c01,f_c02,f_zz\n");
    CHECK_THROWS_AS(load_csv(p, small_schema()), LoadError);
  }
  SECTION("non-integer cell") {
    write_text(p, header + "1,0,0,1,0,0\n1,0,0,x,0,0\n");
    CHECK_THROWS_WITH(load_csv(p, small_schema()), ContainsSubstring("d.csv:3"));
  }
  SECTION("funnel violation") {
    write_text(p, header + "1,0,1,1,0,0\n");
    CHECK_THROWS_WITH(load_csv(p, small_schema()),
                      ContainsSubstring("d.csv:2") && ContainsSubstring("funnel"));
    Schema loose = small_schema();
    loose.funnel = false;
    CHECK(load_csv(p, loose).size() == 1);
  }
  SECTION("missing schema file") {
    write_text(p, header);
    CHECK_THROWS_AS(load_csv(p, dir / "nope.txt"), LoadError);
  }
}

TEST_CASE("write_csv then load_csv returns an equal dataset", "[datasets]") {
  TempDir dir;
  GenConfig g;
  g.n_records = 500;
  g.n_fields = 5;
  g.n_users = 50;
  const Dataset d = synth_generate(g, 3);
  write_csv(d, dir / "d.csv");
  write_schema(d.schema, dir / "schema.txt");
  CHECK(load_csv(dir / "d.csv", dir / "schema.txt") == d);
}

TEST_CASE("synth_generate is a pure function of the seed", "[datasets]") {
  GenConfig g;
  g.n_records = 2000;
  CHECK(synth_generate(g, 42) == synth_generate(g, 42));
  CHECK_FALSE(synth_generate(g, 42) == synth_generate(g, 43));

  TempDir dir;
  write_csv(synth_generate(g, 42), dir / "a.csv");
  write_csv(synth_generate(g, 42), dir / "b.csv");
  std::ifstream a(dir / "a.csv", std::ios::binary), b(dir / "b.csv", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), {});
  const std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
}

TEST_CASE("synth_generate rejects bad configs", "[datasets]") {
  GenConfig g;
  g.rho = 1.5;
  CHECK_THROWS_AS(synth_generate(g, 0), ConfigError);
  g = GenConfig{};
  g.ctr_rate = 0.0;
  CHECK_THROWS_AS(synth_generate(g, 0), ConfigError);
  g = GenConfig{};
  g.cvr_rate = 1.0;
  CHECK_THROWS_AS(synth_generate(g, 0), ConfigError);
}

TEST_CASE("synth latent correlation follows rho", "[datasets]") {
  GenConfig g;
  g.n_records = 100000;
  g.rho = 0.0;
  LatentLogits lat;
  const Dataset d = synth_generate(g, 7, &lat);
  REQUIRE(lat.ctr.size() == d.size());
  CHECK(std::abs(correlation(lat.ctr, lat.cvr)) < 0.05);

  g.n_records = 20000;
  g.rho = 0.8;
  synth_generate(g, 7, &lat);
  CHECK(correlation(lat.ctr, lat.cvr) > 0.5);
}

TEST_CASE("synth base rates and funnel", "[datasets]") {
  GenConfig g;
  g.n_records = 100000;
  g.ctr_rate = 0.2;
  g.cvr_rate = 0.1;
  for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
    const Dataset d = synth_generate(g, seed);
    std::size_t clicks = 0, convs = 0, violations = 0;
    for (const auto& r : d.records) {
      clicks += r.y_ctr;
      convs += r.y_cvr;
      if (r.y_cvr == 1 && r.y_ctr == 0) ++violations;
    }
    CHECK(violations == 0);
    const double ctr = static_cast<double>(clicks) / static_cast<double>(d.size());
    const double cvr = static_cast<double>(convs) / static_cast<double>(clicks);
    CHECK(std::abs(ctr - 0.2) < 0.04);
    CHECK(std::abs(cvr - 0.1) < 0.02);
    CHECK_NOTHROW(d.validate());
  }
  g.funnel = false;
  g.n_records = 20000;
  const Dataset loose = synth_generate(g, 0);
  CHECK_FALSE(loose.schema.funnel);
  CHECK(std::any_of(loose.records.begin(), loose.records.end(),
                    [](const ImpressionRecord& r) { return r.y_cvr == 1 && r.y_ctr == 0; }));
}

TEST_CASE("batching sizes and order", "[datasets]") {
  GenConfig g;
  g.n_records = 10;
  const Dataset d = synth_generate(g, 0);

  const auto plain = batch_iter(d, 4, 0, false);
  REQUIRE(plain.size() == 3);
  CHECK(plain[0].size == 4);
  CHECK(plain[1].size == 4);
  CHECK(plain[2].size == 2);
  std::size_t row = 0;
  for (const Batch& b : plain)
    for (std::size_t i = 0; i < b.size; ++i, ++row) CHECK(b.user_ids[i] == d.records[row].user_id);

  CHECK_THROWS_AS(batch_iter(d, 0, 0, false), ConfigError);
  CHECK_THROWS_AS(BatchIter(d, 0, 0, 0, true), ConfigError);
}

TEST_CASE("epoch_order is a seeded permutation", "[datasets]") {
  const auto a = epoch_order(1000, 5, 0, true);
  CHECK(a == epoch_order(1000, 5, 0, true));
  CHECK(a != epoch_order(1000, 5, 1, true));
  CHECK(a != epoch_order(1000, 6, 0, true));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(1000);
  std::iota(iota.begin(), iota.end(), 0);
  CHECK(sorted == iota);
  CHECK(epoch_order(1000, 5, 0, false) == iota);
}

TEST_CASE("every record appears once per shuffled epoch", "[datasets]") {
  GenConfig g;
  g.n_records = 257;
  g.n_users = 300;
  const Dataset d = synth_generate(g, 9);
  BatchIter it(d, 16, 9, 2, true);
  CHECK(it.batch_count() == 17);
  std::vector<std::vector<std::uint32_t>> seen;
  while (auto b = it.next()) {
    for (std::size_t i = 0; i < b->size; ++i)
      seen.emplace_back(b->feature_ids.begin() + static_cast<std::ptrdiff_t>(i * b->fields),
                        b->feature_ids.begin() + static_cast<std::ptrdiff_t>((i + 1) * b->fields));
  }
  std::vector<std::vector<std::uint32_t>> all;
  for (const auto& r : d.records) all.push_back(r.feature_ids);
  std::sort(seen.begin(), seen.end());
  std::sort(all.begin(), all.end());
  CHECK(seen == all);

  const auto again = batch_iter(d, 16, 9, true, 2);
  BatchIter it2(d, 16, 9, 2, true);
  for (const Batch& b : again) {
    auto other = it2.next();
    REQUIRE(other);
    CHECK(other->feature_ids == b.feature_ids);
  }
}
