// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <sstream>
#include <string>

#include "adaftr/checkpoint.hpp"
#include "adaftr/errors.hpp"
#include "adaftr/trainer.hpp"
#include "temp_dir.hpp"

using namespace adaftr;
using Catch::Matchers::ContainsSubstring;
using testing::TempDir;

namespace {

Dataset synth_for(std::size_t n, std::uint64_t seed) {
  GenConfig g;
  g.n_records = n;
  g.n_fields = 4;
  g.n_users = 30;
  g.field_cardinality = 12;
  g.ctr_rate = 0.3;
  g.cvr_rate = 0.3;
  return synth_generate(g, seed);
}

TrainConfig small_train(const Dataset& d) {
  TrainConfig tc;
  tc.model.fields = d.schema.fields;
  tc.model.embed_dim = 4;
  tc.model.expert_count = 2;
  tc.model.shared_dim = 8;
  tc.model.tower_hidden = {8, 4};
  tc.model.relatedness_hidden = {4};
  tc.loss.lambda = 1e-4;
  tc.loss.beta = 0.1;
  tc.batch_size = 32;
  tc.learning_rate = 1e-2;
  return tc;
}

bool same_group(const ModelParams& a, const ModelParams& b, ParamGroup g) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].group != g) continue;
    if (std::memcmp(a[i].value.data(), b[i].value.data(), a[i].value.size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

bool same_grads(const Gradients& a, const Gradients& b, const ModelParams& p, ParamGroup g) {
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i].group == g && !(a[i] == b[i])) return false;
  return true;
}

void perturb_omega(ModelParams& p, double delta) {
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i].group == ParamGroup::omega)
      for (double& v : p[i].value.values()) v += delta;
}

}  // namespace

TEST_CASE("alpha zero leaves omega bit-identical", "[trainer]") {
  TrainConfig tc = micro_config(Backbone::mmoe, AlignmentMode::infonce, TemperatureMode::adaptive);
  tc.loss.alpha = 0.0;
  ModelParams p = init_training_params(tc);
  const ModelParams before = p;
  auto states = init_adam_states(p);
  for (std::uint64_t s = 0; s < 5; ++s) train_step(p, states, micro_batch(tc.model, 4, s), tc, s);
  CHECK(same_group(p, before, ParamGroup::omega));
  CHECK_FALSE(same_group(p, before, ParamGroup::theta));
}

TEST_CASE("with fixed tau theta gradients ignore omega", "[trainer]") {
  for (AlignmentMode mode : {AlignmentMode::infonce, AlignmentMode::scl, AlignmentMode::reg}) {
    const TrainConfig tc = micro_config(Backbone::mmoe, mode, TemperatureMode::fixed);
    ModelParams p = init_training_params(tc);
    const Batch b = micro_batch(tc.model, 4, 1);
    const auto neg = step_negatives(4, tc.loss, 3);
    const StepGradients g1 = compute_gradients(p, b, tc, neg);
    perturb_omega(p, 0.3);
    const StepGradients g2 = compute_gradients(p, b, tc, neg);
    CHECK(same_grads(g1.grads, g2.grads, p, ParamGroup::theta));
    CHECK_FALSE(same_grads(g1.grads, g2.grads, p, ParamGroup::omega));
  }
}

TEST_CASE("omega gradients do not depend on beta", "[trainer]") {
  for (TemperatureMode tm : {TemperatureMode::adaptive, TemperatureMode::fixed}) {
    TrainConfig tc = micro_config(Backbone::mmoe, AlignmentMode::infonce, tm);
    const ModelParams p = init_training_params(tc);
    const Batch b = micro_batch(tc.model, 4, 2);
    tc.loss.beta = 0.0;
    const StepGradients g0 = compute_gradients(p, b, tc, {});
    tc.loss.beta = 5.0;
    const StepGradients g5 = compute_gradients(p, b, tc, {});
    CHECK(same_grads(g0.grads, g5.grads, p, ParamGroup::omega));
    CHECK_FALSE(same_grads(g0.grads, g5.grads, p, ParamGroup::theta));
  }
}

TEST_CASE("beta zero matches plain two-task training on theta", "[trainer]") {
  TrainConfig tc = micro_config(Backbone::mmoe, AlignmentMode::infonce, TemperatureMode::adaptive);
  tc.loss.beta = 0.0;
  const ModelParams p = init_training_params(tc);
  const Batch b = micro_batch(tc.model, 4, 5);
  const StepGradients with = compute_gradients(p, b, tc, {});
  tc.loss.alignment_mode = AlignmentMode::none;
  const StepGradients without = compute_gradients(p, b, tc, {});
  CHECK(same_grads(with.grads, without.grads, p, ParamGroup::theta));
  CHECK(same_grads(with.grads, without.grads, p, ParamGroup::omega));
}

TEST_CASE("update order within a step does not matter", "[trainer]") {
  const TrainConfig tc = micro_config(Backbone::mmoe, AlignmentMode::scl, TemperatureMode::adaptive);
  ModelParams p = init_training_params(tc);
  auto states = init_adam_states(p);
  const Batch b = micro_batch(tc.model, 4, 7);
  const std::uint64_t seed = step_seed(1, 0);

  ModelParams manual = p;
  auto manual_states = states;
  const StepGradients g =
      compute_gradients(manual, b, tc, step_negatives(4, tc.loss, seed));
  AdamConfig adam;
  adam.lr = tc.learning_rate;
  // Omega first, then theta: the reverse of the parameter order.
  for (std::size_t i = manual.size(); i-- > 0;)
    adam_step(manual[i].value, g.grads[i], manual_states[i], adam, manual[i].name);

  train_step(p, states, b, tc, seed);
  CHECK(p == manual);
}

TEST_CASE("non-finite losses abort naming the component", "[trainer]") {
  const TrainConfig tc = micro_config(Backbone::mmoe, AlignmentMode::reg, TemperatureMode::fixed);
  ModelParams p = init_training_params(tc);
  p.at("tower.cvr.head.b")(0, 0) = std::nan("");
  auto states = init_adam_states(p);
  CHECK_THROWS_WITH(train_step(p, states, micro_batch(tc.model, 4, 0), tc, 0),
                    ContainsSubstring("cvr"));
  CHECK_THROWS_AS(train_step(p, states, micro_batch(tc.model, 4, 0), tc, 0), TrainingError);
}

TEST_CASE("linear degenerate model passes a tight gradient check", "[trainer]") {
  TrainConfig tc = micro_config(Backbone::shared_bottom, AlignmentMode::none, TemperatureMode::fixed);
  tc.model.activation = Activation::linear;
  tc.model.tower_hidden = {1};
  tc.model.relatedness_hidden = {};
  const GradCheckReport r = grad_check(tc);
  CHECK(r.max_error() < 1e-6);
}

TEST_CASE("micro models pass the gradient check", "[trainer]") {
  for (Backbone bb : {Backbone::single_dnn, Backbone::shared_bottom, Backbone::mmoe})
    for (AlignmentMode am :
         {AlignmentMode::infonce, AlignmentMode::scl, AlignmentMode::reg, AlignmentMode::none})
      for (TemperatureMode tm :
           {TemperatureMode::adaptive, TemperatureMode::fixed, TemperatureMode::learnable_scalar}) {
        const GradCheckReport r = grad_check(micro_config(bb, am, tm));
        INFO(to_string(bb) << " " << to_string(am) << " " << to_string(tm));
        CHECK(r.max_error() < 1e-4);
        bool has_omega = false;
        for (const auto& g : r.groups) has_omega |= g.group.rfind("omega", 0) == 0;
        CHECK(has_omega);
      }
  GradCheckOptions broken;
  broken.break_backprop = true;
  CHECK(grad_check(micro_config(Backbone::mmoe, AlignmentMode::infonce, TemperatureMode::adaptive),
                   broken)
            .max_error() > 1e-2);
}

TEST_CASE("fifty steps lower the task losses", "[trainer]") {
  const Dataset d = synth_for(1600, 1);
  TrainConfig tc = small_train(d);
  ModelParams p = init_training_params(tc);
  auto states = init_adam_states(p);
  LossBreakdown first, last;
  for (std::uint64_t step = 0; step < 50; ++step) {
    // Same batch each step so the comparison is not batch noise.
    const Batch b = make_batch(d, 0, 256);
    const LossBreakdown l = train_step(p, states, b, tc, step_seed(tc.seed, step));
    if (step == 0) first = l;
    last = l;
  }
  CHECK(last.ctr + last.cvr < first.ctr + first.cvr);
}

TEST_CASE("train is deterministic and writes checkpoints", "[trainer]") {
  TempDir dir("trainer");
  const Dataset d = synth_for(300, 2);
  TrainConfig tc = small_train(d);
  tc.epochs = 2;

  std::ostringstream log1, log2;
  TrainOptions o1;
  o1.checkpoint_path = dir / "a.ckpt";
  o1.log = &log1;
  o1.eval_data = &d;
  TrainOptions o2 = o1;
  o2.checkpoint_path = dir / "b.ckpt";
  o2.log = &log2;
  const TrainResult r1 = train(d, tc, o1);
  const TrainResult r2 = train(d, tc, o2);
  CHECK(r1.params == r2.params);
  CHECK(log1.str() == log2.str());
  CHECK(testing::read_text(dir / "a.ckpt") == testing::read_text(dir / "b.ckpt"));
  CHECK(std::filesystem::exists(epoch_checkpoint_path(dir / "a.ckpt", 1)));
  CHECK(epoch_checkpoint_path("x/model.ckpt", 2) == std::filesystem::path("x/model.epoch2.ckpt"));

  REQUIRE(r1.history.steps.size() == 2 * 10);
  for (std::size_t i = 1; i < r1.history.steps.size(); ++i)
    CHECK(r1.history.steps[i].step > r1.history.steps[i - 1].step);
  CHECK(r1.history.evals.size() == 2);
  CHECK_THAT(log1.str(), ContainsSubstring("\"type\":\"eval\""));
  CHECK_THAT(log1.str(), !ContainsSubstring("wall"));

  tc.epochs = 0;
  CHECK_THROWS_AS(train(d, tc), ConfigError);
}

TEST_CASE("early stopping honours patience", "[trainer]") {
  const Dataset d = synth_for(400, 3);
  TrainConfig tc = small_train(d);
  tc.epochs = 30;
  tc.learning_rate = 0.2;  // overshoots, so CVR AUC stops improving
  tc.patience = 1;
  TrainOptions o;
  o.eval_data = &d;
  const TrainResult r = train(d, tc, o);
  if (r.history.stopped_early) {
    CHECK(r.history.evals.size() < 30);
  } else {
    CHECK(r.history.evals.size() == 30);
  }
}

TEST_CASE("warm start copies theta only", "[trainer]") {
  const Dataset d = synth_for(200, 4);
  TrainConfig tc = small_train(d);
  ModelParams donor = init_training_params(tc);
  for (std::size_t i = 0; i < donor.size(); ++i)
    for (double& v : donor[i].value.values()) v += 0.25;
  tc.learning_rate = 1e-12;
  TrainOptions o;
  o.warm_start = &donor;
  const TrainResult r = train(d, tc, o);
  const ModelParams fresh = init_training_params(tc);
  const double w = r.params.at("tower.ctr.1.W")(0, 0);
  CHECK(std::abs(w - donor.at("tower.ctr.1.W")(0, 0)) < 1e-6);
  CHECK(std::abs(r.params.at("rel.1.W")(0, 0) - fresh.at("rel.1.W")(0, 0)) < 1e-6);
}

TEST_CASE("learnable temperature is a trained theta scalar", "[trainer]") {
  TrainConfig tc =
      micro_config(Backbone::mmoe, AlignmentMode::infonce, TemperatureMode::learnable_scalar);
  tc.learning_rate = 1e-2;
  ModelParams p = init_training_params(tc);
  REQUIRE(p.contains(std::string(kTemperatureParam)));
  CHECK(p[p.index(kTemperatureParam)].group == ParamGroup::theta);
  const double start = p.at(kTemperatureParam)(0, 0);
  CHECK(start == tc.loss.learnable_tau_init);
  auto states = init_adam_states(p);
  for (std::uint64_t s = 0; s < 10; ++s) train_step(p, states, micro_batch(tc.model, 4, s), tc, s);
  CHECK(p.at(kTemperatureParam)(0, 0) != start);
}

TEST_CASE("checkpoint round trip and failures", "[trainer]") {
  TempDir dir("ckpt");
  TrainConfig tc = micro_config(Backbone::mmoe, AlignmentMode::infonce, TemperatureMode::learnable_scalar);
  ModelParams p = init_training_params(tc);
  p.at("tower.ctr.1.b")(0, 1) = 0.123456789012345;
  const auto path = dir / "m.ckpt";
  save_checkpoint(p, tc.model, path);

  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.params == p);
  CHECK(ck.config == tc.model);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(ck.params[i].group == p[i].group);
  CHECK(load_checkpoint(path, tc.model).params == p);

  const std::string bytes = testing::read_text(path);
  SECTION("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    testing::write_text(path, bad);
    CHECK_THROWS_WITH(load_checkpoint(path), ContainsSubstring("m.ckpt") && ContainsSubstring("magic"));
  }
  SECTION("unknown version") {
    std::string bad = bytes;
    bad[4] = 9;
    testing::write_text(path, bad);
    CHECK_THROWS_WITH(load_checkpoint(path), ContainsSubstring("version"));
  }
  SECTION("truncated") {
    testing::write_text(path, bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_WITH(load_checkpoint(path), ContainsSubstring("truncated"));
  }
  SECTION("trailing bytes") {
    testing::write_text(path, bytes + "x");
    CHECK_THROWS_AS(load_checkpoint(path), LoadError);
  }
  SECTION("different config") {
    ModelConfig other = tc.model;
    other.tower_hidden = {8, 2};
    CHECK_THROWS_WITH(load_checkpoint(path, other), ContainsSubstring("shape inconsistency"));
  }
  SECTION("missing file") {
    CHECK_THROWS_WITH(load_checkpoint(dir / "none.ckpt"), ContainsSubstring("none.ckpt"));
  }
}
