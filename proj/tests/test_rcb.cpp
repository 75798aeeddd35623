#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "condbisim/env_gen.hpp"
#include "condbisim/errors.hpp"
#include "condbisim/io.hpp"
#include "condbisim/rcb.hpp"
#include "condbisim/report.hpp"
#include "condbisim/solver.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace condbisim;
using condbisim::testing::hand_cmdp;

namespace {

Transition tagged(double reward) {
  Transition t;
  t.reward = reward;
  return t;
}

}  // namespace

TEST_CASE("ReplayBuffer: ring semantics") {
  CHECK_THROWS_AS(ReplayBuffer(0), const ParamRange&);

  ReplayBuffer buf(3);
  CHECK(buf.size() == 0);
  for (int i = 0; i < 5; ++i) buf.push(tagged(static_cast<double>(i)));
  CHECK(buf.size() == 3);
  CHECK(buf.at(0).reward == 2.0);  // oldest retained
  CHECK(buf.at(1).reward == 3.0);
  CHECK(buf.at(2).reward == 4.0);
  CHECK_THROWS_AS(buf.at(3), const IndexError&);
  CHECK_THROWS_AS(buf.at(-1), const IndexError&);

  ReplayBuffer part(8);
  part.push(tagged(7.0));
  part.push(tagged(8.0));
  CHECK(part.size() == 2);
  CHECK(part.at(0).reward == 7.0);

  SplitRng rng(300);
  CHECK_THROWS_AS(part.sample_indices(rng, 3), const LengthMismatch&);
  std::vector<int> idx = buf.sample_indices(rng, 3);
  std::sort(idx.begin(), idx.end());
  CHECK(idx == std::vector<int>{0, 1, 2});  // without replacement
  SplitRng r1(301), r2(301);
  CHECK(buf.sample_indices(r1, 2) == buf.sample_indices(r2, 2));
}

TEST_CASE("Codebook: radius reuse, growth, capacity") {
  CHECK_THROWS_AS(Codebook(0, 0.5), const ParamRange&);
  CHECK_THROWS_AS(Codebook(4, -1.0), const ParamRange&);

  Codebook cb(3, 0.5);
  CHECK_THROWS_AS(cb.encode({0.0, 0.0}), const EmptyResults&);
  CHECK(cb.encode_or_add({0.0, 0.0}) == 0);
  CHECK(cb.encode_or_add({0.2, 0.1}) == 0);  // L1 = 0.3 within the radius
  CHECK(cb.size() == 1);
  CHECK(cb.encode_or_add({1.0, 1.0}) == 1);
  CHECK(cb.encode_or_add({2.0, 2.0}) == 2);
  CHECK(cb.size() == 3);
  CHECK(cb.encode_or_add({5.0, 5.0}) == 2);  // full: nearest reused
  CHECK(cb.size() == 3);
  CHECK(cb.encode({0.9, 1.2}) == 1);
  CHECK_THROWS_AS(cb.encode({1.0, 1.0, 1.0}), const DimensionMismatch&);

  const nlohmann::json doc = cb.to_json();
  CHECK(doc.at("format") == "condbisim/codebook/1");
  const Codebook back = Codebook::from_json(doc);
  CHECK(back.centroids() == cb.centroids());
  CHECK(back.to_json() == doc);
  CHECK_THROWS_AS(Codebook::from_json(nlohmann::json{{"format", "other"}}),
                  const SchemaError&);
}

TEST_CASE("CodebookPolicy: softmax over the matched code's Q row") {
  Codebook cb(2, 0.0);
  cb.encode_or_add({0.0, 0.0});
  cb.encode_or_add({1.0, 1.0});
  const std::vector<std::vector<double>> q = {{1.0, 2.0}, {0.0, 0.0}};
  const CodebookPolicy pol(cb, q, 0.5);
  CHECK(pol.n_actions() == 2);
  CHECK(pol.temperature() == 0.5);

  const std::vector<double> p = pol.distribution({0.1, 0.1});  // code 0
  const double z = std::exp(1.0 / 0.5 - 4.0) + std::exp(2.0 / 0.5 - 4.0);
  CHECK(std::abs(p[0] - std::exp(-2.0) / z) <= 1e-15);
  CHECK(std::abs(p[1] - std::exp(0.0) / z) <= 1e-15);
  CHECK(pol.distribution({0.9, 1.1}) == std::vector<double>{0.5, 0.5});  // code 1

  CHECK_THROWS_AS(CodebookPolicy(cb, {{0.0, 0.0}}, 0.5), const ShapeMismatch&);
  CHECK_THROWS_AS(CodebookPolicy(cb, q, 0.0), const ParamRange&);
  const CodebookPolicy empty(Codebook(1, 0.0), {}, 0.5);
  CHECK_THROWS_AS(empty.n_actions(), const EmptyResults&);
}

TEST_CASE("apply_preset: each ablation zeroes only its weights") {
  const RepLossConfig ref;
  auto fresh = [&] { return ref; };

  RepLossConfig full = fresh();
  apply_preset(full, "full");
  CHECK(full.lambda_base == ref.lambda_base);
  CHECK(full.lambda_icc == ref.lambda_icc);
  CHECK(full.lambda_cc == ref.lambda_cc);

  RepLossConfig nb = fresh();
  apply_preset(nb, "no-base");
  CHECK(nb.lambda_base == 0.0);
  CHECK(nb.lambda_icc == ref.lambda_icc);
  CHECK(nb.lambda_cc == ref.lambda_cc);

  RepLossConfig ncc = fresh();
  apply_preset(ncc, "no-cc");
  CHECK(ncc.lambda_cc == 0.0);
  CHECK(ncc.lambda_icc == ref.lambda_icc);

  RepLossConfig nicc = fresh();
  apply_preset(nicc, "no-icc");
  CHECK(nicc.lambda_icc == 0.0);
  CHECK(nicc.lambda_cc == ref.lambda_cc);

  RepLossConfig none = fresh();
  apply_preset(none, "no-cc-no-icc");
  CHECK(none.lambda_cc == 0.0);
  CHECK(none.lambda_icc == 0.0);
  CHECK(none.lambda_base == ref.lambda_base);

  RepLossConfig bad = fresh();
  CHECK_THROWS_AS(apply_preset(bad, "no-such"), const ConfigError&);
}

TEST_CASE("RCBConfig: json round trip and validation") {
  RCBConfig cfg;
  cfg.total_steps = 123;
  cfg.initial_steps = 7;
  cfg.theta2_schedule = Theta2Schedule::per_episode;
  cfg.loss.target_mode = TargetMode::model_w1;
  cfg.train_contexts = {0, 2};
  cfg.arch.arch = "table";
  cfg.arch.context_blind = true;
  cfg.preset = "no-cc";

  const nlohmann::json doc = rcb_config_to_json(cfg);
  const RCBConfig back = rcb_config_from_json(doc);
  CHECK(rcb_config_to_json(back).dump() == doc.dump());
  CHECK(back.theta2_schedule == Theta2Schedule::per_episode);
  CHECK(back.loss.target_mode == TargetMode::model_w1);
  CHECK(back.train_contexts == std::vector<int>{0, 2});

  nlohmann::json badsched = doc;
  badsched["theta2_schedule"] = "sometimes";
  CHECK_THROWS_AS(rcb_config_from_json(badsched), const ConfigError&);
  nlohmann::json badgamma = doc;
  badgamma["gamma"] = 1.0;
  CHECK_THROWS_AS(rcb_config_from_json(badgamma), const ParamRange&);
  CHECK_THROWS_AS(rcb_config_from_json(nlohmann::json::array()), const SchemaError&);

  RCBConfig defaults;
  CHECK(defaults.arch.arch == "mlp");
  CHECK(defaults.total_steps == 20000);
  CHECK_NOTHROW(defaults.validate());
}

TEST_CASE("evaluate_across_contexts: exact path matches policy evaluation") {
  SplitRng rng(302);
  const ContextualMDP c = hand_cmdp(rng, 4, 3, 2, 0.9);
  EmbeddingConfig ecfg;
  ecfg.arch = "mlp";
  ecfg.out_dim = 2;
  ecfg.hidden = {8, 8};
  const Embedding phi = Embedding::make(c, ecfg, rng);

  LinearSoftmaxPolicy pol(2, 3, 1.0, rng);
  pol.params().assign(pol.params().size(), 0.0);  // uniform over actions

  const EvalPoint ep = evaluate_across_contexts(c, phi, pol, c.contexts.values,
                                                EvalOptions{4, 50}, 9);
  CHECK(ep.exact);
  const double j_uniform =
      policy_evaluation(c.base, PolicyTable::uniform(4, 3)).j;
  REQUIRE(ep.per_context.size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(ep.per_context[i] - j_uniform) <= 1e-12);
    CHECK(ep.stderr_per_context[i] == 0.0);
  }
  CHECK(std::abs(ep.mean - j_uniform) <= 1e-12);

  CHECK_THROWS_AS(evaluate_across_contexts(c, phi, pol, {}, EvalOptions{4, 50}, 9),
                  const EmptyResults&);
  CHECK_THROWS_AS(evaluate_across_contexts(c, phi, pol, c.contexts.values,
                                           EvalOptions{4, 0}, 9),
                  const ParamRange&);
}

TEST_CASE("evaluate_across_contexts: monte-carlo path is seeded and unbiased") {
  const ContextualMDP env = generate_env(
      "distractor_chain",
      {{"n_states", 4}, {"n_contexts", 2}, {"distractor_dims", 1}, {"discount", 0.9}}, 17);
  REQUIRE(env.noise.has_value());

  SplitRng rng(303);
  EmbeddingConfig ecfg;
  ecfg.arch = "mlp";
  ecfg.out_dim = 2;
  ecfg.hidden = {8, 8};
  const Embedding phi = Embedding::make(env, ecfg, rng);
  LinearSoftmaxPolicy pol(2, env.base.n_actions, 1.0, rng);
  pol.params().assign(pol.params().size(), 0.0);

  const EvalOptions opts{64, 160};
  const EvalPoint a = evaluate_across_contexts(env, phi, pol, env.contexts.values, opts, 5);
  const EvalPoint b = evaluate_across_contexts(env, phi, pol, env.contexts.values, opts, 5);
  CHECK_FALSE(a.exact);
  CHECK(a.per_context == b.per_context);  // same seed, same draws
  CHECK(a.stderr_per_context == b.stderr_per_context);
  const EvalPoint d = evaluate_across_contexts(env, phi, pol, env.contexts.values, opts, 6);
  CHECK(a.per_context != d.per_context);

  const double j_uniform =
      policy_evaluation(env.base, PolicyTable::uniform(env.base.n_states, env.base.n_actions)).j;
  for (std::size_t i = 0; i < a.per_context.size(); ++i) {
    CHECK(a.stderr_per_context[i] > 0.0);
    CHECK(std::abs(a.per_context[i] - j_uniform) <=
          std::max(6.0 * a.stderr_per_context[i], 0.05));
  }
}

namespace {

RCBConfig small_rcb_config() {
  RCBConfig cfg;
  cfg.total_steps = 120;
  cfg.initial_steps = 40;
  cfg.batch_size = 16;
  cfg.buffer_capacity = 200;
  cfg.episode_len = 10;
  cfg.eval_period = 40;
  cfg.gamma = 0.9;
  cfg.arch.arch = "table";
  cfg.arch.out_dim = 2;
  cfg.codebook_capacity = 64;
  cfg.codebook_radius = 0.25;
  cfg.loss.target_mode = TargetMode::oracle_metric;
  cfg.metric.tol = 1e-6;
  return cfg;
}

}  // namespace

TEST_CASE("run_rcb: deterministic given seed, manifest is self-consistent") {
  SplitRng rng(304);
  const ContextualMDP env = hand_cmdp(rng, 3, 2, 2, 0.9);
  const RCBConfig cfg = small_rcb_config();

  const RCBResult a = run_rcb(env, cfg, 21);
  const RCBResult b = run_rcb(env, cfg, 21);
  CHECK(a.stream == b.stream);
  CHECK(a.phi.params() == b.phi.params());
  CHECK(curve_csv(a.curve, 2) == curve_csv(b.curve, 2));
  CHECK(a.manifest.dump() == b.manifest.dump());

  const RCBResult c = run_rcb(env, cfg, 22);
  CHECK(a.stream != c.stream);

  CHECK(a.manifest.at("schema") == "condbisim/run/1");
  CHECK(a.manifest.at("preset") == "full");
  CHECK(a.manifest.at("steps") == 120);
  CHECK(a.manifest.at("episodes") == 12);
  CHECK(a.manifest.at("train_steps") == 80);  // updates run past the prefix
  CHECK(a.manifest.at("env_hash") == env_hash(env));
  CHECK(a.manifest.at("config_hash") ==
        content_hash(a.manifest.at("config").dump()));
  CHECK(static_cast<int>(a.stream.size()) == 120);

  REQUIRE(a.curve.size() == 3);  // eval_period 40 over 120 steps
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    const CurveRow& row = a.curve[i];
    CHECK(row.step == static_cast<int>(40 * (i + 1)));
    CHECK(row.eval.exact);
    CHECK(row.eval.per_context.size() == 2);
    CHECK(row.codebook_size > 0);
    CHECK(row.delta >= 0.0);
    CHECK(std::isfinite(row.loss.total));
  }
}

TEST_CASE("run_rcb: presets share the exploration prefix and zero their terms") {
  SplitRng rng(305);
  const ContextualMDP env = hand_cmdp(rng, 3, 2, 2, 0.9);
  RCBConfig cfg = small_rcb_config();

  const RCBResult full = run_rcb(env, cfg, 33);
  cfg.preset = "no-cc-no-icc";
  const RCBResult abl = run_rcb(env, cfg, 33);

  // Updates start only after the prefix, so the first initial_steps + 1 env
  // transitions coincide across presets.
  REQUIRE(abl.stream.size() >= 41);
  CHECK(std::equal(full.stream.begin(), full.stream.begin() + 41, abl.stream.begin()));

  CHECK(full.curve.back().loss.cc > 0.0);
  CHECK(full.curve.back().loss.icc > 0.0);
  CHECK(abl.curve.back().loss.cc == 0.0);
  CHECK(abl.curve.back().loss.icc == 0.0);
  CHECK(abl.manifest.at("preset") == "no-cc-no-icc");
}

TEST_CASE("run_rcb: zero steps, curve csv shape") {
  SplitRng rng(306);
  const ContextualMDP env = hand_cmdp(rng, 3, 2, 2, 0.9);
  RCBConfig cfg = small_rcb_config();
  cfg.total_steps = 0;
  const RCBResult r = run_rcb(env, cfg, 1);
  CHECK(r.curve.empty());
  CHECK(r.stream.empty());
  CHECK(r.manifest.at("steps") == 0);
  CHECK(curve_csv(r.curve, 2) == "step,episodes,train_return,eval_mean,eval_exact,"
                                 "eval_j_0,eval_se_0,eval_j_1,eval_se_1,loss_total,"
                                 "loss_base,loss_icc,loss_cc,delta,icc_residual,"
                                 "codebook_size\n");

  cfg.total_steps = 120;
  const RCBResult full = run_rcb(env, cfg, 2);
  const CsvTable t = parse_csv(curve_csv(full.curve, 2));
  CHECK(t.header.size() == 16);
  CHECK(t.column("eval_mean") == 3);
  CHECK(t.column("codebook_size") == 15);
  REQUIRE(t.rows.size() == full.curve.size());
  for (const auto& row : t.rows) CHECK(row[4] == "1");  // exact eval
  CHECK_THROWS_AS(curve_csv(full.curve, 3), const LengthMismatch&);

  cfg.train_contexts = {5};
  CHECK_THROWS_AS(run_rcb(env, cfg, 3), const IndexError&);
}
