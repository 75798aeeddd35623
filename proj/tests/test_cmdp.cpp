#include <cmath>
#include <set>
#include <vector>

#include "condbisim/cmdp.hpp"
#include "condbisim/env_gen.hpp"
#include "condbisim/errors.hpp"
#include "condbisim/rng.hpp"
#include "condbisim/solver.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace condbisim;
using condbisim::testing::hand_cmdp;
using condbisim::testing::random_mdp;

TEST_CASE("ContextSpace: Euclidean distances and validation") {
  ContextSpace cs;
  cs.values = {{0.0, 0.0}, {3.0, 4.0}};
  cs.dist = {0.5, 0.5};
  CHECK(cs.distance(0, 1) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(cs.distance(0, 0) == 0.0);
  const std::vector<double> u = {1.0}, w = {3.5};
  CHECK(ContextSpace::distance(u, w) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK_NOTHROW(cs.validate());
  cs.dist = {0.7, 0.7};
  CHECK_THROWS_AS(cs.validate(), const StochasticityError&);
  cs.dist = {0.5, 0.5};
  cs.values[1] = {1.0};  // ragged dims
  CHECK_THROWS_AS(cs.validate(), const ShapeMismatch&);
}

TEST_CASE("block structure: hand environment holds, planted collision caught") {
  SplitRng rng(50);
  ContextualMDP c = hand_cmdp(rng, 4, 2, 3);
  CHECK(check_block_structure(c).holds);

  // Copy state 2's context-1 observation onto state 0 in context 0.
  ContextualMDP broken = c;
  for (int d = 0; d < c.obs_dim; ++d)
    broken.obs_map[static_cast<std::size_t>(0) * c.n_states() * c.obs_dim + 0 * c.obs_dim + d] =
        c.core_obs(2, 1)[d];
  const BlockCheck bc = check_block_structure(broken);
  CHECK_FALSE(bc.holds);
  // Witness names the colliding pair (order-insensitive).
  const std::set<std::pair<int, int>> got = {{bc.state_a, bc.ctx_a}, {bc.state_b, bc.ctx_b}};
  const std::set<std::pair<int, int>> want = {{0, 0}, {2, 1}};
  CHECK(got == want);
  CHECK_THROWS_AS(build_super_mdp(broken), const BlockStructureError&);
}

TEST_CASE("build_super_mdp: block-diagonal tables and mixed initial mass") {
  SplitRng rng(51);
  const ContextualMDP c = hand_cmdp(rng, 3, 2, 2, 0.85);
  const auto [super, joint] = build_super_mdp(c);
  super.validate();
  REQUIRE(super.n_states == 6);
  CHECK(super.discount == c.base.discount);
  for (int h = 0; h < joint.size(); ++h) {
    CHECK(joint.index(joint.state_of(h), joint.ctx_of(h)) == h);
    for (int a = 0; a < super.n_actions; ++a) {
      CHECK(super.r(h, a) == c.base.r(joint.state_of(h), a));
      for (int g = 0; g < super.n_states; ++g) {
        const double mass = super.p(h, a, g);
        if (joint.ctx_of(g) != joint.ctx_of(h))
          CHECK(mass == 0.0);
        else
          CHECK(mass == c.base.p(joint.state_of(h), a, joint.state_of(g)));
      }
    }
    CHECK(super.initial_dist[h] ==
          doctest::Approx(c.contexts.dist[joint.ctx_of(h)] *
                          c.base.initial_dist[joint.state_of(h)])
              .epsilon(1e-15));
  }
}

TEST_CASE("extract_block: reproduces the base tables exactly") {
  SplitRng rng(52);
  const ContextualMDP c = hand_cmdp(rng, 4, 2, 3);
  const auto [super, joint] = build_super_mdp(c);
  for (int ctx = 0; ctx < c.n_contexts(); ++ctx) {
    const FiniteMDP block = extract_block(super, joint, ctx, c.base.initial_dist);
    CHECK(block.n_states == c.base.n_states);
    CHECK(block.transition == c.base.transition);
    CHECK(block.reward == c.base.reward);
    CHECK(block.initial_dist == c.base.initial_dist);
    CHECK(block.discount == c.base.discount);
  }
}

TEST_CASE("super-MDP: optimal values restrict to the base values") {
  SplitRng rng(53);
  for (int trial = 0; trial < 10; ++trial) {
    const ContextualMDP c = hand_cmdp(rng, 2 + rng.uniform_int(4), 1 + rng.uniform_int(3),
                                      1 + rng.uniform_int(3), 0.9);
    const auto [super, joint] = build_super_mdp(c);
    const ValueIteration base = value_iteration(c.base, 1e-12);
    const ValueIteration top = value_iteration(super, 1e-12);
    for (int h = 0; h < joint.size(); ++h)
      CHECK(std::abs(top.v[h] - base.v[joint.state_of(h)]) <= 1e-9);
  }
}

TEST_CASE("verify_homomorphism: identity, state merge, and broken map") {
  SplitRng rng(54);
  const FiniteMDP m = random_mdp(rng, 4, 2, 0.9);
  std::vector<std::vector<int>> id_actions(4, std::vector<int>{0, 1});
  CHECK(verify_homomorphism(m, m, {0, 1, 2, 3}, id_actions, 1e-9).holds);

  // Duplicate states 0 and 1 merge onto a 3-state quotient.
  FiniteMDP dup;
  dup.n_states = 3;
  dup.n_actions = 1;
  dup.transition = {0.0, 0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 1.0};
  dup.reward = {0.4, 0.4, 0.9};
  dup.initial_dist = {0.5, 0.5, 0.0};
  dup.discount = 0.9;
  dup.validate();
  // Quotient classes {0,1} -> 0 and {2} -> 1: each source state sends 0.5 to
  // the merged class and 0.5 to the absorbing one.
  FiniteMDP quot;
  quot.n_states = 2;
  quot.n_actions = 1;
  quot.transition = {0.5, 0.5, 0.0, 1.0};
  quot.reward = {0.4, 0.9};
  quot.initial_dist = {1.0, 0.0};
  quot.discount = 0.9;
  std::vector<std::vector<int>> acts(3, std::vector<int>{0});
  const HomomorphismReport ok = verify_homomorphism(dup, quot, {0, 0, 1}, acts, 1e-9);
  CHECK(ok.holds);
  CHECK(ok.max_reward_violation <= 1e-12);
  CHECK(ok.max_transition_violation <= 1e-12);

  // Wrong state map: violations reported with magnitudes.
  const HomomorphismReport bad = verify_homomorphism(dup, quot, {0, 1, 1}, acts, 1e-9);
  CHECK_FALSE(bad.holds);
  CHECK(std::max(bad.max_reward_violation, bad.max_transition_violation) > 0.05);

  CHECK_THROWS_AS(verify_homomorphism(dup, quot, {0, 0, 5}, acts, 1e-9),
                  const MapDomainError&);
}

TEST_CASE("observe: core rendering, value rendering, and noise dims") {
  SplitRng rng(55);
  const ContextualMDP c = hand_cmdp(rng, 3, 1, 2);
  const std::vector<double> o = c.observe_core(1, 0);
  REQUIRE(static_cast<int>(o.size()) == c.obs_dim);
  for (int d = 0; d < c.obs_dim; ++d) CHECK(o[d] == c.core_obs(1, 0)[d]);
  CHECK(observe(c, 1, 0).size() == o.size());  // no noise -> same dims
  // Declared context values resolve without a parametric rule...
  CHECK(c.observe_core_value(1, c.contexts.values[0]) == o);
  // ...but off-grid values need one.
  CHECK_THROWS_AS(c.observe_core_value(0, {0.33}), const UnknownContext&);

  const ContextualMDP g = generate_env("scrambled_grid",
                                       {{"side", 3}, {"n_contexts", 3}, {"distractor_dims", 2}}, 7);
  REQUIRE(g.noise.has_value());
  CHECK(g.total_obs_dim() == g.obs_dim + 2);
  SplitRng noise_rng(99);
  const std::vector<double> full = observe(g, 2, 1, &noise_rng);
  REQUIRE(static_cast<int>(full.size()) == g.total_obs_dim());
  for (int d = 0; d < g.obs_dim; ++d) CHECK(full[d] == g.core_obs(2, 1)[d]);
  // Rendering at the declared grid value matches the stored table.
  const std::vector<double> at_value = g.observe_core_value(2, g.contexts.values[1]);
  for (int d = 0; d < g.obs_dim; ++d)
    CHECK(at_value[d] == doctest::Approx(g.core_obs(2, 1)[d]).epsilon(1e-12));
}

TEST_CASE("NoiseChain: deterministic under a fixed seed, values on the grid") {
  const ContextualMDP g = generate_env(
      "distractor_chain", {{"n_states", 4}, {"distractor_dims", 3}}, 11);
  REQUIRE(g.noise.has_value());
  const NoiseSpec& spec = *g.noise;
  std::set<double> grid;
  for (int d = 0; d < spec.dims; ++d)
    for (int v = 0; v < spec.n_values; ++v) grid.insert(spec.value(d, v));

  auto roll = [&](std::uint64_t seed) {
    SplitRng rng(seed);
    NoiseChain chain(spec);
    chain.init(rng);
    std::vector<double> trace;
    for (int t = 0; t < 20; ++t) {
      chain.step(rng);
      chain.append_to(trace);
    }
    return trace;
  };
  const std::vector<double> a = roll(123);
  CHECK(a == roll(123));
  CHECK(a != roll(124));
  for (const double x : a) CHECK(grid.count(x) == 1);
}

TEST_CASE("generate_env: deterministic, distinct seeds, valid families") {
  for (const std::string kind : {"scrambled_grid", "distractor_chain", "random_cmdp"}) {
    const ContextualMDP a = generate_env(kind, nlohmann::json::object(), 5);
    const ContextualMDP b = generate_env(kind, nlohmann::json::object(), 5);
    const ContextualMDP c = generate_env(kind, nlohmann::json::object(), 6);
    CHECK(to_json(a).dump() == to_json(b).dump());
    CHECK(env_hash(a) == env_hash(b));
    CHECK(env_hash(a) != env_hash(c));
    CHECK_NOTHROW(a.validate());
    CHECK(check_block_structure(a).holds);
    CHECK(a.kind == kind);
  }
  CHECK_THROWS_AS(generate_env("no_such_family", nlohmann::json::object(), 1),
                  const UnknownKind&);
  CHECK_THROWS_AS(generate_env("random_cmdp", {{"bogus_knob", 3}}, 1), const ParamRange&);
}

TEST_CASE("build_cmdp: explicit-table document round trips byte-identically") {
  const ContextualMDP g = generate_env(
      "scrambled_grid", {{"side", 3}, {"n_contexts", 2}, {"distractor_dims", 1}}, 21);
  const nlohmann::json doc = to_json(g);
  const ContextualMDP back = build_cmdp(doc);
  CHECK(to_json(back).dump() == doc.dump());
  CHECK(env_hash(back) == env_hash(g));

  // Generator documents build the same environment as a direct call.
  const nlohmann::json gen = {{"kind", "random_cmdp"},
                              {"seed", 9},
                              {"params", {{"n_states", 4}, {"n_contexts", 3}}}};
  const ContextualMDP from_doc = build_cmdp(gen);
  const ContextualMDP direct =
      generate_env("random_cmdp", {{"n_states", 4}, {"n_contexts", 3}}, 9);
  CHECK(to_json(from_doc).dump() == to_json(direct).dump());
}

TEST_CASE("scrambled_grid: goal dynamics and parametric rendering") {
  const ContextualMDP g =
      generate_env("scrambled_grid", {{"side", 4}, {"n_contexts", 5}}, 13);
  CHECK(g.n_states() == 16);
  CHECK(g.n_contexts() == 5);
  CHECK(g.base.n_actions == 4);
  REQUIRE(g.rule.has_value());
  // Off-grid rendering stays injective across states.
  std::set<std::vector<double>> seen;
  for (int s = 0; s < g.n_states(); ++s) seen.insert(g.rule->render(s, 0.33));
  CHECK(static_cast<int>(seen.size()) == g.n_states());
  // The goal state absorbs and pays the goal reward under every action.
  const ValueIteration vi = value_iteration(g.base);
  double top = 0.0;
  for (const double v : vi.v) top = std::max(top, v);
  CHECK(top > 0.5);  // goal reachable
}

TEST_CASE("ObsRule: context-affine offsets move observations continuously") {
  const ContextualMDP g =
      generate_env("scrambled_grid", {{"side", 3}, {"n_contexts", 2}}, 17);
  REQUIRE(g.rule.has_value());
  const std::vector<double> lo = g.rule->render(0, 0.2);
  const std::vector<double> mid = g.rule->render(0, 0.3);
  const std::vector<double> hi = g.rule->render(0, 0.4);
  REQUIRE(lo.size() == hi.size());
  // Affine in theta wherever the blend does not switch its hot pair.
  for (std::size_t d = 0; d < lo.size(); ++d)
    CHECK(std::abs(mid[d] - 0.5 * (lo[d] + hi[d])) <= 1e-9);
}

TEST_CASE("validate: rejects inconsistent contextual tables") {
  SplitRng rng(58);
  ContextualMDP c = hand_cmdp(rng, 3, 1, 2);
  c.obs_map.pop_back();
  CHECK_THROWS_AS(c.validate(), const ShapeMismatch&);
  ContextualMDP c2 = hand_cmdp(rng, 3, 1, 2);
  c2.contexts.dist = {0.9, 0.2};
  CHECK_THROWS_AS(c2.validate(), const StochasticityError&);
}
