#include <cmath>
#include <vector>

#include "condbisim/aggregate.hpp"
#include "condbisim/cmdp.hpp"
#include "condbisim/errors.hpp"
#include "condbisim/rng.hpp"
#include "condbisim/solver.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace condbisim;
using condbisim::testing::hand_cmdp;

namespace {

// Four states on an embedding line, one context, one action.
struct LineFixture {
  ContextualMDP cmdp;
  Embedding phi;
  FiniteMDP super;
  JointIndex joint;

  static LineFixture make(const std::vector<double>& points) {
    SplitRng rng(90);
    LineFixture f{hand_cmdp(rng, static_cast<int>(points.size()), 1, 1), Embedding(), {}, {}};
    EmbeddingConfig ecfg;
    ecfg.arch = "table";
    ecfg.out_dim = 1;
    f.phi = Embedding::make(f.cmdp, ecfg, rng);
    f.phi.params() = points;
    auto [s, j] = build_super_mdp(f.cmdp);
    f.super = std::move(s);
    f.joint = std::move(j);
    return f;
  }
};

}  // namespace

TEST_CASE("epsilon_aggregate: greedy covering order and radius") {
  LineFixture f = LineFixture::make({0.0, 0.1, 0.9, 1.0});
  const auto y = joint_embeddings(f.cmdp, f.phi, f.joint);
  REQUIRE(y.size() == 4);
  for (int h = 0; h < 4; ++h) CHECK(y[h][0] == f.phi.params()[h]);

  const AggregatedMDP agg = epsilon_aggregate(f.super, f.joint, y, 0.15);
  CHECK(agg.assignment == std::vector<int>{0, 0, 1, 1});
  REQUIRE(agg.clusters.size() == 2);
  CHECK(agg.clusters[0] == std::vector<int>{0, 1});
  CHECK(agg.clusters[1] == std::vector<int>{2, 3});
  CHECK(agg.centers[0][0] == 0.0);  // seed embeddings, not means
  CHECK(agg.centers[1][0] == 0.9);

  // Point exactly on the boundary joins: |0.15 - 0.0| <= 0.15.
  const AggregatedMDP edge =
      epsilon_aggregate(f.super, f.joint, {{0.0}, {0.15}, {0.5}, {1.0}}, 0.15);
  CHECK(edge.assignment[1] == 0);

  // Radius zero keeps distinct points apart but merges exact duplicates.
  const AggregatedMDP zero =
      epsilon_aggregate(f.super, f.joint, {{0.0}, {0.0}, {0.5}, {1.0}}, 0.0);
  CHECK(zero.assignment == std::vector<int>{0, 0, 1, 2});

  // Everything within one huge ball.
  const AggregatedMDP one = epsilon_aggregate(f.super, f.joint, y, 10.0);
  CHECK(one.clusters.size() == 1);
  CHECK(one.mdp_hat.n_states == 1);

  CHECK_THROWS_AS(epsilon_aggregate(f.super, f.joint, y, -0.1), const ParamRange&);
  CHECK_THROWS_AS(epsilon_aggregate(f.super, f.joint, {{0.0}, {1.0}}, 0.1),
                  const ShapeMismatch&);
}

TEST_CASE("epsilon_aggregate: hand-checked cluster tables") {
  // Explicit 4-state, 1-action super-MDP via a single-context environment.
  SplitRng rng(91);
  ContextualMDP c = hand_cmdp(rng, 4, 1, 1);
  c.base.reward = {0.1, 0.3, 0.5, 0.7};
  c.base.transition = {
      0.5, 0.5, 0.0, 0.0,   // 0 -> {0,1}
      0.0, 0.0, 1.0, 0.0,   // 1 -> 2
      0.0, 0.0, 0.0, 1.0,   // 2 -> 3
      0.25, 0.25, 0.25, 0.25,
  };
  c.base.initial_dist = {0.4, 0.1, 0.3, 0.2};
  c.validate();
  auto [super, joint] = build_super_mdp(c);

  const std::vector<std::vector<double>> y = {{0.0}, {0.05}, {1.0}, {1.05}};
  const AggregatedMDP agg = epsilon_aggregate(super, joint, y, 0.1);
  REQUIRE(agg.clusters.size() == 2);
  const FiniteMDP& hat = agg.mdp_hat;
  // Rewards: mean of members.
  CHECK(hat.r(0, 0) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(hat.r(1, 0) == doctest::Approx(0.6).epsilon(1e-15));
  // Transitions: member rows aggregated over clusters, then averaged.
  // h0 -> {0,1} mass 1.0 on cluster 0; h1 -> state 2, cluster 1.
  CHECK(hat.p(0, 0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(hat.p(0, 0, 1) == doctest::Approx(0.5).epsilon(1e-15));
  // h2 -> state 3 (cluster 1); h3 -> quarter masses.
  CHECK(hat.p(1, 0, 0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(hat.p(1, 0, 1) == doctest::Approx(0.75).epsilon(1e-15));
  // Initial mass: summed per cluster.
  CHECK(hat.initial_dist[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(hat.initial_dist[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(hat.discount == super.discount);
  CHECK_NOTHROW(hat.validate());
}

TEST_CASE("epsilon_aggregate: merging exact duplicates is lossless") {
  // States 0 and 1 are bisimilar: same rewards, identical class dynamics.
  SplitRng rng(92);
  ContextualMDP c = hand_cmdp(rng, 3, 2, 2, 0.9);
  c.base.reward = {0.6, 0.1, 0.6, 0.1, 0.9, 0.5};  // [s][a], states 0/1 equal
  c.base.transition = {
      0.3, 0.3, 0.4,  0.1, 0.1, 0.8,  // state 0, actions 0/1
      0.3, 0.3, 0.4,  0.1, 0.1, 0.8,  // state 1 copies state 0
      0.0, 0.0, 1.0,  0.5, 0.5, 0.0,  // state 2
  };
  c.base.initial_dist = {0.25, 0.25, 0.5};
  c.validate();
  auto [super, joint] = build_super_mdp(c);

  // Equal embeddings for the duplicated states within each context.
  std::vector<std::vector<double>> y(joint.entries.size());
  for (int h = 0; h < joint.size(); ++h) {
    const int s = joint.state_of(h) == 1 ? 0 : joint.state_of(h);
    y[h] = {static_cast<double>(s), 2.0 * joint.ctx_of(h)};
  }
  const AggregatedMDP agg = epsilon_aggregate(super, joint, y, 0.0);
  CHECK(agg.clusters.size() == 4);  // two merged pairs + two singletons

  // The quotient is an exact homomorphism, so optimal values are preserved.
  std::vector<std::vector<int>> acts(super.n_states, std::vector<int>{0, 1});
  CHECK(verify_homomorphism(super, agg.mdp_hat, agg.assignment, acts, 1e-12).holds);
  const ValueIteration vi = value_iteration(super, 1e-12);
  const ValueIteration vi_hat = value_iteration(agg.mdp_hat, 1e-12);
  for (int h = 0; h < super.n_states; ++h)
    CHECK(std::abs(vi.v[h] - vi_hat.v[agg.assignment[h]]) <= 1e-9);
}
