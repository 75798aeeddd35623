#pragma once

#include <vector>

#include "condbisim/cmdp.hpp"
#include "condbisim/mdp.hpp"
#include "condbisim/metric.hpp"
#include "condbisim/rng.hpp"

namespace condbisim::testing {

// Two states, one action, both absorbing; rewards 1 and 0. The metric
// fixed point d(0,1) solves d = (1-c) + c d, i.e. d = 1 for every c < 1.
inline FiniteMDP two_state_selfloop(double gamma = 0.9) {
  FiniteMDP m;
  m.n_states = 2;
  m.n_actions = 1;
  m.transition = {1.0, 0.0, 0.0, 1.0};
  m.reward = {1.0, 0.0};
  m.initial_dist = {0.5, 0.5};
  m.discount = gamma;
  m.r_max = 1.0;
  m.validate();
  return m;
}

inline FiniteMDP random_mdp(SplitRng& rng, int n, int a, double gamma) {
  FiniteMDP m;
  m.n_states = n;
  m.n_actions = a;
  m.discount = gamma;
  m.r_max = 1.0;
  for (int s = 0; s < n; ++s) {
    for (int u = 0; u < a; ++u) {
      const std::vector<double> row = rng.simplex(n);
      m.transition.insert(m.transition.end(), row.begin(), row.end());
      m.reward.push_back(rng.uniform01());
    }
  }
  m.initial_dist = rng.simplex(n);
  m.validate();
  return m;
}

// Hand-built contextual MDP: one-hot core observations permuted per context,
// so block structure holds by construction. No noise dims.
inline ContextualMDP hand_cmdp(SplitRng& rng, int n, int a, int k, double gamma = 0.9) {
  ContextualMDP c;
  c.base = random_mdp(rng, n, a, gamma);
  for (int i = 0; i < k; ++i) c.contexts.values.push_back({0.25 * (i + 1)});
  c.contexts.dist.assign(k, 1.0 / k);
  c.obs_dim = n;
  c.obs_map.assign(static_cast<std::size_t>(k) * n * n, 0.0);
  for (int i = 0; i < k; ++i) {
    // Distinct per-context spike heights keep the maps jointly injective.
    const std::vector<int> perm = rng.permutation(n);
    for (int s = 0; s < n; ++s)
      c.obs_map[(static_cast<std::size_t>(i) * n + s) * n + perm[s]] =
          0.3 + 0.7 * (i + 1.0) / k;
  }
  c.kind = "hand";
  c.validate();
  return c;
}

inline PseudoMetric random_symmetric(SplitRng& rng, int n, double scale = 1.0) {
  PseudoMetric d = PseudoMetric::zero(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double v = scale * rng.uniform01();
      d.at(i, j) = v;
      d.at(j, i) = v;
    }
  return d;
}

}  // namespace condbisim::testing
