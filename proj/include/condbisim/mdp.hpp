#pragma once

#include <vector>

#include "condbisim/errors.hpp"

namespace condbisim {

// Finite MDP with dense tables. Immutable after construction by convention:
// every operation takes it by const reference and returns fresh objects.
struct FiniteMDP {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> transition;    // [s][a][s'] flattened
  std::vector<double> reward;        // [s][a] flattened, values in [0, r_max]
  std::vector<double> initial_dist;  // [s]
  double discount = 0.99;
  double r_max = 1.0;

  double p(int s, int a, int t) const {
    return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + t];
  }
  double& p(int s, int a, int t) {
    return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + t];
  }
  double r(int s, int a) const { return reward[static_cast<std::size_t>(s) * n_actions + a]; }
  double& r(int s, int a) { return reward[static_cast<std::size_t>(s) * n_actions + a]; }

  const double* row(int s, int a) const {
    return transition.data() + (static_cast<std::size_t>(s) * n_actions + a) * n_states;
  }

  void validate(double tol = 1e-9) const;
};

// Validates a probability vector: nonnegative entries summing to one.
void validate_distribution(const std::vector<double>& dist, const char* what,
                           double tol = 1e-9);

// Stochastic policy as a dense table pi(a|s).
struct PolicyTable {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> probs;  // [s][a]

  double pi(int s, int a) const { return probs[static_cast<std::size_t>(s) * n_actions + a]; }
  double& pi(int s, int a) { return probs[static_cast<std::size_t>(s) * n_actions + a]; }

  static PolicyTable uniform(int n_states, int n_actions);
  static PolicyTable deterministic(const std::vector<int>& actions, int n_actions);

  void validate(double tol = 1e-9) const;
};

}  // namespace condbisim
