#pragma once

#include <cstdint>

#include "condbisim/aggregate.hpp"
#include "condbisim/policy.hpp"
#include "condbisim/report.hpp"

namespace condbisim {

struct GridWitness {
  int s = -1, s2 = -1, ctx_a = -1, ctx_b = -1, ctx_in = -1;
};

// Exact suprema of output/input deviation ratios over the finite evaluation
// grids. Pairs with zero input deviation are excluded.
struct LipschitzReport {
  double l_f_theta = 0.0;    // observation map w.r.t. the context, per state
  double l_phi_z = 0.0;      // encoder w.r.t. its observation input
  double l_phi_theta = 0.0;  // encoder w.r.t. its context input
  double l_pi_y = 0.0;       // policy (TV) w.r.t. the embedding
  double composed_direct = 0.0;   // TV ratio of pi(phi(f_theta(s), .)) in theta
  double composed_product = 0.0;  // l_f_theta * l_phi_z * l_pi_y
  GridWitness w_f, w_phi_z, w_phi_theta, w_pi, w_composed;
};

LipschitzReport estimate_lipschitz(const ContextualMDP& cmdp, const Embedding& phi,
                                   const EmbeddingPolicy& pi);

// Aggregation value-error bound:
//   max_h |V*(h) - V̂*(phi_hat(h))| <= 2 (epsilon + delta) / ((1-gamma)(1-c)).
BoundReport verify_aggregation_bound(const ContextualMDP& cmdp, const Embedding& phi,
                                     double epsilon, double c, double metric_tol,
                                     double merl_temperature = 0.1, std::uint64_t seed = 0);

// Cross-context transfer bound for a policy acting through the embedding:
//   J(pi_{ti}) - J(pi_{ti<-tj}) bounded by the expected advantage of the
//   transfer policy under the matched policy's occupancy plus a Lipschitz
//   mismatch term.
BoundReport check_generalization_bound(const ContextualMDP& cmdp, const Embedding& phi,
                                       const EmbeddingPolicy& pi, int ctx_i, int ctx_j,
                                       std::uint64_t seed = 0);

struct PerturbationSpec {
  double reward_budget = 0.05;      // sup-norm reward shift
  double transition_budget = 0.05;  // per-(s,a) TV budget
  double obs_budget = 0.0;          // per-entry observation shift (cmdp only)
  void validate() const;
};

struct PerturbedMDP {
  FiniteMDP mdp;
  double achieved_eps_r = 0.0;
  double achieved_eps_p = 0.0;
};

// Random simulator within the budgets: rewards shifted uniformly (clipped to
// [0, r_max]), transition rows mixed toward a random row to a sampled TV
// target. Achieved deviations are measured from the result, not assumed.
PerturbedMDP perturb_simulator(const FiniteMDP& mdp, const PerturbationSpec& spec, SplitRng& rng);

// Value gap of one policy across an (exact, approximate) MDP pair:
//   |J - Ĵ| <= eps_r/(1-gamma) + gamma eps_p R_max/(1-gamma)^2
// with eps_r, eps_p measured exactly from the two models.
BoundReport check_fidelity_bound(const FiniteMDP& mdp, const FiniteMDP& mdp_hat,
                                 const PolicyTable& pi, std::uint64_t seed = 0);

struct PerturbedCMDP {
  ContextualMDP cmdp;
  double achieved_eps_r = 0.0;
  double achieved_eps_p = 0.0;
};

// Simulator with perturbed base tables and a perturbed observation map
// (entries shifted within obs_budget, clipped to [0,1]).
PerturbedCMDP perturb_cmdp(const ContextualMDP& real, const PerturbationSpec& spec,
                           SplitRng& rng);

// Complete-fidelity bound: the policy acts through the encoder on sim
// observations inside the sim, and through real observations in the real
// environment; the gap is bounded by the Thm.-4 terms plus the expected
// advantage of the real-deployment policy in the sim plus a Lipschitz term in
// eps_f = max_{s,theta} ||phi(f_hat) - phi(f)||_1.
BoundReport check_complete_fidelity_bound(const ContextualMDP& cmdp_real,
                                          const ContextualMDP& cmdp_sim, const Embedding& phi,
                                          const EmbeddingPolicy& pi, std::uint64_t seed = 0);

}  // namespace condbisim
