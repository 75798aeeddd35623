#include "condbisim/bounds.hpp"

#include <algorithm>
#include <cmath>

#include "condbisim/env_gen.hpp"
#include "condbisim/errors.hpp"
#include "condbisim/io.hpp"
#include "condbisim/metric.hpp"
#include "condbisim/solver.hpp"

namespace condbisim {

namespace {

constexpr double kSlack = 1e-6;

double l1(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionMismatch("vector dims differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
  return s;
}

double policy_tv(const std::vector<double>& p, const std::vector<double>& q) {
  return 0.5 * l1(p, q);
}

// Occupancy-weighted expected advantage of pi_other under the advantage of
// the evaluated policy.
double expected_advantage(const FiniteMDP& mdp, const PolicyEvaluation& eval,
                          const std::vector<double>& occupancy, const PolicyTable& pi_other) {
  double acc = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    double inner = 0.0;
    for (int a = 0; a < mdp.n_actions; ++a)
      inner += pi_other.pi(s, a) * eval.advantage[static_cast<std::size_t>(s) * mdp.n_actions + a];
    acc += occupancy[s] * inner;
  }
  return acc;
}

std::string mdp_fingerprint(const FiniteMDP& mdp) {
  std::string blob;
  blob += fmt17(mdp.n_states) + "," + fmt17(mdp.n_actions) + "," + fmt17(mdp.discount) + "," +
          fmt17(mdp.r_max) + ";";
  for (double v : mdp.transition) blob += fmt17(v) + ",";
  for (double v : mdp.reward) blob += fmt17(v) + ",";
  for (double v : mdp.initial_dist) blob += fmt17(v) + ",";
  return content_hash(blob);
}

}  // namespace

LipschitzReport estimate_lipschitz(const ContextualMDP& cmdp, const Embedding& phi,
                                   const EmbeddingPolicy& pi) {
  const int n = cmdp.base.n_states;
  const int k = cmdp.n_contexts();
  if (k < 2) throw DegenerateGrid("at least two contexts are needed for context-axis constants");
  if (n < 1) throw DegenerateGrid("empty state space");

  LipschitzReport rep;
  const ContextSpace& ctxs = cmdp.contexts;

  // Rendered observations (grid inputs to phi), indexed [ctx][state].
  std::vector<std::vector<std::vector<double>>> obs(k);
  for (int c = 0; c < k; ++c) {
    obs[c].resize(n);
    for (int s = 0; s < n; ++s) obs[c][s] = cmdp.observe_core(s, c);
  }

  // l_f_theta: per state, rendering deviation across context pairs.
  bool any_f = false;
  for (int s = 0; s < n; ++s)
    for (int ca = 0; ca < k; ++ca)
      for (int cb = ca + 1; cb < k; ++cb) {
        const double dth = ctxs.distance(ca, cb);
        if (dth == 0.0) continue;
        any_f = true;
        const double ratio = l1(obs[ca][s], obs[cb][s]) / dth;
        if (ratio > rep.l_f_theta) {
          rep.l_f_theta = ratio;
          rep.w_f = {s, s, ca, cb, -1};
        }
      }
  if (!any_f) throw DegenerateGrid("all context values coincide");

  // Embeddings for every (render ctx, state) under every context input.
  std::vector<std::vector<std::vector<double>>> y(k);  // [ctx_in][ctx_obs * n + s]
  for (int cin = 0; cin < k; ++cin) {
    y[cin].resize(static_cast<std::size_t>(k) * n);
    for (int cobs = 0; cobs < k; ++cobs)
      for (int s = 0; s < n; ++s)
        y[cin][static_cast<std::size_t>(cobs) * n + s] = grid_embed(cmdp, phi, s, cobs, cin);
  }

  // l_phi_z: fixed context input, deviation across distinct rendered inputs.
  for (int cin = 0; cin < k; ++cin) {
    for (int i = 0; i < k * n; ++i)
      for (int j = i + 1; j < k * n; ++j) {
        const double dz = l1(obs[i / n][i % n], obs[j / n][j % n]);
        if (dz == 0.0) continue;
        const double ratio = l1(y[cin][i], y[cin][j]) / dz;
        if (ratio > rep.l_phi_z) {
          rep.l_phi_z = ratio;
          rep.w_phi_z = {i % n, j % n, i / n, j / n, cin};
        }
      }
  }

  // l_phi_theta: fixed rendered input, deviation across context inputs.
  for (int i = 0; i < k * n; ++i)
    for (int ca = 0; ca < k; ++ca)
      for (int cb = ca + 1; cb < k; ++cb) {
        const double dth = ctxs.distance(ca, cb);
        if (dth == 0.0) continue;
        const double ratio = l1(y[ca][i], y[cb][i]) / dth;
        if (ratio > rep.l_phi_theta) {
          rep.l_phi_theta = ratio;
          rep.w_phi_theta = {i % n, i % n, ca, cb, i / n};
        }
      }

  // l_pi_y over every grid embedding, mismatched context inputs included.
  std::vector<const std::vector<double>*> all_y;
  for (int cin = 0; cin < k; ++cin)
    for (int i = 0; i < k * n; ++i) all_y.push_back(&y[cin][i]);
  std::vector<std::vector<double>> dists(all_y.size());
  for (std::size_t i = 0; i < all_y.size(); ++i) dists[i] = pi.distribution(*all_y[i]);
  for (std::size_t i = 0; i < all_y.size(); ++i)
    for (std::size_t j = i + 1; j < all_y.size(); ++j) {
      const double dy = l1(*all_y[i], *all_y[j]);
      if (dy == 0.0) continue;
      const double ratio = policy_tv(dists[i], dists[j]) / dy;
      if (ratio > rep.l_pi_y) {
        rep.l_pi_y = ratio;
        const int ni = static_cast<int>(i % static_cast<std::size_t>(k * n));
        const int nj = static_cast<int>(j % static_cast<std::size_t>(k * n));
        rep.w_pi = {ni % n, nj % n, ni / n, nj / n,
                    static_cast<int>(i / static_cast<std::size_t>(k * n))};
      }
    }

  // Direct constant of the composed map theta -> pi(phi(f_theta(s), theta_in)).
  for (int cin = 0; cin < k; ++cin)
    for (int s = 0; s < n; ++s)
      for (int ca = 0; ca < k; ++ca)
        for (int cb = ca + 1; cb < k; ++cb) {
          const double dth = ctxs.distance(ca, cb);
          if (dth == 0.0) continue;
          const double ratio =
              policy_tv(pi.distribution(y[cin][static_cast<std::size_t>(ca) * n + s]),
                        pi.distribution(y[cin][static_cast<std::size_t>(cb) * n + s])) /
              dth;
          if (ratio > rep.composed_direct) {
            rep.composed_direct = ratio;
            rep.w_composed = {s, s, ca, cb, cin};
          }
        }

  rep.composed_product = rep.l_f_theta * rep.l_phi_z * rep.l_pi_y;
  return rep;
}

BoundReport verify_aggregation_bound(const ContextualMDP& cmdp, const Embedding& phi,
                                     double epsilon, double c, double metric_tol,
                                     double merl_temperature, std::uint64_t seed) {
  MetricConfig mcfg;
  mcfg.c = c;
  mcfg.tol = metric_tol;
  mcfg.validate();
  if (!(epsilon >= 0.0)) throw ParamRange("aggregation radius must be >= 0");

  const SoftValueIteration soft = soft_value_iteration(cmdp.base, merl_temperature);
  const MetricResult mr = pi_bisim_metric(cmdp.base, soft.policy, mcfg);
  const double delta = compute_delta(cmdp, phi, mr.metric);

  const auto [super, joint] = build_super_mdp(cmdp);
  const std::vector<std::vector<double>> y = joint_embeddings(cmdp, phi, joint);
  const AggregatedMDP agg = epsilon_aggregate(super, joint, y, epsilon);

  const ValueIteration vi = value_iteration(super, 1e-12);
  const ValueIteration vi_hat = value_iteration(agg.mdp_hat, 1e-12);

  BoundReport rep;
  rep.theorem = "2";
  for (int h = 0; h < super.n_states; ++h)
    rep.lhs = std::max(rep.lhs, std::fabs(vi.v[h] - vi_hat.v[agg.assignment[h]]));
  const double gamma = cmdp.base.discount;
  rep.rhs = 2.0 * (epsilon + delta) / ((1.0 - gamma) * (1.0 - c));
  rep.pass = rep.lhs <= rep.rhs + kSlack;
  rep.constants = {{"epsilon", epsilon},
                   {"delta", delta},
                   {"gamma", gamma},
                   {"c", c},
                   {"n_joint", static_cast<double>(super.n_states)},
                   {"n_clusters", static_cast<double>(agg.clusters.size())}};
  rep.seed = seed;
  rep.env_hash = env_hash(cmdp);
  return rep;
}

BoundReport check_generalization_bound(const ContextualMDP& cmdp, const Embedding& phi,
                                       const EmbeddingPolicy& pi, int ctx_i, int ctx_j,
                                       std::uint64_t seed) {
  if (ctx_i < 0 || ctx_i >= cmdp.n_contexts() || ctx_j < 0 || ctx_j >= cmdp.n_contexts())
    throw IndexError("context index out of range");

  const PolicyTable pi_matched = induced_policy(cmdp, phi, pi, ctx_i, ctx_i);
  const PolicyTable pi_transfer = induced_policy(cmdp, phi, pi, ctx_i, ctx_j);

  const PolicyEvaluation eval_matched =
      policy_evaluation(cmdp.base, pi_matched, &pi_transfer);
  const PolicyEvaluation eval_transfer = policy_evaluation(cmdp.base, pi_transfer);
  const std::vector<double> occ = discounted_occupancy(cmdp.base, pi_matched);
  const double e_term = expected_advantage(cmdp.base, eval_matched, occ, pi_transfer);

  const LipschitzReport lip = estimate_lipschitz(cmdp, phi, pi);
  const double d_theta = cmdp.contexts.distance(ctx_i, ctx_j);
  const double gamma = cmdp.base.discount;
  const double l_prod = lip.l_f_theta * lip.l_phi_z * lip.l_pi_y;

  BoundReport rep;
  rep.theorem = "3";
  rep.has_signed = true;
  rep.lhs_signed = eval_matched.j - eval_transfer.j;
  rep.lhs = std::fabs(rep.lhs_signed);
  rep.rhs = (e_term + (2.0 * gamma * eval_matched.a_max / (1.0 - gamma)) * l_prod * d_theta) /
            (1.0 - gamma);
  rep.pass = rep.lhs <= rep.rhs + kSlack;
  rep.ambiguous = !rep.pass && (rep.lhs_signed <= rep.rhs + kSlack);
  rep.constants = {{"gamma", gamma},
                   {"d_theta", d_theta},
                   {"a_max", eval_matched.a_max},
                   {"e_term", e_term},
                   {"l_f_theta", lip.l_f_theta},
                   {"l_phi_z", lip.l_phi_z},
                   {"l_pi_y", lip.l_pi_y},
                   {"l_product", l_prod},
                   {"j_matched", eval_matched.j},
                   {"j_transfer", eval_transfer.j},
                   {"ctx_i", static_cast<double>(ctx_i)},
                   {"ctx_j", static_cast<double>(ctx_j)}};
  rep.seed = seed;
  rep.env_hash = env_hash(cmdp);
  return rep;
}

void PerturbationSpec::validate() const {
  if (!(reward_budget >= 0.0) || !(transition_budget >= 0.0) || !(obs_budget >= 0.0))
    throw ParamRange("perturbation budgets must be >= 0");
  if (transition_budget > 1.0) throw ParamRange("transition TV budget cannot exceed 1");
}

PerturbedMDP perturb_simulator(const FiniteMDP& mdp, const PerturbationSpec& spec, SplitRng& rng) {
  spec.validate();
  mdp.validate();
  PerturbedMDP out;
  out.mdp = mdp;
  const int n = mdp.n_states, A = mdp.n_actions;
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < A; ++a) {
      const double shift = rng.uniform(-spec.reward_budget, spec.reward_budget);
      double& r = out.mdp.reward[static_cast<std::size_t>(s) * A + a];
      r = std::clamp(r + shift, 0.0, mdp.r_max);
      out.achieved_eps_r = std::max(out.achieved_eps_r, std::fabs(r - mdp.r(s, a)));

      if (spec.transition_budget > 0.0) {
        const std::vector<double> q = rng.simplex(n);
        const double target = rng.uniform(0.0, spec.transition_budget);
        const double tv = tv_distance(mdp.row(s, a), q.data(), n);
        const double alpha = tv > 0.0 ? std::min(1.0, target / tv) : 0.0;
        double* row = &out.mdp.transition[(static_cast<std::size_t>(s) * A + a) * n];
        for (int s2 = 0; s2 < n; ++s2) row[s2] = (1.0 - alpha) * mdp.row(s, a)[s2] + alpha * q[s2];
        out.achieved_eps_p = std::max(out.achieved_eps_p, tv_distance(row, mdp.row(s, a), n));
      }
    }
  }
  out.mdp.validate();
  return out;
}

BoundReport check_fidelity_bound(const FiniteMDP& mdp, const FiniteMDP& mdp_hat,
                                 const PolicyTable& pi, std::uint64_t seed) {
  if (mdp.n_states != mdp_hat.n_states || mdp.n_actions != mdp_hat.n_actions)
    throw ShapeMismatch("simulator shape does not match the real model");
  if (mdp.discount != mdp_hat.discount)
    throw ParamRange("simulator discount does not match the real model");

  double eps_r = 0.0, eps_p = 0.0;
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      eps_r = std::max(eps_r, std::fabs(mdp.r(s, a) - mdp_hat.r(s, a)));
      eps_p = std::max(eps_p, tv_distance(mdp.row(s, a), mdp_hat.row(s, a), mdp.n_states));
    }

  const PolicyEvaluation eval_real = policy_evaluation(mdp, pi);
  const PolicyEvaluation eval_sim = policy_evaluation(mdp_hat, pi);
  const double gamma = mdp.discount;
  const double r_max = std::max(mdp.r_max, mdp_hat.r_max);

  BoundReport rep;
  rep.theorem = "4";
  rep.lhs = std::fabs(eval_real.j - eval_sim.j);
  rep.rhs = eps_r / (1.0 - gamma) + gamma * eps_p * r_max / ((1.0 - gamma) * (1.0 - gamma));
  rep.pass = rep.lhs <= rep.rhs + kSlack;
  rep.constants = {{"eps_r", eps_r},         {"eps_p", eps_p}, {"gamma", gamma},
                   {"r_max", r_max},         {"j_real", eval_real.j},
                   {"j_sim", eval_sim.j}};
  rep.seed = seed;
  rep.env_hash = mdp_fingerprint(mdp);
  return rep;
}

PerturbedCMDP perturb_cmdp(const ContextualMDP& real, const PerturbationSpec& spec,
                           SplitRng& rng) {
  spec.validate();
  PerturbedCMDP out;
  out.cmdp = real;
  const PerturbedMDP base = perturb_simulator(real.base, spec, rng);
  out.cmdp.base = base.mdp;
  out.achieved_eps_r = base.achieved_eps_r;
  out.achieved_eps_p = base.achieved_eps_p;
  if (spec.obs_budget > 0.0) {
    for (double& v : out.cmdp.obs_map)
      v = std::clamp(v + rng.uniform(-spec.obs_budget, spec.obs_budget), 0.0, 1.0);
    // The explicit tables no longer follow the parametric rule, if any.
    out.cmdp.rule.reset();
  }
  out.cmdp.kind = real.kind.empty() ? "perturbed" : real.kind + "-perturbed";
  out.cmdp.validate();
  return out;
}

BoundReport check_complete_fidelity_bound(const ContextualMDP& cmdp_real,
                                          const ContextualMDP& cmdp_sim, const Embedding& phi,
                                          const EmbeddingPolicy& pi, std::uint64_t seed) {
  if (cmdp_real.base.n_states != cmdp_sim.base.n_states ||
      cmdp_real.base.n_actions != cmdp_sim.base.n_actions ||
      cmdp_real.obs_dim != cmdp_sim.obs_dim)
    throw ShapeMismatch("real and sim environments have different shapes");
  if (cmdp_real.contexts.values != cmdp_sim.contexts.values ||
      cmdp_real.contexts.dist != cmdp_sim.contexts.dist)
    throw ShapeMismatch("real and sim environments have different context spaces");
  if (cmdp_real.base.discount != cmdp_sim.base.discount)
    throw ParamRange("real and sim discounts differ");

  const int n = cmdp_real.base.n_states;
  const int k = cmdp_real.n_contexts();
  const double gamma = cmdp_real.base.discount;

  double eps_r = 0.0, eps_p = 0.0;
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < cmdp_real.base.n_actions; ++a) {
      eps_r = std::max(eps_r, std::fabs(cmdp_real.base.r(s, a) - cmdp_sim.base.r(s, a)));
      eps_p = std::max(eps_p,
                       tv_distance(cmdp_real.base.row(s, a), cmdp_sim.base.row(s, a), n));
    }

  double eps_f = 0.0;
  std::vector<std::vector<double>> y_union;
  for (int c = 0; c < k; ++c)
    for (int s = 0; s < n; ++s) {
      std::vector<double> y_real = grid_embed(cmdp_real, phi, s, c, c);
      std::vector<double> y_sim = grid_embed(cmdp_sim, phi, s, c, c);
      eps_f = std::max(eps_f, l1(y_real, y_sim));
      y_union.push_back(std::move(y_real));
      y_union.push_back(std::move(y_sim));
    }

  double l_pi_y = 0.0;
  std::vector<std::vector<double>> dists(y_union.size());
  for (std::size_t i = 0; i < y_union.size(); ++i) dists[i] = pi.distribution(y_union[i]);
  for (std::size_t i = 0; i < y_union.size(); ++i)
    for (std::size_t j = i + 1; j < y_union.size(); ++j) {
      const double dy = l1(y_union[i], y_union[j]);
      if (dy == 0.0) continue;
      l_pi_y = std::max(l_pi_y, policy_tv(dists[i], dists[j]) / dy);
    }

  double lhs_signed = 0.0, e_term = 0.0, a_max = 0.0;
  for (int c = 0; c < k; ++c) {
    const double p_ctx = cmdp_real.contexts.dist[c];
    const PolicyTable pi_real_c = induced_policy(cmdp_real, phi, pi, c, c);
    const PolicyTable pi_sim_c = induced_policy(cmdp_sim, phi, pi, c, c);
    const double j_real = policy_evaluation(cmdp_real.base, pi_real_c).j;
    const PolicyEvaluation eval_sim =
        policy_evaluation(cmdp_sim.base, pi_sim_c, &pi_real_c);
    const std::vector<double> occ = discounted_occupancy(cmdp_sim.base, pi_sim_c);
    lhs_signed += p_ctx * (j_real - eval_sim.j);
    e_term += p_ctx * expected_advantage(cmdp_sim.base, eval_sim, occ, pi_real_c);
    a_max = std::max(a_max, eval_sim.a_max);
  }

  const double r_max = std::max(cmdp_real.base.r_max, cmdp_sim.base.r_max);
  BoundReport rep;
  rep.theorem = "5";
  rep.has_signed = true;
  rep.lhs_signed = lhs_signed;
  rep.lhs = std::fabs(lhs_signed);
  rep.rhs = eps_r / (1.0 - gamma) + gamma * eps_p * r_max / ((1.0 - gamma) * (1.0 - gamma)) +
            e_term / (1.0 - gamma) +
            (2.0 * gamma * a_max / ((1.0 - gamma) * (1.0 - gamma))) * l_pi_y * eps_f;
  rep.pass = rep.lhs <= rep.rhs + kSlack;
  rep.ambiguous = !rep.pass && (rep.lhs_signed <= rep.rhs + kSlack);
  rep.constants = {{"eps_r", eps_r},   {"eps_p", eps_p}, {"eps_f", eps_f},
                   {"e_term", e_term}, {"a_max", a_max}, {"l_pi_y", l_pi_y},
                   {"gamma", gamma},   {"r_max", r_max}};
  rep.seed = seed;
  rep.env_hash = env_hash(cmdp_real);
  return rep;
}

}  // namespace condbisim
