#include "condbisim/solver.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace condbisim {

namespace {

// One Bellman backup: fills q from v, returns the backed-up state values via
// backup(s, q_row). Shared by the hard and soft sweeps.
template <class Backup>
int sweep_to_fixed_point(const FiniteMDP& mdp, std::vector<double>& v, std::vector<double>& q,
                         double tol, int max_iterations, double& residual, Backup backup) {
  const int n = mdp.n_states, na = mdp.n_actions;
  std::vector<double> v_next(n);
  int iter = 0;
  while (true) {
    if (++iter > max_iterations) throw NonConvergence("value iteration exceeded iteration cap");
    double diff = 0.0;
    for (int s = 0; s < n; ++s) {
      double* q_row = q.data() + static_cast<std::size_t>(s) * na;
      for (int a = 0; a < na; ++a) {
        const double* row = mdp.row(s, a);
        double acc = 0.0;
        for (int t = 0; t < n; ++t) acc += row[t] * v[t];
        q_row[a] = mdp.r(s, a) + mdp.discount * acc;
      }
      v_next[s] = backup(q_row);
      diff = std::max(diff, std::fabs(v_next[s] - v[s]));
    }
    // diff is the exact Bellman residual of the previous iterate; once it is
    // within tol, the freshly backed-up values (consistent with q) are kept.
    v.swap(v_next);
    if (diff <= tol) {
      residual = diff;
      return iter;
    }
  }
}

Eigen::MatrixXd policy_matrix(const FiniteMDP& mdp, const PolicyTable& pi) {
  const int n = mdp.n_states;
  Eigen::MatrixXd P(n, n);
  for (int s = 0; s < n; ++s)
    for (int t = 0; t < n; ++t) {
      double acc = 0.0;
      for (int a = 0; a < mdp.n_actions; ++a) acc += pi.pi(s, a) * mdp.p(s, a, t);
      P(s, t) = acc;
    }
  return P;
}

}  // namespace

ValueIteration value_iteration(const FiniteMDP& mdp, double tol, int max_iterations) {
  if (!(tol > 0.0)) throw ParamRange("tol must be positive");
  ValueIteration out;
  const int na = mdp.n_actions;
  out.v.assign(mdp.n_states, 0.0);
  out.q.assign(static_cast<std::size_t>(mdp.n_states) * na, 0.0);
  out.iterations = sweep_to_fixed_point(
      mdp, out.v, out.q, tol, max_iterations, out.residual, [na](const double* q_row) {
        double best = q_row[0];
        for (int a = 1; a < na; ++a) best = std::max(best, q_row[a]);
        return best;
      });
  out.greedy.resize(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) {
    const double* q_row = out.q.data() + static_cast<std::size_t>(s) * na;
    int best = 0;
    for (int a = 1; a < na; ++a)
      if (q_row[a] > q_row[best]) best = a;
    out.greedy[s] = best;
  }
  return out;
}

SoftValueIteration soft_value_iteration(const FiniteMDP& mdp, double temperature, double tol,
                                        int max_iterations) {
  if (!(temperature > 0.0)) throw ParamRange("temperature must be positive");
  if (!(tol > 0.0)) throw ParamRange("tol must be positive");
  SoftValueIteration out;
  const int na = mdp.n_actions;
  out.v.assign(mdp.n_states, 0.0);
  out.q.assign(static_cast<std::size_t>(mdp.n_states) * na, 0.0);
  out.iterations = sweep_to_fixed_point(
      mdp, out.v, out.q, tol, max_iterations, out.residual,
      [na, temperature](const double* q_row) {
        double top = q_row[0];
        for (int a = 1; a < na; ++a) top = std::max(top, q_row[a]);
        double acc = 0.0;
        for (int a = 0; a < na; ++a) acc += std::exp((q_row[a] - top) / temperature);
        return top + temperature * std::log(acc);
      });
  out.policy.n_states = mdp.n_states;
  out.policy.n_actions = na;
  out.policy.probs.resize(static_cast<std::size_t>(mdp.n_states) * na);
  for (int s = 0; s < mdp.n_states; ++s) {
    const double* q_row = out.q.data() + static_cast<std::size_t>(s) * na;
    double top = q_row[0];
    for (int a = 1; a < na; ++a) top = std::max(top, q_row[a]);
    double z = 0.0;
    for (int a = 0; a < na; ++a) z += std::exp((q_row[a] - top) / temperature);
    for (int a = 0; a < na; ++a)
      out.policy.pi(s, a) = std::exp((q_row[a] - top) / temperature) / z;
  }
  return out;
}

PolicyEvaluation policy_evaluation(const FiniteMDP& mdp, const PolicyTable& pi,
                                   const PolicyTable* comparison) {
  if (pi.n_states != mdp.n_states || pi.n_actions != mdp.n_actions)
    throw ShapeMismatch("policy table shape disagrees with the MDP");
  const int n = mdp.n_states, na = mdp.n_actions;
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - mdp.discount * policy_matrix(mdp, pi);
  Eigen::VectorXd r_pi(n);
  for (int s = 0; s < n; ++s) {
    double acc = 0.0;
    for (int a = 0; a < na; ++a) acc += pi.pi(s, a) * mdp.r(s, a);
    r_pi(s) = acc;
  }
  Eigen::VectorXd v = A.partialPivLu().solve(r_pi);
  const double check = (A * v - r_pi).lpNorm<Eigen::Infinity>();
  if (!(check <= 1e-8 * std::max(1.0, r_pi.lpNorm<Eigen::Infinity>())))
    throw SingularSystem("policy evaluation solve residual " + std::to_string(check));

  PolicyEvaluation out;
  out.v.assign(v.data(), v.data() + n);
  out.q.resize(static_cast<std::size_t>(n) * na);
  out.advantage.resize(static_cast<std::size_t>(n) * na);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < na; ++a) {
      const double* row = mdp.row(s, a);
      double acc = 0.0;
      for (int t = 0; t < n; ++t) acc += row[t] * out.v[t];
      const double q = mdp.r(s, a) + mdp.discount * acc;
      out.q[static_cast<std::size_t>(s) * na + a] = q;
      out.advantage[static_cast<std::size_t>(s) * na + a] = q - out.v[s];
    }
  for (int s = 0; s < n; ++s) out.j += mdp.initial_dist[s] * out.v[s];
  if (comparison) {
    if (comparison->n_states != n || comparison->n_actions != na)
      throw ShapeMismatch("comparison policy shape disagrees with the MDP");
    for (int s = 0; s < n; ++s) {
      double acc = 0.0;
      for (int a = 0; a < na; ++a)
        acc += comparison->pi(s, a) * out.advantage[static_cast<std::size_t>(s) * na + a];
      out.a_max = std::max(out.a_max, std::fabs(acc));
    }
  }
  return out;
}

std::vector<double> discounted_occupancy(const FiniteMDP& mdp, const PolicyTable& pi) {
  const int n = mdp.n_states;
  Eigen::MatrixXd A =
      Eigen::MatrixXd::Identity(n, n) - mdp.discount * policy_matrix(mdp, pi).transpose();
  Eigen::VectorXd rho(n);
  for (int s = 0; s < n; ++s) rho(s) = mdp.initial_dist[s];
  Eigen::VectorXd occ = A.partialPivLu().solve(rho);
  const double check = (A * occ - rho).lpNorm<Eigen::Infinity>();
  if (!(check <= 1e-8)) throw SingularSystem("occupancy solve residual " + std::to_string(check));
  std::vector<double> out(n);
  for (int s = 0; s < n; ++s) out[s] = (1.0 - mdp.discount) * occ(s);
  return out;
}

double tv_distance(const double* p, const double* q, int n) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += std::fabs(p[i] - q[i]);
  return 0.5 * acc;
}

double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw LengthMismatch("tv_distance inputs of unequal length");
  return tv_distance(p.data(), q.data(), static_cast<int>(p.size()));
}

}  // namespace condbisim
