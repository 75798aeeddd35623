#include "condbisim/mdp.hpp"

#include <cmath>
#include <string>

namespace condbisim {

void validate_distribution(const std::vector<double>& dist, const char* what, double tol) {
  double total = 0.0;
  for (double x : dist) {
    if (!(x >= -tol)) throw StochasticityError(std::string(what) + " has negative mass");
    if (!std::isfinite(x)) throw NumericOverflow(std::string(what) + " has non-finite mass");
    total += x;
  }
  if (std::fabs(total - 1.0) > tol)
    throw StochasticityError(std::string(what) + " sums to " + std::to_string(total));
}

void FiniteMDP::validate(double tol) const {
  if (n_states <= 0 || n_actions <= 0)
    throw ParamRange("n_states and n_actions must be positive");
  if (!(discount >= 0.0 && discount < 1.0))
    throw ParamRange("discount must lie in [0,1)");
  if (!(r_max > 0.0)) throw ParamRange("r_max must be positive");
  const std::size_t ns = static_cast<std::size_t>(n_states);
  const std::size_t na = static_cast<std::size_t>(n_actions);
  if (transition.size() != ns * na * ns)
    throw ShapeMismatch("transition table size " + std::to_string(transition.size()) +
                        " vs expected " + std::to_string(ns * na * ns));
  if (reward.size() != ns * na)
    throw ShapeMismatch("reward table size " + std::to_string(reward.size()) +
                        " vs expected " + std::to_string(ns * na));
  if (initial_dist.size() != ns)
    throw ShapeMismatch("initial_dist size " + std::to_string(initial_dist.size()) +
                        " vs expected " + std::to_string(ns));
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      double total = 0.0;
      for (int t = 0; t < n_states; ++t) {
        const double x = p(s, a, t);
        if (!(x >= -tol))
          throw StochasticityError("transition row (" + std::to_string(s) + "," +
                                   std::to_string(a) + ") has negative mass");
        if (!std::isfinite(x)) throw NumericOverflow("non-finite transition probability");
        total += x;
      }
      if (std::fabs(total - 1.0) > tol)
        throw StochasticityError("transition row (" + std::to_string(s) + "," +
                                 std::to_string(a) + ") sums to " + std::to_string(total));
      const double rew = r(s, a);
      if (!std::isfinite(rew)) throw NumericOverflow("non-finite reward");
      if (rew < -tol || rew > r_max + tol)
        throw ParamRange("reward (" + std::to_string(s) + "," + std::to_string(a) +
                         ") outside [0, r_max]");
    }
  }
  validate_distribution(initial_dist, "initial_dist", tol);
}

PolicyTable PolicyTable::uniform(int n_states, int n_actions) {
  PolicyTable pt;
  pt.n_states = n_states;
  pt.n_actions = n_actions;
  pt.probs.assign(static_cast<std::size_t>(n_states) * n_actions, 1.0 / n_actions);
  return pt;
}

PolicyTable PolicyTable::deterministic(const std::vector<int>& actions, int n_actions) {
  PolicyTable pt;
  pt.n_states = static_cast<int>(actions.size());
  pt.n_actions = n_actions;
  pt.probs.assign(static_cast<std::size_t>(pt.n_states) * n_actions, 0.0);
  for (int s = 0; s < pt.n_states; ++s) {
    if (actions[s] < 0 || actions[s] >= n_actions)
      throw IndexError("deterministic policy action out of range");
    pt.pi(s, actions[s]) = 1.0;
  }
  return pt;
}

void PolicyTable::validate(double tol) const {
  if (n_states <= 0 || n_actions <= 0) throw ParamRange("policy table must be non-empty");
  if (probs.size() != static_cast<std::size_t>(n_states) * n_actions)
    throw ShapeMismatch("policy table size mismatch");
  for (int s = 0; s < n_states; ++s) {
    double total = 0.0;
    for (int a = 0; a < n_actions; ++a) {
      const double x = pi(s, a);
      if (!(x >= -tol)) throw StochasticityError("policy row has negative mass");
      total += x;
    }
    if (std::fabs(total - 1.0) > tol)
      throw StochasticityError("policy row " + std::to_string(s) + " sums to " +
                               std::to_string(total));
  }
}

}  // namespace condbisim
