#pragma once

#include <vector>

#include "condbisim/mdp.hpp"

namespace condbisim {

struct ValueIteration {
  std::vector<double> v;     // state values, consistent with q (v = max_a q)
  std::vector<double> q;     // [s][a]
  std::vector<int> greedy;   // argmax_a q, ties resolved to the lowest index
  int iterations = 0;
  double residual = 0.0;     // sup-norm Bellman residual at the last sweep
};

ValueIteration value_iteration(const FiniteMDP& mdp, double tol = 1e-10,
                               int max_iterations = 2000000);

struct SoftValueIteration {
  std::vector<double> v;   // v = tau * logsumexp(q / tau)
  std::vector<double> q;   // [s][a]
  PolicyTable policy;      // pi(a|s) proportional to exp(q/tau)
  int iterations = 0;
  double residual = 0.0;
};

// Maximum-entropy optimal values and the induced softmax policy.
SoftValueIteration soft_value_iteration(const FiniteMDP& mdp, double temperature,
                                        double tol = 1e-10, int max_iterations = 2000000);

struct PolicyEvaluation {
  std::vector<double> v;          // exact solve of (I - gamma P_pi) v = r_pi
  std::vector<double> q;          // [s][a]
  std::vector<double> advantage;  // q - v
  double j = 0.0;                 // initial-distribution value
  // max_s |E_{a ~ comparison}[advantage(s,a)]| when a comparison policy is
  // given; 0 otherwise (the expectation under pi itself vanishes).
  double a_max = 0.0;
};

PolicyEvaluation policy_evaluation(const FiniteMDP& mdp, const PolicyTable& pi,
                                   const PolicyTable* comparison = nullptr);

// Normalized discounted state occupancy (1-gamma) rho^T (I - gamma P_pi)^-1.
std::vector<double> discounted_occupancy(const FiniteMDP& mdp, const PolicyTable& pi);

double tv_distance(const std::vector<double>& p, const std::vector<double>& q);
double tv_distance(const double* p, const double* q, int n);

}  // namespace condbisim
