#pragma once

#include <string>
#include <vector>

#include "condbisim/mdp.hpp"
#include "condbisim/transport.hpp"

namespace condbisim {

// Symmetric nonnegative distance table with zero diagonal. Triangle
// inequality is checked by validate() (fixed points satisfy it up to solver
// tolerance) rather than enforced on construction, so intermediate iterates
// and test fixtures can hold arbitrary symmetric tables.
struct PseudoMetric {
  int n = 0;
  std::vector<double> d;             // [i][j]
  std::vector<std::string> labels;   // optional index labels for CSV export

  double at(int i, int j) const { return d[static_cast<std::size_t>(i) * n + j]; }
  double& at(int i, int j) { return d[static_cast<std::size_t>(i) * n + j]; }

  static PseudoMetric zero(int n);
  double sup() const;
  void validate(double triangle_tol = 1e-6) const;
  std::string to_csv() const;  // matrix with a header row of index labels
};

struct MetricConfig {
  // Transition weight in the metric operator; the fixed point contracts at
  // rate c, so c must lie in (0,1). c = 0 (pure reward differences) is only
  // accepted when allow_zero_c is set.
  double c = 0.5;
  bool allow_zero_c = false;
  double tol = 1e-9;
  int max_iterations = 100000;

  void validate() const;
};

struct MetricResult {
  PseudoMetric metric;
  int iterations = 0;
  double residual = 0.0;  // sup-norm change at the final sweep
};

// Exact W1 between distributions over the points of a ground pseudometric.
TransportResult wasserstein1(const std::vector<double>& p, const std::vector<double>& q,
                             const PseudoMetric& ground);

// One application of the metric operator
//   F(d)(i,j) = max_a [ (1-c) |r_i^a - r_j^a| + c W1(P_i^a, P_j^a; d) ].
PseudoMetric apply_metric_operator(const FiniteMDP& mdp, const MetricConfig& cfg,
                                   const PseudoMetric& d);

// Policy-expectation variant: rewards and transitions are averaged under pi
// before the operator is applied (no max over actions).
PseudoMetric apply_pi_metric_operator(const FiniteMDP& mdp, const PolicyTable& pi,
                                      const MetricConfig& cfg, const PseudoMetric& d);

// Least fixed points, iterated from the zero metric until the contraction
// error bound certifies the table is within cfg.tol of the fixed point in
// sup norm (geometric convergence at rate c).
MetricResult bisim_metric(const FiniteMDP& mdp, const MetricConfig& cfg);
MetricResult pi_bisim_metric(const FiniteMDP& mdp, const PolicyTable& pi,
                             const MetricConfig& cfg);

// Partition of indices into classes of pairwise distance <= tol, reported as
// sorted blocks ordered by smallest member.
std::vector<std::vector<int>> zero_classes(const PseudoMetric& d, double tol = 1e-9);

}  // namespace condbisim
