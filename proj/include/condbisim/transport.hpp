#pragma once

#include <vector>

#include "condbisim/errors.hpp"

namespace condbisim {

// Optimal transport between two finite distributions, solved exactly.
struct TransportResult {
  double cost = 0.0;
  std::vector<double> coupling;  // [i][j] flattened, n_p x n_q
  std::vector<double> dual_p;    // Kantorovich potentials, feasible for the dual
  std::vector<double> dual_q;
  double duality_gap = 0.0;      // |primal - dual objective|
  int iterations = 0;
};

// Solves min <c, x> over couplings of (p, q) with the transportation simplex
// (a network simplex on the bipartite transport polytope). Exact optimum:
// terminates when every reduced cost is nonnegative, and returns both the
// optimal coupling and feasible dual potentials so callers can audit the
// duality gap. p and q must have equal total mass (within 1e-9, signalled as
// Infeasible otherwise); cost is a dense n_p x n_q matrix.
TransportResult transport_lp(const std::vector<double>& p, const std::vector<double>& q,
                             const std::vector<double>& cost, int n_p, int n_q,
                             int max_iterations = 0);

// Diagonal Gaussian over latent space.
struct GaussianMoments {
  std::vector<double> mean;
  std::vector<double> stddev;  // per-dim, >= 0

  int dim() const { return static_cast<int>(mean.size()); }
  void validate() const;
};

// Closed-form 2-Wasserstein distance between diagonal Gaussians:
// W2^2 = ||mu_a - mu_b||_2^2 + sum_k (sigma_{a,k} - sigma_{b,k})^2.
double w2_gaussian(const GaussianMoments& a, const GaussianMoments& b);

// Standard normal quantile (inverse CDF), |error| < 1e-12 via the Acklam
// approximation plus one Halley refinement.
double inv_normal_cdf(double p);

// Exact W1 between two 1-D Gaussians after discretizing each into n_atoms
// equal-mass quantile atoms; solved with the transport LP.
double w1_gaussian_1d_discretized(double mean_a, double stddev_a, double mean_b,
                                  double stddev_b, int n_atoms = 16);

}  // namespace condbisim
