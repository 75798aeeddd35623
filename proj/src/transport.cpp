#include "condbisim/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace condbisim {

namespace {

// Reduced-cost threshold for declaring optimality. Costs in this toolkit are
// O(1) (metrics over [0, r_max] spaces), so an absolute threshold is fine and
// leaves the mandated 1e-9 duality-gap budget with orders of magnitude to
// spare.
constexpr double kEnterTol = 1e-12;

struct Cell {
  int i, j;
};

}  // namespace

TransportResult transport_lp(const std::vector<double>& p, const std::vector<double>& q,
                             const std::vector<double>& cost, int n_p, int n_q,
                             int max_iterations) {
  if (static_cast<int>(p.size()) != n_p || static_cast<int>(q.size()) != n_q)
    throw LengthMismatch("marginal lengths disagree with declared sizes");
  if (cost.size() != static_cast<std::size_t>(n_p) * n_q)
    throw LengthMismatch("cost matrix size disagrees with marginals");
  for (double x : p)
    if (!(x >= 0.0) || !std::isfinite(x)) throw Infeasible("negative or non-finite mass in p");
  for (double x : q)
    if (!(x >= 0.0) || !std::isfinite(x)) throw Infeasible("negative or non-finite mass in q");
  const double sum_p = std::accumulate(p.begin(), p.end(), 0.0);
  const double sum_q = std::accumulate(q.begin(), q.end(), 0.0);
  if (sum_p <= 0.0 || sum_q <= 0.0) throw Infeasible("marginals must carry positive mass");
  if (std::fabs(sum_p - sum_q) > 1e-9)
    throw Infeasible("marginal totals differ: " + std::to_string(sum_p) + " vs " +
                     std::to_string(sum_q));

  // Work on the supports only; zero-mass rows and columns would make the
  // spanning-tree basis degenerate for no benefit.
  std::vector<int> rows, cols;
  for (int i = 0; i < n_p; ++i)
    if (p[i] > 0.0) rows.push_back(i);
  for (int j = 0; j < n_q; ++j)
    if (q[j] > 0.0) cols.push_back(j);
  const int n = static_cast<int>(rows.size());
  const int m = static_cast<int>(cols.size());
  // Normalize away a sub-1e-9 total-mass mismatch so the last marginal does
  // not silently absorb it.
  std::vector<double> a(n), b(m);
  for (int i = 0; i < n; ++i) a[i] = p[rows[i]] / sum_p;
  for (int j = 0; j < m; ++j) b[j] = q[cols[j]] / sum_q;
  const double scale = sum_p;  // report flows at the input's mass scale

  auto c = [&](int i, int j) -> double {
    return cost[static_cast<std::size_t>(rows[i]) * n_q + cols[j]];
  };

  std::vector<double> flow(static_cast<std::size_t>(n) * m, 0.0);
  std::vector<char> basic(static_cast<std::size_t>(n) * m, 0);
  std::vector<std::vector<int>> row_adj(n), col_adj(m);
  auto add_basic = [&](int i, int j) {
    basic[static_cast<std::size_t>(i) * m + j] = 1;
    row_adj[i].push_back(j);
    col_adj[j].push_back(i);
  };
  auto drop_basic = [&](int i, int j) {
    basic[static_cast<std::size_t>(i) * m + j] = 0;
    auto& rj = row_adj[i];
    rj.erase(std::find(rj.begin(), rj.end(), j));
    auto& ci = col_adj[j];
    ci.erase(std::find(ci.begin(), ci.end(), i));
  };

  // Northwest-corner initial basis: exactly n+m-1 basic cells, degenerate
  // zero-flow cells included when a row and column exhaust together.
  {
    int i = 0, j = 0;
    double rem_a = a[0], rem_b = b[0];
    while (true) {
      const double x = std::min(rem_a, rem_b);
      flow[static_cast<std::size_t>(i) * m + j] = x;
      add_basic(i, j);
      if (i == n - 1 && j == m - 1) break;
      if (rem_a <= rem_b && i < n - 1) {
        rem_b = std::max(0.0, rem_b - x);
        ++i;
        rem_a = a[i];
      } else if (j < m - 1) {
        rem_a = std::max(0.0, rem_a - x);
        ++j;
        rem_b = b[j];
      } else {
        rem_b = std::max(0.0, rem_b - x);
        ++i;
        rem_a = a[i];
      }
    }
  }

  std::vector<double> u(n), v(m);
  std::vector<char> u_set(n), v_set(m);
  // Tree traversal to recover potentials from the basic cells (u[0] = 0).
  auto compute_potentials = [&]() {
    std::fill(u_set.begin(), u_set.end(), 0);
    std::fill(v_set.begin(), v_set.end(), 0);
    std::vector<int> stack;
    u[0] = 0.0;
    u_set[0] = 1;
    stack.push_back(0);  // encode rows as i, cols as n+j
    while (!stack.empty()) {
      const int node = stack.back();
      stack.pop_back();
      if (node < n) {
        for (int j : row_adj[node])
          if (!v_set[j]) {
            v[j] = c(node, j) - u[node];
            v_set[j] = 1;
            stack.push_back(n + j);
          }
      } else {
        const int j = node - n;
        for (int i : col_adj[j])
          if (!u_set[i]) {
            u[i] = c(i, j) - v[j];
            u_set[i] = 1;
            stack.push_back(i);
          }
      }
    }
    for (int i = 0; i < n; ++i)
      if (!u_set[i]) throw NonConvergence("transport basis lost connectivity");
    for (int j = 0; j < m; ++j)
      if (!v_set[j]) throw NonConvergence("transport basis lost connectivity");
  };

  // Unique tree path from row node i0 to col node j0; returns the cycle as
  // cells starting with the entering cell. Signs alternate +,-,+,- along it.
  std::vector<int> parent(static_cast<std::size_t>(n) + m);
  auto find_cycle = [&](int i0, int j0) {
    std::fill(parent.begin(), parent.end(), -2);
    std::vector<int> stack{i0};
    parent[i0] = -1;
    while (!stack.empty()) {
      const int node = stack.back();
      stack.pop_back();
      if (node == n + j0) break;
      if (node < n) {
        for (int j : row_adj[node])
          if (parent[n + j] == -2) {
            parent[n + j] = node;
            stack.push_back(n + j);
          }
      } else {
        for (int i : col_adj[node - n])
          if (parent[i] == -2) {
            parent[i] = node;
            stack.push_back(i);
          }
      }
    }
    if (parent[n + j0] == -2) throw NonConvergence("transport basis lost connectivity");
    std::vector<Cell> path;  // from j0-end back to i0
    int node = n + j0;
    while (parent[node] != -1) {
      const int par = parent[node];
      if (node < n)
        path.push_back({node, par - n});
      else
        path.push_back({par, node - n});
      node = par;
    }
    std::reverse(path.begin(), path.end());  // now starts at i0's edge
    return path;
  };

  if (max_iterations <= 0) max_iterations = 10000 + 200 * (n + m) * (n + m);
  int iter = 0;
  const int bland_after = max_iterations / 2;
  while (true) {
    if (++iter > max_iterations)
      throw NonConvergence("transport simplex exceeded the iteration cap");
    compute_potentials();

    // Entering cell: most negative reduced cost with lexicographic tie-break;
    // Bland's rule (first negative) after long degenerate stretches, which
    // guarantees termination.
    int best_i = -1, best_j = -1;
    double best_rc = -kEnterTol;
    const bool bland = iter > bland_after;
    for (int i = 0; i < n && (best_i < 0 || !bland); ++i)
      for (int j = 0; j < m; ++j) {
        if (basic[static_cast<std::size_t>(i) * m + j]) continue;
        const double rc = c(i, j) - u[i] - v[j];
        if (rc < best_rc) {
          best_rc = rc;
          best_i = i;
          best_j = j;
          if (bland) break;
        }
      }
    if (best_i < 0) break;  // optimal

    const std::vector<Cell> path = find_cycle(best_i, best_j);
    // Minus-edges are path positions 0, 2, 4, ...
    double delta = std::numeric_limits<double>::infinity();
    int leave_pos = -1;
    for (std::size_t k = 0; k < path.size(); k += 2) {
      const double f = flow[static_cast<std::size_t>(path[k].i) * m + path[k].j];
      if (f < delta) {
        delta = f;
        leave_pos = static_cast<int>(k);
      }
    }
    flow[static_cast<std::size_t>(best_i) * m + best_j] += delta;
    for (std::size_t k = 0; k < path.size(); ++k) {
      auto& f = flow[static_cast<std::size_t>(path[k].i) * m + path[k].j];
      f += (k % 2 == 0) ? -delta : delta;
      if (f < 0.0) f = 0.0;
    }
    drop_basic(path[leave_pos].i, path[leave_pos].j);
    add_basic(best_i, best_j);
  }

  TransportResult out;
  out.iterations = iter;
  out.coupling.assign(static_cast<std::size_t>(n_p) * n_q, 0.0);
  double primal = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      const double f = flow[static_cast<std::size_t>(i) * m + j] * scale;
      if (f == 0.0) continue;
      out.coupling[static_cast<std::size_t>(rows[i]) * n_q + cols[j]] = f;
      primal += f * c(i, j);
    }
  out.cost = primal;

  // Embed the potentials; zero-mass rows/columns get the tightest feasible
  // completion (they carry no dual weight).
  out.dual_p.assign(n_p, 0.0);
  out.dual_q.assign(n_q, 0.0);
  for (int i = 0; i < n; ++i) out.dual_p[rows[i]] = u[i];
  for (int j = 0; j < m; ++j) out.dual_q[cols[j]] = v[j];
  for (int i0 = 0; i0 < n_p; ++i0) {
    if (p[i0] > 0.0) continue;
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j)
      best = std::min(best, cost[static_cast<std::size_t>(i0) * n_q + cols[j]] - v[j]);
    out.dual_p[i0] = best;
  }
  for (int j0 = 0; j0 < n_q; ++j0) {
    if (q[j0] > 0.0) continue;
    // Tighten against every row, including just-completed zero-mass ones, so
    // feasibility also holds on the (zero row, zero column) corner.
    double best = std::numeric_limits<double>::infinity();
    for (int i0 = 0; i0 < n_p; ++i0)
      best = std::min(best, cost[static_cast<std::size_t>(i0) * n_q + j0] - out.dual_p[i0]);
    out.dual_q[j0] = best;
  }
  double dual = 0.0;
  for (int i = 0; i < n_p; ++i) dual += out.dual_p[i] * p[i];
  for (int j = 0; j < n_q; ++j) dual += out.dual_q[j] * q[j];
  out.duality_gap = std::fabs(primal - dual);
  return out;
}

void GaussianMoments::validate() const {
  if (mean.empty() || mean.size() != stddev.size())
    throw DimensionMismatch("Gaussian moments need matching non-empty mean/stddev");
  for (double s : stddev)
    if (!(s >= 0.0) || !std::isfinite(s)) throw ParamRange("stddev must be finite and >= 0");
  for (double m : mean)
    if (!std::isfinite(m)) throw NumericOverflow("non-finite Gaussian mean");
}

double w2_gaussian(const GaussianMoments& a, const GaussianMoments& b) {
  a.validate();
  b.validate();
  if (a.dim() != b.dim()) throw DimensionMismatch("Gaussian dimensions disagree");
  double acc = 0.0;
  for (int k = 0; k < a.dim(); ++k) {
    const double dm = a.mean[k] - b.mean[k];
    const double ds = a.stddev[k] - b.stddev[k];
    acc += dm * dm + ds * ds;
  }
  return std::sqrt(acc);
}

double inv_normal_cdf(double prob) {
  if (!(prob > 0.0 && prob < 1.0)) throw ParamRange("quantile probability must lie in (0,1)");
  // Acklam's rational approximation.
  static const double A[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double B[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double C[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double D[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double x;
  if (prob < plow) {
    const double qv = std::sqrt(-2 * std::log(prob));
    x = (((((C[0] * qv + C[1]) * qv + C[2]) * qv + C[3]) * qv + C[4]) * qv + C[5]) /
        ((((D[0] * qv + D[1]) * qv + D[2]) * qv + D[3]) * qv + 1);
  } else if (prob <= phigh) {
    const double qv = prob - 0.5, rv = qv * qv;
    x = (((((A[0] * rv + A[1]) * rv + A[2]) * rv + A[3]) * rv + A[4]) * rv + A[5]) * qv /
        (((((B[0] * rv + B[1]) * rv + B[2]) * rv + B[3]) * rv + B[4]) * rv + 1);
  } else {
    const double qv = std::sqrt(-2 * std::log(1 - prob));
    x = -(((((C[0] * qv + C[1]) * qv + C[2]) * qv + C[3]) * qv + C[4]) * qv + C[5]) /
        ((((D[0] * qv + D[1]) * qv + D[2]) * qv + D[3]) * qv + 1);
  }
  // One Halley refinement against the exact CDF via erfc.
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - prob;
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2 * 3.14159265358979323846);
  const double uu = e / pdf;
  x = x - uu / (1 + x * uu / 2);
  return x;
}

double w1_gaussian_1d_discretized(double mean_a, double stddev_a, double mean_b,
                                  double stddev_b, int n_atoms) {
  if (n_atoms < 2) throw ParamRange("need at least 2 atoms");
  std::vector<double> za(n_atoms), zb(n_atoms), mass(n_atoms, 1.0 / n_atoms);
  for (int k = 0; k < n_atoms; ++k) {
    const double z = inv_normal_cdf((k + 0.5) / n_atoms);
    za[k] = mean_a + stddev_a * z;
    zb[k] = mean_b + stddev_b * z;
  }
  std::vector<double> cost(static_cast<std::size_t>(n_atoms) * n_atoms);
  for (int i = 0; i < n_atoms; ++i)
    for (int j = 0; j < n_atoms; ++j)
      cost[static_cast<std::size_t>(i) * n_atoms + j] = std::fabs(za[i] - zb[j]);
  return transport_lp(mass, mass, cost, n_atoms, n_atoms).cost;
}

}  // namespace condbisim
