#include "condbisim/metric.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>

namespace condbisim {

PseudoMetric PseudoMetric::zero(int n) {
  PseudoMetric m;
  m.n = n;
  m.d.assign(static_cast<std::size_t>(n) * n, 0.0);
  return m;
}

double PseudoMetric::sup() const {
  double best = 0.0;
  for (double x : d) best = std::max(best, x);
  return best;
}

void PseudoMetric::validate(double triangle_tol) const {
  if (n <= 0 || d.size() != static_cast<std::size_t>(n) * n)
    throw ShapeMismatch("pseudometric table size mismatch");
  for (int i = 0; i < n; ++i) {
    if (at(i, i) != 0.0) throw ParamRange("pseudometric diagonal must be exactly zero");
    for (int j = 0; j < n; ++j) {
      if (!(at(i, j) >= 0.0)) throw ParamRange("pseudometric entries must be nonnegative");
      if (at(i, j) != at(j, i)) throw ParamRange("pseudometric must be symmetric");
    }
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        if (at(i, j) > at(i, k) + at(k, j) + triangle_tol)
          throw ParamRange("triangle inequality violated at (" + std::to_string(i) + "," +
                           std::to_string(j) + "," + std::to_string(k) + ")");
}

std::string PseudoMetric::to_csv() const {
  std::ostringstream out;
  auto label = [&](int i) {
    return i < static_cast<int>(labels.size()) ? labels[i] : "i" + std::to_string(i);
  };
  out << "index";
  for (int j = 0; j < n; ++j) out << ',' << label(j);
  out << '\n';
  char buf[40];
  for (int i = 0; i < n; ++i) {
    out << label(i);
    for (int j = 0; j < n; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", at(i, j));
      out << ',' << buf;
    }
    out << '\n';
  }
  return out.str();
}

void MetricConfig::validate() const {
  if (c == 0.0) {
    if (!allow_zero_c)
      throw ParamRange("c = 0 collapses the metric to reward differences; "
                       "set allow_zero_c to opt in");
  } else if (!(c > 0.0 && c < 1.0)) {
    throw ParamRange("c must lie in (0,1)");
  }
  if (!(tol > 0.0)) throw ParamRange("tol must be positive");
  if (max_iterations <= 0) throw ParamRange("max_iterations must be positive");
}

TransportResult wasserstein1(const std::vector<double>& p, const std::vector<double>& q,
                             const PseudoMetric& ground) {
  if (static_cast<int>(p.size()) != ground.n || static_cast<int>(q.size()) != ground.n)
    throw LengthMismatch("marginals must live on the ground metric's index set");
  return transport_lp(p, q, ground.d, ground.n, ground.n);
}

namespace {

// Shared fixed-point driver over any one-sweep operator.
template <class Op>
MetricResult iterate_metric(int n, const MetricConfig& cfg, Op op) {
  MetricResult out;
  out.metric = PseudoMetric::zero(n);
  while (true) {
    if (++out.iterations > cfg.max_iterations)
      throw NonConvergence("metric iteration exceeded iteration cap");
    PseudoMetric next = op(out.metric);
    double diff = 0.0;
    for (std::size_t k = 0; k < next.d.size(); ++k)
      diff = std::max(diff, std::fabs(next.d[k] - out.metric.d[k]));
    out.metric = std::move(next);
    out.residual = diff;
    // Contraction error bound: ||d_k - d*|| <= c/(1-c) * ||d_k - d_{k-1}||,
    // so this guarantees the returned table is within tol of the fixed point.
    if (diff * cfg.c <= cfg.tol * (1.0 - cfg.c)) return out;
  }
}

}  // namespace

PseudoMetric apply_metric_operator(const FiniteMDP& mdp, const MetricConfig& cfg,
                                   const PseudoMetric& d) {
  cfg.validate();
  if (d.n != mdp.n_states) throw ShapeMismatch("metric size disagrees with the MDP");
  const int n = mdp.n_states;
  PseudoMetric next = PseudoMetric::zero(n);
  next.labels = d.labels;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double best = 0.0;
      for (int a = 0; a < mdp.n_actions; ++a) {
        double term = (1.0 - cfg.c) * std::fabs(mdp.r(i, a) - mdp.r(j, a));
        if (cfg.c > 0.0) {
          const std::vector<double> pi_row(mdp.row(i, a), mdp.row(i, a) + n);
          const std::vector<double> pj_row(mdp.row(j, a), mdp.row(j, a) + n);
          term += cfg.c * transport_lp(pi_row, pj_row, d.d, n, n).cost;
        }
        best = std::max(best, term);
      }
      next.at(i, j) = next.at(j, i) = best;
    }
  return next;
}

PseudoMetric apply_pi_metric_operator(const FiniteMDP& mdp, const PolicyTable& pi,
                                      const MetricConfig& cfg, const PseudoMetric& d) {
  cfg.validate();
  if (d.n != mdp.n_states) throw ShapeMismatch("metric size disagrees with the MDP");
  if (pi.n_states != mdp.n_states || pi.n_actions != mdp.n_actions)
    throw ShapeMismatch("policy table shape disagrees with the MDP");
  const int n = mdp.n_states;
  std::vector<double> r_pi(n, 0.0);
  std::vector<double> p_pi(static_cast<std::size_t>(n) * n, 0.0);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      r_pi[s] += pi.pi(s, a) * mdp.r(s, a);
      const double* row = mdp.row(s, a);
      for (int t = 0; t < n; ++t) p_pi[static_cast<std::size_t>(s) * n + t] += pi.pi(s, a) * row[t];
    }
  PseudoMetric next = PseudoMetric::zero(n);
  next.labels = d.labels;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double term = (1.0 - cfg.c) * std::fabs(r_pi[i] - r_pi[j]);
      if (cfg.c > 0.0) {
        const std::vector<double> pi_row(p_pi.begin() + static_cast<std::size_t>(i) * n,
                                         p_pi.begin() + static_cast<std::size_t>(i) * n + n);
        const std::vector<double> pj_row(p_pi.begin() + static_cast<std::size_t>(j) * n,
                                         p_pi.begin() + static_cast<std::size_t>(j) * n + n);
        term += cfg.c * transport_lp(pi_row, pj_row, d.d, n, n).cost;
      }
      next.at(i, j) = next.at(j, i) = term;
    }
  return next;
}

MetricResult bisim_metric(const FiniteMDP& mdp, const MetricConfig& cfg) {
  cfg.validate();
  return iterate_metric(mdp.n_states, cfg, [&](const PseudoMetric& d) {
    return apply_metric_operator(mdp, cfg, d);
  });
}

MetricResult pi_bisim_metric(const FiniteMDP& mdp, const PolicyTable& pi,
                             const MetricConfig& cfg) {
  cfg.validate();
  return iterate_metric(mdp.n_states, cfg, [&](const PseudoMetric& d) {
    return apply_pi_metric_operator(mdp, pi, cfg, d);
  });
}

std::vector<std::vector<int>> zero_classes(const PseudoMetric& d, double tol) {
  std::vector<int> parent(d.n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (int i = 0; i < d.n; ++i)
    for (int j = i + 1; j < d.n; ++j)
      if (d.at(i, j) <= tol) parent[find(i)] = find(j);
  std::vector<std::vector<int>> blocks(d.n);
  for (int i = 0; i < d.n; ++i) blocks[find(i)].push_back(i);
  std::vector<std::vector<int>> out;
  for (auto& b : blocks)
    if (!b.empty()) out.push_back(std::move(b));
  std::sort(out.begin(), out.end(),
            [](const auto& x, const auto& y) { return x.front() < y.front(); });
  return out;
}

}  // namespace condbisim
