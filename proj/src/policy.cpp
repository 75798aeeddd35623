#include "condbisim/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "condbisim/errors.hpp"

namespace condbisim {

LinearSoftmaxPolicy::LinearSoftmaxPolicy(int latent_dim, int n_actions, double temperature,
                                         SplitRng& rng)
    : m_(latent_dim), n_actions_(n_actions), tau_(temperature) {
  if (latent_dim <= 0 || n_actions <= 0) throw ParamRange("policy dims must be positive");
  if (!(temperature > 0.0)) throw ParamRange("policy temperature must be positive");
  params_.resize(static_cast<std::size_t>(n_actions) * latent_dim + n_actions);
  const double scale = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  for (std::size_t i = 0; i < static_cast<std::size_t>(n_actions) * latent_dim; ++i)
    params_[i] = rng.uniform(-scale, scale);
}

std::vector<double> LinearSoftmaxPolicy::distribution(const std::vector<double>& y) const {
  if (static_cast<int>(y.size()) != m_)
    throw DimensionMismatch("embedding dim does not match the policy input");
  std::vector<double> logits(n_actions_);
  const double* b = params_.data() + static_cast<std::size_t>(n_actions_) * m_;
  for (int a = 0; a < n_actions_; ++a) {
    double acc = b[a];
    const double* w = params_.data() + static_cast<std::size_t>(a) * m_;
    for (int k = 0; k < m_; ++k) acc += w[k] * y[k];
    logits[a] = acc / tau_;
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) {
    l = std::exp(l - top);
    z += l;
  }
  for (double& l : logits) l /= z;
  return logits;
}

NearestAnchorPolicy NearestAnchorPolicy::lift(const ContextualMDP& cmdp, const Embedding& phi,
                                              const PolicyTable& base_policy) {
  if (base_policy.n_states != cmdp.base.n_states ||
      base_policy.n_actions != cmdp.base.n_actions)
    throw ShapeMismatch("base policy shape does not match the environment");
  base_policy.validate();
  NearestAnchorPolicy p;
  p.n_actions_ = base_policy.n_actions;
  for (int c = 0; c < cmdp.n_contexts(); ++c) {
    for (int s = 0; s < cmdp.base.n_states; ++s) {
      p.anchors_.push_back(grid_embed(cmdp, phi, s, c, c));
      p.rows_.push_back(std::vector<double>(
          base_policy.probs.begin() + static_cast<std::size_t>(s) * base_policy.n_actions,
          base_policy.probs.begin() + static_cast<std::size_t>(s + 1) * base_policy.n_actions));
    }
  }
  return p;
}

int NearestAnchorPolicy::nearest(const std::vector<double>& y) const {
  if (anchors_.empty()) throw EmptyResults("anchor policy has no anchors");
  double best = std::numeric_limits<double>::infinity();
  int best_idx = -1;
  for (std::size_t i = 0; i < anchors_.size(); ++i) {
    if (anchors_[i].size() != y.size())
      throw DimensionMismatch("query dim does not match the anchor dim");
    double d = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) d += std::fabs(anchors_[i][k] - y[k]);
    if (d < best) {
      best = d;
      best_idx = static_cast<int>(i);
    }
  }
  return best_idx;
}

std::vector<double> NearestAnchorPolicy::distribution(const std::vector<double>& y) const {
  return rows_[nearest(y)];
}

PolicyTable induced_policy(const ContextualMDP& cmdp, const Embedding& phi,
                           const EmbeddingPolicy& pi, int ctx_in, int ctx_env) {
  if (pi.n_actions() != cmdp.base.n_actions)
    throw ShapeMismatch("policy action count does not match the environment");
  PolicyTable table;
  table.n_states = cmdp.base.n_states;
  table.n_actions = cmdp.base.n_actions;
  table.probs.reserve(static_cast<std::size_t>(table.n_states) * table.n_actions);
  for (int s = 0; s < cmdp.base.n_states; ++s) {
    const std::vector<double> row = pi.distribution(grid_embed(cmdp, phi, s, ctx_env, ctx_in));
    table.probs.insert(table.probs.end(), row.begin(), row.end());
  }
  table.validate();
  return table;
}

PolicyEvaluation cross_context_policy_value(const ContextualMDP& cmdp, const Embedding& phi,
                                            const EmbeddingPolicy& pi, int ctx_in, int ctx_env) {
  return policy_evaluation(cmdp.base, induced_policy(cmdp, phi, pi, ctx_in, ctx_env));
}

}  // namespace condbisim
