#include "condbisim/cmdp.hpp"

#include <cmath>
#include <cstring>

namespace condbisim {

double ContextSpace::distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw LengthMismatch("context vectors of unequal dimension");
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(acc);
}

double ContextSpace::distance(int i, int j) const {
  if (i < 0 || i >= size() || j < 0 || j >= size())
    throw IndexError("context index out of range");
  return distance(values[i], values[j]);
}

void ContextSpace::validate() const {
  if (values.empty()) throw ParamRange("context space must be non-empty");
  const std::size_t d = values[0].size();
  if (d == 0) throw ParamRange("context vectors must have positive dimension");
  for (const auto& v : values)
    if (v.size() != d) throw ShapeMismatch("context vectors of unequal dimension");
  if (dist.size() != values.size())
    throw ShapeMismatch("context distribution size mismatch");
  validate_distribution(dist, "context distribution");
}

void NoiseSpec::validate() const {
  if (dims <= 0 || n_values <= 0) throw ParamRange("noise spec must be non-empty");
  const std::size_t dv = static_cast<std::size_t>(dims) * n_values;
  if (values.size() != dv || initial.size() != dv ||
      transition.size() != dv * n_values)
    throw ShapeMismatch("noise spec table size mismatch");
  for (int d = 0; d < dims; ++d) {
    std::vector<double> init(init_row(d), init_row(d) + n_values);
    validate_distribution(init, "noise initial distribution");
    for (int v = 0; v < n_values; ++v) {
      std::vector<double> r(row(d, v), row(d, v) + n_values);
      validate_distribution(r, "noise transition row");
    }
    for (int v = 0; v < n_values; ++v) {
      const double x = value(d, v);
      if (x < 0.0 || x > 1.0) throw ParamRange("noise values must lie in [0,1]");
    }
  }
}

void NoiseChain::init(SplitRng& rng) {
  for (int d = 0; d < spec->dims; ++d) {
    std::vector<double> init(spec->init_row(d), spec->init_row(d) + spec->n_values);
    state[d] = rng.categorical(init);
  }
}

void NoiseChain::step(SplitRng& rng) {
  for (int d = 0; d < spec->dims; ++d) {
    std::vector<double> row(spec->row(d, state[d]), spec->row(d, state[d]) + spec->n_values);
    state[d] = rng.categorical(row);
  }
}

void NoiseChain::append_to(std::vector<double>& obs) const {
  for (int d = 0; d < spec->dims; ++d) obs.push_back(spec->value(d, state[d]));
}

std::vector<double> ObsRule::render(int s, double theta) const {
  const int n = dim();
  if (s < 0 || s >= static_cast<int>(perm.size())) throw IndexError("state out of range");
  std::vector<double> obs(n);
  for (int k = 0; k < n; ++k) obs[k] = ctx_coeff[k] * theta + ctx_offset[k];
  const int hot = perm[s];
  if (blend) {
    const int next = (hot + 1) % n;
    obs[hot] += 0.5 * (1.0 - theta) * gain[hot];
    obs[next] += 0.5 * theta * gain[next];
  } else {
    obs[hot] += 0.5 * gain[hot];
  }
  return obs;
}

std::vector<double> ContextualMDP::observe_core(int s, int ctx) const {
  if (s < 0 || s >= base.n_states) throw IndexError("state out of range");
  if (ctx < 0 || ctx >= contexts.size()) throw IndexError("context out of range");
  const double* p = core_obs(s, ctx);
  return std::vector<double>(p, p + obs_dim);
}

std::vector<double> ContextualMDP::observe_core_value(int s,
                                                      const std::vector<double>& theta) const {
  // Exact match against a declared context first; otherwise fall back to the
  // parametric rule, which is the only way to render an unseen context.
  for (int c = 0; c < contexts.size(); ++c)
    if (contexts.values[c] == theta) return observe_core(s, c);
  if (!rule) throw UnknownContext("context value outside the declared list and no parametric rule");
  if (theta.size() != 1) throw UnknownContext("parametric rule expects a scalar context");
  return rule->render(s, theta[0]);
}

void ContextualMDP::validate() const {
  base.validate();
  contexts.validate();
  if (obs_dim <= 0) throw ParamRange("obs_dim must be positive");
  const std::size_t expected =
      static_cast<std::size_t>(contexts.size()) * base.n_states * obs_dim;
  if (obs_map.size() != expected)
    throw ShapeMismatch("obs_map size " + std::to_string(obs_map.size()) + " vs expected " +
                        std::to_string(expected));
  for (double x : obs_map) {
    if (!std::isfinite(x)) throw NumericOverflow("non-finite observation entry");
    if (x < -1e-12 || x > 1.0 + 1e-12) throw ParamRange("observation entries must lie in [0,1]");
  }
  if (noise) noise->validate();
}

std::vector<double> observe(const ContextualMDP& cmdp, int s, int ctx, SplitRng* rng) {
  std::vector<double> obs = cmdp.observe_core(s, ctx);
  if (cmdp.noise) {
    if (!rng) throw ModeMismatch("observe on a noisy environment requires an rng");
    NoiseChain chain(*cmdp.noise);
    chain.init(*rng);
    chain.append_to(obs);
  }
  return obs;
}

BlockCheck check_block_structure(const ContextualMDP& cmdp) {
  // Jointly injective means observation collisions can only happen between
  // identical latent states. Core observation dims only; distractors are
  // sampled noise and never part of the identification argument.
  BlockCheck out;
  const int n = cmdp.base.n_states;
  const int k = cmdp.contexts.size();
  const int d = cmdp.obs_dim;
  for (int c1 = 0; c1 < k; ++c1)
    for (int s1 = 0; s1 < n; ++s1)
      for (int c2 = c1; c2 < k; ++c2)
        for (int s2 = (c2 == c1 ? s1 + 1 : 0); s2 < n; ++s2) {
          if (s1 == s2) continue;
          if (std::memcmp(cmdp.core_obs(s1, c1), cmdp.core_obs(s2, c2),
                          sizeof(double) * d) == 0) {
            out.holds = false;
            out.state_a = s1;
            out.ctx_a = c1;
            out.state_b = s2;
            out.ctx_b = c2;
            return out;
          }
        }
  return out;
}

std::pair<FiniteMDP, JointIndex> build_super_mdp(const ContextualMDP& cmdp) {
  const BlockCheck check = check_block_structure(cmdp);
  if (!check.holds)
    throw BlockStructureError("observations collide: state " + std::to_string(check.state_a) +
                              " (context " + std::to_string(check.ctx_a) + ") vs state " +
                              std::to_string(check.state_b) + " (context " +
                              std::to_string(check.ctx_b) + ")");
  const int n = cmdp.base.n_states;
  const int a = cmdp.base.n_actions;
  const int k = cmdp.contexts.size();

  JointIndex joint;
  joint.n_states = n;
  joint.entries.reserve(static_cast<std::size_t>(n) * k);
  for (int c = 0; c < k; ++c)
    for (int s = 0; s < n; ++s) joint.entries.push_back({s, c});

  FiniteMDP super;
  super.n_states = n * k;
  super.n_actions = a;
  super.discount = cmdp.base.discount;
  super.r_max = cmdp.base.r_max;
  super.transition.assign(static_cast<std::size_t>(n) * k * a * n * k, 0.0);
  super.reward.resize(static_cast<std::size_t>(n) * k * a);
  super.initial_dist.resize(static_cast<std::size_t>(n) * k);
  for (int h = 0; h < super.n_states; ++h) {
    const int s = joint.state_of(h);
    const int c = joint.ctx_of(h);
    super.initial_dist[h] = cmdp.base.initial_dist[s] * cmdp.contexts.dist[c];
    for (int act = 0; act < a; ++act) {
      super.r(h, act) = cmdp.base.r(s, act);
      for (int t = 0; t < n; ++t)
        super.p(h, act, joint.index(t, c)) = cmdp.base.p(s, act, t);
    }
  }
  return {std::move(super), std::move(joint)};
}

FiniteMDP extract_block(const FiniteMDP& super, const JointIndex& joint, int ctx,
                        const std::vector<double>& base_initial) {
  const int n = joint.n_states;
  if (ctx < 0 || ctx * n + n > super.n_states) throw IndexError("block context out of range");
  FiniteMDP block;
  block.n_states = n;
  block.n_actions = super.n_actions;
  block.discount = super.discount;
  block.r_max = super.r_max;
  block.initial_dist = base_initial;
  block.transition.resize(static_cast<std::size_t>(n) * super.n_actions * n);
  block.reward.resize(static_cast<std::size_t>(n) * super.n_actions);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < super.n_actions; ++a) {
      block.r(s, a) = super.r(joint.index(s, ctx), a);
      for (int t = 0; t < n; ++t)
        block.p(s, a, t) = super.p(joint.index(s, ctx), a, joint.index(t, ctx));
    }
  return block;
}

HomomorphismReport verify_homomorphism(const FiniteMDP& m, const FiniteMDP& target,
                                       const std::vector<int>& state_map,
                                       const std::vector<std::vector<int>>& action_maps,
                                       double tol) {
  if (static_cast<int>(state_map.size()) != m.n_states)
    throw MapDomainError("state_map must cover every state of the source MDP");
  if (static_cast<int>(action_maps.size()) != m.n_states)
    throw MapDomainError("action_maps must cover every state of the source MDP");
  for (int s = 0; s < m.n_states; ++s) {
    if (state_map[s] < 0 || state_map[s] >= target.n_states)
      throw MapDomainError("state_map image out of range");
    if (static_cast<int>(action_maps[s].size()) != m.n_actions)
      throw MapDomainError("action_maps must cover every action at every state");
    for (int a = 0; a < m.n_actions; ++a)
      if (action_maps[s][a] < 0 || action_maps[s][a] >= target.n_actions)
        throw MapDomainError("action_maps image out of range");
  }

  HomomorphismReport report;
  std::vector<double> mass(target.n_states);
  for (int s = 0; s < m.n_states; ++s) {
    for (int a = 0; a < m.n_actions; ++a) {
      const int fs = state_map[s];
      const int ga = action_maps[s][a];
      report.max_reward_violation =
          std::max(report.max_reward_violation, std::fabs(m.r(s, a) - target.r(fs, ga)));
      std::fill(mass.begin(), mass.end(), 0.0);
      for (int t = 0; t < m.n_states; ++t) mass[state_map[t]] += m.p(s, a, t);
      for (int u = 0; u < target.n_states; ++u)
        report.max_transition_violation =
            std::max(report.max_transition_violation, std::fabs(mass[u] - target.p(fs, ga, u)));
    }
  }
  report.holds = report.max_reward_violation <= tol && report.max_transition_violation <= tol;
  return report;
}

}  // namespace condbisim
