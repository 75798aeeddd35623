#include "condbisim/rcb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "condbisim/env_gen.hpp"
#include "condbisim/errors.hpp"
#include "condbisim/io.hpp"
#include "condbisim/solver.hpp"
#include "condbisim/version.hpp"

namespace condbisim {

namespace {

std::vector<double> softmax_over(const std::vector<double>& q, double tau) {
  std::vector<double> p(q.size());
  const double top = *std::max_element(q.begin(), q.end());
  double z = 0.0;
  for (std::size_t a = 0; a < q.size(); ++a) {
    p[a] = std::exp((q[a] - top) / tau);
    z += p[a];
  }
  for (double& v : p) v /= z;
  return p;
}

double soft_value(const std::vector<double>& q, double tau) {
  const double top = *std::max_element(q.begin(), q.end());
  double z = 0.0;
  for (double v : q) z += std::exp((v - top) / tau);
  return top + tau * std::log(z);
}

std::vector<double> render_with_noise(const ContextualMDP& cmdp, int s, int ctx,
                                      const std::vector<double>& noise_vals) {
  std::vector<double> obs = cmdp.observe_core(s, ctx);
  obs.insert(obs.end(), noise_vals.begin(), noise_vals.end());
  return obs;
}

}  // namespace

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
  if (capacity <= 0) throw ParamRange("replay capacity must be positive");
  data_.reserve(capacity);
}

void ReplayBuffer::push(Transition t) {
  if (!full_) {
    data_.push_back(std::move(t));
    head_ = static_cast<int>(data_.size()) % capacity_;
    if (static_cast<int>(data_.size()) == capacity_) full_ = true;
    if (full_) head_ = 0;
  } else {
    data_[head_] = std::move(t);
    head_ = (head_ + 1) % capacity_;
  }
}

const Transition& ReplayBuffer::at(int i) const {
  if (i < 0 || i >= size()) throw IndexError("replay index out of range");
  if (!full_) return data_[i];
  return data_[(head_ + i) % capacity_];
}

std::vector<int> ReplayBuffer::sample_indices(SplitRng& rng, int k) const {
  if (k > size()) throw LengthMismatch("batch larger than the replay buffer");
  return rng.sample_without_replacement(size(), k);
}

Codebook::Codebook(int capacity, double radius) : capacity_(capacity), radius_(radius) {
  if (capacity <= 0) throw ParamRange("codebook capacity must be positive");
  if (!(radius >= 0.0)) throw ParamRange("codebook radius must be >= 0");
}

int Codebook::encode(const std::vector<double>& y) const {
  if (centroids_.empty()) throw EmptyResults("codebook is empty");
  double best = std::numeric_limits<double>::infinity();
  int best_idx = 0;
  for (std::size_t i = 0; i < centroids_.size(); ++i) {
    if (centroids_[i].size() != y.size())
      throw DimensionMismatch("query dim does not match the codebook");
    double d = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) d += std::fabs(centroids_[i][k] - y[k]);
    if (d < best) {
      best = d;
      best_idx = static_cast<int>(i);
    }
  }
  return best_idx;
}

int Codebook::encode_or_add(const std::vector<double>& y) {
  if (centroids_.empty()) {
    centroids_.push_back(y);
    return 0;
  }
  const int nearest = encode(y);
  double d = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) d += std::fabs(centroids_[nearest][k] - y[k]);
  if (d <= radius_ || static_cast<int>(centroids_.size()) >= capacity_) return nearest;
  centroids_.push_back(y);
  return static_cast<int>(centroids_.size()) - 1;
}

nlohmann::json Codebook::to_json() const {
  return nlohmann::json{{"format", "condbisim/codebook/1"},
                        {"capacity", capacity_},
                        {"radius", radius_},
                        {"centroids", centroids_}};
}

Codebook Codebook::from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "condbisim/codebook/1")
    throw SchemaError("not a codebook checkpoint");
  Codebook cb(doc.at("capacity").get<int>(), doc.at("radius").get<double>());
  cb.centroids_ = doc.at("centroids").get<std::vector<std::vector<double>>>();
  return cb;
}

CodebookPolicy::CodebookPolicy(Codebook codebook, std::vector<std::vector<double>> q,
                               double temperature)
    : codebook_(std::move(codebook)), q_(std::move(q)), tau_(temperature) {
  if (!(temperature > 0.0)) throw ParamRange("policy temperature must be positive");
  if (static_cast<int>(q_.size()) != codebook_.size())
    throw ShapeMismatch("Q table rows do not match the codebook size");
}

int CodebookPolicy::n_actions() const {
  if (q_.empty()) throw EmptyResults("policy has no codes yet");
  return static_cast<int>(q_[0].size());
}

std::vector<double> CodebookPolicy::distribution(const std::vector<double>& y) const {
  return softmax_over(q_[codebook_.encode(y)], tau_);
}

void RCBConfig::validate() const {
  if (total_steps < 0 || initial_steps < 0) throw ParamRange("step counts must be >= 0");
  if (batch_size <= 0 || episode_len <= 0) throw ParamRange("batch/episode sizes must be positive");
  if (!(gamma >= 0.0) || gamma >= 1.0) throw ParamRange("gamma must lie in [0,1)");
  if (!(temperature > 0.0) || !(merl_temperature > 0.0))
    throw ParamRange("temperatures must be positive");
  if (encoder_lr <= 0.0 || dynamics_lr <= 0.0 || q_lr <= 0.0)
    throw ParamRange("learning rates must be positive");
  if (snapshot_period <= 0) throw ParamRange("snapshot_period must be positive");
  if (eval_period < 0 || eval_episodes <= 0 || eval_horizon <= 0)
    throw ParamRange("eval settings must be positive");
  if (codebook_capacity <= 0 || buffer_capacity <= 0)
    throw ParamRange("capacities must be positive");
  if (!(codebook_radius >= 0.0)) throw ParamRange("codebook radius must be >= 0");
  metric.validate();
}

void apply_preset(RepLossConfig& loss, const std::string& preset) {
  if (preset == "full") return;
  if (preset == "no-base") {
    loss.lambda_base = 0.0;
  } else if (preset == "no-cc") {
    loss.lambda_cc = 0.0;
  } else if (preset == "no-icc") {
    loss.lambda_icc = 0.0;
  } else if (preset == "no-cc-no-icc") {
    loss.lambda_cc = 0.0;
    loss.lambda_icc = 0.0;
  } else {
    throw ConfigError("unknown preset '" + preset + "'");
  }
}

namespace {

std::string theta2_schedule_name(Theta2Schedule s) {
  return s == Theta2Schedule::per_step ? "per_step" : "per_episode";
}

Theta2Schedule theta2_schedule_from(const std::string& s) {
  if (s == "per_step") return Theta2Schedule::per_step;
  if (s == "per_episode") return Theta2Schedule::per_episode;
  throw ConfigError("unknown theta2 schedule '" + s + "'");
}

std::string target_mode_name(TargetMode m) {
  switch (m) {
    case TargetMode::oracle_metric: return "oracle-metric";
    case TargetMode::model_w2: return "model-w2";
    case TargetMode::model_w1: return "model-w1";
  }
  throw ConfigError("bad target mode");
}

TargetMode target_mode_from(const std::string& s) {
  if (s == "oracle-metric") return TargetMode::oracle_metric;
  if (s == "model-w2") return TargetMode::model_w2;
  if (s == "model-w1") return TargetMode::model_w1;
  throw ConfigError("unknown target mode '" + s + "'");
}

}  // namespace

nlohmann::json rcb_config_to_json(const RCBConfig& cfg) {
  nlohmann::json doc;
  doc["total_steps"] = cfg.total_steps;
  doc["initial_steps"] = cfg.initial_steps;
  doc["batch_size"] = cfg.batch_size;
  doc["gamma"] = cfg.gamma;
  doc["temperature"] = cfg.temperature;
  doc["loss"] = {{"lambda_base", cfg.loss.lambda_base}, {"lambda_icc", cfg.loss.lambda_icc},
                 {"lambda_cc", cfg.loss.lambda_cc},     {"gamma_t", cfg.loss.gamma_t},
                 {"target_mode", target_mode_name(cfg.loss.target_mode)},
                 {"w1_atoms", cfg.loss.w1_atoms}};
  doc["arch"] = {{"arch", cfg.arch.arch},
                 {"out_dim", cfg.arch.out_dim},
                 {"hidden", cfg.arch.hidden},
                 {"use_context_input", cfg.arch.use_context_input},
                 {"context_blind", cfg.arch.context_blind},
                 {"init_scale", cfg.arch.init_scale}};
  doc["encoder_lr"] = cfg.encoder_lr;
  doc["dynamics_lr"] = cfg.dynamics_lr;
  doc["q_lr"] = cfg.q_lr;
  doc["episode_len"] = cfg.episode_len;
  doc["eval_period"] = cfg.eval_period;
  doc["eval_episodes"] = cfg.eval_episodes;
  doc["eval_horizon"] = cfg.eval_horizon;
  doc["snapshot_period"] = cfg.snapshot_period;
  doc["anneal"] = cfg.anneal;
  doc["theta2_schedule"] = theta2_schedule_name(cfg.theta2_schedule);
  doc["codebook_capacity"] = cfg.codebook_capacity;
  doc["codebook_radius"] = cfg.codebook_radius;
  doc["buffer_capacity"] = cfg.buffer_capacity;
  doc["train_contexts"] = cfg.train_contexts;
  doc["eval_contexts"] = cfg.eval_contexts;
  doc["metric"] = {{"c", cfg.metric.c},
                   {"allow_zero_c", cfg.metric.allow_zero_c},
                   {"tol", cfg.metric.tol},
                   {"max_iterations", cfg.metric.max_iterations}};
  doc["merl_temperature"] = cfg.merl_temperature;
  doc["track_delta"] = cfg.track_delta;
  doc["preset"] = cfg.preset;
  return doc;
}

RCBConfig rcb_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw SchemaError("rcb config must be a JSON object");
  RCBConfig cfg;
  auto geti = [&](const char* k, int d) { return doc.value(k, d); };
  auto getd = [&](const char* k, double d) { return doc.value(k, d); };
  cfg.total_steps = geti("total_steps", cfg.total_steps);
  cfg.initial_steps = geti("initial_steps", cfg.initial_steps);
  cfg.batch_size = geti("batch_size", cfg.batch_size);
  cfg.gamma = getd("gamma", cfg.gamma);
  cfg.temperature = getd("temperature", cfg.temperature);
  if (doc.contains("loss")) {
    const nlohmann::json& l = doc.at("loss");
    cfg.loss.lambda_base = l.value("lambda_base", cfg.loss.lambda_base);
    cfg.loss.lambda_icc = l.value("lambda_icc", cfg.loss.lambda_icc);
    cfg.loss.lambda_cc = l.value("lambda_cc", cfg.loss.lambda_cc);
    cfg.loss.gamma_t = l.value("gamma_t", cfg.loss.gamma_t);
    if (l.contains("target_mode"))
      cfg.loss.target_mode = target_mode_from(l.at("target_mode").get<std::string>());
    cfg.loss.w1_atoms = l.value("w1_atoms", cfg.loss.w1_atoms);
  }
  if (doc.contains("arch")) {
    const nlohmann::json& a = doc.at("arch");
    cfg.arch.arch = a.value("arch", cfg.arch.arch);
    cfg.arch.out_dim = a.value("out_dim", cfg.arch.out_dim);
    if (a.contains("hidden")) cfg.arch.hidden = a.at("hidden").get<std::vector<int>>();
    cfg.arch.use_context_input = a.value("use_context_input", cfg.arch.use_context_input);
    cfg.arch.context_blind = a.value("context_blind", cfg.arch.context_blind);
    cfg.arch.init_scale = a.value("init_scale", cfg.arch.init_scale);
  }
  cfg.encoder_lr = getd("encoder_lr", cfg.encoder_lr);
  cfg.dynamics_lr = getd("dynamics_lr", cfg.dynamics_lr);
  cfg.q_lr = getd("q_lr", cfg.q_lr);
  cfg.episode_len = geti("episode_len", cfg.episode_len);
  cfg.eval_period = geti("eval_period", cfg.eval_period);
  cfg.eval_episodes = geti("eval_episodes", cfg.eval_episodes);
  cfg.eval_horizon = geti("eval_horizon", cfg.eval_horizon);
  cfg.snapshot_period = geti("snapshot_period", cfg.snapshot_period);
  cfg.anneal = doc.value("anneal", cfg.anneal);
  if (doc.contains("theta2_schedule"))
    cfg.theta2_schedule = theta2_schedule_from(doc.at("theta2_schedule").get<std::string>());
  cfg.codebook_capacity = geti("codebook_capacity", cfg.codebook_capacity);
  cfg.codebook_radius = getd("codebook_radius", cfg.codebook_radius);
  cfg.buffer_capacity = geti("buffer_capacity", cfg.buffer_capacity);
  if (doc.contains("train_contexts"))
    cfg.train_contexts = doc.at("train_contexts").get<std::vector<int>>();
  if (doc.contains("eval_contexts"))
    cfg.eval_contexts = doc.at("eval_contexts").get<std::vector<int>>();
  if (doc.contains("metric")) {
    const nlohmann::json& m = doc.at("metric");
    cfg.metric.c = m.value("c", cfg.metric.c);
    cfg.metric.allow_zero_c = m.value("allow_zero_c", cfg.metric.allow_zero_c);
    cfg.metric.tol = m.value("tol", cfg.metric.tol);
    cfg.metric.max_iterations = m.value("max_iterations", cfg.metric.max_iterations);
  }
  cfg.merl_temperature = getd("merl_temperature", cfg.merl_temperature);
  cfg.track_delta = doc.value("track_delta", cfg.track_delta);
  cfg.preset = doc.value("preset", cfg.preset);
  cfg.validate();
  return cfg;
}

EvalPoint evaluate_across_contexts(const ContextualMDP& cmdp, const Embedding& phi,
                                   const EmbeddingPolicy& policy,
                                   const std::vector<std::vector<double>>& contexts,
                                   const EvalOptions& opts, std::uint64_t seed) {
  if (contexts.empty()) throw EmptyResults("no evaluation contexts given");
  if (opts.episodes_per_context <= 0 || opts.horizon <= 0)
    throw ParamRange("evaluation episode settings must be positive");

  EvalPoint out;
  out.exact = !cmdp.noise.has_value();
  const FiniteMDP& base = cmdp.base;

  auto render_core = [&](int s, int ctx_id, const std::vector<double>& theta) {
    if (ctx_id >= 0) return cmdp.observe_core(s, ctx_id);
    if (theta.size() != 1) throw UnknownContext("off-grid contexts must be scalar");
    return cmdp.observe_core_value(s, theta);
  };

  for (std::size_t ci = 0; ci < contexts.size(); ++ci) {
    const std::vector<double>& theta = contexts[ci];
    int ctx_id = -1;
    for (int c = 0; c < cmdp.n_contexts() && ctx_id < 0; ++c)
      if (cmdp.contexts.values[c] == theta) ctx_id = c;

    if (out.exact) {
      PolicyTable tab;
      tab.n_states = base.n_states;
      tab.n_actions = base.n_actions;
      for (int s = 0; s < base.n_states; ++s) {
        const std::vector<double> y = phi.forward(render_core(s, ctx_id, theta), ctx_id, theta);
        const std::vector<double> row = policy.distribution(y);
        tab.probs.insert(tab.probs.end(), row.begin(), row.end());
      }
      out.per_context.push_back(policy_evaluation(base, tab).j);
      out.stderr_per_context.push_back(0.0);
      continue;
    }

    double sum = 0.0, sumsq = 0.0;
    const std::uint64_t ctx_seed = derive_seed(seed, static_cast<std::uint64_t>(ci));
    for (int e = 0; e < opts.episodes_per_context; ++e) {
      SplitRng rng(derive_seed(ctx_seed, static_cast<std::uint64_t>(e)));
      int s = rng.categorical(base.initial_dist);
      NoiseChain chain(*cmdp.noise);
      chain.init(rng);
      double g = 0.0, disc = 1.0;
      for (int t = 0; t < opts.horizon; ++t) {
        std::vector<double> obs = render_core(s, ctx_id, theta);
        for (int d = 0; d < cmdp.noise->dims; ++d)
          obs.push_back(cmdp.noise->value(d, chain.state[d]));
        const int a = rng.categorical(policy.distribution(phi.forward(obs, ctx_id, theta)));
        g += disc * base.r(s, a);
        disc *= base.discount;
        const double* row = base.row(s, a);
        s = rng.categorical(std::vector<double>(row, row + base.n_states));
        chain.step(rng);
      }
      sum += g;
      sumsq += g * g;
    }
    const int n_ep = opts.episodes_per_context;
    const double mean = sum / n_ep;
    const double var = n_ep > 1 ? std::max(0.0, (sumsq - n_ep * mean * mean) / (n_ep - 1)) : 0.0;
    out.per_context.push_back(mean);
    out.stderr_per_context.push_back(n_ep > 1 ? std::sqrt(var / n_ep) : 0.0);
  }

  for (double v : out.per_context) out.mean += v;
  out.mean /= static_cast<double>(out.per_context.size());
  if (!std::isfinite(out.mean)) throw DivergenceGuard("evaluation return is not finite");
  return out;
}

RCBResult run_rcb(const ContextualMDP& cmdp, const RCBConfig& cfg_in, std::uint64_t seed) {
  RCBConfig cfg = cfg_in;
  apply_preset(cfg.loss, cfg.preset);
  cfg.validate();
  cmdp.validate();
  const FiniteMDP& base = cmdp.base;
  const int A = base.n_actions;

  std::vector<int> train_ctx = cfg.train_contexts;
  if (train_ctx.empty())
    for (int c = 0; c < cmdp.n_contexts(); ++c) train_ctx.push_back(c);
  for (int c : train_ctx)
    if (c < 0 || c >= cmdp.n_contexts()) throw IndexError("train context id out of range");
  std::vector<double> train_w(train_ctx.size());
  double w_sum = 0.0;
  for (std::size_t i = 0; i < train_ctx.size(); ++i) {
    train_w[i] = cmdp.contexts.dist[train_ctx[i]];
    w_sum += train_w[i];
  }
  if (w_sum <= 0.0) throw ConfigError("training contexts have zero total probability");
  for (double& w : train_w) w /= w_sum;

  std::vector<int> eval_ctx = cfg.eval_contexts;
  if (eval_ctx.empty())
    for (int c = 0; c < cmdp.n_contexts(); ++c) eval_ctx.push_back(c);
  std::vector<std::vector<double>> eval_values;
  for (int c : eval_ctx) {
    if (c < 0 || c >= cmdp.n_contexts()) throw IndexError("eval context id out of range");
    eval_values.push_back(cmdp.contexts.values[c]);
  }

  SplitRng root(seed);
  SplitRng rng_init = root.split("init");
  SplitRng rng_env = root.split("env");
  SplitRng rng_train = root.split("train");
  const std::uint64_t eval_seed = derive_seed(seed, std::string("eval"));

  Embedding phi = Embedding::make(cmdp, cfg.arch, rng_init);
  LatentDynamics dyn =
      cfg.arch.arch == "table"
          ? LatentDynamics::make_table(base.n_states, cmdp.n_contexts(), A, cfg.arch.out_dim,
                                       rng_init)
          : LatentDynamics::make_affine(cfg.arch.out_dim, A, rng_init);
  Codebook codebook(cfg.codebook_capacity, cfg.codebook_radius);
  std::vector<std::vector<double>> q;
  auto ensure_q = [&] {
    while (static_cast<int>(q.size()) < codebook.size()) q.emplace_back(A, 0.0);
  };

  const bool oracle_targets = cfg.loss.target_mode == TargetMode::oracle_metric;
  std::optional<PseudoMetric> d_oracle;
  if (cfg.track_delta || oracle_targets) {
    const SoftValueIteration soft = soft_value_iteration(base, cfg.merl_temperature);
    d_oracle = pi_bisim_metric(base, soft.policy, cfg.metric).metric;
  }

  ReplayBuffer buffer(cfg.buffer_capacity);
  RCBResult result{std::move(phi), std::move(dyn),
                   CodebookPolicy(Codebook(1, 0.0), {}, cfg.temperature), {}, {}, {}};
  Embedding frozen = result.phi;
  RepLossTerms last_loss;
  std::vector<double> recent_returns;
  int episodes_done = 0;
  int global_step = 0;
  int train_steps = 0;

  auto make_train_batch = [&](const std::vector<int>& idx, const std::vector<int>& theta2) {
    TransitionBatch b;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const Transition& tr = buffer.at(idx[i]);
      const int c2 = theta2[i];
      b.obs1_t.push_back(render_with_noise(cmdp, tr.s, tr.ctx, tr.noise_t));
      b.obs1_next.push_back(render_with_noise(cmdp, tr.s_next, tr.ctx, tr.noise_next));
      b.obs2_t.push_back(render_with_noise(cmdp, tr.s, c2, tr.noise_t));
      b.obs2_next.push_back(render_with_noise(cmdp, tr.s_next, c2, tr.noise_next));
      b.theta1.push_back(cmdp.contexts.values[tr.ctx]);
      b.theta2.push_back(cmdp.contexts.values[c2]);
      b.ctx1.push_back(tr.ctx);
      b.ctx2.push_back(c2);
      b.action.push_back(tr.a);
      b.reward.push_back(tr.reward);
      b.state_t.push_back(tr.s);
      b.state_next.push_back(tr.s_next);
    }
    return b;
  };

  auto train_update = [&] {
    if (train_steps % cfg.snapshot_period == 0) frozen = result.phi;
    const int bsz = std::min(cfg.batch_size, buffer.size());
    const std::vector<int> idx = buffer.sample_indices(rng_train, bsz);
    std::vector<int> theta2(bsz);
    for (int i = 0; i < bsz; ++i) {
      if (cfg.theta2_schedule == Theta2Schedule::per_step)
        theta2[i] = train_ctx[rng_train.categorical(train_w)];
      else
        theta2[i] = buffer.at(idx[i]).theta2_episode;
    }
    const TransitionBatch batch = make_train_batch(idx, theta2);
    const std::vector<int> perm = rng_train.permutation(bsz);
    std::vector<std::pair<int, int>> pairs(bsz);
    for (int i = 0; i < bsz; ++i) pairs[i] = {i, perm[i]};

    RepLossConfig lcfg = cfg.loss;
    if (cfg.anneal)
      lcfg.anneal_weight =
          1.8 - 0.8 * std::pow(2.0, static_cast<double>(global_step) /
                                        std::max(1, cfg.total_steps));
    const std::vector<double> targets =
        oracle_targets ? compute_targets(batch, pairs, *d_oracle)
                       : compute_targets(batch, pairs, frozen, result.dynamics, lcfg);
    const RepLossResult res =
        rep_loss_and_grad(batch, pairs, result.phi, frozen, targets, lcfg);
    std::vector<double>& p = result.phi.params();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= cfg.encoder_lr * res.grad[i];
    for (double v : p)
      if (!std::isfinite(v) || std::fabs(v) > 1e6)
        throw DivergenceGuard("encoder parameters diverged");

    fit_latent_dynamics(result.dynamics, frozen, batch, cfg.dynamics_lr);

    // Tabular soft Q on codebook codes, replayed from the same batch.
    for (int i = 0; i < bsz; ++i) {
      const int c_t = codebook.encode_or_add(
          result.phi.forward(batch.obs1_t[i], batch.ctx1[i], batch.theta1[i]));
      const int c_n = codebook.encode_or_add(
          result.phi.forward(batch.obs1_next[i], batch.ctx1[i], batch.theta1[i]));
      ensure_q();
      const double target = batch.reward[i] + cfg.gamma * soft_value(q[c_n], cfg.temperature);
      q[c_t][batch.action[i]] += cfg.q_lr * (target - q[c_t][batch.action[i]]);
    }
    last_loss = res.loss;
    ++train_steps;
  };

  auto eval_row = [&] {
    CurveRow row;
    row.step = global_step;
    row.episodes = episodes_done;
    double tr_mean = 0.0;
    for (double r : recent_returns) tr_mean += r;
    row.train_return = recent_returns.empty()
                           ? 0.0
                           : tr_mean / static_cast<double>(recent_returns.size());
    ensure_q();
    if (codebook.size() > 0) {
      const CodebookPolicy pol(codebook, q, cfg.temperature);
      row.eval = evaluate_across_contexts(
          cmdp, result.phi, pol, eval_values,
          EvalOptions{cfg.eval_episodes, cfg.eval_horizon},
          derive_seed(eval_seed, static_cast<std::uint64_t>(result.curve.size())));
    }
    row.loss = last_loss;
    if (d_oracle) {
      row.delta = compute_delta(cmdp, result.phi, *d_oracle);
      row.icc = icc_residual(cmdp, result.phi);
    }
    row.codebook_size = codebook.size();
    result.curve.push_back(row);
  };

  while (global_step < cfg.total_steps) {
    const int ctx = train_ctx[rng_env.categorical(train_w)];
    const int theta2_ep = train_ctx[rng_env.categorical(train_w)];
    int s = rng_env.categorical(base.initial_dist);
    std::optional<NoiseChain> chain;
    if (cmdp.noise) {
      chain.emplace(*cmdp.noise);
      chain->init(rng_env);
    }
    double ep_return = 0.0;
    for (int t = 0; t < cfg.episode_len && global_step < cfg.total_steps; ++t) {
      Transition tr;
      tr.s = s;
      tr.ctx = ctx;
      tr.theta2_episode = theta2_ep;
      if (cmdp.noise)
        for (int d = 0; d < cmdp.noise->dims; ++d)
          tr.noise_t.push_back(cmdp.noise->value(d, chain->state[d]));

      const std::vector<double> obs = render_with_noise(cmdp, s, ctx, tr.noise_t);
      const std::vector<double> y = result.phi.forward(obs, ctx, cmdp.contexts.values[ctx]);
      const int code = codebook.encode_or_add(y);
      ensure_q();
      tr.a = rng_env.categorical(softmax_over(q[code], cfg.temperature));
      tr.reward = base.r(s, tr.a);
      ep_return += tr.reward;
      const double* row = base.row(s, tr.a);
      tr.s_next = rng_env.categorical(std::vector<double>(row, row + base.n_states));
      if (cmdp.noise) {
        chain->step(rng_env);
        for (int d = 0; d < cmdp.noise->dims; ++d)
          tr.noise_next.push_back(cmdp.noise->value(d, chain->state[d]));
      }
      s = tr.s_next;
      result.stream.push_back({tr.s, tr.a, tr.s_next});
      buffer.push(std::move(tr));
      ++global_step;

      if (global_step > cfg.initial_steps && buffer.size() >= 2) train_update();
      if (cfg.eval_period > 0 && global_step % cfg.eval_period == 0) eval_row();
    }
    ++episodes_done;
    recent_returns.push_back(ep_return);
    if (recent_returns.size() > 10) recent_returns.erase(recent_returns.begin());
  }
  if (global_step > 0 && (result.curve.empty() || result.curve.back().step != global_step))
    eval_row();

  ensure_q();
  result.policy = CodebookPolicy(codebook, q, cfg.temperature);

  const nlohmann::json cfg_doc = rcb_config_to_json(cfg);
  result.manifest = {{"schema", "condbisim/run/1"},
                     {"version", kVersion},
                     {"seed", seed},
                     {"env_hash", env_hash(cmdp)},
                     {"config", cfg_doc},
                     {"config_hash", content_hash(cfg_doc.dump())},
                     {"preset", cfg.preset},
                     {"steps", global_step},
                     {"episodes", episodes_done},
                     {"train_steps", train_steps},
                     {"codebook_size", codebook.size()}};
  return result;
}

std::string curve_csv(const std::vector<CurveRow>& curve, int n_eval_contexts) {
  std::vector<std::string> header = {"step", "episodes", "train_return", "eval_mean",
                                     "eval_exact"};
  for (int c = 0; c < n_eval_contexts; ++c) {
    header.push_back("eval_j_" + std::to_string(c));
    header.push_back("eval_se_" + std::to_string(c));
  }
  for (const char* name : {"loss_total", "loss_base", "loss_icc", "loss_cc", "delta",
                           "icc_residual", "codebook_size"})
    header.push_back(name);
  CsvWriter csv(header);
  for (const CurveRow& r : curve) {
    if (static_cast<int>(r.eval.per_context.size()) != n_eval_contexts &&
        !r.eval.per_context.empty())
      throw LengthMismatch("curve row context count does not match the header");
    std::vector<std::string> row = {fmt17(r.step), fmt17(r.episodes), fmt17(r.train_return),
                                    fmt17(r.eval.mean), r.eval.exact ? "1" : "0"};
    for (int c = 0; c < n_eval_contexts; ++c) {
      row.push_back(fmt17(c < static_cast<int>(r.eval.per_context.size())
                              ? r.eval.per_context[c]
                              : 0.0));
      row.push_back(fmt17(c < static_cast<int>(r.eval.stderr_per_context.size())
                              ? r.eval.stderr_per_context[c]
                              : 0.0));
    }
    row.push_back(fmt17(r.loss.total));
    row.push_back(fmt17(r.loss.base));
    row.push_back(fmt17(r.loss.icc));
    row.push_back(fmt17(r.loss.cc));
    row.push_back(fmt17(r.delta));
    row.push_back(fmt17(r.icc));
    row.push_back(fmt17(r.codebook_size));
    csv.add_row(row);
  }
  return csv.str();
}

}  // namespace condbisim
