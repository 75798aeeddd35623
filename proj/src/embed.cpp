#include "condbisim/embed.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "condbisim/errors.hpp"
#include "condbisim/io.hpp"
#include "condbisim/solver.hpp"

namespace condbisim {

namespace {

double softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

double l1_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionMismatch("embedding dims differ in L1 distance");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += std::fabs(a[k] - b[k]);
  return s;
}

// Stationary-mean rendering for distractor dims so grid evaluations are
// deterministic functions of (state, context) alone.
void pad_neutral_noise(const ContextualMDP& cmdp, const Embedding& phi, std::vector<double>& obs) {
  const int need = phi.obs_input_dim();
  if (static_cast<int>(obs.size()) == need) return;
  if (static_cast<int>(obs.size()) > need) {
    obs.resize(need);
    return;
  }
  if (!cmdp.noise.has_value())
    throw DimensionMismatch("observation smaller than embedding input and no noise dims to pad");
  const NoiseSpec& spec = *cmdp.noise;
  for (int d = 0; d < spec.dims && static_cast<int>(obs.size()) < need; ++d) {
    double mean = 0.0;
    for (int v = 0; v < spec.n_values; ++v) mean += spec.init_row(d)[v] * spec.value(d, v);
    obs.push_back(mean);
  }
  if (static_cast<int>(obs.size()) != need)
    throw DimensionMismatch("observation dims cannot be padded to the embedding input size");
}

}  // namespace

Embedding Embedding::make(const ContextualMDP& cmdp, const EmbeddingConfig& cfg, SplitRng& rng) {
  Embedding e;
  e.out_dim_ = cfg.out_dim;
  if (cfg.out_dim <= 0) throw ParamRange("embedding out_dim must be positive");
  if (cfg.arch == "table") {
    e.arch_ = "table";
    e.context_blind_ = cfg.context_blind;
    e.n_states_ = cmdp.base.n_states;
    e.core_dim_ = cmdp.obs_dim;
    e.obs_input_dim_ = cmdp.obs_dim;
    const int k = cmdp.n_contexts();
    e.registry_obs_.reserve(static_cast<std::size_t>(k) * cmdp.base.n_states);
    for (int c = 0; c < k; ++c) {
      for (int s = 0; s < cmdp.base.n_states; ++s) {
        e.registry_obs_.push_back(cmdp.observe_core(s, c));
        e.registry_state_.push_back(s);
      }
    }
    e.ctx_values_ = cmdp.contexts.values;
    const int rows = e.n_states_ * (cfg.context_blind ? 1 : k);
    e.params_.resize(static_cast<std::size_t>(rows) * cfg.out_dim);
    for (double& p : e.params_) p = rng.uniform(-cfg.init_scale, cfg.init_scale);
  } else if (cfg.arch == "mlp") {
    e.arch_ = "mlp";
    e.use_context_input_ = cfg.use_context_input;
    e.obs_input_dim_ = cmdp.total_obs_dim();
    e.ctx_dim_ = cmdp.contexts.dim();
    e.ctx_values_ = cmdp.contexts.values;
    const int in = e.obs_input_dim_ + (cfg.use_context_input ? e.ctx_dim_ : 0);
    e.widths_.push_back(in);
    for (int h : cfg.hidden) {
      if (h <= 0) throw ParamRange("mlp hidden width must be positive");
      e.widths_.push_back(h);
    }
    e.widths_.push_back(cfg.out_dim);
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < e.widths_.size(); ++l) {
      e.w_off_.push_back(total);
      total += static_cast<std::size_t>(e.widths_[l + 1]) * e.widths_[l];
      e.b_off_.push_back(total);
      total += static_cast<std::size_t>(e.widths_[l + 1]);
    }
    e.params_.assign(total, 0.0);
    for (std::size_t l = 0; l + 1 < e.widths_.size(); ++l) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(e.widths_[l]));
      const std::size_t n_w = static_cast<std::size_t>(e.widths_[l + 1]) * e.widths_[l];
      for (std::size_t i = 0; i < n_w; ++i) e.params_[e.w_off_[l] + i] = rng.uniform(-scale, scale);
    }
  } else {
    throw UnknownKind("embedding arch must be 'table' or 'mlp', got '" + cfg.arch + "'");
  }
  return e;
}

int Embedding::table_row(int sid, int ctx) const {
  const int n_ctx_eff = context_blind_ ? 1 : static_cast<int>(ctx_values_.size());
  const int c = context_blind_ ? 0 : ctx;
  return sid * n_ctx_eff + c;
}

int Embedding::decode_state(const std::vector<double>& obs) const {
  if (arch_ != "table") throw ModeMismatch("decode_state is only defined for table embeddings");
  if (static_cast<int>(obs.size()) < core_dim_)
    throw DimensionMismatch("observation shorter than the registry's core dims");
  for (std::size_t e = 0; e < registry_obs_.size(); ++e) {
    if (std::memcmp(registry_obs_[e].data(), obs.data(), sizeof(double) * core_dim_) == 0)
      return registry_state_[e];
  }
  double best = std::numeric_limits<double>::infinity();
  int best_state = -1;
  for (std::size_t e = 0; e < registry_obs_.size(); ++e) {
    double d = 0.0;
    for (int k = 0; k < core_dim_; ++k) d += std::fabs(registry_obs_[e][k] - obs[k]);
    if (d < best || (d == best && registry_state_[e] < best_state)) {
      best = d;
      best_state = registry_state_[e];
    }
  }
  if (best_state < 0) throw IndexError("empty observation registry");
  return best_state;
}

std::vector<double> Embedding::mlp_input(const std::vector<double>& obs,
                                         const std::vector<double>& theta) const {
  if (static_cast<int>(obs.size()) != obs_input_dim_)
    throw DimensionMismatch("mlp observation input has dim " + std::to_string(obs.size()) +
                            ", expected " + std::to_string(obs_input_dim_));
  std::vector<double> in = obs;
  if (use_context_input_) {
    if (static_cast<int>(theta.size()) != ctx_dim_)
      throw DimensionMismatch("context value has dim " + std::to_string(theta.size()) +
                              ", expected " + std::to_string(ctx_dim_));
    in.insert(in.end(), theta.begin(), theta.end());
  }
  return in;
}

std::vector<double> Embedding::forward(const std::vector<double>& obs, int ctx_id,
                                       const std::vector<double>& theta) const {
  if (arch_ == "table") {
    const int sid = decode_state(obs);
    int c = ctx_id;
    if (!context_blind_) {
      if (c < 0) {
        for (std::size_t i = 0; i < ctx_values_.size() && c < 0; ++i)
          if (ctx_values_[i] == theta) c = static_cast<int>(i);
        if (c < 0) throw UnknownContext("table embedding has no row for the given context value");
      }
      if (c >= static_cast<int>(ctx_values_.size()))
        throw IndexError("context id out of range for table embedding");
    } else {
      c = 0;
    }
    const std::size_t off = static_cast<std::size_t>(table_row(sid, c)) * out_dim_;
    return std::vector<double>(params_.begin() + off, params_.begin() + off + out_dim_);
  }
  // mlp
  std::vector<double> a = mlp_input(obs, theta);
  const std::size_t n_layers = widths_.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int rows = widths_[l + 1], cols = widths_[l];
    std::vector<double> z(rows, 0.0);
    const double* w = params_.data() + w_off_[l];
    const double* b = params_.data() + b_off_[l];
    for (int i = 0; i < rows; ++i) {
      double acc = b[i];
      const double* wi = w + static_cast<std::size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) acc += wi[j] * a[j];
      z[i] = (l + 1 < n_layers) ? std::tanh(acc) : acc;
    }
    a = std::move(z);
  }
  return a;
}

void Embedding::backward(const std::vector<double>& obs, int ctx_id,
                         const std::vector<double>& theta, const std::vector<double>& grad_out,
                         std::vector<double>& grad_params) const {
  if (grad_params.size() != params_.size())
    throw DimensionMismatch("gradient buffer size does not match parameter count");
  if (static_cast<int>(grad_out.size()) != out_dim_)
    throw DimensionMismatch("output gradient has the wrong dim");
  if (arch_ == "table") {
    const int sid = decode_state(obs);
    int c = ctx_id;
    if (!context_blind_) {
      if (c < 0) {
        for (std::size_t i = 0; i < ctx_values_.size() && c < 0; ++i)
          if (ctx_values_[i] == theta) c = static_cast<int>(i);
        if (c < 0) throw UnknownContext("table embedding has no row for the given context value");
      }
    } else {
      c = 0;
    }
    const std::size_t off = static_cast<std::size_t>(table_row(sid, c)) * out_dim_;
    for (int k = 0; k < out_dim_; ++k) grad_params[off + k] += grad_out[k];
    return;
  }
  // mlp: recompute activations, then backpropagate.
  const std::size_t n_layers = widths_.size() - 1;
  std::vector<std::vector<double>> acts;
  acts.push_back(mlp_input(obs, theta));
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int rows = widths_[l + 1], cols = widths_[l];
    std::vector<double> z(rows, 0.0);
    const double* w = params_.data() + w_off_[l];
    const double* b = params_.data() + b_off_[l];
    for (int i = 0; i < rows; ++i) {
      double acc = b[i];
      const double* wi = w + static_cast<std::size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) acc += wi[j] * acts[l][j];
      z[i] = (l + 1 < n_layers) ? std::tanh(acc) : acc;
    }
    acts.push_back(std::move(z));
  }
  std::vector<double> delta = grad_out;
  for (std::size_t l = n_layers; l-- > 0;) {
    const int rows = widths_[l + 1], cols = widths_[l];
    double* gw = grad_params.data() + w_off_[l];
    double* gb = grad_params.data() + b_off_[l];
    const std::vector<double>& a_in = acts[l];
    for (int i = 0; i < rows; ++i) {
      gb[i] += delta[i];
      double* gwi = gw + static_cast<std::size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) gwi[j] += delta[i] * a_in[j];
    }
    if (l == 0) break;
    const double* w = params_.data() + w_off_[l];
    std::vector<double> prev(cols, 0.0);
    for (int i = 0; i < rows; ++i) {
      const double* wi = w + static_cast<std::size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) prev[j] += wi[j] * delta[i];
    }
    for (int j = 0; j < cols; ++j) prev[j] *= 1.0 - a_in[j] * a_in[j];
    delta = std::move(prev);
  }
}

nlohmann::json Embedding::to_json() const {
  nlohmann::json doc;
  doc["format"] = "condbisim/embedding/1";
  doc["arch"] = arch_;
  doc["out_dim"] = out_dim_;
  doc["obs_input_dim"] = obs_input_dim_;
  doc["ctx_values"] = ctx_values_;
  if (arch_ == "table") {
    doc["context_blind"] = context_blind_;
    doc["n_states"] = n_states_;
    doc["core_dim"] = core_dim_;
    doc["registry_obs"] = registry_obs_;
    doc["registry_state"] = registry_state_;
  } else {
    doc["use_context_input"] = use_context_input_;
    doc["ctx_dim"] = ctx_dim_;
    doc["widths"] = widths_;
  }
  doc["params"] = params_;
  return doc;
}

Embedding Embedding::from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "condbisim/embedding/1")
    throw SchemaError("not an embedding checkpoint");
  Embedding e;
  e.arch_ = doc.at("arch").get<std::string>();
  e.out_dim_ = doc.at("out_dim").get<int>();
  e.obs_input_dim_ = doc.at("obs_input_dim").get<int>();
  e.ctx_values_ = doc.at("ctx_values").get<std::vector<std::vector<double>>>();
  if (e.arch_ == "table") {
    e.context_blind_ = doc.at("context_blind").get<bool>();
    e.n_states_ = doc.at("n_states").get<int>();
    e.core_dim_ = doc.at("core_dim").get<int>();
    e.registry_obs_ = doc.at("registry_obs").get<std::vector<std::vector<double>>>();
    e.registry_state_ = doc.at("registry_state").get<std::vector<int>>();
  } else if (e.arch_ == "mlp") {
    e.use_context_input_ = doc.at("use_context_input").get<bool>();
    e.ctx_dim_ = doc.at("ctx_dim").get<int>();
    e.widths_ = doc.at("widths").get<std::vector<int>>();
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < e.widths_.size(); ++l) {
      e.w_off_.push_back(total);
      total += static_cast<std::size_t>(e.widths_[l + 1]) * e.widths_[l];
      e.b_off_.push_back(total);
      total += static_cast<std::size_t>(e.widths_[l + 1]);
    }
  } else {
    throw SchemaError("unknown embedding arch '" + e.arch_ + "'");
  }
  e.params_ = doc.at("params").get<std::vector<double>>();
  return e;
}

std::vector<double> grid_embed(const ContextualMDP& cmdp, const Embedding& phi, int s,
                               int ctx_obs, int ctx_in) {
  std::vector<double> obs = cmdp.observe_core(s, ctx_obs);
  pad_neutral_noise(cmdp, phi, obs);
  if (ctx_in < 0 || ctx_in >= cmdp.n_contexts()) throw IndexError("context id out of range");
  return phi.forward(obs, ctx_in, cmdp.contexts.values[ctx_in]);
}

std::vector<double> grid_embed_value(const ContextualMDP& cmdp, const Embedding& phi, int s,
                                     const std::vector<double>& theta) {
  if (theta.size() != 1 || cmdp.contexts.dim() != 1)
    throw ModeMismatch("value-keyed rendering requires scalar contexts");
  std::vector<double> obs = cmdp.observe_core_value(s, theta);
  pad_neutral_noise(cmdp, phi, obs);
  int ctx_id = -1;
  for (int c = 0; c < cmdp.n_contexts() && ctx_id < 0; ++c)
    if (cmdp.contexts.values[c] == theta) ctx_id = c;
  return phi.forward(obs, ctx_id, theta);
}

void TransitionBatch::validate() const {
  const std::size_t n = action.size();
  if (obs1_t.size() != n || obs1_next.size() != n || obs2_t.size() != n || obs2_next.size() != n ||
      theta1.size() != n || theta2.size() != n || ctx1.size() != n || ctx2.size() != n ||
      reward.size() != n || state_t.size() != n || state_next.size() != n)
    throw LengthMismatch("transition batch columns have inconsistent lengths");
}

RepLossResult rep_loss_and_grad(const TransitionBatch& batch,
                                const std::vector<std::pair<int, int>>& pairs,
                                const Embedding& phi, const Embedding& phi_frozen,
                                const std::vector<double>& targets, const RepLossConfig& cfg) {
  batch.validate();
  if (targets.size() != pairs.size())
    throw LengthMismatch("one target per pair is required");
  RepLossResult out;
  out.grad.assign(phi.params().size(), 0.0);
  if (pairs.empty()) return out;

  const int n = batch.size();
  // Embeddings per (entry, slot); slot 0 renders under the collection context,
  // slot 1 under the alternate context.
  std::vector<std::vector<double>> live(static_cast<std::size_t>(n) * 2),
      frozen(static_cast<std::size_t>(n) * 2);
  std::vector<char> have(static_cast<std::size_t>(n) * 2, 0);
  auto inputs = [&](int e, int slot) -> std::tuple<const std::vector<double>&, int,
                                                   const std::vector<double>&> {
    if (slot == 0) return {batch.obs1_t[e], batch.ctx1[e], batch.theta1[e]};
    return {batch.obs2_t[e], batch.ctx2[e], batch.theta2[e]};
  };
  auto ensure = [&](int e, int slot) {
    const std::size_t idx = static_cast<std::size_t>(e) * 2 + slot;
    if (have[idx]) return;
    auto [obs, cid, th] = inputs(e, slot);
    live[idx] = phi.forward(obs, cid, th);
    frozen[idx] = phi_frozen.forward(obs, cid, th);
    have[idx] = 1;
  };

  const double inv_pairs = 1.0 / static_cast<double>(pairs.size());
  const double w_base = cfg.anneal_weight * cfg.lambda_base;
  const double w_icc = cfg.anneal_weight * cfg.lambda_icc;
  const double w_cc = cfg.anneal_weight * cfg.lambda_cc;

  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    if (i < 0 || i >= n || j < 0 || j >= n) throw IndexError("pair index out of batch range");
    const bool first_live = (k % 2 == 0);
    const double target = targets[k];

    auto add_term = [&](int e_a, int slot_a, int e_b, int slot_b, double t_value, double weight,
                        double& accum) {
      if (weight == 0.0) return;
      ensure(e_a, slot_a);
      ensure(e_b, slot_b);
      const std::size_t ia = static_cast<std::size_t>(e_a) * 2 + slot_a;
      const std::size_t ib = static_cast<std::size_t>(e_b) * 2 + slot_b;
      const std::vector<double>& ya = first_live ? live[ia] : frozen[ia];
      const std::vector<double>& yb = first_live ? frozen[ib] : live[ib];
      double l1 = 0.0;
      for (int d = 0; d < static_cast<int>(ya.size()); ++d) l1 += std::fabs(ya[d] - yb[d]);
      const double resid = l1 - t_value;
      accum += weight * resid * resid * inv_pairs;
      // d(loss)/d(y_live), elementwise subgradient of the L1 term.
      std::vector<double> gy(ya.size());
      const double coef = 2.0 * weight * resid * inv_pairs;
      for (int d = 0; d < static_cast<int>(ya.size()); ++d) {
        const double s = sign_of(ya[d] - yb[d]);
        gy[d] = coef * (first_live ? s : -s);
      }
      const int e_live = first_live ? e_a : e_b;
      const int slot_live = first_live ? slot_a : slot_b;
      auto [obs, cid, th] = inputs(e_live, slot_live);
      phi.backward(obs, cid, th, gy, out.grad);
    };

    add_term(i, 0, j, 0, target, w_base, out.loss.base);
    add_term(i, 1, j, 1, target, w_base, out.loss.base);
    add_term(i, 0, i, 1, 0.0, w_icc, out.loss.icc);
    add_term(j, 0, j, 1, 0.0, w_icc, out.loss.icc);
    add_term(i, 0, j, 1, target, w_cc, out.loss.cc);
    add_term(i, 1, j, 0, target, w_cc, out.loss.cc);
  }
  out.loss.total = out.loss.base + out.loss.icc + out.loss.cc;
  if (!std::isfinite(out.loss.total)) throw NaNGuard("representation loss is not finite");
  return out;
}

std::vector<double> compute_targets(const TransitionBatch& batch,
                                    const std::vector<std::pair<int, int>>& pairs,
                                    const PseudoMetric& state_metric) {
  batch.validate();
  std::vector<double> t;
  t.reserve(pairs.size());
  for (const auto& [i, j] : pairs) t.push_back(state_metric.at(batch.state_t[i], batch.state_t[j]));
  return t;
}

std::vector<double> compute_targets(const TransitionBatch& batch,
                                    const std::vector<std::pair<int, int>>& pairs,
                                    const Embedding& phi_frozen, const LatentDynamics& dynamics,
                                    const RepLossConfig& cfg) {
  batch.validate();
  const int n = batch.size();
  std::vector<GaussianMoments> pred(n);
  std::vector<char> have(n, 0);
  auto ensure = [&](int e) {
    if (have[e]) return;
    const std::vector<double> y =
        phi_frozen.forward(batch.obs1_t[e], batch.ctx1[e], batch.theta1[e]);
    pred[e] = dynamics.predict(y, batch.action[e], batch.state_t[e], batch.ctx1[e]);
    have[e] = 1;
  };
  std::vector<double> t;
  t.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    ensure(i);
    ensure(j);
    double dist = 0.0;
    if (cfg.target_mode == TargetMode::model_w2) {
      dist = w2_gaussian(pred[i], pred[j]);
    } else if (cfg.target_mode == TargetMode::model_w1) {
      for (int d = 0; d < static_cast<int>(pred[i].mean.size()); ++d)
        dist += w1_gaussian_1d_discretized(pred[i].mean[d], pred[i].stddev[d], pred[j].mean[d],
                                           pred[j].stddev[d], cfg.w1_atoms);
    } else {
      throw ModeMismatch("oracle targets need the state-metric overload");
    }
    t.push_back(std::fabs(batch.reward[i] - batch.reward[j]) + cfg.gamma_t * dist);
  }
  return t;
}

LatentDynamics LatentDynamics::make_table(int n_states, int n_contexts, int n_actions,
                                          int latent_dim, SplitRng& rng) {
  if (n_states <= 0 || n_contexts <= 0 || n_actions <= 0 || latent_dim <= 0)
    throw ParamRange("latent dynamics table dims must be positive");
  LatentDynamics d;
  d.arch_ = "table";
  d.m_ = latent_dim;
  d.n_actions_ = n_actions;
  d.n_states_ = n_states;
  d.n_contexts_ = n_contexts;
  const std::size_t block =
      static_cast<std::size_t>(n_states) * n_contexts * n_actions * latent_dim;
  d.params_.assign(2 * block, 0.0);
  const double raw0 = std::log(std::expm1(1.0 - d.sigma_min_));
  for (std::size_t i = 0; i < block; ++i) d.params_[i] = rng.uniform(-0.1, 0.1);
  for (std::size_t i = block; i < 2 * block; ++i) d.params_[i] = raw0;
  return d;
}

LatentDynamics LatentDynamics::make_affine(int latent_dim, int n_actions, SplitRng& rng) {
  if (latent_dim <= 0 || n_actions <= 0) throw ParamRange("latent dynamics dims must be positive");
  LatentDynamics d;
  d.arch_ = "affine";
  d.m_ = latent_dim;
  d.n_actions_ = n_actions;
  const std::size_t per_action =
      static_cast<std::size_t>(latent_dim) * latent_dim + 2 * latent_dim;
  d.params_.assign(per_action * n_actions, 0.0);
  const double scale = 0.1 / std::sqrt(static_cast<double>(latent_dim));
  const double raw0 = std::log(std::expm1(1.0 - d.sigma_min_));
  for (int a = 0; a < n_actions; ++a) {
    const std::size_t base = per_action * a;
    for (int i = 0; i < latent_dim * latent_dim; ++i)
      d.params_[base + i] = rng.uniform(-scale, scale);
    for (int i = 0; i < latent_dim; ++i) {
      d.params_[base + static_cast<std::size_t>(latent_dim) * latent_dim + i] =
          rng.uniform(-0.1, 0.1);
      d.params_[base + static_cast<std::size_t>(latent_dim) * latent_dim + latent_dim + i] = raw0;
    }
  }
  return d;
}

std::size_t LatentDynamics::mean_offset(int s, int c, int a) const {
  return ((static_cast<std::size_t>(s) * n_contexts_ + c) * n_actions_ + a) * m_;
}

std::size_t LatentDynamics::raw_offset(int s, int c, int a) const {
  const std::size_t block =
      static_cast<std::size_t>(n_states_) * n_contexts_ * n_actions_ * m_;
  return block + mean_offset(s, c, a);
}

GaussianMoments LatentDynamics::predict(const std::vector<double>& y, int action, int state_id,
                                        int ctx_id) const {
  if (action < 0 || action >= n_actions_) throw IndexError("action out of range");
  GaussianMoments g;
  g.mean.resize(m_);
  g.stddev.resize(m_);
  if (arch_ == "table") {
    if (state_id < 0 || ctx_id < 0)
      throw ModeMismatch("table dynamics require (state, context) keys");
    if (state_id >= n_states_ || ctx_id >= n_contexts_)
      throw IndexError("dynamics table key out of range");
    const std::size_t mo = mean_offset(state_id, ctx_id, action);
    const std::size_t ro = raw_offset(state_id, ctx_id, action);
    for (int k = 0; k < m_; ++k) {
      g.mean[k] = params_[mo + k];
      g.stddev[k] = sigma_min_ + softplus(params_[ro + k]);
    }
    return g;
  }
  if (static_cast<int>(y.size()) != m_)
    throw DimensionMismatch("latent input has the wrong dim for affine dynamics");
  const std::size_t per_action = static_cast<std::size_t>(m_) * m_ + 2 * m_;
  const std::size_t base = per_action * action;
  const double* A = params_.data() + base;
  const double* b = params_.data() + base + static_cast<std::size_t>(m_) * m_;
  const double* raw = b + m_;
  for (int k = 0; k < m_; ++k) {
    double acc = b[k];
    const double* row = A + static_cast<std::size_t>(k) * m_;
    for (int l = 0; l < m_; ++l) acc += row[l] * y[l];
    g.mean[k] = acc;
    g.stddev[k] = sigma_min_ + softplus(raw[k]);
  }
  return g;
}

nlohmann::json LatentDynamics::to_json() const {
  nlohmann::json doc;
  doc["format"] = "condbisim/dynamics/1";
  doc["arch"] = arch_;
  doc["latent_dim"] = m_;
  doc["n_actions"] = n_actions_;
  doc["n_states"] = n_states_;
  doc["n_contexts"] = n_contexts_;
  doc["sigma_min"] = sigma_min_;
  doc["params"] = params_;
  return doc;
}

LatentDynamics LatentDynamics::from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "condbisim/dynamics/1")
    throw SchemaError("not a dynamics checkpoint");
  LatentDynamics d;
  d.arch_ = doc.at("arch").get<std::string>();
  if (d.arch_ != "table" && d.arch_ != "affine")
    throw SchemaError("unknown dynamics arch '" + d.arch_ + "'");
  d.m_ = doc.at("latent_dim").get<int>();
  d.n_actions_ = doc.at("n_actions").get<int>();
  d.n_states_ = doc.at("n_states").get<int>();
  d.n_contexts_ = doc.at("n_contexts").get<int>();
  d.sigma_min_ = doc.at("sigma_min").get<double>();
  d.params_ = doc.at("params").get<std::vector<double>>();
  return d;
}

struct DynamicsOps {
  static std::size_t mean_off(const LatentDynamics& d, int s, int c, int a) {
    return d.mean_offset(s, c, a);
  }
  static std::size_t raw_off(const LatentDynamics& d, int s, int c, int a) {
    return d.raw_offset(s, c, a);
  }
};

DynamicsLossResult dynamics_loss_and_grad(const LatentDynamics& dynamics,
                                          const Embedding& phi_frozen,
                                          const TransitionBatch& batch) {
  batch.validate();
  if (batch.size() == 0) throw EmptyResults("dynamics fit needs a non-empty batch");
  DynamicsLossResult out;
  out.grad.assign(dynamics.params().size(), 0.0);
  const int n = batch.size();
  const int m = dynamics.latent_dim();
  const double inv_n = 1.0 / static_cast<double>(n);
  const bool table = dynamics.arch() == "table";
  const std::size_t per_action = static_cast<std::size_t>(m) * m + 2 * m;

  for (int e = 0; e < n; ++e) {
    const std::vector<double> y =
        phi_frozen.forward(batch.obs1_t[e], batch.ctx1[e], batch.theta1[e]);
    const std::vector<double> y_next =
        phi_frozen.forward(batch.obs1_next[e], batch.ctx1[e], batch.theta1[e]);
    const int a = batch.action[e];
    const GaussianMoments g = dynamics.predict(y, a, batch.state_t[e], batch.ctx1[e]);
    for (int k = 0; k < m; ++k) {
      const double r = g.mean[k] - y_next[k];
      const double sig = g.stddev[k];
      out.loss += (r * r + std::log(sig) + r * r / (2.0 * sig * sig)) * inv_n;
      const double d_mean = 2.0 * r * inv_n;  // NLL mean residual is stopped
      const double d_sigma = (1.0 / sig - r * r / (sig * sig * sig)) * inv_n;
      if (table) {
        const std::size_t mo =
            DynamicsOps::mean_off(dynamics, batch.state_t[e], batch.ctx1[e], a) + k;
        const std::size_t ro =
            DynamicsOps::raw_off(dynamics, batch.state_t[e], batch.ctx1[e], a) + k;
        out.grad[mo] += d_mean;
        out.grad[ro] += d_sigma * sigmoid(dynamics.params()[ro]);
      } else {
        const std::size_t base = per_action * a;
        const std::size_t row_off = base + static_cast<std::size_t>(k) * m;
        for (int l = 0; l < m; ++l) out.grad[row_off + l] += d_mean * y[l];
        out.grad[base + static_cast<std::size_t>(m) * m + k] += d_mean;
        const std::size_t ro = base + static_cast<std::size_t>(m) * m + m + k;
        out.grad[ro] += d_sigma * sigmoid(dynamics.params()[ro]);
      }
    }
  }
  if (!std::isfinite(out.loss)) throw NaNGuard("dynamics loss is not finite");
  return out;
}

double fit_latent_dynamics(LatentDynamics& dynamics, const Embedding& phi_frozen,
                           const TransitionBatch& batch, double lr) {
  DynamicsLossResult r = dynamics_loss_and_grad(dynamics, phi_frozen, batch);
  std::vector<double>& p = dynamics.params();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * r.grad[i];
  if (!std::isfinite(r.loss)) throw NaNGuard("dynamics loss is not finite");
  return r.loss;
}

double compute_delta(const ContextualMDP& cmdp, const Embedding& phi,
                     const PseudoMetric& state_metric) {
  const int n = cmdp.base.n_states;
  const int k = cmdp.n_contexts();
  if (state_metric.n != n) throw DimensionMismatch("state metric size does not match");
  std::vector<std::vector<double>> y(static_cast<std::size_t>(n) * k);
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < k; ++c) y[static_cast<std::size_t>(s) * k + c] = grid_embed(cmdp, phi, s, c, c);
  double worst = 0.0;
  for (int s = 0; s < n; ++s)
    for (int ci = 0; ci < k; ++ci)
      for (int s2 = 0; s2 < n; ++s2)
        for (int cj = 0; cj < k; ++cj) {
          const double emb = l1_distance(y[static_cast<std::size_t>(s) * k + ci],
                                         y[static_cast<std::size_t>(s2) * k + cj]);
          worst = std::max(worst, std::fabs(emb - state_metric.at(s, s2)));
        }
  return worst;
}

double icc_residual(const ContextualMDP& cmdp, const Embedding& phi) {
  const int n = cmdp.base.n_states;
  const int k = cmdp.n_contexts();
  double worst = 0.0;
  for (int s = 0; s < n; ++s) {
    std::vector<std::vector<double>> y(k);
    for (int c = 0; c < k; ++c) y[c] = grid_embed(cmdp, phi, s, c, c);
    for (int ci = 0; ci < k; ++ci)
      for (int cj = ci + 1; cj < k; ++cj) worst = std::max(worst, l1_distance(y[ci], y[cj]));
  }
  return worst;
}

namespace {

struct CollectedStep {
  int s = 0, a = 0, s_next = 0, ctx = 0;
  double reward = 0.0;
  std::vector<double> noise_t, noise_next;
  int episode = 0;
};

std::vector<CollectedStep> collect_transitions(const ContextualMDP& cmdp, int total,
                                               int episode_len,
                                               const std::optional<PolicyTable>& policy,
                                               SplitRng& rng) {
  std::vector<CollectedStep> out;
  out.reserve(total);
  int episode = 0;
  while (static_cast<int>(out.size()) < total) {
    const int ctx = rng.categorical(cmdp.contexts.dist);
    int s = rng.categorical(cmdp.base.initial_dist);
    std::optional<NoiseChain> chain;
    if (cmdp.noise) {
      chain.emplace(*cmdp.noise);
      chain->init(rng);
    }
    for (int t = 0; t < episode_len && static_cast<int>(out.size()) < total; ++t) {
      CollectedStep step;
      step.s = s;
      step.ctx = ctx;
      step.episode = episode;
      if (cmdp.noise) {
        step.noise_t.reserve(cmdp.noise->dims);
        for (int d = 0; d < cmdp.noise->dims; ++d)
          step.noise_t.push_back(cmdp.noise->value(d, chain->state[d]));
      }
      if (policy) {
        step.a = rng.categorical(std::vector<double>(
            policy->probs.begin() + static_cast<std::size_t>(s) * policy->n_actions,
            policy->probs.begin() + static_cast<std::size_t>(s + 1) * policy->n_actions));
      } else {
        step.a = rng.uniform_int(cmdp.base.n_actions);
      }
      step.reward = cmdp.base.r(s, step.a);
      const double* row = cmdp.base.row(s, step.a);
      step.s_next = rng.categorical(std::vector<double>(row, row + cmdp.base.n_states));
      if (cmdp.noise) {
        chain->step(rng);
        step.noise_next.reserve(cmdp.noise->dims);
        for (int d = 0; d < cmdp.noise->dims; ++d)
          step.noise_next.push_back(cmdp.noise->value(d, chain->state[d]));
      }
      out.push_back(std::move(step));
      s = out.back().s_next;
    }
    ++episode;
  }
  return out;
}

std::vector<double> render_with_noise(const ContextualMDP& cmdp, int s, int ctx,
                                      const std::vector<double>& noise_vals) {
  std::vector<double> obs = cmdp.observe_core(s, ctx);
  obs.insert(obs.end(), noise_vals.begin(), noise_vals.end());
  return obs;
}

TransitionBatch make_batch(const ContextualMDP& cmdp, const std::vector<CollectedStep>& records,
                           const std::vector<int>& indices, const std::vector<int>& theta2_ctx) {
  TransitionBatch b;
  const std::size_t n = indices.size();
  b.obs1_t.reserve(n);
  b.obs1_next.reserve(n);
  b.obs2_t.reserve(n);
  b.obs2_next.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const CollectedStep& r = records[indices[i]];
    const int c2 = theta2_ctx[i];
    b.obs1_t.push_back(render_with_noise(cmdp, r.s, r.ctx, r.noise_t));
    b.obs1_next.push_back(render_with_noise(cmdp, r.s_next, r.ctx, r.noise_next));
    b.obs2_t.push_back(render_with_noise(cmdp, r.s, c2, r.noise_t));
    b.obs2_next.push_back(render_with_noise(cmdp, r.s_next, c2, r.noise_next));
    b.theta1.push_back(cmdp.contexts.values[r.ctx]);
    b.theta2.push_back(cmdp.contexts.values[c2]);
    b.ctx1.push_back(r.ctx);
    b.ctx2.push_back(c2);
    b.action.push_back(r.a);
    b.reward.push_back(r.reward);
    b.state_t.push_back(r.s);
    b.state_next.push_back(r.s_next);
  }
  return b;
}

}  // namespace

TrainEmbedResult train_embedding(const ContextualMDP& cmdp, const TrainEmbedConfig& cfg,
                                 std::uint64_t seed) {
  if (cfg.steps < 0 || cfg.batch_size <= 0 || cfg.collect_steps <= 0 || cfg.episode_len <= 0)
    throw ParamRange("training step counts must be positive");
  if (cfg.snapshot_period <= 0) throw ParamRange("snapshot_period must be positive");
  cfg.metric.validate();

  SplitRng root(seed);
  SplitRng rng_init = root.split("init");
  SplitRng rng_collect = root.split("collect");
  SplitRng rng_train = root.split("train");

  // Oracle state metric under pi*_merl; also used for the delta diagnostic.
  const SoftValueIteration soft = soft_value_iteration(cmdp.base, cfg.merl_temperature);
  const MetricResult mr = pi_bisim_metric(cmdp.base, soft.policy, cfg.metric);

  TrainEmbedResult result{Embedding::make(cmdp, cfg.arch, rng_init),
                          cfg.arch.arch == "table"
                              ? LatentDynamics::make_table(cmdp.base.n_states, cmdp.n_contexts(),
                                                           cmdp.base.n_actions, cfg.arch.out_dim,
                                                           rng_init)
                              : LatentDynamics::make_affine(cfg.arch.out_dim,
                                                            cmdp.base.n_actions, rng_init),
                          mr.metric,
                          {},
                          0.0,
                          0.0};

  const std::vector<CollectedStep> records =
      collect_transitions(cmdp, cfg.collect_steps, cfg.episode_len, cfg.collect_policy,
                          rng_collect);
  const int n_records = static_cast<int>(records.size());
  const int k_ctx = cmdp.n_contexts();
  const bool model_targets = cfg.loss.target_mode != TargetMode::oracle_metric;

  Embedding frozen = result.phi;
  for (int step = 0; step < cfg.steps; ++step) {
    if (step % cfg.snapshot_period == 0) frozen = result.phi;

    const int bsz = std::min(cfg.batch_size, n_records);
    const std::vector<int> idx = rng_train.sample_without_replacement(n_records, bsz);
    std::vector<int> theta2(bsz);
    for (int i = 0; i < bsz; ++i) {
      if (cfg.theta2_schedule == Theta2Schedule::per_step) {
        theta2[i] = rng_train.categorical(cmdp.contexts.dist);
      } else {
        // Per-episode: the alternate context is a deterministic function of
        // the collection episode, derived from the run seed.
        theta2[i] = static_cast<int>(
            derive_seed(seed, static_cast<std::uint64_t>(records[idx[i]].episode)) % k_ctx);
      }
    }
    const TransitionBatch batch = make_batch(cmdp, records, idx, theta2);
    const std::vector<int> perm = rng_train.permutation(bsz);
    std::vector<std::pair<int, int>> pairs(bsz);
    for (int i = 0; i < bsz; ++i) pairs[i] = {i, perm[i]};

    std::vector<double> targets =
        model_targets ? compute_targets(batch, pairs, frozen, result.dynamics, cfg.loss)
                      : compute_targets(batch, pairs, mr.metric);
    const RepLossResult loss = rep_loss_and_grad(batch, pairs, result.phi, frozen, targets,
                                                 cfg.loss);
    std::vector<double>& p = result.phi.params();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= cfg.lr * loss.grad[i];
    for (double v : p)
      if (!std::isfinite(v) || std::fabs(v) > 1e6)
        throw DivergenceGuard("embedding parameters diverged");

    if (model_targets) fit_latent_dynamics(result.dynamics, frozen, batch, cfg.dynamics_lr);

    if (step % cfg.history_period == 0 || step + 1 == cfg.steps) {
      TrainEmbedHistoryRow row;
      row.step = step;
      row.loss = loss.loss;
      row.delta = compute_delta(cmdp, result.phi, mr.metric);
      row.icc = icc_residual(cmdp, result.phi);
      result.history.push_back(row);
    }
  }

  result.final_delta = compute_delta(cmdp, result.phi, mr.metric);
  result.final_icc = icc_residual(cmdp, result.phi);
  return result;
}

std::string history_csv(const std::vector<TrainEmbedHistoryRow>& history) {
  CsvWriter csv({"step", "loss_total", "loss_base", "loss_icc", "loss_cc", "delta",
                 "icc_residual"});
  for (const TrainEmbedHistoryRow& r : history)
    csv.add_row({fmt17(r.step), fmt17(r.loss.total), fmt17(r.loss.base), fmt17(r.loss.icc),
                 fmt17(r.loss.cc), fmt17(r.delta), fmt17(r.icc)});
  return csv.str();
}

}  // namespace condbisim
