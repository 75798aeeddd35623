#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "condbisim/cmdp.hpp"
#include "condbisim/metric.hpp"
#include "condbisim/transport.hpp"

#include "json.hpp"

namespace condbisim {

struct EmbeddingConfig {
  std::string arch = "table";     // "table" | "mlp"
  int out_dim = 4;
  std::vector<int> hidden = {32, 32};  // mlp hidden widths (two layers)
  bool use_context_input = true;  // mlp: append the context value to the input
  bool context_blind = false;     // table: one shared row per observation id
  double init_scale = 0.1;        // table init range; mlp scales by fan-in
};

// Encoder phi(observation, context) -> R^out_dim with hand-written gradients.
//
// table: rows keyed by (observation id, context id); the observation id is
//        recovered by decoding the core observation against the environment's
//        rendering table (exact match, nearest-L1 fallback for off-grid
//        inputs). Exact optimization for tabular environments.
// mlp:   two tanh hidden layers on the raw observation vector (noise dims
//        included) plus, optionally, the context value; extends to unseen
//        contexts.
class Embedding {
 public:
  static Embedding make(const ContextualMDP& cmdp, const EmbeddingConfig& cfg, SplitRng& rng);

  const std::string& arch() const { return arch_; }
  int out_dim() const { return out_dim_; }
  int obs_input_dim() const { return obs_input_dim_; }
  bool context_blind() const { return context_blind_; }
  bool use_context_input() const { return use_context_input_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // ctx_id < 0 means "not on the declared grid": the table arch resolves the
  // context by exact value match (UnknownContext otherwise); the mlp only
  // needs the value.
  std::vector<double> forward(const std::vector<double>& obs, int ctx_id,
                              const std::vector<double>& theta) const;
  // Accumulates d(loss)/d(params) given d(loss)/d(output).
  void backward(const std::vector<double>& obs, int ctx_id, const std::vector<double>& theta,
                const std::vector<double>& grad_out, std::vector<double>& grad_params) const;

  int decode_state(const std::vector<double>& obs) const;  // table arch only

  nlohmann::json to_json() const;
  static Embedding from_json(const nlohmann::json& doc);

 private:
  std::string arch_;
  int out_dim_ = 0;
  int obs_input_dim_ = 0;

  // table
  bool context_blind_ = false;
  int n_states_ = 0;
  int core_dim_ = 0;
  std::vector<std::vector<double>> registry_obs_;  // rendering of each (ctx, s)
  std::vector<int> registry_state_;
  std::vector<std::vector<double>> ctx_values_;
  int table_row(int sid, int ctx) const;

  // mlp
  bool use_context_input_ = true;
  int ctx_dim_ = 0;
  std::vector<int> widths_;  // in, h..., out
  std::vector<std::size_t> w_off_, b_off_;
  std::vector<double> mlp_input(const std::vector<double>& obs,
                                const std::vector<double>& theta) const;

  std::vector<double> params_;
};

// Embedding of state s as rendered under ctx_obs and encoded with the context
// input of ctx_in (the matched case is ctx_obs == ctx_in). Distractor dims,
// when the embedding consumes them, are padded with their stationary mean so
// grid evaluations stay deterministic.
std::vector<double> grid_embed(const ContextualMDP& cmdp, const Embedding& phi, int s,
                               int ctx_obs, int ctx_in);
// Same for an arbitrary context value (requires a parametric rule for
// rendering; table embeddings reject values off the declared grid).
std::vector<double> grid_embed_value(const ContextualMDP& cmdp, const Embedding& phi, int s,
                                     const std::vector<double>& theta);

// Batch of transitions rendered under the collection context (slot 1) and an
// alternate context (slot 2). Underlying ids are retained so oracles and
// simulator re-rendering stay available.
struct TransitionBatch {
  std::vector<std::vector<double>> obs1_t, obs1_next, obs2_t, obs2_next;
  std::vector<std::vector<double>> theta1, theta2;
  std::vector<int> ctx1, ctx2;
  std::vector<int> action;
  std::vector<double> reward;
  std::vector<int> state_t, state_next;

  int size() const { return static_cast<int>(action.size()); }
  void validate() const;
};

enum class TargetMode { oracle_metric, model_w2, model_w1 };
enum class Theta2Schedule { per_step, per_episode };

struct RepLossConfig {
  double lambda_base = 0.24;
  double lambda_icc = 0.32;
  double lambda_cc = 0.24;
  double gamma_t = 0.99;       // discount inside the target distance
  TargetMode target_mode = TargetMode::model_w2;
  int w1_atoms = 16;           // quantile atoms for the discretized-W1 mode
  double anneal_weight = 1.0;  // scheduler-supplied multiplier on all terms
};

// Gaussian latent transition model.
//   table:  moments keyed by (state id, context id, action); exact for
//           tabular embeddings.
//   affine: mean = A_a y + b_a with per-action, per-dim stddev.
// stddev is parametrized as sigma_min + softplus(raw), keeping the floor
// built in and gradients smooth.
class LatentDynamics {
 public:
  static LatentDynamics make_table(int n_states, int n_contexts, int n_actions, int latent_dim,
                                   SplitRng& rng);
  static LatentDynamics make_affine(int latent_dim, int n_actions, SplitRng& rng);

  const std::string& arch() const { return arch_; }
  int latent_dim() const { return m_; }
  int n_actions() const { return n_actions_; }
  double sigma_min() const { return sigma_min_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // Table arch requires the (state, context) key; affine ignores it.
  GaussianMoments predict(const std::vector<double>& y, int action, int state_id = -1,
                          int ctx_id = -1) const;

  nlohmann::json to_json() const;
  static LatentDynamics from_json(const nlohmann::json& doc);

 private:
  friend struct DynamicsOps;
  std::string arch_;
  int m_ = 0, n_actions_ = 0, n_states_ = 0, n_contexts_ = 0;
  double sigma_min_ = 1e-4;
  std::vector<double> params_;
  std::size_t mean_offset(int s, int c, int a) const;
  std::size_t raw_offset(int s, int c, int a) const;
};

struct RepLossTerms {
  double total = 0.0, base = 0.0, icc = 0.0, cc = 0.0;
};

struct RepLossResult {
  RepLossTerms loss;
  std::vector<double> grad;  // d(loss)/d(live params)
};

// Three-term representation loss over permuted-batch pairs. targets[k] is the
// bisimulation target for pairs[k]. Frozen-side embeddings come from
// phi_frozen (the parameter snapshot); gradient flows through the live side
// only, and the live side alternates with the pair index.
RepLossResult rep_loss_and_grad(const TransitionBatch& batch,
                                const std::vector<std::pair<int, int>>& pairs,
                                const Embedding& phi, const Embedding& phi_frozen,
                                const std::vector<double>& targets, const RepLossConfig& cfg);

// Bisimulation targets per pair. Oracle mode reads the supplied state metric;
// model modes combine reward differences with a distance between the latent
// predictive distributions at the frozen embeddings:
//   T = |r_i - r_j| + gamma_t * W(P(. | y_i, a_i), P(. | y_j, a_j)).
std::vector<double> compute_targets(const TransitionBatch& batch,
                                    const std::vector<std::pair<int, int>>& pairs,
                                    const PseudoMetric& state_metric);
std::vector<double> compute_targets(const TransitionBatch& batch,
                                    const std::vector<std::pair<int, int>>& pairs,
                                    const Embedding& phi_frozen, const LatentDynamics& dynamics,
                                    const RepLossConfig& cfg);

struct DynamicsLossResult {
  double loss = 0.0;
  std::vector<double> grad;
};

// Mean-squared error on the predicted mean plus Gaussian NLL for the stddev
// (the NLL's mean residual is stopped, so sigma fits the current residuals
// without disturbing the least-squares mean fit). Embeddings are taken from
// phi_frozen under the collection context.
DynamicsLossResult dynamics_loss_and_grad(const LatentDynamics& dynamics,
                                          const Embedding& phi_frozen,
                                          const TransitionBatch& batch);

// One gradient step; returns the pre-step loss.
double fit_latent_dynamics(LatentDynamics& dynamics, const Embedding& phi_frozen,
                           const TransitionBatch& batch, double lr);

// Worst-case deviation of the embedding geometry from the state metric over
// every (state, context) quadruple:
//   max | ||phi(f_ti(s), ti) - phi(f_tj(s'), tj)||_1 - d(s, s') |.
double compute_delta(const ContextualMDP& cmdp, const Embedding& phi,
                     const PseudoMetric& state_metric);

// Context-invariance residual: max_s max_{ti,tj} ||phi(f_ti(s), ti) - phi(f_tj(s), tj)||_1.
double icc_residual(const ContextualMDP& cmdp, const Embedding& phi);

struct TrainEmbedConfig {
  EmbeddingConfig arch;
  RepLossConfig loss;
  MetricConfig metric;           // oracle metric / delta diagnostics
  double merl_temperature = 0.1; // pi*_merl for the state metric
  int collect_steps = 2000;
  int episode_len = 32;
  int steps = 2000;
  int batch_size = 64;
  double lr = 1e-3;
  double dynamics_lr = 1e-3;
  int snapshot_period = 1;
  int history_period = 10;
  Theta2Schedule theta2_schedule = Theta2Schedule::per_step;
  std::optional<PolicyTable> collect_policy;  // default: uniform random
};

struct TrainEmbedHistoryRow {
  int step = 0;
  RepLossTerms loss;
  double delta = 0.0;
  double icc = 0.0;
};

struct TrainEmbedResult {
  Embedding phi;
  LatentDynamics dynamics;
  PseudoMetric state_metric;
  std::vector<TrainEmbedHistoryRow> history;
  double final_delta = 0.0;
  double final_icc = 0.0;
};

// Collect -> sample -> loss -> step loop with a fixed collection policy.
// Deterministic given (cmdp, cfg, seed).
TrainEmbedResult train_embedding(const ContextualMDP& cmdp, const TrainEmbedConfig& cfg,
                                 std::uint64_t seed);

std::string history_csv(const std::vector<TrainEmbedHistoryRow>& history);

}  // namespace condbisim
