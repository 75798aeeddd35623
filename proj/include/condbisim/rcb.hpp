#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "condbisim/embed.hpp"
#include "condbisim/metric.hpp"
#include "condbisim/policy.hpp"

#include "json.hpp"

namespace condbisim {

struct Transition {
  int s = 0, a = 0, s_next = 0, ctx = 0;
  double reward = 0.0;
  std::vector<double> noise_t, noise_next;  // distractor values, for re-rendering
  int theta2_episode = 0;                   // alternate context drawn at episode start
};

// FIFO ring of transitions; batches are uniform without replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity);
  void push(Transition t);
  int size() const { return full_ ? capacity_ : head_; }
  const Transition& at(int i) const;  // 0 = oldest retained
  std::vector<int> sample_indices(SplitRng& rng, int k) const;

 private:
  int capacity_ = 0;
  int head_ = 0;
  bool full_ = false;
  std::vector<Transition> data_;
};

// Nearest-centroid discretization of the embedding space. A query within
// `radius` (L1) of an existing centroid reuses it; otherwise a new centroid is
// added until capacity, after which the nearest one is reused. Centroids are
// fixed once added.
class Codebook {
 public:
  Codebook(int capacity, double radius);
  int encode_or_add(const std::vector<double>& y);
  int encode(const std::vector<double>& y) const;  // nearest existing, no growth
  int size() const { return static_cast<int>(centroids_.size()); }
  const std::vector<std::vector<double>>& centroids() const { return centroids_; }

  nlohmann::json to_json() const;
  static Codebook from_json(const nlohmann::json& doc);

 private:
  int capacity_ = 0;
  double radius_ = 0.0;
  std::vector<std::vector<double>> centroids_;
};

// softmax(Q[code(y)] / temperature) with a tabular Q over codebook codes.
class CodebookPolicy : public EmbeddingPolicy {
 public:
  CodebookPolicy(Codebook codebook, std::vector<std::vector<double>> q, double temperature);
  int n_actions() const override;
  std::vector<double> distribution(const std::vector<double>& y) const override;

  const Codebook& codebook() const { return codebook_; }
  const std::vector<std::vector<double>>& q() const { return q_; }
  double temperature() const { return tau_; }

 private:
  Codebook codebook_;
  std::vector<std::vector<double>> q_;
  double tau_ = 0.1;
};

struct RCBConfig {
  int total_steps = 20000;
  int initial_steps = 1000;  // collection-only prefix before updates start
  int batch_size = 512;
  double gamma = 0.99;       // policy-update discount
  double temperature = 0.1;  // soft Q-learning / acting temperature
  RepLossConfig loss;
  EmbeddingConfig arch;
  double encoder_lr = 1e-3;
  double dynamics_lr = 1e-3;
  double q_lr = 0.1;
  int episode_len = 40;
  int eval_period = 1000;
  int eval_episodes = 10;  // Monte-Carlo episodes when exact eval is unavailable
  int eval_horizon = 200;
  int snapshot_period = 1;
  bool anneal = true;  // rep-loss weight 1.8 - 0.8 * 2^(step/total)
  Theta2Schedule theta2_schedule = Theta2Schedule::per_step;
  int codebook_capacity = 512;
  double codebook_radius = 0.5;
  int buffer_capacity = 20000;
  std::vector<int> train_contexts;  // empty = all declared contexts
  std::vector<int> eval_contexts;   // empty = all declared contexts
  MetricConfig metric;              // delta diagnostic
  double merl_temperature = 0.1;
  bool track_delta = true;
  std::string preset = "full";

  RCBConfig() { arch.arch = "mlp"; }
  void validate() const;
};

// Ablation presets differ only in the loss weights:
//   full | no-base | no-cc | no-icc | no-cc-no-icc
void apply_preset(RepLossConfig& loss, const std::string& preset);

nlohmann::json rcb_config_to_json(const RCBConfig& cfg);
RCBConfig rcb_config_from_json(const nlohmann::json& doc);

struct EvalPoint {
  std::vector<double> per_context;
  std::vector<double> stderr_per_context;
  double mean = 0.0;
  bool exact = true;
};

struct EvalOptions {
  int episodes_per_context = 10;
  int horizon = 200;
};

// Per-context value of an embedding policy. Contexts are given by value so
// evaluation can run outside the training support (needs a parametric
// observation rule). Exact policy evaluation when observations are noise-free;
// seeded Monte-Carlo with standard errors otherwise.
EvalPoint evaluate_across_contexts(const ContextualMDP& cmdp, const Embedding& phi,
                                   const EmbeddingPolicy& policy,
                                   const std::vector<std::vector<double>>& contexts,
                                   const EvalOptions& opts, std::uint64_t seed);

struct CurveRow {
  int step = 0;
  int episodes = 0;
  double train_return = 0.0;  // mean undiscounted return of recent episodes
  EvalPoint eval;
  RepLossTerms loss;
  double delta = 0.0;
  double icc = 0.0;
  int codebook_size = 0;
};

struct RCBResult {
  Embedding phi;
  LatentDynamics dynamics;
  CodebookPolicy policy;
  std::vector<CurveRow> curve;
  std::vector<std::array<int, 3>> stream;  // (state, action, next state) per env step
  nlohmann::json manifest;
};

// Algorithm: collect with the current policy, and past the initial prefix
// train encoder (pairwise loss), latent dynamics, and tabular soft Q on
// codebook codes each step. Deterministic given (cmdp, cfg, seed).
RCBResult run_rcb(const ContextualMDP& cmdp, const RCBConfig& cfg, std::uint64_t seed);

std::string curve_csv(const std::vector<CurveRow>& curve, int n_eval_contexts);

}  // namespace condbisim
