#pragma once

#include <vector>

#include "condbisim/embed.hpp"
#include "condbisim/solver.hpp"

namespace condbisim {

// A policy that is a pure function of the embedding vector.
class EmbeddingPolicy {
 public:
  virtual ~EmbeddingPolicy() = default;
  virtual int n_actions() const = 0;
  virtual std::vector<double> distribution(const std::vector<double>& y) const = 0;
};

// softmax((W y + b) / temperature)
class LinearSoftmaxPolicy : public EmbeddingPolicy {
 public:
  LinearSoftmaxPolicy(int latent_dim, int n_actions, double temperature, SplitRng& rng);
  int n_actions() const override { return n_actions_; }
  std::vector<double> distribution(const std::vector<double>& y) const override;

  std::vector<double>& params() { return params_; }  // [a][m] weights, then [a] biases
  const std::vector<double>& params() const { return params_; }

 private:
  int m_ = 0, n_actions_ = 0;
  double tau_ = 1.0;
  std::vector<double> params_;
};

// Lifts a base-state policy to embedding space: every grid point (s, ctx) is
// an anchor carrying the base policy's row at s, and a query resolves to the
// nearest anchor in L1 (lowest anchor index on ties). The result is a pure
// function of y, so Lipschitz constants measured on embedding grids are valid
// for it as deployed.
class NearestAnchorPolicy : public EmbeddingPolicy {
 public:
  static NearestAnchorPolicy lift(const ContextualMDP& cmdp, const Embedding& phi,
                                  const PolicyTable& base_policy);
  int n_actions() const override { return n_actions_; }
  std::vector<double> distribution(const std::vector<double>& y) const override;
  int nearest(const std::vector<double>& y) const;

  const std::vector<std::vector<double>>& anchors() const { return anchors_; }
  const std::vector<std::vector<double>>& rows() const { return rows_; }

 private:
  int n_actions_ = 0;
  std::vector<std::vector<double>> anchors_;
  std::vector<std::vector<double>> rows_;
};

// Base-state policy induced by deploying pi on observations rendered under
// ctx_env while the encoder's context input stays ctx_in:
//   pi(a | phi(f_{ctx_env}(s), theta_{ctx_in})).
// The matched case is ctx_in == ctx_env; a mismatch is exactly the
// cross-context transfer policy.
PolicyTable induced_policy(const ContextualMDP& cmdp, const Embedding& phi,
                           const EmbeddingPolicy& pi, int ctx_in, int ctx_env);

// Exact evaluation of the induced policy on the base MDP.
PolicyEvaluation cross_context_policy_value(const ContextualMDP& cmdp, const Embedding& phi,
                                            const EmbeddingPolicy& pi, int ctx_in, int ctx_env);

}  // namespace condbisim
