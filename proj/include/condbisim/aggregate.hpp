#pragma once

#include <vector>

#include "condbisim/cmdp.hpp"
#include "condbisim/embed.hpp"

namespace condbisim {

struct AggregatedMDP {
  FiniteMDP mdp_hat;
  std::vector<int> assignment;              // joint state h -> cluster id
  std::vector<std::vector<int>> clusters;   // cluster -> member joint states
  std::vector<std::vector<double>> centers; // seed embedding per cluster
};

// Embeddings of every joint (state, context) point, indexed like the joint
// super-MDP states.
std::vector<std::vector<double>> joint_embeddings(const ContextualMDP& cmdp, const Embedding& phi,
                                                  const JointIndex& joint);

// Greedy L1-ball covering of the embedded joint states with radius epsilon,
// visiting states in index order; clusters average their members' rewards and
// aggregated transition masses uniformly and sum their initial mass.
AggregatedMDP epsilon_aggregate(const FiniteMDP& super, const JointIndex& joint,
                                const std::vector<std::vector<double>>& embeddings,
                                double epsilon);

}  // namespace condbisim
