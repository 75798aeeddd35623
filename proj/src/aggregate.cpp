#include "condbisim/aggregate.hpp"

#include <cmath>

#include "condbisim/errors.hpp"

namespace condbisim {

std::vector<std::vector<double>> joint_embeddings(const ContextualMDP& cmdp, const Embedding& phi,
                                                  const JointIndex& joint) {
  std::vector<std::vector<double>> y(joint.entries.size());
  for (std::size_t h = 0; h < joint.entries.size(); ++h)
    y[h] = grid_embed(cmdp, phi, joint.entries[h].state, joint.entries[h].ctx,
                      joint.entries[h].ctx);
  return y;
}

AggregatedMDP epsilon_aggregate(const FiniteMDP& super, const JointIndex& joint,
                                const std::vector<std::vector<double>>& embeddings,
                                double epsilon) {
  if (!(epsilon >= 0.0)) throw ParamRange("aggregation radius must be >= 0");
  const int H = super.n_states;
  if (static_cast<int>(embeddings.size()) != H ||
      static_cast<int>(joint.entries.size()) != H)
    throw ShapeMismatch("embedding count does not match the joint state count");

  AggregatedMDP agg;
  agg.assignment.assign(H, -1);
  for (int h = 0; h < H; ++h) {
    if (agg.assignment[h] >= 0) continue;
    const int c = static_cast<int>(agg.clusters.size());
    agg.centers.push_back(embeddings[h]);
    agg.clusters.push_back({});
    for (int h2 = h; h2 < H; ++h2) {
      if (agg.assignment[h2] >= 0) continue;
      double d = 0.0;
      for (std::size_t k = 0; k < embeddings[h].size(); ++k)
        d += std::fabs(embeddings[h][k] - embeddings[h2][k]);
      if (d <= epsilon) {
        agg.assignment[h2] = c;
        agg.clusters[c].push_back(h2);
      }
    }
  }

  const int C = static_cast<int>(agg.clusters.size());
  const int A = super.n_actions;
  FiniteMDP& hat = agg.mdp_hat;
  hat.n_states = C;
  hat.n_actions = A;
  hat.discount = super.discount;
  hat.r_max = super.r_max;
  hat.reward.assign(static_cast<std::size_t>(C) * A, 0.0);
  hat.transition.assign(static_cast<std::size_t>(C) * A * C, 0.0);
  hat.initial_dist.assign(C, 0.0);

  for (int c = 0; c < C; ++c) {
    const double inv = 1.0 / static_cast<double>(agg.clusters[c].size());
    for (int a = 0; a < A; ++a) {
      double r_acc = 0.0;
      std::vector<double> mass(C, 0.0);
      for (int h : agg.clusters[c]) {
        r_acc += super.r(h, a);
        const double* row = super.row(h, a);
        for (int h2 = 0; h2 < H; ++h2) mass[agg.assignment[h2]] += row[h2];
      }
      hat.reward[static_cast<std::size_t>(c) * A + a] = r_acc * inv;
      for (int c2 = 0; c2 < C; ++c2)
        hat.transition[(static_cast<std::size_t>(c) * A + a) * C + c2] = mass[c2] * inv;
    }
    for (int h : agg.clusters[c]) hat.initial_dist[c] += super.initial_dist[h];
  }
  hat.validate();
  return agg;
}

}  // namespace condbisim
