#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "condbisim/mdp.hpp"
#include "condbisim/rng.hpp"

#include "json.hpp"

namespace condbisim {

// Finite ordered list of context parameter vectors with a sampling
// distribution. Distances between contexts default to Euclidean.
struct ContextSpace {
  std::vector<std::vector<double>> values;  // [k][dim]
  std::vector<double> dist;                 // [k], sums to one

  int size() const { return static_cast<int>(values.size()); }
  int dim() const { return values.empty() ? 0 : static_cast<int>(values[0].size()); }
  double distance(int i, int j) const;
  static double distance(const std::vector<double>& a, const std::vector<double>& b);
  void validate() const;
};

// Distractor dimensions appended to observations. Each dimension evolves as
// its own small Markov chain over a fixed value grid, independently of the
// latent state and action.
struct NoiseSpec {
  int dims = 0;
  int n_values = 0;
  std::vector<double> values;      // [dim][v]
  std::vector<double> transition;  // [dim][v][v']
  std::vector<double> initial;     // [dim][v]

  double value(int d, int v) const { return values[static_cast<std::size_t>(d) * n_values + v]; }
  const double* row(int d, int v) const {
    return transition.data() + (static_cast<std::size_t>(d) * n_values + v) * n_values;
  }
  const double* init_row(int d) const {
    return initial.data() + static_cast<std::size_t>(d) * n_values;
  }
  void validate() const;
};

// Mutable cursor over a NoiseSpec for sequential rollouts; the spec itself
// stays immutable inside the environment.
struct NoiseChain {
  const NoiseSpec* spec = nullptr;
  std::vector<int> state;

  explicit NoiseChain(const NoiseSpec& s) : spec(&s), state(s.dims, 0) {}
  void init(SplitRng& rng);
  void step(SplitRng& rng);
  void append_to(std::vector<double>& obs) const;
};

// Parametric observation family: renders the core observation of a state for
// an arbitrary context value, which is what makes held-out contexts
// well-defined for generated environments. The hot coordinate perm[s] carries
// mass that (when blend is set) migrates linearly to perm[s]+1 mod n as the
// scalar context grows, and every coordinate carries a context-affine offset.
struct ObsRule {
  std::vector<int> perm;           // state -> hot coordinate
  std::vector<double> gain;        // per-dim spike gain
  std::vector<double> ctx_coeff;   // per-dim offset slope (all > 0)
  std::vector<double> ctx_offset;  // per-dim offset intercept
  bool blend = false;

  int dim() const { return static_cast<int>(gain.size()); }
  std::vector<double> render(int s, double theta) const;
};

struct ContextualMDP {
  FiniteMDP base;
  ContextSpace contexts;
  int obs_dim = 0;                 // core observation dims (noise excluded)
  std::vector<double> obs_map;     // [ctx][s][obs_dim]
  std::optional<ObsRule> rule;     // present for parametric generated families
  std::optional<NoiseSpec> noise;

  // Provenance recorded by generators; flows into serialization and hashes.
  std::string kind;
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();

  int n_states() const { return base.n_states; }
  int n_contexts() const { return contexts.size(); }
  int total_obs_dim() const { return obs_dim + (noise ? noise->dims : 0); }

  const double* core_obs(int s, int ctx) const {
    return obs_map.data() +
           (static_cast<std::size_t>(ctx) * base.n_states + s) * obs_dim;
  }
  std::vector<double> observe_core(int s, int ctx) const;
  // Render under an arbitrary context value; requires a parametric rule.
  std::vector<double> observe_core_value(int s, const std::vector<double>& theta) const;

  void validate() const;
};

// Full observation: core dims plus (when configured) freshly sampled noise
// dims drawn from each distractor chain's initial distribution. Sequential
// rollouts that need temporally correlated noise use NoiseChain directly.
std::vector<double> observe(const ContextualMDP& cmdp, int s, int ctx,
                            SplitRng* rng = nullptr);

struct BlockCheck {
  bool holds = true;
  // Witness of the first violation: two distinct states whose observations
  // collide (contexts may be equal or different).
  int state_a = -1, ctx_a = -1, state_b = -1, ctx_b = -1;
};
BlockCheck check_block_structure(const ContextualMDP& cmdp);

// Enumeration of the joint (observation id, context id) states of the
// super-MDP. Under block structure the observation id is the unique latent
// state that renders to it, so entries carry that state directly.
struct JointIndex {
  struct Entry {
    int state;
    int ctx;
  };
  std::vector<Entry> entries;
  int n_states = 0;

  int size() const { return static_cast<int>(entries.size()); }
  int index(int s, int ctx) const { return ctx * n_states + s; }
  int state_of(int h) const { return entries[h].state; }
  int ctx_of(int h) const { return entries[h].ctx; }
};

// Builds the super-MDP over joint states with block-diagonal dynamics (the
// context is fixed within an episode). Throws BlockStructureError when the
// observation maps are not jointly injective.
std::pair<FiniteMDP, JointIndex> build_super_mdp(const ContextualMDP& cmdp);

// Extracts one context block of a super-MDP as a standalone MDP (states in
// block order). Initial distribution is the base's (the block conditions on
// its context having been drawn).
FiniteMDP extract_block(const FiniteMDP& super, const JointIndex& joint, int ctx,
                        const std::vector<double>& base_initial);

struct HomomorphismReport {
  bool holds = false;
  double max_reward_violation = 0.0;
  double max_transition_violation = 0.0;
};

// Checks whether (state_map, action_maps) is an MDP homomorphism from m onto
// target: rewards match and transition mass aggregates over preimages.
// action_maps[s] maps each action of m at s to an action of target.
HomomorphismReport verify_homomorphism(const FiniteMDP& m, const FiniteMDP& target,
                                       const std::vector<int>& state_map,
                                       const std::vector<std::vector<int>>& action_maps,
                                       double tol);

}  // namespace condbisim
