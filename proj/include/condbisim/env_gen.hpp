#pragma once

#include <cstdint>
#include <string>

#include "condbisim/cmdp.hpp"

#include "json.hpp"

namespace condbisim {

// Builds one of the named environment families. Every family produces a
// validated block-structured ContextualMDP; all randomness derives from the
// seed, so equal (kind, params, seed) gives bit-identical environments.
//
//   scrambled_grid   side x side gridworld, absorbing goal, parametric
//                    context-scrambled one-hot observations, optional
//                    distractor dims
//   distractor_chain k-state chain with distractor dims appended
//   random_cmdp      dense random MDP, per-context observation scrambles
ContextualMDP generate_env(const std::string& kind, const nlohmann::json& params,
                           std::uint64_t seed);

// Accepts either a generator document {kind, seed, params} or an explicit
// table document (the format emitted by to_json).
ContextualMDP build_cmdp(const nlohmann::json& spec);

// Canonical explicit-table document: object keys serialize sorted and numbers
// round-trip exactly, so dumps are stable across runs and suitable for
// hashing.
nlohmann::json to_json(const ContextualMDP& cmdp);

std::string env_hash(const ContextualMDP& cmdp);

}  // namespace condbisim
