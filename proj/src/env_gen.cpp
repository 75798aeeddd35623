#include "condbisim/env_gen.hpp"

#include <cmath>
#include <set>

#include "condbisim/io.hpp"

namespace condbisim {

namespace {

using nlohmann::json;

// --- parameter helpers -----------------------------------------------------

void check_params(const json& params, const std::set<std::string>& allowed) {
  if (!params.is_object()) throw SchemaError("params must be an object");
  for (const auto& item : params.items())
    if (!allowed.count(item.key()))
      throw ParamRange("unknown parameter '" + item.key() + "'");
}

int get_int(const json& params, const char* name, int fallback, int lo, int hi) {
  int v = fallback;
  if (params.contains(name)) {
    if (!params[name].is_number_integer()) throw SchemaError(std::string(name) + " must be an integer");
    v = params[name].get<int>();
  }
  if (v < lo || v > hi)
    throw ParamRange(std::string(name) + "=" + std::to_string(v) + " outside [" +
                     std::to_string(lo) + "," + std::to_string(hi) + "]");
  return v;
}

double get_double(const json& params, const char* name, double fallback, double lo, double hi) {
  double v = fallback;
  if (params.contains(name)) {
    if (!params[name].is_number()) throw SchemaError(std::string(name) + " must be a number");
    v = params[name].get<double>();
  }
  if (!(v >= lo && v <= hi))
    throw ParamRange(std::string(name) + "=" + std::to_string(v) + " outside [" +
                     std::to_string(lo) + "," + std::to_string(hi) + "]");
  return v;
}

// Equally spaced scalar contexts over [0,1], uniform sampling distribution.
ContextSpace make_context_grid(int k) {
  ContextSpace cs;
  for (int i = 0; i < k; ++i) {
    const double theta = (k == 1) ? 0.5 : static_cast<double>(i) / (k - 1);
    cs.values.push_back({theta});
  }
  cs.dist.assign(k, 1.0 / k);
  return cs;
}

ObsRule make_obs_rule(int n, bool blend, SplitRng& rng) {
  ObsRule rule;
  rule.perm = rng.permutation(n);
  rule.blend = blend;
  rule.gain.resize(n);
  rule.ctx_coeff.resize(n);
  rule.ctx_offset.resize(n);
  for (int k = 0; k < n; ++k) {
    rule.gain[k] = rng.uniform(0.8, 1.0);
    rule.ctx_coeff[k] = rng.uniform(0.05, 0.2);
    rule.ctx_offset[k] = rng.uniform(0.0, 0.15);
  }
  return rule;
}

void render_obs_map(ContextualMDP& cmdp) {
  const int n = cmdp.base.n_states;
  const int k = cmdp.contexts.size();
  cmdp.obs_map.resize(static_cast<std::size_t>(k) * n * cmdp.obs_dim);
  for (int c = 0; c < k; ++c)
    for (int s = 0; s < n; ++s) {
      const std::vector<double> obs = cmdp.rule->render(s, cmdp.contexts.values[c][0]);
      std::copy(obs.begin(), obs.end(),
                cmdp.obs_map.begin() + (static_cast<std::size_t>(c) * n + s) * cmdp.obs_dim);
    }
}

NoiseSpec make_noise(int dims, int n_values, SplitRng& rng) {
  NoiseSpec noise;
  noise.dims = dims;
  noise.n_values = n_values;
  noise.values.resize(static_cast<std::size_t>(dims) * n_values);
  noise.initial.resize(static_cast<std::size_t>(dims) * n_values);
  noise.transition.resize(static_cast<std::size_t>(dims) * n_values * n_values);
  for (int d = 0; d < dims; ++d) {
    for (int v = 0; v < n_values; ++v) {
      noise.values[static_cast<std::size_t>(d) * n_values + v] = rng.uniform01();
      noise.initial[static_cast<std::size_t>(d) * n_values + v] = 1.0 / n_values;
      const std::vector<double> row = rng.simplex(n_values);
      std::copy(row.begin(), row.end(),
                noise.transition.begin() +
                    (static_cast<std::size_t>(d) * n_values + v) * n_values);
    }
  }
  return noise;
}

// --- families ---------------------------------------------------------------

ContextualMDP make_scrambled_grid(const json& params, std::uint64_t seed) {
  check_params(params, {"side", "n_contexts", "discount", "slip", "distractor_dims",
                        "noise_values", "goal_reward"});
  const int side = get_int(params, "side", 4, 2, 16);
  const int k = get_int(params, "n_contexts", 5, 1, 64);
  const double discount = get_double(params, "discount", 0.99, 0.0, 0.999999);
  const double slip = get_double(params, "slip", 0.0, 0.0, 0.5);
  const int distractors = get_int(params, "distractor_dims", 0, 0, 16);
  const int noise_values = get_int(params, "noise_values", 4, 2, 16);
  const double goal_reward = get_double(params, "goal_reward", 1.0, 0.0, 1.0);

  const int n = side * side;
  ContextualMDP cmdp;
  cmdp.base.n_states = n;
  cmdp.base.n_actions = 4;
  cmdp.base.discount = discount;
  cmdp.base.r_max = 1.0;
  cmdp.base.transition.assign(static_cast<std::size_t>(n) * 4 * n, 0.0);
  cmdp.base.reward.assign(static_cast<std::size_t>(n) * 4, 0.0);
  const int goal = n - 1;
  for (int s = 0; s < n; ++s) {
    const int row = s / side, col = s % side;
    for (int a = 0; a < 4; ++a) {
      if (s == goal) {  // absorbing goal
        cmdp.base.p(s, a, s) = 1.0;
        cmdp.base.r(s, a) = goal_reward;
        continue;
      }
      int nr = row, nc = col;
      if (a == 0) nr = std::max(0, row - 1);
      if (a == 1) nr = std::min(side - 1, row + 1);
      if (a == 2) nc = std::max(0, col - 1);
      if (a == 3) nc = std::min(side - 1, col + 1);
      const int t = nr * side + nc;
      cmdp.base.p(s, a, t) += 1.0 - slip;
      cmdp.base.p(s, a, s) += slip;
    }
  }
  cmdp.base.initial_dist.assign(n, 0.0);
  for (int s = 0; s < n - 1; ++s) cmdp.base.initial_dist[s] = 1.0 / (n - 1);

  cmdp.contexts = make_context_grid(k);
  cmdp.obs_dim = n;
  SplitRng rng(derive_seed(seed, "scrambled_grid"));
  cmdp.rule = make_obs_rule(n, /*blend=*/n > 2, rng);
  render_obs_map(cmdp);
  if (distractors > 0) cmdp.noise = make_noise(distractors, noise_values, rng);
  return cmdp;
}

ContextualMDP make_distractor_chain(const json& params, std::uint64_t seed) {
  check_params(params, {"n_states", "n_contexts", "discount", "slip", "distractor_dims",
                        "noise_values"});
  const int n = get_int(params, "n_states", 6, 2, 64);
  const int k = get_int(params, "n_contexts", 2, 1, 64);
  const double discount = get_double(params, "discount", 0.99, 0.0, 0.999999);
  const double slip = get_double(params, "slip", 0.1, 0.0, 0.5);
  const int distractors = get_int(params, "distractor_dims", 2, 0, 16);
  const int noise_values = get_int(params, "noise_values", 4, 2, 16);

  ContextualMDP cmdp;
  cmdp.base.n_states = n;
  cmdp.base.n_actions = 2;
  cmdp.base.discount = discount;
  cmdp.base.r_max = 1.0;
  cmdp.base.transition.assign(static_cast<std::size_t>(n) * 2 * n, 0.0);
  cmdp.base.reward.assign(static_cast<std::size_t>(n) * 2, 0.0);
  for (int s = 0; s < n; ++s) {
    const int left = std::max(0, s - 1);
    const int right = std::min(n - 1, s + 1);
    cmdp.base.p(s, 0, left) += 1.0 - slip;
    cmdp.base.p(s, 0, s) += slip;
    cmdp.base.p(s, 1, right) += 1.0 - slip;
    cmdp.base.p(s, 1, s) += slip;
    if (s == n - 1) {
      cmdp.base.r(s, 0) = 1.0;
      cmdp.base.r(s, 1) = 1.0;
    }
  }
  cmdp.base.initial_dist.assign(n, 0.0);
  cmdp.base.initial_dist[0] = 1.0;

  cmdp.contexts = make_context_grid(k);
  cmdp.obs_dim = n;
  SplitRng rng(derive_seed(seed, "distractor_chain"));
  cmdp.rule = make_obs_rule(n, /*blend=*/false, rng);
  render_obs_map(cmdp);
  if (distractors > 0) cmdp.noise = make_noise(distractors, noise_values, rng);
  return cmdp;
}

ContextualMDP make_random_cmdp(const json& params, std::uint64_t seed) {
  check_params(params, {"n_states", "n_actions", "n_contexts", "discount", "obs_dim"});
  const int n = get_int(params, "n_states", 5, 2, 64);
  const int a = get_int(params, "n_actions", 2, 1, 16);
  const int k = get_int(params, "n_contexts", 2, 1, 64);
  const double discount = get_double(params, "discount", 0.9, 0.0, 0.999999);
  const int obs_dim = get_int(params, "obs_dim", n, n, 256);

  SplitRng rng(derive_seed(seed, "random_cmdp"));
  ContextualMDP cmdp;
  cmdp.base.n_states = n;
  cmdp.base.n_actions = a;
  cmdp.base.discount = discount;
  cmdp.base.r_max = 1.0;
  cmdp.base.transition.resize(static_cast<std::size_t>(n) * a * n);
  cmdp.base.reward.resize(static_cast<std::size_t>(n) * a);
  for (int s = 0; s < n; ++s)
    for (int act = 0; act < a; ++act) {
      const std::vector<double> row = rng.simplex(n);
      for (int t = 0; t < n; ++t) cmdp.base.p(s, act, t) = row[t];
      cmdp.base.r(s, act) = rng.uniform01();
    }
  cmdp.base.initial_dist = rng.simplex(n);

  cmdp.contexts = make_context_grid(k);
  cmdp.obs_dim = obs_dim;

  // Independent scramble per context: state s spikes coordinate perm_c(s),
  // and every coordinate carries a context-affine offset with positive slope,
  // so observations from distinct contexts never collide.
  std::vector<double> coeff(obs_dim), offset(obs_dim), gain(obs_dim);
  for (int d = 0; d < obs_dim; ++d) {
    gain[d] = rng.uniform(0.8, 1.0);
    coeff[d] = rng.uniform(0.05, 0.2);
    offset[d] = rng.uniform(0.0, 0.15);
  }
  cmdp.obs_map.resize(static_cast<std::size_t>(k) * n * obs_dim);
  for (int c = 0; c < k; ++c) {
    const std::vector<int> perm = rng.permutation(obs_dim);
    const double theta = cmdp.contexts.values[c][0];
    for (int s = 0; s < n; ++s) {
      double* obs = cmdp.obs_map.data() + (static_cast<std::size_t>(c) * n + s) * obs_dim;
      for (int d = 0; d < obs_dim; ++d) obs[d] = coeff[d] * theta + offset[d];
      obs[perm[s]] += 0.5 * gain[perm[s]];
    }
  }
  return cmdp;
}

// --- explicit-table (de)serialization ----------------------------------------

const json& require(const json& j, const char* name) {
  if (!j.contains(name)) throw SchemaError(std::string("missing field '") + name + "'");
  return j[name];
}

std::vector<double> parse_vector(const json& j, const char* what) {
  if (!j.is_array()) throw SchemaError(std::string(what) + " must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) throw SchemaError(std::string(what) + " must contain numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

ContextualMDP parse_explicit(const json& spec) {
  ContextualMDP cmdp;
  const json& base = require(spec, "base");
  cmdp.base.n_states = require(base, "n_states").get<int>();
  cmdp.base.n_actions = require(base, "n_actions").get<int>();
  cmdp.base.discount = require(base, "discount").get<double>();
  cmdp.base.r_max = require(base, "r_max").get<double>();
  if (cmdp.base.n_states <= 0 || cmdp.base.n_actions <= 0)
    throw SchemaError("base sizes must be positive");

  const json& tr = require(base, "transition");
  if (!tr.is_array() || static_cast<int>(tr.size()) != cmdp.base.n_states)
    throw SchemaError("transition must be an [s][a][s'] array");
  for (const auto& per_state : tr) {
    if (!per_state.is_array() || static_cast<int>(per_state.size()) != cmdp.base.n_actions)
      throw SchemaError("transition must be an [s][a][s'] array");
    for (const auto& row : per_state) {
      const std::vector<double> v = parse_vector(row, "transition row");
      if (static_cast<int>(v.size()) != cmdp.base.n_states)
        throw SchemaError("transition row length mismatch");
      cmdp.base.transition.insert(cmdp.base.transition.end(), v.begin(), v.end());
    }
  }
  const json& rw = require(base, "reward");
  if (!rw.is_array() || static_cast<int>(rw.size()) != cmdp.base.n_states)
    throw SchemaError("reward must be an [s][a] array");
  for (const auto& row : rw) {
    const std::vector<double> v = parse_vector(row, "reward row");
    if (static_cast<int>(v.size()) != cmdp.base.n_actions)
      throw SchemaError("reward row length mismatch");
    cmdp.base.reward.insert(cmdp.base.reward.end(), v.begin(), v.end());
  }
  cmdp.base.initial_dist = parse_vector(require(base, "initial_dist"), "initial_dist");

  const json& ctx = require(spec, "contexts");
  const json& vals = require(ctx, "values");
  if (!vals.is_array() || vals.empty()) throw SchemaError("contexts.values must be non-empty");
  for (const auto& v : vals) cmdp.contexts.values.push_back(parse_vector(v, "context value"));
  cmdp.contexts.dist = parse_vector(require(ctx, "dist"), "contexts.dist");

  const json& obs = require(spec, "observation");
  cmdp.obs_dim = require(obs, "dim").get<int>();
  const json& omap = require(obs, "map");
  if (!omap.is_array() || static_cast<int>(omap.size()) != cmdp.contexts.size())
    throw SchemaError("observation.map must be a [ctx][s][dim] array");
  for (const auto& per_ctx : omap) {
    if (!per_ctx.is_array() || static_cast<int>(per_ctx.size()) != cmdp.base.n_states)
      throw SchemaError("observation.map must be a [ctx][s][dim] array");
    for (const auto& row : per_ctx) {
      const std::vector<double> v = parse_vector(row, "observation row");
      if (static_cast<int>(v.size()) != cmdp.obs_dim)
        throw SchemaError("observation row length mismatch");
      cmdp.obs_map.insert(cmdp.obs_map.end(), v.begin(), v.end());
    }
  }
  if (obs.contains("rule")) {
    const json& r = obs["rule"];
    ObsRule rule;
    for (const auto& x : require(r, "perm")) rule.perm.push_back(x.get<int>());
    rule.gain = parse_vector(require(r, "gain"), "rule.gain");
    rule.ctx_coeff = parse_vector(require(r, "ctx_coeff"), "rule.ctx_coeff");
    rule.ctx_offset = parse_vector(require(r, "ctx_offset"), "rule.ctx_offset");
    rule.blend = require(r, "blend").get<bool>();
    cmdp.rule = std::move(rule);
  }
  if (spec.contains("noise")) {
    const json& nz = spec["noise"];
    NoiseSpec noise;
    noise.dims = require(nz, "dims").get<int>();
    noise.n_values = require(nz, "n_values").get<int>();
    for (const auto& row : require(nz, "values")) {
      const std::vector<double> v = parse_vector(row, "noise values");
      noise.values.insert(noise.values.end(), v.begin(), v.end());
    }
    for (const auto& per_dim : require(nz, "transition"))
      for (const auto& row : per_dim) {
        const std::vector<double> v = parse_vector(row, "noise transition");
        noise.transition.insert(noise.transition.end(), v.begin(), v.end());
      }
    for (const auto& row : require(nz, "initial")) {
      const std::vector<double> v = parse_vector(row, "noise initial");
      noise.initial.insert(noise.initial.end(), v.begin(), v.end());
    }
    cmdp.noise = std::move(noise);
  }
  if (spec.contains("provenance")) {
    const json& prov = spec["provenance"];
    cmdp.kind = prov.value("kind", "");
    cmdp.seed = prov.value("seed", std::uint64_t{0});
    if (prov.contains("params")) cmdp.params = prov["params"];
  }
  cmdp.validate();
  return cmdp;
}

}  // namespace

ContextualMDP generate_env(const std::string& kind, const nlohmann::json& params,
                           std::uint64_t seed) {
  ContextualMDP cmdp;
  if (kind == "scrambled_grid") {
    cmdp = make_scrambled_grid(params, seed);
  } else if (kind == "distractor_chain") {
    cmdp = make_distractor_chain(params, seed);
  } else if (kind == "random_cmdp") {
    cmdp = make_random_cmdp(params, seed);
  } else {
    throw UnknownKind("no environment family named '" + kind + "'");
  }
  cmdp.kind = kind;
  cmdp.seed = seed;
  cmdp.params = params;
  cmdp.validate();
  return cmdp;
}

ContextualMDP build_cmdp(const nlohmann::json& spec) {
  if (!spec.is_object()) throw SchemaError("environment spec must be a JSON object");
  if (spec.contains("kind")) {
    if (!spec["kind"].is_string()) throw SchemaError("kind must be a string");
    if (!spec.contains("seed")) throw SchemaError("generator spec requires a seed");
    return generate_env(spec["kind"].get<std::string>(),
                        spec.value("params", nlohmann::json::object()),
                        spec["seed"].get<std::uint64_t>());
  }
  return parse_explicit(spec);
}

nlohmann::json to_json(const ContextualMDP& cmdp) {
  using nlohmann::json;
  json base;
  base["n_states"] = cmdp.base.n_states;
  base["n_actions"] = cmdp.base.n_actions;
  base["discount"] = cmdp.base.discount;
  base["r_max"] = cmdp.base.r_max;
  json tr = json::array();
  for (int s = 0; s < cmdp.base.n_states; ++s) {
    json per_state = json::array();
    for (int a = 0; a < cmdp.base.n_actions; ++a) {
      json row = json::array();
      for (int t = 0; t < cmdp.base.n_states; ++t) row.push_back(cmdp.base.p(s, a, t));
      per_state.push_back(std::move(row));
    }
    tr.push_back(std::move(per_state));
  }
  base["transition"] = std::move(tr);
  json rw = json::array();
  for (int s = 0; s < cmdp.base.n_states; ++s) {
    json row = json::array();
    for (int a = 0; a < cmdp.base.n_actions; ++a) row.push_back(cmdp.base.r(s, a));
    rw.push_back(std::move(row));
  }
  base["reward"] = std::move(rw);
  base["initial_dist"] = cmdp.base.initial_dist;

  json ctx;
  ctx["values"] = cmdp.contexts.values;
  ctx["dist"] = cmdp.contexts.dist;

  json obs;
  obs["dim"] = cmdp.obs_dim;
  json omap = json::array();
  for (int c = 0; c < cmdp.contexts.size(); ++c) {
    json per_ctx = json::array();
    for (int s = 0; s < cmdp.base.n_states; ++s) {
      json row = json::array();
      const double* p = cmdp.core_obs(s, c);
      for (int d = 0; d < cmdp.obs_dim; ++d) row.push_back(p[d]);
      per_ctx.push_back(std::move(row));
    }
    omap.push_back(std::move(per_ctx));
  }
  obs["map"] = std::move(omap);
  if (cmdp.rule) {
    json rule;
    rule["perm"] = cmdp.rule->perm;
    rule["gain"] = cmdp.rule->gain;
    rule["ctx_coeff"] = cmdp.rule->ctx_coeff;
    rule["ctx_offset"] = cmdp.rule->ctx_offset;
    rule["blend"] = cmdp.rule->blend;
    obs["rule"] = std::move(rule);
  }

  json doc;
  doc["schema"] = "condbisim/env/1";
  doc["base"] = std::move(base);
  doc["contexts"] = std::move(ctx);
  doc["observation"] = std::move(obs);
  if (cmdp.noise) {
    const NoiseSpec& nz = *cmdp.noise;
    json noise;
    noise["dims"] = nz.dims;
    noise["n_values"] = nz.n_values;
    json vals = json::array(), init = json::array(), trn = json::array();
    for (int d = 0; d < nz.dims; ++d) {
      json vrow = json::array(), irow = json::array(), per_dim = json::array();
      for (int v = 0; v < nz.n_values; ++v) {
        vrow.push_back(nz.value(d, v));
        irow.push_back(nz.init_row(d)[v]);
        json trow = json::array();
        for (int w = 0; w < nz.n_values; ++w) trow.push_back(nz.row(d, v)[w]);
        per_dim.push_back(std::move(trow));
      }
      vals.push_back(std::move(vrow));
      init.push_back(std::move(irow));
      trn.push_back(std::move(per_dim));
    }
    noise["values"] = std::move(vals);
    noise["transition"] = std::move(trn);
    noise["initial"] = std::move(init);
    doc["noise"] = std::move(noise);
  }
  if (!cmdp.kind.empty()) {
    json prov;
    prov["kind"] = cmdp.kind;
    prov["seed"] = cmdp.seed;
    prov["params"] = cmdp.params;
    doc["provenance"] = std::move(prov);
  }
  return doc;
}

std::string env_hash(const ContextualMDP& cmdp) {
  return content_hash(to_json(cmdp).dump());
}

}  // namespace condbisim
