#include "condbisim/harness.hpp"

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "condbisim/aggregate.hpp"
#include "condbisim/embed.hpp"
#include "condbisim/env_gen.hpp"
#include "condbisim/errors.hpp"
#include "condbisim/io.hpp"
#include "condbisim/metric.hpp"
#include "condbisim/policy.hpp"
#include "condbisim/rcb.hpp"
#include "condbisim/solver.hpp"
#include "condbisim/version.hpp"

#include "CLI11.hpp"

namespace fs = std::filesystem;

namespace condbisim {

int worker_count() {
  if (const char* env = std::getenv("CONDBISIM_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void parallel_for(int n, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  const int workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex err_mutex;
  auto body = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

namespace {

ContextualMDP random_trial_env(SplitRng& rng, int min_ctx, int max_ctx) {
  nlohmann::json params{
      {"n_states", 2 + rng.uniform_int(5)},
      {"n_actions", 1 + rng.uniform_int(3)},
      {"n_contexts", min_ctx + rng.uniform_int(max_ctx - min_ctx + 1)},
      {"discount", 0.8 + 0.05 * rng.uniform_int(4)}};
  return generate_env("random_cmdp", params, rng.bits());
}

Embedding random_embedding(const ContextualMDP& cmdp, SplitRng& rng, bool mlp) {
  EmbeddingConfig cfg;
  if (mlp) {
    cfg.arch = "mlp";
    cfg.out_dim = 3;
    cfg.hidden = {16};
  } else {
    cfg.arch = "table";
    cfg.out_dim = 4;
    cfg.init_scale = 0.3;
  }
  return Embedding::make(cmdp, cfg, rng);
}

}  // namespace

std::vector<BoundReport> aggregation_suite(int trials, std::uint64_t seed,
                                           const ContextualMDP* env) {
  if (trials <= 0) throw ParamRange("trials must be positive");
  std::vector<BoundReport> out(trials);
  const std::uint64_t root = derive_seed(seed, std::string("thm2"));
  parallel_for(trials, [&](int t) {
    const std::uint64_t trial_seed = derive_seed(root, static_cast<std::uint64_t>(t));
    SplitRng rng(trial_seed);
    ContextualMDP local;
    const ContextualMDP* e = env;
    if (!e) {
      local = random_trial_env(rng, 1, 3);
      e = &local;
    }
    SplitRng rng_phi = rng.split("phi");
    const Embedding phi = random_embedding(*e, rng_phi, t % 2 == 1);
    const double epsilon = (t % 4 == 0) ? 0.0 : rng.uniform(0.0, 0.5);
    const double c = 0.1 + 0.8 * rng.uniform01();
    out[t] = verify_aggregation_bound(*e, phi, epsilon, c, 1e-9, 0.1, trial_seed);
  });
  return out;
}

std::vector<BoundReport> generalization_suite(int trials, std::uint64_t seed,
                                              const ContextualMDP* env) {
  if (trials <= 0) throw ParamRange("trials must be positive");
  if (env && env->n_contexts() < 2)
    throw ConfigError("the transfer suite needs an environment with >= 2 contexts");
  std::vector<std::vector<BoundReport>> slots(trials);
  const std::uint64_t root = derive_seed(seed, std::string("thm3"));
  parallel_for(trials, [&](int t) {
    const std::uint64_t trial_seed = derive_seed(root, static_cast<std::uint64_t>(t));
    SplitRng rng(trial_seed);
    ContextualMDP local;
    const ContextualMDP* e = env;
    if (!e) {
      local = random_trial_env(rng, 2, 3);
      e = &local;
    }
    SplitRng rng_phi = rng.split("phi");
    const Embedding phi = random_embedding(*e, rng_phi, t % 2 == 1);
    const SoftValueIteration soft = soft_value_iteration(e->base, 0.1);
    const NearestAnchorPolicy pi = NearestAnchorPolicy::lift(*e, phi, soft.policy);
    for (int i = 0; i < e->n_contexts(); ++i)
      for (int j = 0; j < e->n_contexts(); ++j)
        if (i != j) slots[t].push_back(check_generalization_bound(*e, phi, pi, i, j, trial_seed));
  });
  std::vector<BoundReport> out;
  for (const std::vector<BoundReport>& s : slots) out.insert(out.end(), s.begin(), s.end());
  return out;
}

std::vector<BoundReport> fidelity_suite(int trials, std::uint64_t seed, const ContextualMDP* env,
                                        const PerturbationSpec* spec) {
  if (trials <= 0) throw ParamRange("trials must be positive");
  std::vector<BoundReport> out(trials);
  const std::uint64_t root = derive_seed(seed, std::string("thm4"));
  parallel_for(trials, [&](int t) {
    const std::uint64_t trial_seed = derive_seed(root, static_cast<std::uint64_t>(t));
    SplitRng rng(trial_seed);
    FiniteMDP base;
    if (env) {
      base = env->base;
    } else {
      base = random_trial_env(rng, 1, 2).base;
    }
    PerturbationSpec sp;
    if (spec) {
      sp = *spec;
    } else {
      sp.reward_budget = rng.uniform(0.0, 0.1);
      sp.transition_budget = rng.uniform(0.0, 0.1);
    }
    PolicyTable pi;
    pi.n_states = base.n_states;
    pi.n_actions = base.n_actions;
    for (int s = 0; s < base.n_states; ++s) {
      const std::vector<double> row = rng.simplex(base.n_actions);
      pi.probs.insert(pi.probs.end(), row.begin(), row.end());
    }
    SplitRng rng_p = rng.split("perturb");
    const PerturbedMDP hat = perturb_simulator(base, sp, rng_p);
    out[t] = check_fidelity_bound(base, hat.mdp, pi, trial_seed);
  });
  return out;
}

std::vector<BoundReport> complete_fidelity_suite(int trials, std::uint64_t seed,
                                                 const ContextualMDP* env) {
  if (trials <= 0) throw ParamRange("trials must be positive");
  std::vector<BoundReport> out(trials);
  const std::uint64_t root = derive_seed(seed, std::string("thm5"));
  parallel_for(trials, [&](int t) {
    const std::uint64_t trial_seed = derive_seed(root, static_cast<std::uint64_t>(t));
    SplitRng rng(trial_seed);
    ContextualMDP local;
    const ContextualMDP* e = env;
    if (!e) {
      local = random_trial_env(rng, 1, 3);
      e = &local;
    }
    PerturbationSpec sp;
    sp.reward_budget = rng.uniform(0.0, 0.08);
    sp.transition_budget = rng.uniform(0.0, 0.08);
    sp.obs_budget = rng.uniform(0.0, 0.05);
    SplitRng rng_p = rng.split("perturb");
    const PerturbedCMDP sim = perturb_cmdp(*e, sp, rng_p);
    SplitRng rng_phi = rng.split("phi");
    const Embedding phi = random_embedding(*e, rng_phi, t % 2 == 1);
    const SoftValueIteration soft = soft_value_iteration(e->base, 0.1);
    const NearestAnchorPolicy pi = NearestAnchorPolicy::lift(*e, phi, soft.policy);
    out[t] = check_complete_fidelity_bound(*e, sim.cmdp, phi, pi, trial_seed);
  });
  return out;
}

std::vector<BoundReport> run_bound_suite(const std::string& theorem, int trials,
                                         std::uint64_t seed, const ContextualMDP* env) {
  if (theorem == "2") return aggregation_suite(trials, seed, env);
  if (theorem == "3") return generalization_suite(trials, seed, env);
  if (theorem == "4") return fidelity_suite(trials, seed, env);
  if (theorem == "5") return complete_fidelity_suite(trials, seed, env);
  throw ConfigError("unknown theorem '" + theorem + "' (expected 2, 3, 4, 5, or all)");
}

namespace {

void check_keys(const nlohmann::json& doc, const std::set<std::string>& allowed,
                const std::string& what) {
  if (!doc.is_object()) throw SchemaError(what + " must be a JSON object");
  for (const auto& item : doc.items())
    if (!allowed.count(item.key()))
      throw ConfigError("unknown " + what + " field '" + item.key() + "'");
}

nlohmann::json load_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& err) {
    throw SchemaError(path + ": " + err.what());
  }
}

ContextualMDP load_env(const std::string& path) { return build_cmdp(load_json(path)); }

fs::path prepare_out_dir(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

void write_manifest(const fs::path& path, const std::string& command,
                    const nlohmann::json& config, const std::string& env_hash_hex,
                    const std::vector<std::string>& outputs) {
  nlohmann::json doc{{"schema", "condbisim/manifest/1"},
                     {"version", kVersion},
                     {"command", command},
                     {"config", config},
                     {"config_hash", content_hash(config.dump())},
                     {"outputs", outputs}};
  if (!env_hash_hex.empty()) doc["env_hash"] = env_hash_hex;
  write_file(path.string(), doc.dump(2) + "\n");
}

const std::set<std::string> kRcbConfigKeys = {
    "total_steps",     "initial_steps",     "batch_size",      "gamma",
    "temperature",     "loss",              "arch",            "encoder_lr",
    "dynamics_lr",     "q_lr",              "episode_len",     "eval_period",
    "eval_episodes",   "eval_horizon",      "snapshot_period", "anneal",
    "theta2_schedule", "codebook_capacity", "codebook_radius", "buffer_capacity",
    "train_contexts",  "eval_contexts",     "metric",          "merl_temperature",
    "track_delta",     "preset"};

TrainEmbedConfig parse_train_config(const nlohmann::json& doc) {
  check_keys(doc,
             {"arch", "loss", "metric", "merl_temperature", "collect_steps", "episode_len",
              "steps", "batch_size", "lr", "dynamics_lr", "snapshot_period", "history_period",
              "theta2_schedule"},
             "train-embed config");
  nlohmann::json shared_doc = nlohmann::json::object();
  for (const char* k : {"arch", "loss", "metric"})
    if (doc.contains(k)) shared_doc[k] = doc.at(k);
  const RCBConfig shared = rcb_config_from_json(shared_doc);
  TrainEmbedConfig cfg;
  cfg.arch = shared.arch;
  cfg.loss = shared.loss;
  cfg.metric = shared.metric;
  cfg.merl_temperature = doc.value("merl_temperature", cfg.merl_temperature);
  cfg.collect_steps = doc.value("collect_steps", cfg.collect_steps);
  cfg.episode_len = doc.value("episode_len", cfg.episode_len);
  cfg.steps = doc.value("steps", cfg.steps);
  cfg.batch_size = doc.value("batch_size", cfg.batch_size);
  cfg.lr = doc.value("lr", cfg.lr);
  cfg.dynamics_lr = doc.value("dynamics_lr", cfg.dynamics_lr);
  cfg.snapshot_period = doc.value("snapshot_period", cfg.snapshot_period);
  cfg.history_period = doc.value("history_period", cfg.history_period);
  if (doc.contains("theta2_schedule")) {
    const std::string s = doc.at("theta2_schedule").get<std::string>();
    if (s == "per_step")
      cfg.theta2_schedule = Theta2Schedule::per_step;
    else if (s == "per_episode")
      cfg.theta2_schedule = Theta2Schedule::per_episode;
    else
      throw ConfigError("unknown theta2 schedule '" + s + "'");
  }
  return cfg;
}

int do_gen_env(const std::string& kind, const nlohmann::json& params, std::uint64_t seed,
               const std::string& out_path) {
  const ContextualMDP cmdp = generate_env(kind, params, seed);
  write_file(out_path, to_json(cmdp).dump(2) + "\n");
  const nlohmann::json config{{"kind", kind}, {"params", params}, {"seed", seed}};
  write_manifest(out_path + ".manifest.json", "gen-env", config, env_hash(cmdp), {out_path});
  std::cout << "gen-env: kind=" << kind << " states=" << cmdp.base.n_states
            << " actions=" << cmdp.base.n_actions << " contexts=" << cmdp.n_contexts()
            << " hash=" << env_hash(cmdp) << " -> " << out_path << "\n";
  return 0;
}

int do_metric(const std::string& env_path, const std::string& out_path, const std::string& mode,
              double c, double temperature, double tol) {
  const ContextualMDP cmdp = load_env(env_path);
  const auto [super, joint] = build_super_mdp(cmdp);
  MetricConfig mcfg;
  mcfg.c = c;
  mcfg.tol = tol;
  MetricResult res;
  if (mode == "max") {
    res = bisim_metric(super, mcfg);
  } else {
    const SoftValueIteration soft = soft_value_iteration(super, temperature);
    res = pi_bisim_metric(super, soft.policy, mcfg);
  }
  PseudoMetric d = res.metric;
  d.labels.clear();
  for (int h = 0; h < d.n; ++h)
    d.labels.push_back("s" + std::to_string(joint.state_of(h)) + "_c" +
                       std::to_string(joint.ctx_of(h)));
  write_file(out_path, d.to_csv());
  const nlohmann::json config{{"env", env_path}, {"c", c},          {"mode", mode},
                              {"tol", tol},      {"temperature", temperature}};
  write_manifest(out_path + ".manifest.json", "metric", config, env_hash(cmdp), {out_path});
  std::cout << "metric: mode=" << mode << " n=" << d.n << " iterations=" << res.iterations
            << " sup=" << fmt17(d.sup()) << " -> " << out_path << "\n";
  return 0;
}

int do_train_embed(const std::string& env_path, const std::string& config_path, int steps,
                   std::uint64_t seed, const std::string& out_dir) {
  const ContextualMDP cmdp = load_env(env_path);
  TrainEmbedConfig cfg;
  nlohmann::json cfg_doc = nlohmann::json::object();
  if (!config_path.empty()) {
    cfg_doc = load_json(config_path);
    cfg = parse_train_config(cfg_doc);
  }
  if (steps > 0) cfg.steps = steps;
  const fs::path dir = prepare_out_dir(out_dir);

  const TrainEmbedResult res = train_embedding(cmdp, cfg, seed);
  const fs::path history_path = dir / "history.csv";
  const fs::path phi_path = dir / "embedding.json";
  const fs::path dyn_path = dir / "dynamics.json";
  write_file(history_path.string(), history_csv(res.history));
  write_file(phi_path.string(), res.phi.to_json().dump(2) + "\n");
  write_file(dyn_path.string(), res.dynamics.to_json().dump(2) + "\n");
  nlohmann::json config{{"env", env_path}, {"steps", cfg.steps}, {"seed", seed}};
  if (!cfg_doc.empty()) config["config"] = cfg_doc;
  write_manifest(dir / "manifest.json", "train-embed", config, env_hash(cmdp),
                 {history_path.string(), phi_path.string(), dyn_path.string()});
  std::cout << "train-embed: steps=" << cfg.steps << " final_delta=" << fmt17(res.final_delta)
            << " final_icc=" << fmt17(res.final_icc) << " -> " << history_path.string() << "\n";
  return 0;
}

int do_aggregate(const std::string& env_path, double epsilon, double c,
                 const std::string& embedding_path, std::uint64_t seed,
                 const std::string& out_dir) {
  const ContextualMDP cmdp = load_env(env_path);
  const fs::path dir = prepare_out_dir(out_dir);
  Embedding phi = [&] {
    if (!embedding_path.empty()) return Embedding::from_json(load_json(embedding_path));
    EmbeddingConfig ecfg;
    ecfg.arch = "table";
    ecfg.out_dim = 4;
    ecfg.init_scale = 0.3;
    SplitRng rng(derive_seed(seed, std::string("phi")));
    return Embedding::make(cmdp, ecfg, rng);
  }();

  const auto [super, joint] = build_super_mdp(cmdp);
  const AggregatedMDP agg =
      epsilon_aggregate(super, joint, joint_embeddings(cmdp, phi, joint), epsilon);
  const BoundReport bound = verify_aggregation_bound(cmdp, phi, epsilon, c, 1e-9, 0.1, seed);

  CsvWriter assignment({"joint", "state", "ctx", "cluster"});
  for (int h = 0; h < super.n_states; ++h)
    assignment.add_row({fmt17(h), fmt17(joint.state_of(h)), fmt17(joint.ctx_of(h)),
                        fmt17(agg.assignment[h])});
  const fs::path assign_path = dir / "assignment.csv";
  const fs::path bound_path = dir / "aggregate_bound.json";
  write_file(assign_path.string(), assignment.str());
  write_file(bound_path.string(), bound.to_json().dump(2) + "\n");
  const nlohmann::json config{{"env", env_path},
                              {"epsilon", epsilon},
                              {"c", c},
                              {"seed", seed},
                              {"embedding", embedding_path}};
  write_manifest(dir / "manifest.json", "aggregate", config, env_hash(cmdp),
                 {assign_path.string(), bound_path.string()});
  std::cout << "aggregate: n_joint=" << super.n_states
            << " clusters=" << static_cast<int>(agg.clusters.size())
            << " lhs=" << fmt17(bound.lhs) << " rhs=" << fmt17(bound.rhs)
            << " pass=" << (bound.pass ? 1 : 0) << " -> " << assign_path.string() << "\n";
  return 0;
}

int do_verify(const std::string& which, int trials, std::uint64_t seed,
              const std::string& env_path, const std::string& out_flag,
              const std::string& out_dir) {
  std::optional<ContextualMDP> env;
  std::string env_hex;
  if (!env_path.empty()) {
    env = load_env(env_path);
    env_hex = env_hash(*env);
  }
  std::vector<std::string> theorems;
  if (which == "all")
    theorems = {"2", "3", "4", "5"};
  else
    theorems = {which};

  std::vector<BoundReport> reports;
  for (const std::string& thm : theorems) {
    const std::vector<BoundReport> batch =
        run_bound_suite(thm, trials, seed, env ? &*env : nullptr);
    reports.insert(reports.end(), batch.begin(), batch.end());
  }

  const fs::path dir = prepare_out_dir(out_dir);
  const fs::path out_path =
      !out_flag.empty()
          ? fs::path(out_flag)
          : dir / ("bounds_" + (which == "all" ? std::string("all") : "thm" + which) + ".jsonl");
  fs::path summary_path = out_path;
  summary_path.replace_extension();
  summary_path += "_summary.csv";
  write_file(out_path.string(), bound_reports_jsonl(reports));
  write_file(summary_path.string(), bound_summary_csv(reports));

  int failed = 0, ambiguous = 0;
  for (const BoundReport& r : reports) {
    if (!r.pass) ++failed;
    if (r.ambiguous) ++ambiguous;
  }
  const nlohmann::json config{
      {"theorem", which}, {"trials", trials}, {"seed", seed}, {"env", env_path}};
  write_manifest(out_path.string() + ".manifest.json", "verify", config, env_hex,
                 {out_path.string(), summary_path.string()});
  std::cout << "verify " << which << ": " << (reports.size() - failed) << "/" << reports.size()
            << " pass, " << ambiguous << " ambiguous -> " << out_path.string() << "\n";
  return failed == 0 ? 0 : 1;
}

int do_rcb(const std::string& env_path, const std::string& config_path,
           const std::string& preset, int steps, const std::vector<int>& train_contexts,
           const std::vector<int>& eval_contexts, bool dump_stream, std::uint64_t seed,
           const std::string& out_dir) {
  const ContextualMDP cmdp = load_env(env_path);
  RCBConfig cfg;
  if (!config_path.empty()) {
    const nlohmann::json doc = load_json(config_path);
    check_keys(doc, kRcbConfigKeys, "rcb config");
    cfg = rcb_config_from_json(doc);
  }
  if (!preset.empty()) cfg.preset = preset;
  if (steps >= 0) cfg.total_steps = steps;
  if (!train_contexts.empty()) cfg.train_contexts = train_contexts;
  if (!eval_contexts.empty()) cfg.eval_contexts = eval_contexts;
  const fs::path dir = prepare_out_dir(out_dir);

  const RCBResult res = run_rcb(cmdp, cfg, seed);
  const int n_eval =
      cfg.eval_contexts.empty() ? cmdp.n_contexts() : static_cast<int>(cfg.eval_contexts.size());
  const fs::path curve_path = dir / "curve.csv";
  const fs::path phi_path = dir / "embedding.json";
  const fs::path policy_path = dir / "policy.json";
  write_file(curve_path.string(), curve_csv(res.curve, n_eval));
  write_file(phi_path.string(), res.phi.to_json().dump(2) + "\n");
  const nlohmann::json policy_doc{{"format", "condbisim/policy/1"},
                                  {"codebook", res.policy.codebook().to_json()},
                                  {"q", res.policy.q()},
                                  {"temperature", res.policy.temperature()}};
  write_file(policy_path.string(), policy_doc.dump(2) + "\n");
  std::vector<std::string> outputs{curve_path.string(), phi_path.string(), policy_path.string()};
  if (dump_stream) {
    const fs::path stream_path = dir / "stream.jsonl";
    std::string lines;
    for (const std::array<int, 3>& step : res.stream)
      lines += nlohmann::json{{"s", step[0]}, {"a", step[1]}, {"s_next", step[2]}}.dump() + "\n";
    write_file(stream_path.string(), lines);
    outputs.push_back(stream_path.string());
  }
  nlohmann::json manifest = res.manifest;
  manifest["outputs"] = outputs;
  write_file((dir / "manifest.json").string(), manifest.dump(2) + "\n");

  const double eval_mean = res.curve.empty() ? 0.0 : res.curve.back().eval.mean;
  std::cout << "rcb: preset=" << cfg.preset << " steps=" << cfg.total_steps
            << " eval_mean=" << fmt17(eval_mean)
            << " codebook=" << res.policy.codebook().size() << " -> " << curve_path.string()
            << "\n";
  return 0;
}

int do_report(const std::vector<std::string>& bounds, const std::vector<std::string>& curves,
              const std::string& out_dir) {
  if (bounds.empty() && curves.empty())
    throw ConfigError("report needs --bounds and/or --curves inputs");
  const fs::path dir = prepare_out_dir(out_dir);
  std::vector<std::string> outputs;
  std::string note;

  if (!bounds.empty()) {
    std::vector<BoundReport> reports;
    for (const std::string& path : bounds) {
      const std::vector<BoundReport> batch = parse_bound_reports_jsonl(read_file(path));
      reports.insert(reports.end(), batch.begin(), batch.end());
    }
    const fs::path out = dir / "bound_summary.csv";
    write_file(out.string(), bound_summary_csv(reports));
    outputs.push_back(out.string());
    std::set<std::string> theorems;
    for (const BoundReport& r : reports) theorems.insert(r.theorem);
    note += std::to_string(reports.size()) + " bound reports in " +
            std::to_string(theorems.size()) + " theorems";
  }
  if (!curves.empty()) {
    std::map<std::string, std::vector<std::string>> groups;
    for (const std::string& spec : curves) {
      const std::size_t eq = spec.find('=');
      if (eq == std::string::npos)
        throw ConfigError("--curves expects LABEL=path[,path...], got '" + spec + "'");
      const std::string label = spec.substr(0, eq);
      std::stringstream ss(spec.substr(eq + 1));
      std::string path;
      while (std::getline(ss, path, ','))
        if (!path.empty()) groups[label].push_back(read_file(path));
      if (groups[label].empty()) throw ConfigError("--curves group '" + label + "' is empty");
    }
    const fs::path out = dir / "curve_summary.csv";
    write_file(out.string(), curve_summary_csv(groups));
    outputs.push_back(out.string());
    if (!note.empty()) note += ", ";
    note += std::to_string(groups.size()) + " curve groups";
  }

  nlohmann::json config = nlohmann::json::object();
  if (!bounds.empty()) config["bounds"] = bounds;
  if (!curves.empty()) config["curves"] = curves;
  write_manifest(dir / "report_manifest.json", "report", config, "", outputs);
  std::string joined;
  for (const std::string& o : outputs) joined += (joined.empty() ? "" : " ") + o;
  std::cout << "report: " << note << " -> " << joined << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  int rc = 0;
  CLI::App app{"Exact conditional-bisimulation toolkit for contextual MDPs", "condbisim"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // gen-env
  std::string ge_kind, ge_out;
  std::uint64_t ge_seed = 1;
  int ge_side = 0, ge_contexts = 0, ge_distractors = 0, ge_noise_values = 0, ge_states = 0,
      ge_actions = 0, ge_obs_dim = 0;
  double ge_discount = 0.0, ge_slip = 0.0, ge_goal_reward = 0.0;
  CLI::App* gen = app.add_subcommand("gen-env", "Write an environment file");
  gen->add_option("kind", ge_kind, "scrambled_grid | distractor_chain | random_cmdp")
      ->required();
  gen->add_option("-o,--out", ge_out, "output environment file")->required();
  gen->add_option("--seed", ge_seed, "generator seed");
  CLI::Option* o_side = gen->add_option("--side", ge_side, "grid side length");
  CLI::Option* o_ctx = gen->add_option("--contexts,--n-contexts", ge_contexts, "context count");
  CLI::Option* o_dis =
      gen->add_option("--distractors,--distractor-dims", ge_distractors, "distractor dims");
  CLI::Option* o_nv = gen->add_option("--noise-values", ge_noise_values, "values per distractor");
  CLI::Option* o_st = gen->add_option("--states,--n-states", ge_states, "state count");
  CLI::Option* o_ac = gen->add_option("--actions,--n-actions", ge_actions, "action count");
  CLI::Option* o_od = gen->add_option("--obs-dim", ge_obs_dim, "observation dim");
  CLI::Option* o_gam = gen->add_option("--discount", ge_discount, "discount factor");
  CLI::Option* o_slip = gen->add_option("--slip", ge_slip, "action slip probability");
  CLI::Option* o_gr = gen->add_option("--goal-reward", ge_goal_reward, "goal reward");
  gen->callback([&] {
    nlohmann::json params = nlohmann::json::object();
    if (*o_side) params["side"] = ge_side;
    if (*o_ctx) params["n_contexts"] = ge_contexts;
    if (*o_dis) params["distractor_dims"] = ge_distractors;
    if (*o_nv) params["noise_values"] = ge_noise_values;
    if (*o_st) params["n_states"] = ge_states;
    if (*o_ac) params["n_actions"] = ge_actions;
    if (*o_od) params["obs_dim"] = ge_obs_dim;
    if (*o_gam) params["discount"] = ge_discount;
    if (*o_slip) params["slip"] = ge_slip;
    if (*o_gr) params["goal_reward"] = ge_goal_reward;
    rc = do_gen_env(ge_kind, params, ge_seed, ge_out);
  });

  // metric
  std::string m_env, m_out, m_mode = "pi";
  double m_c = 0.5, m_temperature = 0.1, m_tol = 1e-9;
  CLI::App* metric = app.add_subcommand("metric", "Joint-space metric as a CSV matrix");
  metric->add_option("--env", m_env, "environment file")->required();
  metric->add_option("--out,-o", m_out, "output CSV")->required();
  metric->add_option("--mode", m_mode, "pi | max")
      ->check(CLI::IsMember({"pi", "max"}));
  metric->add_option("--c", m_c, "transition weight in (0,1)");
  metric->add_option("--temperature", m_temperature, "soft policy temperature (pi mode)");
  metric->add_option("--tol", m_tol, "fixed-point tolerance");
  metric->callback([&] { rc = do_metric(m_env, m_out, m_mode, m_c, m_temperature, m_tol); });

  // train-embed
  std::string te_env, te_config, te_out_dir = ".";
  int te_steps = -1;
  std::uint64_t te_seed = 1;
  CLI::App* train = app.add_subcommand("train-embed", "Train an embedding");
  train->add_option("--env", te_env, "environment file")->required();
  train->add_option("--config", te_config, "config JSON file");
  train->add_option("--steps", te_steps, "gradient steps (overrides config)");
  train->add_option("--seed", te_seed, "master seed");
  train->add_option("--out-dir", te_out_dir, "output directory");
  train->callback([&] { rc = do_train_embed(te_env, te_config, te_steps, te_seed, te_out_dir); });

  // aggregate
  std::string ag_env, ag_embedding, ag_out_dir = ".";
  double ag_epsilon = 0.1, ag_c = 0.5;
  std::uint64_t ag_seed = 1;
  CLI::App* agg = app.add_subcommand("aggregate", "Epsilon-aggregate the joint space");
  agg->add_option("--env", ag_env, "environment file")->required();
  agg->add_option("--epsilon", ag_epsilon, "latent ball radius");
  agg->add_option("--c", ag_c, "metric transition weight");
  agg->add_option("--embedding", ag_embedding, "embedding checkpoint (default: fresh table)");
  agg->add_option("--seed", ag_seed, "seed for the default embedding");
  agg->add_option("--out-dir", ag_out_dir, "output directory");
  agg->callback(
      [&] { rc = do_aggregate(ag_env, ag_epsilon, ag_c, ag_embedding, ag_seed, ag_out_dir); });

  // verify
  std::string v_which, v_env, v_out, v_out_dir = ".";
  int v_trials = 100;
  std::uint64_t v_seed = 1;
  CLI::App* verify = app.add_subcommand("verify", "Randomized bound suites");
  verify->add_option("theorem", v_which, "2 | 3 | 4 | 5 | all")
      ->required()
      ->check(CLI::IsMember({"2", "3", "4", "5", "all"}));
  verify->add_option("--trials", v_trials, "trials per theorem");
  verify->add_option("--seed", v_seed, "suite master seed");
  verify->add_option("--env", v_env, "pin every trial to this environment file");
  verify->add_option("--out,-o", v_out, "JSON-lines output path");
  verify->add_option("--out-dir", v_out_dir, "output directory");
  verify->callback([&] { rc = do_verify(v_which, v_trials, v_seed, v_env, v_out, v_out_dir); });

  // rcb
  std::string r_env, r_config, r_preset, r_out_dir = ".";
  int r_steps = -1;
  std::uint64_t r_seed = 1;
  std::vector<int> r_train_ctx, r_eval_ctx;
  bool r_dump_stream = false;
  CLI::App* rcb = app.add_subcommand("rcb", "Run the codebook agent");
  rcb->add_option("--env", r_env, "environment file")->required();
  rcb->add_option("--config", r_config, "config JSON file");
  rcb->add_option("--preset", r_preset,
                  "full | no-base | no-cc | no-icc | no-cc-no-icc");
  rcb->add_option("--steps", r_steps, "environment steps (overrides config)");
  rcb->add_option("--seed", r_seed, "master seed");
  rcb->add_option("--train-contexts", r_train_ctx, "context ids to train on")
      ->delimiter(',');
  rcb->add_option("--eval-contexts", r_eval_ctx, "context ids to evaluate on")
      ->delimiter(',');
  rcb->add_flag("--dump-stream", r_dump_stream, "also write the env step stream");
  rcb->add_option("--out-dir", r_out_dir, "output directory");
  rcb->callback([&] {
    rc = do_rcb(r_env, r_config, r_preset, r_steps, r_train_ctx, r_eval_ctx, r_dump_stream,
                r_seed, r_out_dir);
  });

  // report
  std::vector<std::string> rp_bounds, rp_curves;
  std::string rp_out_dir = ".";
  CLI::App* report = app.add_subcommand("report", "Summaries from bound/curve files");
  report->add_option("--bounds", rp_bounds, "BoundReport JSON-lines files");
  report->add_option("--curves", rp_curves, "curve groups as LABEL=path[,path...]");
  report->add_option("--out-dir", rp_out_dir, "output directory");
  report->callback([&] { rc = do_report(rp_bounds, rp_curves, rp_out_dir); });

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : 2;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return rc;
}

}  // namespace condbisim
