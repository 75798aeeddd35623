#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "condbisim/embed.hpp"
#include "condbisim/env_gen.hpp"
#include "condbisim/harness.hpp"
#include "condbisim/io.hpp"
#include "condbisim/metric.hpp"
#include "condbisim/rcb.hpp"
#include "condbisim/report.hpp"
#include "condbisim/solver.hpp"
#include "condbisim/transport.hpp"
#include "condbisim/version.hpp"

namespace py = pybind11;
using namespace condbisim;

namespace {

ContextualMDP env_from(const std::string& env_json) {
  return build_cmdp(nlohmann::json::parse(env_json));
}

std::vector<std::vector<double>> dense(const PseudoMetric& d) {
  std::vector<std::vector<double>> m(d.n, std::vector<double>(d.n));
  for (int i = 0; i < d.n; ++i)
    for (int j = 0; j < d.n; ++j) m[i][j] = d.at(i, j);
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Exact conditional-bisimulation toolkit for contextual MDPs.";
  m.attr("__version__") = kVersion;

  m.def(
      "generate_env",
      [](const std::string& kind, const std::string& params_json, std::uint64_t seed) {
        return to_json(generate_env(kind, nlohmann::json::parse(params_json), seed)).dump(2);
      },
      py::arg("kind"), py::arg("params_json") = "{}", py::arg("seed") = 1,
      "Build an environment family member; returns its JSON document.");

  m.def(
      "env_hash", [](const std::string& env_json) { return env_hash(env_from(env_json)); },
      py::arg("env_json"), "Content hash of an environment document.");

  m.def(
      "bisim_metric",
      [](const std::string& env_json, double c, double tol) {
        const ContextualMDP cmdp = env_from(env_json);
        const auto [super, joint] = build_super_mdp(cmdp);
        (void)joint;
        MetricConfig cfg;
        cfg.c = c;
        cfg.tol = tol;
        return dense(bisim_metric(super, cfg).metric);
      },
      py::arg("env_json"), py::arg("c") = 0.5, py::arg("tol") = 1e-9,
      "Exact bisimulation metric on the joint (state, context) space.");

  m.def(
      "pi_bisim_metric",
      [](const std::string& env_json, double c, double temperature, double tol) {
        const ContextualMDP cmdp = env_from(env_json);
        const auto [super, joint] = build_super_mdp(cmdp);
        (void)joint;
        MetricConfig cfg;
        cfg.c = c;
        cfg.tol = tol;
        const SoftValueIteration soft = soft_value_iteration(super, temperature);
        return dense(pi_bisim_metric(super, soft.policy, cfg).metric);
      },
      py::arg("env_json"), py::arg("c") = 0.5, py::arg("temperature") = 0.1,
      py::arg("tol") = 1e-9,
      "Policy-dependent metric on the joint space under the soft-optimal policy.");

  m.def(
      "wasserstein1",
      [](const std::vector<double>& p, const std::vector<double>& q,
         const std::vector<double>& cost, int n_p, int n_q) {
        const TransportResult res = transport_lp(p, q, cost, n_p, n_q);
        return py::make_tuple(res.cost, res.duality_gap);
      },
      py::arg("p"), py::arg("q"), py::arg("cost"), py::arg("n_p"), py::arg("n_q"),
      "Exact optimal-transport cost and its duality gap; cost is row-major n_p x n_q.");

  m.def(
      "train_embedding",
      [](const std::string& env_json, std::uint64_t seed, int steps) {
        const ContextualMDP cmdp = env_from(env_json);
        TrainEmbedConfig cfg;
        if (steps > 0) cfg.steps = steps;
        const TrainEmbedResult res = train_embedding(cmdp, cfg, seed);
        nlohmann::json out{{"final_delta", res.final_delta},
                           {"final_icc", res.final_icc},
                           {"embedding", res.phi.to_json()},
                           {"history_csv", history_csv(res.history)}};
        return out.dump();
      },
      py::arg("env_json"), py::arg("seed") = 1, py::arg("steps") = 0,
      "Train an embedding with default settings; returns a JSON result blob.");

  m.def(
      "verify_bound",
      [](const std::string& theorem, int trials, std::uint64_t seed,
         const std::string& env_json) {
        std::optional<ContextualMDP> env;
        if (!env_json.empty()) env = env_from(env_json);
        return bound_reports_jsonl(
            run_bound_suite(theorem, trials, seed, env ? &*env : nullptr));
      },
      py::arg("theorem"), py::arg("trials") = 10, py::arg("seed") = 1,
      py::arg("env_json") = "",
      "Run one randomized bound suite; returns BoundReports as JSON lines.");

  m.def(
      "run_rcb",
      [](const std::string& env_json, const std::string& config_json, std::uint64_t seed) {
        const ContextualMDP cmdp = env_from(env_json);
        RCBConfig cfg = config_json.empty()
                            ? RCBConfig{}
                            : rcb_config_from_json(nlohmann::json::parse(config_json));
        const RCBResult res = run_rcb(cmdp, cfg, seed);
        const int n_eval = cfg.eval_contexts.empty() ? cmdp.n_contexts()
                                                     : static_cast<int>(cfg.eval_contexts.size());
        nlohmann::json out{{"manifest", res.manifest},
                           {"curve_csv", curve_csv(res.curve, n_eval)}};
        return out.dump();
      },
      py::arg("env_json"), py::arg("config_json") = "", py::arg("seed") = 1,
      "Run the codebook agent; returns the manifest and learning curve.");

  m.def(
      "run_cli", [](const std::vector<std::string>& args) { return run(args); },
      py::arg("args"), "Invoke the command-line harness; returns its exit code.");
}
