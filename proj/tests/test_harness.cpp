#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "condbisim/embed.hpp"
#include "condbisim/env_gen.hpp"
#include "condbisim/errors.hpp"
#include "condbisim/harness.hpp"
#include "condbisim/io.hpp"
#include "condbisim/rcb.hpp"
#include "condbisim/report.hpp"
#include "doctest.h"

using namespace condbisim;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "condbisim_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) { return read_file(p.string()); }

int make_env(const fs::path& out, int states, int contexts, std::uint64_t seed) {
  return run({"gen-env", "random_cmdp", "-o", out.string(), "--seed", std::to_string(seed),
              "--states", std::to_string(states), "--actions", "2", "--contexts",
              std::to_string(contexts)});
}

}  // namespace

TEST_CASE("worker_count and parallel_for") {
  const char* saved = std::getenv("CONDBISIM_THREADS");
  const std::string old = saved ? saved : "";

  setenv("CONDBISIM_THREADS", "3", 1);
  CHECK(worker_count() == 3);
  setenv("CONDBISIM_THREADS", "0", 1);
  CHECK(worker_count() >= 1);  // invalid values fall back to the hardware count
  unsetenv("CONDBISIM_THREADS");
  CHECK(worker_count() >= 1);

  setenv("CONDBISIM_THREADS", "4", 1);
  std::vector<int> out(101, -1);
  parallel_for(101, [&](int i) { out[i] = i * i; });
  for (int i = 0; i < 101; ++i) CHECK(out[i] == i * i);
  CHECK_NOTHROW(parallel_for(0, [&](int) { throw ParamRange("never runs"); }));
  CHECK_THROWS_AS(parallel_for(50,
                               [&](int i) {
                                 if (i == 7) throw ParamRange("boom");
                               }),
                  const ParamRange&);

  if (saved)
    setenv("CONDBISIM_THREADS", old.c_str(), 1);
  else
    unsetenv("CONDBISIM_THREADS");
}

TEST_CASE("cli: exit codes for parse and config errors") {
  CHECK(run({"--version"}) == 0);
  CHECK(run({}) == 2);                       // a subcommand is required
  CHECK(run({"frobnicate"}) == 2);           // unknown subcommand
  CHECK(run({"metric"}) == 2);               // missing required flags
  CHECK(run({"verify", "7"}) == 2);          // theorem outside the allowed set
  const fs::path dir = scratch("exit_codes");
  CHECK(run({"metric", "--env", (dir / "nope.json").string(), "-o",
             (dir / "m.csv").string()}) == 2);
  // Parameter not accepted by this environment family.
  CHECK(run({"gen-env", "random_cmdp", "-o", (dir / "e.json").string(), "--side", "4"}) == 2);
}

TEST_CASE("cli gen-env: valid, deterministic, manifested") {
  const fs::path dir = scratch("gen_env");
  const fs::path env_path = dir / "env.json";
  REQUIRE(make_env(env_path, 4, 2, 7) == 0);

  const ContextualMDP env = build_cmdp(nlohmann::json::parse(slurp(env_path)));
  CHECK(env.base.n_states == 4);
  CHECK(env.base.n_actions == 2);
  CHECK(env.n_contexts() == 2);
  CHECK_NOTHROW(env.validate());
  const ContextualMDP direct = generate_env(
      "random_cmdp", {{"n_states", 4}, {"n_actions", 2}, {"n_contexts", 2}}, 7);
  CHECK(env_hash(env) == env_hash(direct));

  const fs::path env2 = dir / "env2.json";
  REQUIRE(make_env(env2, 4, 2, 7) == 0);
  CHECK(slurp(env_path) == slurp(env2));  // byte-identical regeneration

  const nlohmann::json manifest =
      nlohmann::json::parse(slurp(dir / "env.json.manifest.json"));
  CHECK(manifest.at("schema") == "condbisim/manifest/1");
  CHECK(manifest.at("command") == "gen-env");
  CHECK(manifest.at("env_hash") == env_hash(env));
  CHECK(manifest.at("config_hash") == content_hash(manifest.at("config").dump()));
}

TEST_CASE("cli metric: symmetric labeled joint matrix") {
  const fs::path dir = scratch("metric");
  const fs::path env_path = dir / "env.json";
  REQUIRE(make_env(env_path, 3, 2, 9) == 0);

  const fs::path csv_path = dir / "metric.csv";
  REQUIRE(run({"metric", "--env", env_path.string(), "-o", csv_path.string(), "--mode", "pi",
               "--c", "0.5"}) == 0);

  const CsvTable t = parse_csv(slurp(csv_path));
  REQUIRE(t.header.size() == 7);  // index + 6 joint states
  CHECK(t.header[0] == "index");
  CHECK(t.header[1] == "s0_c0");
  CHECK(t.header[2] == "s1_c0");
  CHECK(t.header[4] == "s0_c1");
  REQUIRE(t.rows.size() == 6);
  for (int i = 0; i < 6; ++i) {
    CHECK(t.rows[i][0] == t.header[i + 1]);
    CHECK(std::stod(t.rows[i][i + 1]) == 0.0);
    for (int j = 0; j < 6; ++j)
      CHECK(t.rows[i][j + 1] == t.rows[j][i + 1]);  // exact symmetric dump
  }

  REQUIRE(run({"metric", "--env", env_path.string(), "-o", (dir / "max.csv").string(),
               "--mode", "max"}) == 0);
  CHECK(run({"metric", "--env", env_path.string(), "-o", (dir / "bad.csv").string(),
             "--mode", "median"}) == 2);
}

TEST_CASE("cli verify: suites write reports, summaries, manifests") {
  const fs::path dir = scratch("verify");
  REQUIRE(run({"verify", "4", "--trials", "5", "--seed", "3", "--out-dir", dir.string()}) == 0);

  const fs::path out = dir / "bounds_thm4.jsonl";
  const std::vector<BoundReport> reports = parse_bound_reports_jsonl(slurp(out));
  REQUIRE(reports.size() == 5);
  for (const BoundReport& r : reports) {
    CHECK(r.theorem == "4");
    CHECK(r.pass);
  }

  const CsvTable summary = parse_csv(slurp(dir / "bounds_thm4_summary.csv"));
  REQUIRE(summary.rows.size() == 1);
  CHECK(summary.rows[0][summary.column("theorem")] == "4");
  CHECK(summary.rows[0][summary.column("count")] == "5");
  CHECK(std::stod(summary.rows[0][summary.column("pass_rate")]) == 1.0);
  CHECK(fs::exists(dir / "bounds_thm4.jsonl.manifest.json"));

  // Reruns with one seed are byte-identical.
  const fs::path dir2 = scratch("verify_rerun");
  REQUIRE(run({"verify", "4", "--trials", "5", "--seed", "3", "--out-dir", dir2.string()}) == 0);
  CHECK(slurp(dir2 / "bounds_thm4.jsonl") == slurp(out));

  const fs::path all_dir = scratch("verify_all");
  REQUIRE(run({"verify", "all", "--trials", "2", "--seed", "4", "--out-dir",
               all_dir.string()}) == 0);
  const std::vector<BoundReport> all =
      parse_bound_reports_jsonl(slurp(all_dir / "bounds_all.jsonl"));
  CHECK(all.size() >= 8);  // theorem 3 emits one report per ordered context pair
  std::set<std::string> seen;
  for (const BoundReport& r : all) {
    seen.insert(r.theorem);
    CHECK(r.pass);
  }
  CHECK(seen == std::set<std::string>{"2", "3", "4", "5"});
}

TEST_CASE("cli verify: pinned environment") {
  const fs::path dir = scratch("verify_pinned");
  const fs::path env_path = dir / "env.json";
  REQUIRE(make_env(env_path, 3, 2, 11) == 0);
  REQUIRE(run({"verify", "3", "--trials", "2", "--seed", "5", "--env", env_path.string(),
               "--out-dir", dir.string()}) == 0);
  const std::vector<BoundReport> reports =
      parse_bound_reports_jsonl(slurp(dir / "bounds_thm3.jsonl"));
  const ContextualMDP env = build_cmdp(nlohmann::json::parse(slurp(env_path)));
  for (const BoundReport& r : reports) {
    CHECK(r.env_hash == env_hash(env));  // every trial used the pinned env
    CHECK(r.pass);
  }
}

TEST_CASE("cli train-embed: outputs, overrides, config validation") {
  const fs::path dir = scratch("train_embed");
  const fs::path env_path = dir / "env.json";
  REQUIRE(make_env(env_path, 3, 2, 13) == 0);

  const fs::path cfg_path = dir / "cfg.json";
  write_file(cfg_path.string(),
             nlohmann::json{{"steps", 12},
                            {"collect_steps", 120},
                            {"batch_size", 8},
                            {"history_period", 5},
                            {"arch", {{"arch", "table"}, {"out_dim", 2}}},
                            {"loss", {{"target_mode", "oracle-metric"}}},
                            {"metric", {{"tol", 1e-6}}}}
                 .dump());

  const fs::path out1 = dir / "run1";
  REQUIRE(run({"train-embed", "--env", env_path.string(), "--config", cfg_path.string(),
               "--seed", "2", "--out-dir", out1.string()}) == 0);
  const CsvTable hist = parse_csv(slurp(out1 / "history.csv"));
  CHECK(hist.header[0] == "step");
  CHECK(hist.column("delta") == 5);
  REQUIRE(!hist.rows.empty());
  CHECK(std::stoi(hist.rows.back()[0]) == 11);  // final step is always recorded
  CHECK_NOTHROW(Embedding::from_json(nlohmann::json::parse(slurp(out1 / "embedding.json"))));
  CHECK_NOTHROW(
      LatentDynamics::from_json(nlohmann::json::parse(slurp(out1 / "dynamics.json"))));

  const nlohmann::json manifest = nlohmann::json::parse(slurp(out1 / "manifest.json"));
  CHECK(manifest.at("command") == "train-embed");
  CHECK(manifest.at("config").at("steps") == 12);
  CHECK(manifest.at("config_hash") == content_hash(manifest.at("config").dump()));

  // --steps overrides the config file; rerun with one seed is byte-identical.
  const fs::path out2 = dir / "run2";
  REQUIRE(run({"train-embed", "--env", env_path.string(), "--config", cfg_path.string(),
               "--steps", "6", "--seed", "2", "--out-dir", out2.string()}) == 0);
  const CsvTable hist2 = parse_csv(slurp(out2 / "history.csv"));
  CHECK(std::stoi(hist2.rows.back()[0]) == 5);

  const fs::path out3 = dir / "run3";
  REQUIRE(run({"train-embed", "--env", env_path.string(), "--config", cfg_path.string(),
               "--seed", "2", "--out-dir", out3.string()}) == 0);
  CHECK(slurp(out3 / "embedding.json") == slurp(out1 / "embedding.json"));
  CHECK(slurp(out3 / "history.csv") == slurp(out1 / "history.csv"));

  const fs::path bad_cfg = dir / "bad.json";
  write_file(bad_cfg.string(), R"({"bogus": 1})");
  CHECK(run({"train-embed", "--env", env_path.string(), "--config", bad_cfg.string(),
             "--out-dir", (dir / "bad").string()}) == 2);
}

TEST_CASE("cli aggregate: assignment table and bound report") {
  const fs::path dir = scratch("aggregate");
  const fs::path env_path = dir / "env.json";
  REQUIRE(make_env(env_path, 3, 2, 17) == 0);

  REQUIRE(run({"aggregate", "--env", env_path.string(), "--epsilon", "0.2", "--c", "0.5",
               "--seed", "4", "--out-dir", dir.string()}) == 0);
  const CsvTable assign = parse_csv(slurp(dir / "assignment.csv"));
  CHECK(assign.header == std::vector<std::string>{"joint", "state", "ctx", "cluster"});
  REQUIRE(assign.rows.size() == 6);
  int n_clusters = 0;
  for (const auto& row : assign.rows)
    n_clusters = std::max(n_clusters, std::stoi(row[3]) + 1);
  CHECK(n_clusters >= 1);
  CHECK(n_clusters <= 6);

  const BoundReport bound =
      BoundReport::from_json(nlohmann::json::parse(slurp(dir / "aggregate_bound.json")));
  CHECK(bound.theorem == "2");
  CHECK(bound.pass);
  CHECK(bound.constants.at("n_clusters") == static_cast<double>(n_clusters));

  // An embedding checkpoint trained on the same environment can be plugged in.
  const fs::path emb_dir = dir / "emb";
  const fs::path cfg_path = dir / "cfg.json";
  write_file(cfg_path.string(),
             nlohmann::json{{"steps", 5},
                            {"collect_steps", 80},
                            {"batch_size", 8},
                            {"arch", {{"arch", "table"}, {"out_dim", 2}}},
                            {"loss", {{"target_mode", "oracle-metric"}}},
                            {"metric", {{"tol", 1e-6}}}}
                 .dump());
  REQUIRE(run({"train-embed", "--env", env_path.string(), "--config", cfg_path.string(),
               "--seed", "6", "--out-dir", emb_dir.string()}) == 0);
  REQUIRE(run({"aggregate", "--env", env_path.string(), "--epsilon", "0.1", "--embedding",
               (emb_dir / "embedding.json").string(), "--out-dir",
               (dir / "with_emb").string()}) == 0);
  CHECK(fs::exists(dir / "with_emb" / "aggregate_bound.json"));
}

TEST_CASE("cli rcb: outputs, determinism, preset and context overrides") {
  const fs::path dir = scratch("rcb");
  const fs::path env_path = dir / "env.json";
  REQUIRE(make_env(env_path, 3, 2, 19) == 0);

  const fs::path cfg_path = dir / "cfg.json";
  write_file(cfg_path.string(),
             nlohmann::json{{"total_steps", 80},
                            {"initial_steps", 30},
                            {"batch_size", 8},
                            {"episode_len", 10},
                            {"eval_period", 40},
                            {"gamma", 0.9},
                            {"codebook_radius", 0.25},
                            {"arch", {{"arch", "table"}, {"out_dim", 2}}},
                            {"loss", {{"target_mode", "oracle-metric"}}},
                            {"metric", {{"tol", 1e-6}}}}
                 .dump());

  const fs::path d1 = dir / "run1";
  REQUIRE(run({"rcb", "--env", env_path.string(), "--config", cfg_path.string(), "--seed", "5",
               "--dump-stream", "--out-dir", d1.string()}) == 0);
  const CsvTable curve = parse_csv(slurp(d1 / "curve.csv"));
  CHECK(curve.column("eval_mean") == 3);
  CHECK(curve.column("eval_j_1") >= 0);
  REQUIRE(curve.rows.size() == 2);  // steps 40 and 80
  CHECK_NOTHROW(Embedding::from_json(nlohmann::json::parse(slurp(d1 / "embedding.json"))));

  const nlohmann::json pol = nlohmann::json::parse(slurp(d1 / "policy.json"));
  CHECK(pol.at("format") == "condbisim/policy/1");
  const Codebook cb = Codebook::from_json(pol.at("codebook"));
  CHECK(static_cast<int>(pol.at("q").get<std::vector<std::vector<double>>>().size()) ==
        cb.size());

  const nlohmann::json manifest = nlohmann::json::parse(slurp(d1 / "manifest.json"));
  CHECK(manifest.at("schema") == "condbisim/run/1");
  CHECK(manifest.at("steps") == 80);
  std::ifstream stream_file(d1 / "stream.jsonl");
  int lines = 0;
  for (std::string line; std::getline(stream_file, line);) ++lines;
  CHECK(lines == 80);

  const fs::path d2 = dir / "run2";
  REQUIRE(run({"rcb", "--env", env_path.string(), "--config", cfg_path.string(), "--seed", "5",
               "--dump-stream", "--out-dir", d2.string()}) == 0);
  CHECK(slurp(d2 / "curve.csv") == slurp(d1 / "curve.csv"));
  CHECK(slurp(d2 / "stream.jsonl") == slurp(d1 / "stream.jsonl"));
  CHECK(slurp(d2 / "policy.json") == slurp(d1 / "policy.json"));

  const fs::path d3 = dir / "run3";
  REQUIRE(run({"rcb", "--env", env_path.string(), "--config", cfg_path.string(), "--seed", "5",
               "--preset", "no-cc", "--train-contexts", "0", "--eval-contexts", "0,1",
               "--out-dir", d3.string()}) == 0);
  const nlohmann::json m3 = nlohmann::json::parse(slurp(d3 / "manifest.json"));
  CHECK(m3.at("preset") == "no-cc");
  CHECK(m3.at("config").at("train_contexts") == nlohmann::json::array({0}));

  const fs::path bad_cfg = dir / "bad.json";
  write_file(bad_cfg.string(), R"({"bogus": 3})");
  CHECK(run({"rcb", "--env", env_path.string(), "--config", bad_cfg.string(), "--out-dir",
             (dir / "bad").string()}) == 2);
}

TEST_CASE("cli report: bound roll-ups and curve aggregation") {
  const fs::path dir = scratch("report");
  REQUIRE(run({"verify", "4", "--trials", "3", "--seed", "8", "--out",
               (dir / "b.jsonl").string(), "--out-dir", dir.string()}) == 0);

  REQUIRE(run({"report", "--bounds", (dir / "b.jsonl").string(), "--out-dir",
               dir.string()}) == 0);
  const CsvTable summary = parse_csv(slurp(dir / "bound_summary.csv"));
  REQUIRE(summary.rows.size() == 1);
  CHECK(summary.rows[0][summary.column("count")] == "3");

  write_file((dir / "c1.csv").string(), "step,eval_mean\n10,1\n20,5\n");
  write_file((dir / "c2.csv").string(), "step,eval_mean\n10,3\n20,7\n");
  REQUIRE(run({"report", "--curves",
               "A=" + (dir / "c1.csv").string() + "," + (dir / "c2.csv").string(), "--out-dir",
               dir.string()}) == 0);
  const CsvTable curves = parse_csv(slurp(dir / "curve_summary.csv"));
  CHECK(curves.header ==
        std::vector<std::string>{"label", "step", "mean_return", "stderr", "n_seeds"});
  REQUIRE(curves.rows.size() == 2);
  CHECK(curves.rows[0][0] == "A");
  CHECK(std::stoi(curves.rows[0][1]) == 10);
  CHECK(std::stod(curves.rows[0][2]) == 2.0);  // mean of 1 and 3
  CHECK(std::stod(curves.rows[0][3]) == 1.0);  // sample se: sqrt(2/1)/sqrt(2)
  CHECK(std::stoi(curves.rows[0][4]) == 2);
  CHECK(std::stod(curves.rows[1][2]) == 6.0);

  CHECK(run({"report", "--out-dir", dir.string()}) == 2);  // no inputs
  CHECK(run({"report", "--curves", "nolabel", "--out-dir", dir.string()}) == 2);
}

TEST_CASE("csv utilities: parse_csv and curve_summary_csv edge cases") {
  const CsvTable t = parse_csv("a,b\r\n1,\n");
  CHECK(t.header == std::vector<std::string>{"a", "b"});
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0][1] == "");
  CHECK(t.column("b") == 1);
  CHECK(t.column("missing") == -1);
  CHECK_THROWS_AS(parse_csv("a,b\n1\n"), const SchemaError&);
  CHECK_THROWS_AS(curve_summary_csv({}), const EmptyResults&);
  CHECK_THROWS_AS(curve_summary_csv({{"A", {"step,foo\n1,2\n"}}}), const SchemaError&);
}
