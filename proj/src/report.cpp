#include "condbisim/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "condbisim/errors.hpp"
#include "condbisim/io.hpp"

namespace condbisim {

nlohmann::json BoundReport::to_json() const {
  nlohmann::json doc;
  doc["theorem"] = theorem;
  doc["lhs"] = lhs;
  doc["rhs"] = rhs;
  doc["pass"] = pass;
  if (has_signed) {
    doc["lhs_signed"] = lhs_signed;
    doc["ambiguous"] = ambiguous;
  }
  doc["constants"] = constants;
  doc["seed"] = seed;
  doc["env_hash"] = env_hash;
  return doc;
}

BoundReport BoundReport::from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("theorem") || !doc.contains("lhs") ||
      !doc.contains("rhs") || !doc.contains("pass"))
    throw SchemaError("not a bound report");
  BoundReport r;
  r.theorem = doc.at("theorem").get<std::string>();
  r.lhs = doc.at("lhs").get<double>();
  r.rhs = doc.at("rhs").get<double>();
  r.pass = doc.at("pass").get<bool>();
  if (doc.contains("lhs_signed")) {
    r.has_signed = true;
    r.lhs_signed = doc.at("lhs_signed").get<double>();
    r.ambiguous = doc.value("ambiguous", false);
  }
  if (doc.contains("constants"))
    r.constants = doc.at("constants").get<std::map<std::string, double>>();
  r.seed = doc.value("seed", std::uint64_t{0});
  r.env_hash = doc.value("env_hash", "");
  return r;
}

std::string bound_reports_jsonl(const std::vector<BoundReport>& reports) {
  std::string out;
  for (const BoundReport& r : reports) {
    out += r.to_json().dump();
    out += '\n';
  }
  return out;
}

std::vector<BoundReport> parse_bound_reports_jsonl(const std::string& text) {
  std::vector<BoundReport> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(BoundReport::from_json(nlohmann::json::parse(line)));
  }
  return out;
}

std::string bound_summary_csv(const std::vector<BoundReport>& reports) {
  std::map<std::string, std::vector<const BoundReport*>> by_theorem;
  for (const BoundReport& r : reports) by_theorem[r.theorem].push_back(&r);
  CsvWriter csv({"theorem", "count", "passes", "failures", "ambiguous", "pass_rate", "max_lhs",
                 "min_slack"});
  for (const auto& [name, rs] : by_theorem) {
    int passes = 0, ambiguous = 0;
    double max_lhs = 0.0, min_slack = std::numeric_limits<double>::infinity();
    for (const BoundReport* r : rs) {
      passes += r->pass ? 1 : 0;
      ambiguous += r->ambiguous ? 1 : 0;
      max_lhs = std::max(max_lhs, r->lhs);
      min_slack = std::min(min_slack, r->rhs - r->lhs);
    }
    const int n = static_cast<int>(rs.size());
    csv.add_row({name, fmt17(n), fmt17(passes), fmt17(n - passes), fmt17(ambiguous),
                 fmt17(static_cast<double>(passes) / n), fmt17(max_lhs), fmt17(min_slack)});
  }
  return csv.str();
}

CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.push_back("");
    if (first) {
      table.header = std::move(fields);
      first = false;
    } else {
      if (fields.size() != table.header.size())
        throw SchemaError("csv row width does not match the header");
      table.rows.push_back(std::move(fields));
    }
  }
  return table;
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

std::string curve_summary_csv(const std::map<std::string, std::vector<std::string>>& groups) {
  if (groups.empty()) throw EmptyResults("no learning curves to summarize");
  CsvWriter csv({"label", "step", "mean_return", "stderr", "n_seeds"});
  for (const auto& [label, files] : groups) {
    std::map<long long, std::vector<double>> by_step;
    for (const std::string& content : files) {
      const CsvTable t = parse_csv(content);
      const int c_step = t.column("step");
      const int c_val = t.column("eval_mean");
      if (c_step < 0 || c_val < 0)
        throw SchemaError("curve csv needs 'step' and 'eval_mean' columns");
      for (const auto& row : t.rows)
        by_step[std::stoll(row[c_step])].push_back(std::stod(row[c_val]));
    }
    for (const auto& [step, vals] : by_step) {
      const int n = static_cast<int>(vals.size());
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= n;
      double var = 0.0;
      for (double v : vals) var += (v - mean) * (v - mean);
      const double se = n > 1 ? std::sqrt(var / (n - 1)) / std::sqrt(static_cast<double>(n)) : 0.0;
      csv.add_row({label, fmt17(step), fmt17(mean), fmt17(se), fmt17(n)});
    }
  }
  return csv.str();
}

}  // namespace condbisim
