#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace condbisim {

// One verification run of a performance-difference bound. lhs/rhs are the two
// sides as measured; `constants` carries every quantity entering rhs so a
// report can be re-derived by hand. Checks with an expectation term that can
// be negative also record the signed lhs and whether only the signed form of
// the inequality held.
struct BoundReport {
  std::string theorem;  // "2" | "3" | "4" | "5"
  double lhs = 0.0;
  double rhs = 0.0;
  bool pass = false;
  bool has_signed = false;
  double lhs_signed = 0.0;
  bool ambiguous = false;
  std::map<std::string, double> constants;
  std::uint64_t seed = 0;
  std::string env_hash;

  nlohmann::json to_json() const;
  static BoundReport from_json(const nlohmann::json& doc);
};

std::string bound_reports_jsonl(const std::vector<BoundReport>& reports);
std::vector<BoundReport> parse_bound_reports_jsonl(const std::string& text);

// Per-theorem roll-up: count, passes, ambiguous count, worst lhs, smallest
// slack (rhs - lhs).
std::string bound_summary_csv(const std::vector<BoundReport>& reports);

// Aggregates learning-curve CSVs that share a label (seeds of one setting):
// per step, the mean and standard error of eval_mean across files.
// Input: label -> CSV file contents.
std::string curve_summary_csv(const std::map<std::string, std::vector<std::string>>& groups);

// Minimal CSV access for our own files (no quoting, no embedded commas).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  int column(const std::string& name) const;  // -1 when absent
};
CsvTable parse_csv(const std::string& text);

}  // namespace condbisim
