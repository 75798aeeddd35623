#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "condbisim/errors.hpp"
#include "condbisim/rng.hpp"

namespace condbisim {

// All numeric text output goes through fmt17 so values round-trip exactly.
inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline std::string hex64(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string content_hash(const std::string& text) {
  return hex64(fnv1a64(text.data(), text.size()));
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  out << content;
  if (!out) throw ConfigError("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Minimal CSV writer: the toolkit only ever emits rectangular numeric tables
// with a single header row, so quoting rules are not needed.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(const std::vector<std::string>& cells) {
    if (cells.size() != header_.size())
      throw LengthMismatch("csv row width " + std::to_string(cells.size()) +
                           " vs header width " + std::to_string(header_.size()));
    rows_.push_back(cells);
  }

  std::string str() const {
    std::ostringstream out;
    join(out, header_);
    for (const auto& row : rows_) join(out, row);
    return out.str();
  }

  void save(const std::filesystem::path& path) const { write_file(path, str()); }

 private:
  static void join(std::ostringstream& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << ',';
      out << cells[i];
    }
    out << '\n';
  }
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace condbisim
