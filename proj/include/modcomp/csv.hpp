#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "modcomp/errors.hpp"

namespace modcomp {

// Deterministic numeric formatting for CSV output: C locale, '.' decimal,
// shortest round-trip-ish form via %.10g.
std::string fmt_double(double v);

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);

 private:
  std::ofstream out_;
  std::size_t width_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<long> line_numbers;  // 1-based source line of each row

  int column(const std::string& name) const;  // ParseError when absent
};

// Strict reader: every row must match the header width. Throws ParseError
// carrying the offending line number.
CsvTable read_csv(const std::filesystem::path& path);

double parse_double(const std::string& cell, long line);
long long parse_int(const std::string& cell, long line);

}  // namespace modcomp
