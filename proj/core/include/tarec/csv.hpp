#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace tarec {

/// Shortest round-trip decimal form of `v`.
std::string format_double(double v);

/// Comma-separated writer: optional `# ` comment lines, header, LF endings.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header,
            const std::vector<std::string>& comments = {});
  void row(const std::vector<std::string>& fields);
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
  std::size_t columns_;
};

}  // namespace tarec
