#include "tarec/csv.hpp"

#include <charconv>
#include <cmath>

#include "tarec/error.hpp"

namespace tarec {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header,
                     const std::vector<std::string>& comments)
    : out_(path, std::ios::binary | std::ios::trunc), columns_(header.size()) {
  if (!out_) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& c : comments) out_ << "# " << c << '\n';
  row(header);
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  if (fields.size() != columns_) {
    throw ContractViolation("csv row has " + std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(columns_));
  }
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out_ << ',';
    out_ << quote(fields[i]);
  }
  out_ << '\n';
}

}  // namespace tarec
