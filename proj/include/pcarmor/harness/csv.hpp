#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pcarmor::harness {

using CsvRow = std::vector<std::string>;

/// Quotes a field when it holds a comma, quote, CR or LF; quotes are doubled.
std::string csv_escape(std::string_view field);

/// Accumulates CRLF-terminated rows. The first row written is the header.
class CsvWriter {
 public:
  explicit CsvWriter(CsvRow header);

  void row(const CsvRow& fields);
  const std::string& str() const { return text_; }
  std::size_t columns() const { return columns_; }

 private:
  std::string text_;
  std::size_t columns_;
};

struct CsvTable {
  CsvRow header;
  std::vector<CsvRow> rows;

  /// Index of `name` in the header; throws FormatError if absent.
  std::size_t column(std::string_view name) const;
};

/// Parses quoted fields, embedded newlines and either line ending. Every row
/// must have as many fields as the header.
CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
/// Creates parent directories as needed; IoError when the file cannot be written.
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// Shortest text that reads back to exactly `v`.
std::string format_double(double v);
/// Fixed notation with `decimals` digits.
std::string format_fixed(double v, int decimals);

}  // namespace pcarmor::harness
