#include "pcarmor/harness/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pcarmor/errors.hpp"

namespace pcarmor::harness {

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

CsvWriter::CsvWriter(CsvRow header) : columns_(header.size()) {
  if (header.empty()) throw ValidationError("csv: header must have at least one column");
  columns_ = header.size();
  row(header);
}

void CsvWriter::row(const CsvRow& fields) {
  if (fields.size() != columns_) {
    throw ValidationError("csv: row has " + std::to_string(fields.size()) + " fields, header has " +
                          std::to_string(columns_));
  }
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) text_ += ',';
    text_ += csv_escape(fields[i]);
  }
  text_ += "\r\n";
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw FormatError("csv: missing column '" + std::string(name) + "'");
}

CsvTable parse_csv(std::string_view text) {
  std::vector<CsvRow> rows;
  CsvRow current;
  std::string field;
  bool quoted = false;
  bool at_field_start = true;
  bool row_started = false;  // an empty trailing field still counts
  std::size_t i = 0;

  auto end_row = [&] {
    current.push_back(std::move(field));
    field.clear();
    rows.push_back(std::move(current));
    current.clear();
    at_field_start = true;
    row_started = false;
  };

  while (i < text.size()) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          i += 2;
          continue;
        }
        quoted = false;
      } else {
        field += c;
      }
      ++i;
      continue;
    }
    if (c == '"' && at_field_start) {
      quoted = true;
      at_field_start = false;
      row_started = true;
    } else if (c == ',') {
      current.push_back(std::move(field));
      field.clear();
      at_field_start = true;
      row_started = true;
    } else if (c == '\r' || c == '\n') {
      end_row();
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
    } else {
      field += c;
      at_field_start = false;
      row_started = true;
    }
    ++i;
  }
  if (quoted) throw FormatError("csv: unterminated quoted field");
  if (row_started) end_row();

  if (rows.empty()) throw FormatError("csv: missing header row");
  CsvTable table;
  table.header = std::move(rows.front());
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != table.header.size()) {
      throw FormatError("csv: row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                        " fields, header has " + std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(rows[r]));
  }
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  try {
    return parse_csv(read_text_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("error reading '" + path.string() + "'");
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::error_code ec;
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw IoError("error writing '" + path.string() + "'");
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

}  // namespace pcarmor::harness
