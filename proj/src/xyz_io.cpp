#include "pcarmor/xyz_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pcarmor {

namespace {

class Tokenizer {
 public:
  explicit Tokenizer(std::string_view text) : text_(text) {}

  std::string_view next() {
    while (pos_ < text_.size() && is_space(text_[pos_])) ++pos_;
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !is_space(text_[pos_])) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  bool at_end() {
    while (pos_ < text_.size() && is_space(text_[pos_])) ++pos_;
    return pos_ == text_.size();
  }

 private:
  static bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }
  std::string_view text_;
  std::size_t pos_ = 0;
};

template <typename T>
T parse_number(std::string_view token, const char* what) {
  T value{};
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (token.empty() || ec != std::errc{} || ptr != end) {
    throw FormatError(std::string("xyz: bad ") + what + " '" + std::string(token) + "'");
  }
  return value;
}

void expect(Tokenizer& tok, std::string_view keyword) {
  const auto t = tok.next();
  if (t != keyword) {
    throw FormatError("xyz: expected '" + std::string(keyword) + "' in header, got '" +
                      std::string(t) + "'");
  }
}

}  // namespace

std::string format_xyz(const PointCloud& pc) {
  std::string out = "n " + std::to_string(pc.size()) + " label " +
                    (pc.label() ? std::to_string(*pc.label()) : std::string("-")) + "\n";
  char buf[96];
  for (Index i = 0; i < pc.size(); ++i) {
    const auto& p = pc.points();
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p(i, 0), p(i, 1), p(i, 2));
    out += buf;
  }
  return out;
}

PointCloud parse_xyz(std::string_view text) {
  Tokenizer tok(text);
  expect(tok, "n");
  const auto count = parse_number<long long>(tok.next(), "point count");
  if (count < 1) throw FormatError("xyz: point count must be >= 1");
  expect(tok, "label");
  const auto label_token = tok.next();
  std::optional<int> label;
  if (label_token != "-") label = parse_number<int>(label_token, "label");

  Points pts(count, 3);
  for (Index i = 0; i < count; ++i) {
    for (Index c = 0; c < 3; ++c) {
      const auto t = tok.next();
      if (t.empty()) {
        throw FormatError("xyz: expected " + std::to_string(count) + " points, file ends at " +
                          std::to_string(i));
      }
      pts(i, c) = parse_number<double>(t, "coordinate");
    }
  }
  if (!tok.at_end()) throw FormatError("xyz: trailing data after declared points");
  try {
    return PointCloud(std::move(pts), label);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("xyz: ") + e.what());
  }
}

void write_xyz(const std::filesystem::path& path, const PointCloud& pc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << format_xyz(pc);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

PointCloud read_xyz(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_xyz(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace pcarmor
