#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pcarmor/errors.hpp"

namespace pcarmor::bin {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; add byte swapping for this host");

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void f64s(const double* data, std::size_t n) { bytes(data, n * sizeof(double)); }

  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, std::string what) : data_(data), what_(std::move(what)) {}

  void bytes(void* dst, std::size_t n) {
    if (data_.size() - pos_ < n) {
      throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_));
    }
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, sizeof v); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, sizeof v); return v; }
  void f64s(double* dst, std::size_t n) { bytes(dst, n * sizeof(double)); }

  void expect_magic(const char (&magic)[5]) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, magic, 4) != 0) {
      throw FormatError(what_ + ": bad magic '" + std::string(got, 4) + "', expected '" +
                        std::string(magic, 4) + "'");
    }
  }
  void expect_end() const {
    if (pos_ != data_.size()) {
      throw FormatError(what_ + ": " + std::to_string(data_.size() - pos_) + " trailing bytes");
    }
  }
  const std::string& what() const { return what_; }

 private:
  std::span<const std::uint8_t> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace pcarmor::bin
