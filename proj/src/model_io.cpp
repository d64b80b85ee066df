#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <iterator>

#include "binary_io.hpp"
#include "pcarmor/model.hpp"

namespace pcarmor {

namespace bin {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace bin

namespace {

constexpr std::uint32_t kWeightsVersion = 1;

void write_widths(bin::Writer& w, const std::vector<int>& widths) {
  w.u32(static_cast<std::uint32_t>(widths.size()));
  for (int x : widths) w.u32(static_cast<std::uint32_t>(x));
}

std::vector<int> read_widths(bin::Reader& r) {
  const auto n = r.u32();
  if (n == 0 || n > 64) throw FormatError(r.what() + ": implausible layer count " + std::to_string(n));
  std::vector<int> widths(n);
  for (auto& x : widths) {
    const auto v = r.u32();
    if (v == 0 || v > (1u << 20)) throw FormatError(r.what() + ": implausible layer width");
    x = static_cast<int>(v);
  }
  return widths;
}

DenseLayer read_layer(bin::Reader& r, Index fan_in, Index fan_out) {
  DenseLayer layer{Matrix(fan_in, fan_out), RowVector(fan_out)};
  r.f64s(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
  r.f64s(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  return layer;
}

}  // namespace

std::string to_hex(const Fingerprint& fp) {
  std::string out;
  char buf[3];
  for (auto b : fp) {
    std::snprintf(buf, sizeof buf, "%02x", b);
    out += buf;
  }
  return out;
}

std::vector<std::uint8_t> serialize_weights(const ModelWeights& weights) {
  weights.validate();
  bin::Writer w;
  w.bytes("PNMW", 4);
  w.u32(kWeightsVersion);
  write_widths(w, weights.config.per_point_widths);
  write_widths(w, weights.config.head_widths);
  w.u32(static_cast<std::uint32_t>(weights.config.n_classes));
  w.u32(static_cast<std::uint32_t>(weights.config.feature_dim()));
  w.u64(weights.config.seed);
  auto put = [&](const DenseLayer& l) {
    w.f64s(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    w.f64s(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  };
  for (const auto& l : weights.point_layers) put(l);
  for (const auto& l : weights.head_layers) put(l);
  return std::move(w.buffer());
}

ModelWeights deserialize_weights(std::span<const std::uint8_t> bytes) {
  bin::Reader r(bytes, "weights file");
  r.expect_magic("PNMW");
  const auto version = r.u32();
  if (version != kWeightsVersion) {
    throw FormatError("weights file: unsupported version " + std::to_string(version) +
                      " (expected " + std::to_string(kWeightsVersion) + ")");
  }
  ModelWeights w;
  w.config.per_point_widths = read_widths(r);
  w.config.head_widths = read_widths(r);
  w.config.n_classes = static_cast<int>(r.u32());
  const auto d = r.u32();
  w.config.seed = r.u64();
  if (static_cast<int>(d) != w.config.feature_dim()) {
    throw FormatError("weights file: feature dimension " + std::to_string(d) +
                      " disagrees with the last per-point width");
  }
  try {
    w.config.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("weights file: ") + e.what());
  }
  Index fan_in = 3;
  for (int width : w.config.per_point_widths) {
    w.point_layers.push_back(read_layer(r, fan_in, width));
    fan_in = width;
  }
  for (int width : w.config.head_widths) {
    w.head_layers.push_back(read_layer(r, fan_in, width));
    fan_in = width;
  }
  r.expect_end();
  try {
    w.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("weights file: ") + e.what());
  }
  return w;
}

void save_weights(const std::filesystem::path& path, const ModelWeights& weights) {
  bin::write_file(path, serialize_weights(weights));
}

ModelWeights load_weights(const std::filesystem::path& path) {
  const auto bytes = bin::read_file(path);
  try {
    return deserialize_weights(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Fingerprint sha256(std::span<const std::uint8_t> bytes) {
  Fingerprint fp{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), fp.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != fp.size()) {
    throw Error("sha256: digest failed");
  }
  return fp;
}

Fingerprint weights_fingerprint(const ModelWeights& weights) {
  return sha256(serialize_weights(weights));
}

Fingerprint file_sha256(const std::filesystem::path& path) {
  return sha256(bin::read_file(path));
}

}  // namespace pcarmor
