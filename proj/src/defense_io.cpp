#include "binary_io.hpp"
#include "pcarmor/defense.hpp"

namespace pcarmor {

namespace {
constexpr std::uint32_t kDbVersion = 1;
}

std::vector<std::uint8_t> serialize_feature_db(const FeatureDatabase& db) {
  bin::Writer w;
  w.bytes("FDB1", 4);
  w.u32(kDbVersion);
  w.u32(static_cast<std::uint32_t>(db.size()));
  w.u32(static_cast<std::uint32_t>(db.feature_dim()));
  w.u32(static_cast<std::uint32_t>(db.n_classes()));
  w.bytes(db.fingerprint().data(), db.fingerprint().size());
  w.f64s(db.features().data(), static_cast<std::size_t>(db.features().size()));
  w.f64s(db.softmaxes().data(), static_cast<std::size_t>(db.softmaxes().size()));
  for (int label : db.labels()) w.u32(static_cast<std::uint32_t>(label));
  return std::move(w.buffer());
}

FeatureDatabase deserialize_feature_db(std::span<const std::uint8_t> bytes) {
  bin::Reader r(bytes, "feature database");
  r.expect_magic("FDB1");
  const auto version = r.u32();
  if (version != kDbVersion) {
    throw FormatError("feature database: unsupported version " + std::to_string(version) +
                      " (expected " + std::to_string(kDbVersion) + ")");
  }
  const auto n = r.u32();
  const auto d = r.u32();
  const auto c = r.u32();
  const std::uint64_t payload = static_cast<std::uint64_t>(n) * (d + c) * 8 + std::uint64_t{n} * 4;
  if (n == 0 || d == 0 || c < 2 || payload > bytes.size()) {
    throw FormatError("feature database: implausible header N=" + std::to_string(n) +
                      " d=" + std::to_string(d) + " C=" + std::to_string(c));
  }
  Fingerprint fp;
  r.bytes(fp.data(), fp.size());
  Matrix features(n, d);
  Matrix softmaxes(n, c);
  r.f64s(features.data(), static_cast<std::size_t>(features.size()));
  r.f64s(softmaxes.data(), static_cast<std::size_t>(softmaxes.size()));
  std::vector<int> labels(n);
  for (auto& label : labels) label = static_cast<int>(r.u32());
  r.expect_end();
  try {
    return FeatureDatabase(std::move(features), std::move(softmaxes), std::move(labels), fp);
  } catch (const Error& e) {
    throw FormatError(std::string("feature database: ") + e.what());
  }
}

void save_feature_db(const std::filesystem::path& path, const FeatureDatabase& db) {
  bin::write_file(path, serialize_feature_db(db));
}

FeatureDatabase load_feature_db(const std::filesystem::path& path) {
  const auto bytes = bin::read_file(path);
  try {
    return deserialize_feature_db(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

FeatureDatabase load_feature_db(const std::filesystem::path& path, const Fingerprint& expected) {
  auto db = load_feature_db(path);
  if (db.fingerprint() != expected) {
    throw StaleDatabaseError(path.string() + ": built from weights " + to_hex(db.fingerprint()) +
                             ", expected " + to_hex(expected));
  }
  return db;
}

}  // namespace pcarmor
