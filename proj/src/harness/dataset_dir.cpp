#include "pcarmor/harness/dataset_dir.hpp"

#include <charconv>
#include <cstdio>

#include "pcarmor/harness/csv.hpp"
#include "pcarmor/xyz_io.hpp"

namespace pcarmor::harness {

namespace fs = std::filesystem;

namespace {

template <typename T>
T parse_field(const std::string& s, const fs::path& where, const char* what) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
    throw FormatError(where.string() + ": bad " + what + " '" + s + "'");
  }
  return v;
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

}  // namespace

std::string cloud_file_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.xyz", i);
  return buf;
}

void write_dataset_dir(const fs::path& dir, const Dataset& ds) {
  make_dirs(dir / "train");
  make_dirs(dir / "test");
  CsvWriter manifest({"split", "path", "label", "shape", "spec_seed"});
  auto write_split = [&](const char* split, const std::vector<PointCloud>& clouds,
                         const std::vector<ShapeSpec>& specs) {
    for (std::size_t i = 0; i < clouds.size(); ++i) {
      const std::string rel = std::string(split) + "/" + cloud_file_name(i);
      write_xyz(dir / rel, clouds[i]);
      manifest.row({split, rel, std::to_string(clouds[i].label().value()),
                    std::string(to_string(specs[i].kind)), std::to_string(specs[i].seed)});
    }
  };
  write_split("train", ds.train, ds.train_specs);
  write_split("test", ds.test, ds.test_specs);
  write_text_file(dir / "manifest.csv", manifest.str());
}

DatasetDir read_dataset_dir(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.csv";
  if (!fs::exists(manifest_path)) {
    throw IoError("dataset directory '" + dir.string() + "' has no manifest.csv");
  }
  const CsvTable table = read_csv(manifest_path);
  const auto c_split = table.column("split");
  const auto c_path = table.column("path");
  const auto c_label = table.column("label");

  DatasetDir out;
  out.root = dir;
  for (const auto& row : table.rows) {
    const int label = parse_field<int>(row[c_label], manifest_path, "label");
    const fs::path file = dir / row[c_path];
    PointCloud pc = read_xyz(file);
    if (pc.label() != label) {
      throw FormatError(file.string() + ": header label " +
                        (pc.label() ? std::to_string(*pc.label()) : std::string("-")) +
                        " disagrees with manifest label " + std::to_string(label));
    }
    DatasetSplit* split = nullptr;
    if (row[c_split] == "train") {
      split = &out.train;
    } else if (row[c_split] == "test") {
      split = &out.test;
    } else {
      throw FormatError(manifest_path.string() + ": unknown split '" + row[c_split] + "'");
    }
    split->clouds.push_back(std::move(pc));
    split->paths.push_back(file);
  }
  return out;
}

void write_adv_set(const fs::path& dir, const std::vector<AdvExample>& examples,
                   const std::vector<std::string>& clean_paths) {
  if (clean_paths.size() != examples.size()) {
    throw ValidationError("write_adv_set: " + std::to_string(examples.size()) + " examples but " +
                          std::to_string(clean_paths.size()) + " clean paths");
  }
  make_dirs(dir / "adv");
  CsvWriter manifest(
      {"clean_path", "adv_path", "true_label", "target", "attack", "success", "distortion"});
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    const std::string rel = "adv/" + cloud_file_name(i);
    write_xyz(dir / rel, ex.adversarial.with_label(ex.true_label));
    manifest.row({clean_paths[i], rel, std::to_string(ex.true_label),
                  ex.target ? std::to_string(*ex.target) : std::string("-"),
                  std::string(to_string(ex.kind)), ex.success ? "1" : "0",
                  format_double(ex.distortion)});
  }
  write_text_file(dir / "manifest.csv", manifest.str());
}

AdvSet read_adv_set(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.csv";
  if (!fs::exists(manifest_path)) {
    throw IoError("adversarial set '" + dir.string() + "' has no manifest.csv");
  }
  const CsvTable table = read_csv(manifest_path);
  const auto c_clean = table.column("clean_path");
  const auto c_adv = table.column("adv_path");
  const auto c_label = table.column("true_label");
  const auto c_target = table.column("target");
  const auto c_attack = table.column("attack");
  const auto c_success = table.column("success");
  const auto c_dist = table.column("distortion");

  AdvSet set;
  set.root = dir;
  for (const auto& row : table.rows) {
    AdvRecord rec;
    rec.clean_path = row[c_clean];
    rec.adv_path = row[c_adv];
    rec.true_label = parse_field<int>(row[c_label], manifest_path, "true_label");
    if (row[c_target] != "-") rec.target = parse_field<int>(row[c_target], manifest_path, "target");
    try {
      rec.kind = parse_attack_kind(row[c_attack]);
    } catch (const ValidationError& e) {
      throw FormatError(manifest_path.string() + ": " + e.what());
    }
    if (row[c_success] != "0" && row[c_success] != "1") {
      throw FormatError(manifest_path.string() + ": bad success flag '" + row[c_success] + "'");
    }
    rec.success = row[c_success] == "1";
    rec.distortion = parse_field<double>(row[c_dist], manifest_path, "distortion");
    PointCloud pc = read_xyz(dir / rec.adv_path);
    set.clouds.push_back(pc.with_label(rec.true_label));
    set.records.push_back(std::move(rec));
  }
  return set;
}

}  // namespace pcarmor::harness
