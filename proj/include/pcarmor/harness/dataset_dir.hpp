#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pcarmor/attacks.hpp"
#include "pcarmor/geometry.hpp"

namespace pcarmor::harness {

/// On disk: <dir>/manifest.csv (split,path,label,shape,spec_seed) plus
/// <dir>/train/NNNNNN.xyz and <dir>/test/NNNNNN.xyz. Paths are relative to <dir>.
void write_dataset_dir(const std::filesystem::path& dir, const Dataset& ds);

struct DatasetSplit {
  std::vector<PointCloud> clouds;
  std::vector<std::filesystem::path> paths;  // as resolved against the dataset dir
};

struct DatasetDir {
  std::filesystem::path root;
  DatasetSplit train;
  DatasetSplit test;
};

/// Loads every file in the manifest; the label in each file header must
/// agree with the manifest.
DatasetDir read_dataset_dir(const std::filesystem::path& dir);

/// One line of an adversarial-set manifest.
struct AdvRecord {
  std::string clean_path;
  std::string adv_path;  // relative to the set directory
  int true_label = 0;
  std::optional<int> target;
  AttackKind kind = AttackKind::shift_l2;
  bool success = false;
  double distortion = 0.0;
};

struct AdvSet {
  std::filesystem::path root;
  std::vector<AdvRecord> records;
  std::vector<PointCloud> clouds;  // adversarial clouds, labeled with the true label
};

/// Writes <dir>/manifest.csv and <dir>/adv/NNNNNN.xyz, one file per example.
void write_adv_set(const std::filesystem::path& dir, const std::vector<AdvExample>& examples,
                   const std::vector<std::string>& clean_paths);

AdvSet read_adv_set(const std::filesystem::path& dir);

/// Zero-padded file name for the i-th cloud of a split.
std::string cloud_file_name(std::size_t i);

}  // namespace pcarmor::harness
