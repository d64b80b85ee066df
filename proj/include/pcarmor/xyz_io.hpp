#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "pcarmor/geometry.hpp"

namespace pcarmor {

/// Text format: header `n <count> label <int|->`, then one `x y z` line per
/// point. Values are written with 17 significant digits so they read back
/// bit-exactly.
std::string format_xyz(const PointCloud& pc);
PointCloud parse_xyz(std::string_view text);

void write_xyz(const std::filesystem::path& path, const PointCloud& pc);
PointCloud read_xyz(const std::filesystem::path& path);

}  // namespace pcarmor
