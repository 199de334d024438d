#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace sparse_wsi {

/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace sparse_wsi
