#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace degcg {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// Writes `path.tmp` then renames it over `path`, so readers see either the
/// old file or the complete new one.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace degcg
