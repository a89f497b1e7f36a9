#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace sslbd {

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
/// Writes to a sibling temp file and renames, so readers never see partial files.
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace sslbd
