#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace deskpilot::server {

/// ustar archive of the regular files directly inside `dir`, sorted by name,
/// stored as `<prefix>/<name>` with zero mtime so equal inputs give equal bytes.
std::string tar_directory(const std::filesystem::path& dir, const std::string& prefix);

struct TarEntry {
  std::string name;
  std::string data;
};

/// Reads back the regular-file entries of a ustar archive.
std::vector<TarEntry> untar(const std::string& archive);

}  // namespace deskpilot::server
