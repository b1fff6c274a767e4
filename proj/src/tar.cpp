#include "deskpilot/tar.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace fs = std::filesystem;

namespace deskpilot::server {

namespace {

constexpr std::size_t kBlock = 512;

void put_octal(char* field, std::size_t width, std::uint64_t v) {
  std::snprintf(field, width, "%0*llo", static_cast<int>(width - 1), static_cast<unsigned long long>(v));
}

std::string header(const std::string& name, std::size_t size) {
  if (name.size() > 99) throw std::invalid_argument("tar: name too long: " + name);
  std::string h(kBlock, '\0');
  std::memcpy(h.data(), name.data(), name.size());
  put_octal(h.data() + 100, 8, 0644);
  put_octal(h.data() + 108, 8, 0);
  put_octal(h.data() + 116, 8, 0);
  put_octal(h.data() + 124, 12, size);
  put_octal(h.data() + 136, 12, 0);
  h[156] = '0';
  std::memcpy(h.data() + 257, "ustar", 6);
  std::memcpy(h.data() + 263, "00", 2);
  std::memset(h.data() + 148, ' ', 8);
  unsigned sum = 0;
  for (char c : h) sum += static_cast<unsigned char>(c);
  std::snprintf(h.data() + 148, 8, "%06o", sum);
  return h;
}

}  // namespace

std::string tar_directory(const fs::path& dir, const std::string& prefix) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::string out;
  for (const auto& p : files) {
    std::ifstream in(p, std::ios::binary);
    const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string name = prefix.empty() ? p.filename().string() : prefix + "/" + p.filename().string();
    out += header(name, data.size());
    out += data;
    out.append((kBlock - data.size() % kBlock) % kBlock, '\0');
  }
  out.append(2 * kBlock, '\0');
  return out;
}

std::vector<TarEntry> untar(const std::string& archive) {
  std::vector<TarEntry> out;
  std::size_t pos = 0;
  while (pos + kBlock <= archive.size()) {
    const char* h = archive.data() + pos;
    if (std::all_of(h, h + kBlock, [](char c) { return c == '\0'; })) break;
    const std::string name(h, strnlen(h, 100));
    const std::size_t size = std::stoull(std::string(h + 124, strnlen(h + 124, 12)), nullptr, 8);
    pos += kBlock;
    if (pos + size > archive.size()) throw std::runtime_error("tar: truncated archive");
    if (h[156] == '0' || h[156] == '\0') out.push_back({name, archive.substr(pos, size)});
    pos += (size + kBlock - 1) / kBlock * kBlock;
  }
  return out;
}

}  // namespace deskpilot::server
