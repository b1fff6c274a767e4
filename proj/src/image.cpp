#include "deskpilot/image.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

namespace deskpilot {

GrayImage::GrayImage(int width, int height, std::uint8_t fill)
    : width_(width), height_(height) {
  if (width < 1 || height < 1) throw std::invalid_argument("GrayImage: width and height must be >= 1");
  pixels_.assign(static_cast<std::size_t>(width) * height, fill);
}

GrayImage::GrayImage(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width < 1 || height < 1) throw std::invalid_argument("GrayImage: width and height must be >= 1");
  if (pixels_.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("GrayImage: pixel count does not match width*height");
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  const std::string header =
      "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels().begin(), img.pixels().end());
  return out;
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long read_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) throw PgmError("pgm: expected integer in header");
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 1'000'000) throw PgmError("pgm: header value out of range");
    }
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

GrayImage decode_pgm(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw PgmError("pgm: missing P5 magic");
  HeaderReader r(bytes);
  r.advance(2);
  const long w = r.read_int();
  const long h = r.read_int();
  const long maxval = r.read_int();
  if (w < 1 || h < 1) throw PgmError("pgm: zero dimension");
  if (maxval != 255) throw PgmError("pgm: only maxval 255 is supported");
  // exactly one whitespace byte separates header and raster
  if (r.pos() >= bytes.size() || !std::isspace(bytes[r.pos()])) throw PgmError("pgm: malformed header");
  r.advance(1);
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - r.pos() < n) throw PgmError("pgm: truncated raster");
  std::vector<std::uint8_t> px(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos()),
                               bytes.begin() + static_cast<std::ptrdiff_t>(r.pos() + n));
  if (consumed) *consumed = r.pos() + n;
  return GrayImage(static_cast<int>(w), static_cast<int>(h), std::move(px));
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  const auto bytes = encode_pgm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PgmError("pgm: cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw PgmError("pgm: write failed: " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PgmError("pgm: cannot open: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pgm(bytes);
}

}  // namespace deskpilot
