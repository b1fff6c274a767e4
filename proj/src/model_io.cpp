#include "deskpilot/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace deskpilot::cnn {

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n)
      throw ModelFileError(ModelFileErrc::Truncated, "model file truncated at byte " + std::to_string(in_.size()));
  }
  template <typename T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

const char* errc_name(ModelFileErrc e) {
  switch (e) {
    case ModelFileErrc::Io: return "io";
    case ModelFileErrc::BadMagic: return "bad_magic";
    case ModelFileErrc::BadVersion: return "bad_version";
    case ModelFileErrc::Truncated: return "truncated";
    case ModelFileErrc::Corrupt: return "corrupt";
  }
  return "unknown";
}

std::vector<std::uint8_t> serialize_model(const ModelParams& params, const ModelConfig& c) {
  c.validate();
  Writer w;
  w.bytes("CCNN", 4);
  w.le<std::uint16_t>(kModelFormatVersion);
  for (int v : {c.channels, c.height, c.width, c.conv1_filters, c.conv2_filters, c.kernel, c.dense, c.classes})
    w.le<std::uint32_t>(static_cast<std::uint32_t>(v));
  w.f64(c.dropout);
  const auto tensors = params.tensors();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor* t : tensors) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t->rank()));
    for (int d : t->shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : t->values()) w.f64(v);
  }
  return w.take();
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw ModelFileError(ModelFileErrc::Truncated, "model file truncated before magic");
  if (std::memcmp(bytes.data(), "CCNN", 4) != 0) throw ModelFileError(ModelFileErrc::BadMagic, "not a model file (bad magic)");
  Reader r(bytes.subspan(4));
  const auto version = r.le<std::uint16_t>();
  if (version != kModelFormatVersion)
    throw ModelFileError(ModelFileErrc::BadVersion, "unsupported model format version " + std::to_string(version));

  Model m;
  ModelConfig& c = m.config;
  int* fields[] = {&c.channels, &c.height, &c.width, &c.conv1_filters, &c.conv2_filters, &c.kernel, &c.dense, &c.classes};
  for (int* f : fields) {
    const auto v = r.le<std::uint32_t>();
    if (v > 1'000'000u) throw ModelFileError(ModelFileErrc::Corrupt, "config field out of range");
    *f = static_cast<int>(v);
  }
  c.dropout = r.f64();
  try {
    c.validate();
  } catch (const std::exception& e) {
    throw ModelFileError(ModelFileErrc::Corrupt, std::string("invalid config: ") + e.what());
  }

  ModelParams expected = ModelParams::zeros(c);
  const auto count = r.le<std::uint32_t>();
  if (count != ModelParams::kTensorCount) throw ModelFileError(ModelFileErrc::Corrupt, "unexpected tensor count");
  for (Tensor* t : expected.tensors()) {
    const auto rank = r.le<std::uint32_t>();
    if (rank != static_cast<std::uint32_t>(t->rank())) throw ModelFileError(ModelFileErrc::Corrupt, "tensor rank mismatch");
    for (int d : t->shape()) {
      if (r.le<std::uint32_t>() != static_cast<std::uint32_t>(d))
        throw ModelFileError(ModelFileErrc::Corrupt, "tensor extent does not match config");
    }
    for (double& v : t->values()) v = r.f64();
  }
  if (!r.done()) throw ModelFileError(ModelFileErrc::Corrupt, "trailing bytes after last tensor");
  m.params = std::move(expected);
  return m;
}

void save_model(const ModelParams& params, const ModelConfig& config, const std::filesystem::path& path) {
  const auto bytes = serialize_model(params, config);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelFileError(ModelFileErrc::Io, "cannot write model file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ModelFileError(ModelFileErrc::Io, "write failed: " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelFileError(ModelFileErrc::Io, "cannot open model file: " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace deskpilot::cnn
