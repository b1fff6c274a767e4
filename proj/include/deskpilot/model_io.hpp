#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deskpilot/cnn.hpp"

// Model file layout (all integers little-endian):
//   "CCNN" | u16 version | u32 x 8 config (channels, height, width, conv1,
//   conv2, kernel, dense, classes) | f64 dropout | u32 tensor count |
//   per tensor: u32 rank, u32 extents[rank], f64 values[product]
namespace deskpilot::cnn {

inline constexpr std::uint16_t kModelFormatVersion = 1;
inline constexpr std::size_t kModelHeaderBytes = 4 + 2 + 8 * 4 + 8 + 4;

enum class ModelFileErrc { Io, BadMagic, BadVersion, Truncated, Corrupt };

const char* errc_name(ModelFileErrc e);

class ModelFileError : public std::runtime_error {
 public:
  ModelFileError(ModelFileErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ModelFileErrc code() const { return code_; }

 private:
  ModelFileErrc code_;
};

std::vector<std::uint8_t> serialize_model(const ModelParams& params, const ModelConfig& config);
Model deserialize_model(std::span<const std::uint8_t> bytes);

void save_model(const ModelParams& params, const ModelConfig& config, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace deskpilot::cnn
