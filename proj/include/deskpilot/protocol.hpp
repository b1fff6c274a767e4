#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deskpilot/action.hpp"

namespace deskpilot::protocol {

enum class Direction : std::uint8_t { Release = 0, Forward = 1, Backward = 2 };

// 1 = rear drive, 2 = front drive, 3 = steering
struct MotorCommand {
  std::uint8_t motor_id = 1;
  Direction direction = Direction::Release;
  std::uint8_t speed = 0;

  friend bool operator==(const MotorCommand&, const MotorCommand&) = default;
};

struct CommandPacket {
  std::uint64_t timestamp_ms = 0;
  std::array<MotorCommand, 3> commands{};  // kept in motor_id order

  friend bool operator==(const CommandPacket&, const CommandPacket&) = default;
};

inline constexpr std::size_t kPacketSize = 19;
inline constexpr std::uint8_t kMagic = 0xA5;

enum class Errc {
  InvalidPacket,   // encode-side invariant violation
  WrongLength,
  BadMagic,
  BadChecksum,
  UnknownMotor,
  DuplicateMotor,
  BadDirection,
  SpeedOnRelease,
};

const char* errc_name(Errc e);

class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

using PacketBytes = std::array<std::uint8_t, kPacketSize>;

/// Throws ProtocolError(InvalidPacket) unless motor ids are {1,2,3} in order
/// and every Release command has speed 0.
void validate(const CommandPacket& p);

PacketBytes encode_packet(const CommandPacket& p);

/// Checks run in wire order: length, magic, checksum, then per-motor fields;
/// the first failure is reported.
CommandPacket decode_packet(std::span<const std::uint8_t> bytes);

std::uint8_t checksum(std::span<const std::uint8_t> bytes);

CommandPacket action_to_motors(Action a, std::uint64_t timestamp_ms);

/// Inverse of action_to_motors on the packet body; throws ProtocolError
/// (InvalidPacket) for bodies no action produces.
Action motors_to_action(const CommandPacket& p);

struct CommandBatch {
  std::vector<CommandPacket> packets;  // non-decreasing timestamps
};

/// Index of the first packet whose timestamp is below its predecessor's, or -1.
long first_inversion(const CommandBatch& batch);

}  // namespace deskpilot::protocol
