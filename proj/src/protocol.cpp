#include "deskpilot/protocol.hpp"

#include <numeric>

namespace deskpilot::protocol {

namespace {

constexpr std::uint8_t kFullSpeed = 200;
constexpr std::uint8_t kSlowSpeed = 100;
constexpr std::uint8_t kSteerSpeed = 255;

}  // namespace

const char* errc_name(Errc e) {
  switch (e) {
    case Errc::InvalidPacket: return "invalid_packet";
    case Errc::WrongLength: return "wrong_length";
    case Errc::BadMagic: return "bad_magic";
    case Errc::BadChecksum: return "bad_checksum";
    case Errc::UnknownMotor: return "unknown_motor";
    case Errc::DuplicateMotor: return "duplicate_motor";
    case Errc::BadDirection: return "bad_direction";
    case Errc::SpeedOnRelease: return "speed_on_release";
  }
  return "unknown";
}

std::uint8_t checksum(std::span<const std::uint8_t> bytes) {
  const unsigned sum = std::accumulate(bytes.begin(), bytes.end(), 0u);
  return static_cast<std::uint8_t>(0x100u - (sum & 0xFFu));
}

void validate(const CommandPacket& p) {
  for (std::size_t i = 0; i < p.commands.size(); ++i) {
    const auto& c = p.commands[i];
    if (c.motor_id != i + 1) throw ProtocolError(Errc::InvalidPacket, "packet: motors must be 1,2,3 in order");
    if (static_cast<std::uint8_t>(c.direction) > 2)
      throw ProtocolError(Errc::InvalidPacket, "packet: direction out of range");
    if (c.direction == Direction::Release && c.speed != 0)
      throw ProtocolError(Errc::InvalidPacket, "packet: released motor with nonzero speed");
  }
}

PacketBytes encode_packet(const CommandPacket& p) {
  validate(p);
  PacketBytes out{};
  out[0] = kMagic;
  for (int i = 0; i < 8; ++i) out[1 + i] = static_cast<std::uint8_t>(p.timestamp_ms >> (8 * i));
  for (std::size_t m = 0; m < 3; ++m) {
    out[9 + 3 * m] = p.commands[m].motor_id;
    out[10 + 3 * m] = static_cast<std::uint8_t>(p.commands[m].direction);
    out[11 + 3 * m] = p.commands[m].speed;
  }
  out[18] = checksum(std::span(out).first(18));
  return out;
}

CommandPacket decode_packet(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kPacketSize)
    throw ProtocolError(Errc::WrongLength, "packet: expected 19 bytes, got " + std::to_string(bytes.size()));
  if (bytes[0] != kMagic) throw ProtocolError(Errc::BadMagic, "packet: bad magic byte");
  if (checksum(bytes.first(18)) != bytes[18]) throw ProtocolError(Errc::BadChecksum, "packet: checksum mismatch");

  CommandPacket p;
  for (int i = 0; i < 8; ++i) p.timestamp_ms |= static_cast<std::uint64_t>(bytes[1 + i]) << (8 * i);
  std::array<bool, 3> seen{};
  for (std::size_t m = 0; m < 3; ++m) {
    const std::uint8_t id = bytes[9 + 3 * m];
    const std::uint8_t dir = bytes[10 + 3 * m];
    const std::uint8_t speed = bytes[11 + 3 * m];
    if (id < 1 || id > 3) throw ProtocolError(Errc::UnknownMotor, "packet: unknown motor id " + std::to_string(id));
    if (seen[id - 1]) throw ProtocolError(Errc::DuplicateMotor, "packet: duplicate motor id " + std::to_string(id));
    seen[id - 1] = true;
    if (dir > 2) throw ProtocolError(Errc::BadDirection, "packet: direction byte " + std::to_string(dir));
    if (dir == 0 && speed != 0) throw ProtocolError(Errc::SpeedOnRelease, "packet: released motor with speed");
    p.commands[id - 1] = MotorCommand{id, static_cast<Direction>(dir), speed};
  }
  return p;
}

CommandPacket action_to_motors(Action a, std::uint64_t timestamp_ms) {
  Direction drive = Direction::Release;
  std::uint8_t drive_speed = 0;
  switch (a) {
    case Action::Forwards:
    case Action::ForwardsLeft:
    case Action::ForwardsRight:
      drive = Direction::Forward;
      drive_speed = kFullSpeed;
      break;
    case Action::Backwards:
    case Action::BackwardsLeft:
    case Action::BackwardsRight:
      drive = Direction::Backward;
      drive_speed = kFullSpeed;
      break;
    case Action::SlightlyForwards:
      drive = Direction::Forward;
      drive_speed = kSlowSpeed;
      break;
    case Action::SlightlyBackwards:
      drive = Direction::Backward;
      drive_speed = kSlowSpeed;
      break;
    case Action::Stop: break;
  }
  MotorCommand steer{3, Direction::Release, 0};
  if (a == Action::ForwardsLeft || a == Action::BackwardsLeft) steer = {3, Direction::Forward, kSteerSpeed};
  if (a == Action::ForwardsRight || a == Action::BackwardsRight) steer = {3, Direction::Backward, kSteerSpeed};

  CommandPacket p;
  p.timestamp_ms = timestamp_ms;
  p.commands = {MotorCommand{1, drive, drive_speed}, MotorCommand{2, drive, drive_speed}, steer};
  return p;
}

Action motors_to_action(const CommandPacket& p) {
  for (Action a : kAllActions) {
    if (action_to_motors(a, p.timestamp_ms).commands == p.commands) return a;
  }
  throw ProtocolError(Errc::InvalidPacket, "packet: body does not correspond to any action");
}

long first_inversion(const CommandBatch& batch) {
  for (std::size_t i = 1; i < batch.packets.size(); ++i) {
    if (batch.packets[i].timestamp_ms < batch.packets[i - 1].timestamp_ms) return static_cast<long>(i);
  }
  return -1;
}

}  // namespace deskpilot::protocol
