#include <doctest.h>

#include <set>

#include "deskpilot/protocol.hpp"
#include "deskpilot/rng.hpp"

using namespace deskpilot;
using namespace deskpilot::protocol;

namespace {

Errc decode_error(std::span<const std::uint8_t> bytes) {
  try {
    decode_packet(bytes);
  } catch (const ProtocolError& e) {
    return e.code();
  }
  FAIL("decode accepted the bytes");
  return Errc::InvalidPacket;
}

PacketBytes with_checksum(PacketBytes b) {
  b[18] = checksum(std::span(b).first(18));
  return b;
}

CommandPacket random_packet(Rng& rng) {
  CommandPacket p;
  p.timestamp_ms = rng.next_u64();
  for (std::uint8_t m = 0; m < 3; ++m) {
    const auto dir = static_cast<Direction>(rng.below(3));
    const auto speed = dir == Direction::Release ? 0 : static_cast<std::uint8_t>(rng.below(256));
    p.commands[m] = MotorCommand{static_cast<std::uint8_t>(m + 1), dir, static_cast<std::uint8_t>(speed)};
  }
  return p;
}

}  // namespace

TEST_CASE("all-stop packet at t=0 matches the worked example") {
  const PacketBytes b = encode_packet(action_to_motors(Action::Stop, 0));
  const PacketBytes expected{0xA5, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 2, 0, 0, 3, 0, 0, 0x55};
  CHECK(b == expected);
}

TEST_CASE("timestamps are little-endian") {
  const PacketBytes b = encode_packet(action_to_motors(Action::Stop, 0x0102030405060708ull));
  CHECK(b[1] == 0x08);
  CHECK(b[8] == 0x01);
  unsigned sum = 0;
  for (auto v : b) sum += v;
  CHECK(sum % 256 == 0);
}

TEST_CASE("random packets round-trip") {
  Rng rng(42);
  for (int i = 0; i < 10000; ++i) {
    const CommandPacket p = random_packet(rng);
    const PacketBytes b = encode_packet(p);
    REQUIRE(decode_packet(b) == p);
  }
}

TEST_CASE("every single-byte corruption is rejected") {
  Rng rng(1);
  for (int k = 0; k < 4; ++k) {
    const PacketBytes good = encode_packet(random_packet(rng));
    for (std::size_t pos = 0; pos < kPacketSize; ++pos) {
      for (int v = 0; v < 256; ++v) {
        if (v == good[pos]) continue;
        PacketBytes bad = good;
        bad[pos] = static_cast<std::uint8_t>(v);
        const Errc e = decode_error(bad);
        REQUIRE(e == (pos == 0 ? Errc::BadMagic : Errc::BadChecksum));
      }
    }
  }
}

TEST_CASE("structural errors are distinct") {
  const PacketBytes good = encode_packet(action_to_motors(Action::Forwards, 5));
  CHECK(decode_error(std::span(good).first(18)) == Errc::WrongLength);
  std::vector<std::uint8_t> longer(good.begin(), good.end());
  longer.push_back(0);
  CHECK(decode_error(longer) == Errc::WrongLength);

  PacketBytes b = good;
  b[9] = 4;
  CHECK(decode_error(with_checksum(b)) == Errc::UnknownMotor);
  b = good;
  b[12] = 1;
  CHECK(decode_error(with_checksum(b)) == Errc::DuplicateMotor);
  b = good;
  b[10] = 3;
  CHECK(decode_error(with_checksum(b)) == Errc::BadDirection);
  b = good;
  b[16] = 0;
  b[17] = 9;
  CHECK(decode_error(with_checksum(b)) == Errc::SpeedOnRelease);

  std::set<std::string> names;
  for (Errc e : {Errc::InvalidPacket, Errc::WrongLength, Errc::BadMagic, Errc::BadChecksum, Errc::UnknownMotor,
                 Errc::DuplicateMotor, Errc::BadDirection, Errc::SpeedOnRelease})
    names.insert(errc_name(e));
  CHECK(names.size() == 8);
}

TEST_CASE("motor order on the wire is free, the decoded packet is canonical") {
  const CommandPacket p = action_to_motors(Action::ForwardsLeft, 77);
  PacketBytes b = encode_packet(p);
  for (int i = 0; i < 3; ++i) std::swap(b[9 + i], b[15 + i]);
  CHECK(decode_packet(with_checksum(b)) == p);
}

TEST_CASE("encode rejects invalid packets") {
  CommandPacket p = action_to_motors(Action::Stop, 1);
  p.commands[0].speed = 3;
  CHECK_THROWS_AS(encode_packet(p), ProtocolError);
  p = action_to_motors(Action::Stop, 1);
  std::swap(p.commands[0], p.commands[1]);
  CHECK_THROWS_AS(encode_packet(p), ProtocolError);
}

TEST_CASE("action table") {
  auto drive = [](Action a) { return action_to_motors(a, 0).commands; };
  CHECK(drive(Action::Forwards)[0] == MotorCommand{1, Direction::Forward, 200});
  CHECK(drive(Action::Forwards)[1] == MotorCommand{2, Direction::Forward, 200});
  CHECK(drive(Action::Forwards)[2] == MotorCommand{3, Direction::Release, 0});
  CHECK(drive(Action::SlightlyBackwards)[0] == MotorCommand{1, Direction::Backward, 100});
  CHECK(drive(Action::ForwardsLeft)[2] == MotorCommand{3, Direction::Forward, 255});
  CHECK(drive(Action::BackwardsRight)[2] == MotorCommand{3, Direction::Backward, 255});
  CHECK(drive(Action::BackwardsRight)[0].direction == Direction::Backward);
  std::set<PacketBytes> bodies;
  for (Action a : kAllActions) {
    const CommandPacket p = action_to_motors(a, 123);
    CHECK(motors_to_action(p) == a);
    CHECK(motors_to_action(decode_packet(encode_packet(p))) == a);
    bodies.insert(encode_packet(p));
  }
  CHECK(bodies.size() == 9);
  CommandPacket odd = action_to_motors(Action::Forwards, 0);
  odd.commands[0].speed = 150;
  CHECK_THROWS_AS(motors_to_action(odd), ProtocolError);
}

TEST_CASE("first inversion in a batch") {
  CommandBatch b;
  for (std::uint64_t t : {1, 2, 2, 5, 4, 3}) b.packets.push_back(action_to_motors(Action::Stop, t));
  CHECK(first_inversion(b) == 4);
  b.packets.resize(4);
  CHECK(first_inversion(b) == -1);
  CHECK(first_inversion(CommandBatch{}) == -1);
}
