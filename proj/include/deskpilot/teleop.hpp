#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <string>

#include "deskpilot/sim.hpp"
#include "deskpilot/store.hpp"

namespace deskpilot::server {

inline constexpr std::uint64_t kDefaultTickMs = 100;

struct TeleopOptions {
  std::uint64_t tick_ms = kDefaultTickMs;
  sim::RenderConfig render;
};

struct TeleopStatus {
  std::string session_id;
  bool live = true;
  bool has_controller = false;
  sim::CarState pose;
  Action action = Action::Stop;  // applied on the last tick
  bool collision = false;        // on the last tick
  std::size_t collisions = 0;
  std::size_t ticks = 0;
  std::size_t samples = 0;
  std::uint64_t open_ms = 0;
  std::uint64_t last_tick_ms = 0;
};

/// Live joystick control of a simulated car, recording into a store session.
/// Each tick quantises the latest joystick sample (Stop before the first one),
/// steps the simulator by tick_ms, renders, and persists the frame.
class TeleopSession {
 public:
  TeleopSession(SessionStore& store, std::string session_id, sim::WorldMap map, TeleopOptions options = {});

  /// Claims the single controller slot; the token authorises joystick input.
  std::string join();
  void leave(const std::string& token);

  /// Persists the sample and makes it the one used by following ticks.
  void push_joystick(const std::string& token, const datapipe::JoystickSample& sample);

  void tick(std::uint64_t now_ms);

  /// Finalises the recording in the store.
  void close();

  TeleopStatus status() const;
  std::optional<datapipe::TimestampedFrame> latest_frame() const;
  const std::string& session_id() const { return id_; }
  std::uint64_t tick_ms() const { return options_.tick_ms; }

 private:
  SessionStore& store_;
  std::string id_;
  sim::WorldMap map_;
  TeleopOptions options_;
  mutable std::mutex mu_;
  std::string token_;
  std::optional<datapipe::JoystickSample> latest_sample_;
  std::optional<datapipe::TimestampedFrame> latest_frame_;
  TeleopStatus status_;
  std::uint64_t token_counter_ = 0;
};

}  // namespace deskpilot::server
