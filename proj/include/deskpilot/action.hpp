#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace deskpilot {

// The nine joystick sectors, numbered as in the controller's action table.
enum class Action : std::uint8_t {
  BackwardsLeft = 0,
  Backwards = 1,
  BackwardsRight = 2,
  SlightlyForwards = 3,
  Stop = 4,
  SlightlyBackwards = 5,
  ForwardsLeft = 6,
  Forwards = 7,
  ForwardsRight = 8,
};

inline constexpr int kActionCount = 9;

inline constexpr std::array<Action, kActionCount> kAllActions{
    Action::BackwardsLeft, Action::Backwards,         Action::BackwardsRight,
    Action::SlightlyForwards, Action::Stop,           Action::SlightlyBackwards,
    Action::ForwardsLeft,  Action::Forwards,          Action::ForwardsRight};

constexpr int to_index(Action a) { return static_cast<int>(a); }

constexpr std::optional<Action> action_from_index(int v) {
  if (v < 0 || v >= kActionCount) return std::nullopt;
  return static_cast<Action>(v);
}

constexpr std::string_view action_name(Action a) {
  constexpr std::array<std::string_view, kActionCount> names{
      "BackwardsLeft",    "Backwards", "BackwardsRight", "SlightlyForwards", "Stop",
      "SlightlyBackwards", "ForwardsLeft", "Forwards",   "ForwardsRight"};
  return names[to_index(a)];
}

/// Left/right swap used by mirror augmentation; 1, 3, 4, 5, 7 are fixed points.
constexpr Action mirror(Action a) {
  switch (a) {
    case Action::BackwardsLeft: return Action::BackwardsRight;
    case Action::BackwardsRight: return Action::BackwardsLeft;
    case Action::ForwardsLeft: return Action::ForwardsRight;
    case Action::ForwardsRight: return Action::ForwardsLeft;
    default: return a;
  }
}

}  // namespace deskpilot
