#pragma once

#include <cstdint>
#include <string>

#include "deskpilot/sim.hpp"
#include "deskpilot/store.hpp"

namespace deskpilot::server {

struct CollectOptions {
  double seconds = 600.0;
  std::uint64_t start_ms = 1'000'000;
  std::uint64_t tick_ms = 100;  // control rate of the scripted driver
  double video_fps = 30.0;
  sim::RenderConfig render;
};

struct CollectResult {
  std::string session_id;
  std::size_t video_frames = 0;  // before slicing
  std::size_t stored_frames = 0;
  std::size_t samples = 0;
  std::size_t collisions = 0;
};

/// Drives the map under oracle_policy and records it as a closed session: one
/// joystick sample per tick, plus a video_fps camera stream uploaded through
/// ingest_video. A video frame at offset o shows the state of tick o / tick_ms.
CollectResult collect_oracle(SessionStore& store, const std::string& map_name, const sim::WorldMap& map,
                             const CollectOptions& options = {});

}  // namespace deskpilot::server
