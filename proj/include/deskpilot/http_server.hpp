#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deskpilot/cnn.hpp"
#include "deskpilot/store.hpp"
#include "deskpilot/teleop.hpp"

namespace deskpilot::server {

/// Video upload body: concatenated binary PGM frames plus an index CSV with
/// header `offset_ms,byte_offset,byte_length`, one row per frame.
struct VideoPayload {
  std::string frames;
  std::string index;
};

VideoPayload encode_video_payload(std::span<const datapipe::RawVideoFrame> frames);

struct ParsedVideo {
  std::vector<std::uint64_t> offsets;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;  // byte offset, length
};

/// Throws StoreError(Malformed) on a bad index or out-of-range byte spans.
ParsedVideo parse_video_index(std::string_view index, std::size_t frames_size);

struct ServerOptions {
  std::filesystem::path data_dir = "data";  // sessions/ and exports/ live here
  std::filesystem::path maps_dir = "fixtures/maps";
  std::uint64_t tick_ms = kDefaultTickMs;
  bool run_ticker = true;  // tests drive ticks by hand
  std::optional<cnn::Model> model;  // enables /predict
};

/// HTTP front end over the session store and live teleop sessions.
///
///   POST /api/session                     {"map": name, "open_ms"?} or a bare map name
///   GET  /api/session/{id}                session info
///   POST /api/session/{id}/video          multipart: start_ms, frames (PGMs), index (CSV)
///   POST /api/session/{id}/commands       JSON [{t,x,y}] or concatenated 19-byte packets
///   POST /api/session/{id}/close
///   POST /api/session/{id}/join           -> {"token"}; 409 when taken
///   POST /api/session/{id}/leave          {"token"}
///   POST /api/session/{id}/joystick       {t,x,y,token}
///   GET  /api/session/{id}/status         live teleop status
///   GET  /api/session/{id}/frame          latest frame as PGM
///   GET  /api/session/{id}/predict        model confidences on the latest frame
///   GET  /api/session/{id}/export?opts    dataset as a tar archive
///   GET  /api/export?sessions=a,b&opts    same, several sessions
///   GET  /api/quantizer                   sector geometry
///   GET  /api/quantize?x=&y=              server-side label for one stick position
///
/// Errors are JSON {"code", "message"}.
class ApiServer {
 public:
  explicit ApiServer(ServerOptions options, Clock clock = system_clock_ms);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds and returns the port (port 0 picks a free one).
  int bind(const std::string& host, int port);
  /// Serves until stop(); runs the teleop ticker when enabled.
  void run();
  void stop();
  void wait_until_ready() const;

  /// Ticks every live teleop session once.
  void tick_all(std::uint64_t now_ms);

  SessionStore& store();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace deskpilot::server
