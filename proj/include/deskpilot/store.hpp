#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deskpilot/datapipe.hpp"
#include "deskpilot/protocol.hpp"

namespace deskpilot::server {

enum class StoreErrc {
  UnknownSession,
  SessionClosed,
  SessionLive,
  UnsortedBatch,
  Malformed,
  OutOfBounds,
  EmptyAfterPairing,
  Conflict,
  Io,
};

const char* errc_name(StoreErrc e);

class StoreError : public std::runtime_error {
 public:
  StoreError(StoreErrc code, const std::string& what, long index = -1)
      : std::runtime_error(what), code_(code), index_(index) {}
  StoreErrc code() const { return code_; }
  /// First inversion for UnsortedBatch, otherwise -1.
  long index() const { return index_; }

 private:
  StoreErrc code_;
  long index_;
};

enum class SessionState { Live, Closed };

struct SessionInfo {
  std::string id;
  std::string map_name;
  SessionState state = SessionState::Live;
  std::uint64_t open_ms = 0;
  std::uint64_t close_ms = 0;  // 0 while live
  std::size_t frames = 0;
  std::size_t samples = 0;
  std::size_t events = 0;
};

struct SessionEvent {
  std::uint64_t timestamp_ms = 0;
  std::string kind;
};

using Clock = std::function<std::uint64_t()>;

/// Milliseconds since the Unix epoch.
std::uint64_t system_clock_ms();

/// Directory-per-session recording store:
///   <root>/<id>/session.txt   key=value manifest
///   <root>/<id>/frames/<seq>.pgm, frames.csv (seq,timestamp_ms)
///   <root>/<id>/samples.csv   (timestamp_ms,x,y)
///   <root>/<id>/events.csv    (timestamp_ms,kind)
/// Records are only ever appended. Calls on one session are serialised.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path root, Clock clock = system_clock_ms);

  const std::filesystem::path& root() const { return root_; }
  std::uint64_t now() const { return clock_(); }

  /// Opens a live session. `open_ms` defaults to the clock.
  std::string create(const std::string& map_name, std::optional<std::uint64_t> open_ms = std::nullopt);

  bool exists(const std::string& id) const;
  SessionInfo info(const std::string& id) const;
  std::vector<std::string> list() const;

  /// Slices the payload (offsets relative to video_start_ms) and appends the
  /// picked frames. `fetch(i)` is only called for picked indices.
  std::size_t ingest_video(const std::string& id, std::uint64_t video_start_ms, std::span<const std::uint64_t> offsets,
                           const std::function<GrayImage(std::size_t)>& fetch);
  std::size_t ingest_video(const std::string& id, std::uint64_t video_start_ms,
                           std::span<const datapipe::RawVideoFrame> frames);

  std::size_t ingest_commands(const std::string& id, std::span<const datapipe::JoystickSample> samples);
  /// Packets become samples at the canonical stick position of their action.
  std::size_t ingest_commands(const std::string& id, const protocol::CommandBatch& batch);

  void append_frame(const std::string& id, const datapipe::TimestampedFrame& frame);
  void log_event(const std::string& id, const SessionEvent& event);

  /// close_ms defaults to max(clock, latest stored timestamp).
  void close(const std::string& id, std::optional<std::uint64_t> close_ms = std::nullopt);

  /// Stored records in append order.
  std::vector<datapipe::TimestampedFrame> frames(const std::string& id) const;
  std::vector<datapipe::JoystickSample> samples(const std::string& id) const;
  std::vector<SessionEvent> events(const std::string& id) const;
  std::optional<datapipe::TimestampedFrame> latest_frame(const std::string& id) const;

 private:
  struct Entry {
    std::mutex mu;
    SessionInfo info;
    std::uint64_t last_ms = 0;
  };

  std::filesystem::path dir(const std::string& id) const { return root_ / id; }
  std::shared_ptr<Entry> entry(const std::string& id) const;
  void write_manifest(const Entry& e) const;
  void require_live(const Entry& e) const;
  void require_in_bounds(const Entry& e, std::uint64_t t) const;
  std::size_t append_frames(Entry& e, std::span<const datapipe::TimestampedFrame> frames);

  std::filesystem::path root_;
  Clock clock_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  int next_id_ = 1;
};

struct ExportOptions {
  std::uint64_t max_gap_ms = datapipe::kDefaultMaxGapMs;
  bool resize = true;  // false keeps the stored frame size
  datapipe::PreprocessOptions preprocess;
  int stack = 0;       // 0 or 1: single frames
  bool canny = false;
  bool balance = true;

  /// Same settings as meta.txt params, for the manifest.
  std::map<std::string, std::string> params() const;
};

struct ExportResult {
  std::filesystem::path dir;
  std::array<std::size_t, kActionCount> counts{};
  std::size_t total = 0;
};

/// pair (per session) -> preprocess -> stack (per session) -> canny ->
/// concat -> balance, written with datapipe::export_dataset plus manifest.csv.
datapipe::Dataset build_export(const SessionStore& store, std::span<const std::string> ids,
                               const ExportOptions& options);
ExportResult export_sessions(const SessionStore& store, std::span<const std::string> ids,
                             const ExportOptions& options, const std::filesystem::path& out_dir);

std::string manifest_csv(const std::array<std::size_t, kActionCount>& counts);

}  // namespace deskpilot::server
