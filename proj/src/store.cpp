#include "deskpilot/store.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace deskpilot::server {

const char* errc_name(StoreErrc e) {
  switch (e) {
    case StoreErrc::UnknownSession: return "unknown_session";
    case StoreErrc::SessionClosed: return "session_closed";
    case StoreErrc::SessionLive: return "session_live";
    case StoreErrc::UnsortedBatch: return "unsorted_batch";
    case StoreErrc::Malformed: return "malformed_payload";
    case StoreErrc::OutOfBounds: return "timestamp_out_of_bounds";
    case StoreErrc::EmptyAfterPairing: return "empty_after_pairing";
    case StoreErrc::Conflict: return "conflict";
    case StoreErrc::Io: return "io";
  }
  return "unknown";
}

std::uint64_t system_clock_ms() {
  using namespace std::chrono;
  return static_cast<std::uint64_t>(duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count());
}

namespace {

std::string seq_name(std::size_t seq) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%08zu.pgm", seq);
  return buf;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  out << line;
  if (!out) throw StoreError(StoreErrc::Io, "cannot append to " + path.string());
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(path);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw StoreError(StoreErrc::Io, "corrupt store value: " + s);
  return v;
}

std::string state_name(SessionState s) { return s == SessionState::Live ? "live" : "closed"; }

}  // namespace

SessionStore::SessionStore(fs::path root, Clock clock) : root_(std::move(root)), clock_(std::move(clock)) {
  fs::create_directories(root_);
  for (const auto& d : fs::directory_iterator(root_)) {
    if (!d.is_directory() || !fs::exists(d.path() / "session.txt")) continue;
    auto e = std::make_shared<Entry>();
    std::ifstream in(d.path() / "session.txt");
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string k = line.substr(0, eq);
      const std::string v = line.substr(eq + 1);
      if (k == "id") e->info.id = v;
      else if (k == "map") e->info.map_name = v;
      else if (k == "state") e->info.state = v == "closed" ? SessionState::Closed : SessionState::Live;
      else if (k == "open_ms") e->info.open_ms = parse_u64(v);
      else if (k == "close_ms") e->info.close_ms = parse_u64(v);
    }
    if (e->info.id != d.path().filename().string()) continue;
    e->last_ms = e->info.open_ms;
    const auto frames = read_csv(d.path() / "frames.csv");
    e->info.frames = frames.size();
    for (const auto& r : frames) e->last_ms = std::max(e->last_ms, parse_u64(r.at(1)));
    const auto samples = read_csv(d.path() / "samples.csv");
    e->info.samples = samples.size();
    for (const auto& r : samples) e->last_ms = std::max(e->last_ms, parse_u64(r.at(0)));
    e->info.events = read_csv(d.path() / "events.csv").size();
    if (e->info.id.size() > 1 && e->info.id[0] == 's') {
      int n = 0;
      const auto& id = e->info.id;
      if (std::from_chars(id.data() + 1, id.data() + id.size(), n).ec == std::errc()) next_id_ = std::max(next_id_, n + 1);
    }
    sessions_[e->info.id] = e;
  }
}

std::string SessionStore::create(const std::string& map_name, std::optional<std::uint64_t> open_ms) {
  if (map_name.empty() || map_name.find_first_of("\n\r=/\\") != std::string::npos)
    throw StoreError(StoreErrc::Malformed, "invalid map name");
  std::lock_guard lock(mu_);
  auto e = std::make_shared<Entry>();
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%05d", next_id_++);
  e->info.id = buf;
  e->info.map_name = map_name;
  e->info.open_ms = open_ms.value_or(clock_());
  e->last_ms = e->info.open_ms;
  const fs::path d = dir(e->info.id);
  fs::create_directories(d / "frames");
  append_line(d / "frames.csv", "seq,timestamp_ms\n");
  append_line(d / "samples.csv", "timestamp_ms,x,y\n");
  append_line(d / "events.csv", "timestamp_ms,kind\n");
  write_manifest(*e);
  sessions_[e->info.id] = e;
  return e->info.id;
}

bool SessionStore::exists(const std::string& id) const {
  std::lock_guard lock(mu_);
  return sessions_.count(id) != 0;
}

std::shared_ptr<SessionStore::Entry> SessionStore::entry(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw StoreError(StoreErrc::UnknownSession, "unknown session: " + id);
  return it->second;
}

SessionInfo SessionStore::info(const std::string& id) const {
  const auto e = entry(id);
  std::lock_guard lock(e->mu);
  return e->info;
}

std::vector<std::string> SessionStore::list() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> ids;
  for (const auto& [id, e] : sessions_) ids.push_back(id);
  return ids;
}

void SessionStore::write_manifest(const Entry& e) const {
  const fs::path tmp = dir(e.info.id) / "session.txt.tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << "id=" << e.info.id << "\nmap=" << e.info.map_name << "\nstate=" << state_name(e.info.state)
        << "\nopen_ms=" << e.info.open_ms << "\nclose_ms=" << e.info.close_ms << '\n';
    if (!out) throw StoreError(StoreErrc::Io, "cannot write session manifest");
  }
  fs::rename(tmp, dir(e.info.id) / "session.txt");
}

void SessionStore::require_live(const Entry& e) const {
  if (e.info.state != SessionState::Live) throw StoreError(StoreErrc::SessionClosed, "session is closed: " + e.info.id);
}

void SessionStore::require_in_bounds(const Entry& e, std::uint64_t t) const {
  if (t < e.info.open_ms)
    throw StoreError(StoreErrc::OutOfBounds, "timestamp " + std::to_string(t) + " precedes session open at " +
                                                 std::to_string(e.info.open_ms));
}

std::size_t SessionStore::append_frames(Entry& e, std::span<const datapipe::TimestampedFrame> frames) {
  const fs::path d = dir(e.info.id);
  for (const auto& f : frames) {
    const std::size_t seq = e.info.frames;
    const fs::path p = d / "frames" / seq_name(seq);
    if (fs::exists(p)) throw StoreError(StoreErrc::Io, "refusing to overwrite stored frame " + p.string());
    write_pgm(p, f.image);
    append_line(d / "frames.csv", std::to_string(seq) + "," + std::to_string(f.timestamp_ms) + "\n");
    ++e.info.frames;
    e.last_ms = std::max(e.last_ms, f.timestamp_ms);
  }
  return frames.size();
}

std::size_t SessionStore::ingest_video(const std::string& id, std::uint64_t video_start_ms,
                                       std::span<const std::uint64_t> offsets,
                                       const std::function<GrayImage(std::size_t)>& fetch) {
  const auto e = entry(id);
  std::lock_guard lock(e->mu);
  require_live(*e);
  std::vector<std::size_t> picked;
  try {
    picked = datapipe::select_slice_indices(offsets);
  } catch (const std::exception& ex) {
    throw StoreError(StoreErrc::Malformed, ex.what());
  }
  if (picked.empty()) return 0;
  require_in_bounds(*e, video_start_ms + offsets[picked.front()]);
  std::vector<datapipe::TimestampedFrame> frames;
  frames.reserve(picked.size());
  for (std::size_t i : picked) frames.push_back({fetch(i), video_start_ms + offsets[i]});
  return append_frames(*e, frames);
}

std::size_t SessionStore::ingest_video(const std::string& id, std::uint64_t video_start_ms,
                                       std::span<const datapipe::RawVideoFrame> frames) {
  std::vector<std::uint64_t> offsets;
  offsets.reserve(frames.size());
  for (const auto& f : frames) offsets.push_back(f.offset_ms);
  return ingest_video(id, video_start_ms, offsets, [&](std::size_t i) { return frames[i].image; });
}

std::size_t SessionStore::ingest_commands(const std::string& id, std::span<const datapipe::JoystickSample> samples) {
  const auto e = entry(id);
  std::lock_guard lock(e->mu);
  require_live(*e);
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (samples[i].timestamp_ms < samples[i - 1].timestamp_ms)
      throw StoreError(StoreErrc::UnsortedBatch, "batch not sorted at index " + std::to_string(i),
                       static_cast<long>(i));
  }
  if (samples.empty()) return 0;
  require_in_bounds(*e, samples.front().timestamp_ms);
  std::string rows;
  for (const auto& s : samples) {
    rows += std::to_string(s.timestamp_ms) + "," + format_double(s.x) + "," + format_double(s.y) + "\n";
  }
  append_line(dir(id) / "samples.csv", rows);
  e->info.samples += samples.size();
  e->last_ms = std::max(e->last_ms, samples.back().timestamp_ms);
  return samples.size();
}

std::size_t SessionStore::ingest_commands(const std::string& id, const protocol::CommandBatch& batch) {
  const long inv = protocol::first_inversion(batch);
  if (inv >= 0) throw StoreError(StoreErrc::UnsortedBatch, "batch not sorted at index " + std::to_string(inv), inv);
  std::vector<datapipe::JoystickSample> samples;
  samples.reserve(batch.packets.size());
  for (const auto& p : batch.packets) {
    Action a;
    try {
      a = protocol::motors_to_action(p);
    } catch (const protocol::ProtocolError& ex) {
      throw StoreError(StoreErrc::Malformed, ex.what());
    }
    samples.push_back(datapipe::joystick_for(a, p.timestamp_ms));
  }
  return ingest_commands(id, samples);
}

void SessionStore::append_frame(const std::string& id, const datapipe::TimestampedFrame& frame) {
  const auto e = entry(id);
  std::lock_guard lock(e->mu);
  require_live(*e);
  require_in_bounds(*e, frame.timestamp_ms);
  append_frames(*e, std::span(&frame, 1));
}

void SessionStore::log_event(const std::string& id, const SessionEvent& event) {
  if (event.kind.find_first_of(",\n\r") != std::string::npos) throw StoreError(StoreErrc::Malformed, "bad event kind");
  const auto e = entry(id);
  std::lock_guard lock(e->mu);
  require_live(*e);
  require_in_bounds(*e, event.timestamp_ms);
  append_line(dir(id) / "events.csv", std::to_string(event.timestamp_ms) + "," + event.kind + "\n");
  ++e->info.events;
  e->last_ms = std::max(e->last_ms, event.timestamp_ms);
}

void SessionStore::close(const std::string& id, std::optional<std::uint64_t> close_ms) {
  const auto e = entry(id);
  std::lock_guard lock(e->mu);
  require_live(*e);
  const std::uint64_t t = close_ms.value_or(std::max(clock_(), e->last_ms));
  if (t < e->last_ms)
    throw StoreError(StoreErrc::OutOfBounds, "close time precedes stored record at " + std::to_string(e->last_ms));
  e->info.close_ms = t;
  e->info.state = SessionState::Closed;
  write_manifest(*e);
}

std::vector<datapipe::TimestampedFrame> SessionStore::frames(const std::string& id) const {
  const auto e = entry(id);
  std::lock_guard lock(e->mu);
  std::vector<datapipe::TimestampedFrame> out;
  for (const auto& r : read_csv(dir(id) / "frames.csv")) {
    const std::size_t seq = parse_u64(r.at(0));
    out.push_back({read_pgm(dir(id) / "frames" / seq_name(seq)), parse_u64(r.at(1))});
  }
  return out;
}

std::vector<datapipe::JoystickSample> SessionStore::samples(const std::string& id) const {
  const auto e = entry(id);
  std::lock_guard lock(e->mu);
  std::vector<datapipe::JoystickSample> out;
  for (const auto& r : read_csv(dir(id) / "samples.csv"))
    out.push_back({std::stod(r.at(1)), std::stod(r.at(2)), parse_u64(r.at(0))});
  return out;
}

std::vector<SessionEvent> SessionStore::events(const std::string& id) const {
  const auto e = entry(id);
  std::lock_guard lock(e->mu);
  std::vector<SessionEvent> out;
  for (const auto& r : read_csv(dir(id) / "events.csv")) out.push_back({parse_u64(r.at(0)), r.at(1)});
  return out;
}

std::optional<datapipe::TimestampedFrame> SessionStore::latest_frame(const std::string& id) const {
  const auto e = entry(id);
  std::lock_guard lock(e->mu);
  if (e->info.frames == 0) return std::nullopt;
  const std::size_t seq = e->info.frames - 1;
  const auto rows = read_csv(dir(id) / "frames.csv");
  return datapipe::TimestampedFrame{read_pgm(dir(id) / "frames" / seq_name(seq)), parse_u64(rows.at(seq).at(1))};
}

// ---- export ----------------------------------------------------------------

std::map<std::string, std::string> ExportOptions::params() const {
  return {{"max_gap_ms", std::to_string(max_gap_ms)},
          {"resize", resize ? "1" : "0"},
          {"equalize", preprocess.equalize ? "1" : "0"},
          {"stack", std::to_string(stack)},
          {"canny", canny ? "1" : "0"},
          {"balanced", balance ? "1" : "0"}};
}

datapipe::Dataset build_export(const SessionStore& store, std::span<const std::string> ids,
                               const ExportOptions& opt) {
  if (ids.empty()) throw StoreError(StoreErrc::Malformed, "no sessions given");
  if (opt.stack > 1 && opt.canny) throw StoreError(StoreErrc::Malformed, "stack and canny cannot be combined");
  if (opt.stack < 0) throw StoreError(StoreErrc::Malformed, "stack must be >= 0");

  std::vector<datapipe::Dataset> parts;
  for (const auto& id : ids) {
    const SessionInfo info = store.info(id);
    if (info.state == SessionState::Live) throw StoreError(StoreErrc::SessionLive, "session still live: " + id);
    auto frames = store.frames(id);
    auto samples = store.samples(id);
    std::stable_sort(frames.begin(), frames.end(),
                     [](const auto& a, const auto& b) { return a.timestamp_ms < b.timestamp_ms; });
    std::stable_sort(samples.begin(), samples.end(),
                     [](const auto& a, const auto& b) { return a.timestamp_ms < b.timestamp_ms; });
    const auto paired = datapipe::pair(frames, samples, opt.max_gap_ms);
    datapipe::PreprocessOptions pre = opt.preprocess;
    if (!opt.resize && !paired.empty()) {
      pre.width = paired.front().frame.image.width();
      pre.height = paired.front().frame.image.height();
    }
    datapipe::Dataset d = datapipe::build_dataset(paired, pre);
    if (opt.stack > 1) d = datapipe::stack_frames(d, opt.stack);
    parts.push_back(std::move(d));
  }

  datapipe::Dataset all = datapipe::concat(parts);
  if (all.empty()) throw StoreError(StoreErrc::EmptyAfterPairing, "no frame had a sample within max_gap_ms");
  if (opt.canny) all = datapipe::add_canny_channel(all);
  if (opt.balance) all = datapipe::balance_by_duplication(all);
  for (const auto& [k, v] : opt.params()) all.meta.params[k] = v;
  return all;
}

std::string manifest_csv(const std::array<std::size_t, kActionCount>& counts) {
  std::string s = "label,name,count\n";
  for (Action a : kAllActions)
    s += std::to_string(to_index(a)) + "," + std::string(action_name(a)) + "," + std::to_string(counts[to_index(a)]) + "\n";
  return s;
}

ExportResult export_sessions(const SessionStore& store, std::span<const std::string> ids, const ExportOptions& opt,
                             const fs::path& out_dir) {
  const datapipe::Dataset d = build_export(store, ids, opt);
  datapipe::export_dataset(d, out_dir);
  ExportResult r;
  r.dir = out_dir;
  r.counts = datapipe::class_counts(d);
  r.total = d.size();
  std::ofstream m(out_dir / "manifest.csv", std::ios::binary);
  m << manifest_csv(r.counts);
  if (!m) throw StoreError(StoreErrc::Io, "cannot write manifest.csv");
  return r;
}

}  // namespace deskpilot::server
