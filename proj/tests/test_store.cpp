#include <doctest.h>

#include <fstream>
#include <sstream>

#include "deskpilot/collect.hpp"
#include "deskpilot/rng.hpp"
#include "deskpilot/store.hpp"
#include "deskpilot/teleop.hpp"
#include "support.hpp"

using namespace deskpilot;
using namespace deskpilot::server;
using datapipe::JoystickSample;
using datapipe::RawVideoFrame;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

StoreErrc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const StoreError& e) {
    return e.code();
  }
  FAIL("no StoreError");
  return StoreErrc::Io;
}

std::vector<RawVideoFrame> video(int n, int fps = 30) {
  std::vector<RawVideoFrame> v;
  for (int i = 0; i < n; ++i)
    v.push_back({GrayImage(16, 12, static_cast<std::uint8_t>(i % 256)),
                 static_cast<std::uint64_t>(std::llround(i * 1000.0 / fps))});
  return v;
}

std::vector<JoystickSample> sticks(std::uint64_t from, std::uint64_t to, std::uint64_t step, Rng& rng) {
  std::vector<JoystickSample> s;
  for (std::uint64_t t = from; t < to; t += step) s.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), t});
  return s;
}

struct ManualClock {
  std::uint64_t now = 5000;
  Clock fn() {
    return [this] { return now; };
  }
};

}  // namespace

TEST_CASE("sessions are created, listed and reloaded") {
  testing::TempDir dir;
  ManualClock clock;
  {
    SessionStore store(dir.path(), clock.fn());
    CHECK(store.create("corners") == "s00001");
    CHECK(store.create("heldout", 100) == "s00002");
    CHECK(store.list() == std::vector<std::string>{"s00001", "s00002"});
    const SessionInfo i = store.info("s00001");
    CHECK(i.map_name == "corners");
    CHECK(i.open_ms == 5000);
    CHECK(i.state == SessionState::Live);
    CHECK(code_of([&] { store.info("s00009"); }) == StoreErrc::UnknownSession);
    CHECK(code_of([&] { store.create("../x"); }) == StoreErrc::Malformed);
    Rng rng(1);
    store.ingest_commands("s00002", sticks(100, 1000, 100, rng));
    store.close("s00002");
  }
  SessionStore again(dir.path(), clock.fn());
  CHECK(again.list().size() == 2);
  const SessionInfo i = again.info("s00002");
  CHECK(i.state == SessionState::Closed);
  CHECK(i.samples == 9);
  CHECK(i.close_ms == 5000);
  CHECK(again.create("corners") == "s00003");
}

TEST_CASE("video ingest slices to 4 Hz and stamps absolute times") {
  testing::TempDir dir;
  SessionStore store(dir.path());
  const std::string id = store.create("corners", 1000);
  CHECK(store.ingest_video(id, 1000, video(300)) == 40);
  const auto frames = store.frames(id);
  REQUIRE(frames.size() == 40);
  CHECK(frames[0].timestamp_ms == 1000);
  CHECK(frames[1].timestamp_ms == 1000 + 233);
  CHECK(frames[1].image.at(0, 0) == 7);
  CHECK(store.latest_frame(id)->timestamp_ms == frames.back().timestamp_ms);
  CHECK(code_of([&] { store.ingest_video(id, 999, video(3)); }) == StoreErrc::OutOfBounds);
  auto bad = video(3);
  bad[2].offset_ms = 10;
  CHECK(code_of([&] { store.ingest_video(id, 5000, bad); }) == StoreErrc::Malformed);
}

TEST_CASE("command batches: order, bounds, packets") {
  testing::TempDir dir;
  SessionStore store(dir.path());
  const std::string id = store.create("corners", 1000);
  std::vector<JoystickSample> s{{0, 1, 1000}, {0, 1, 1100}, {0, 1, 1050}, {0, 1, 1200}};
  try {
    store.ingest_commands(id, s);
    FAIL("accepted");
  } catch (const StoreError& e) {
    CHECK(e.code() == StoreErrc::UnsortedBatch);
    CHECK(e.index() == 2);
  }
  CHECK(store.samples(id).empty());
  std::vector<JoystickSample> early{{0, 1, 999}};
  CHECK(code_of([&] { store.ingest_commands(id, early); }) == StoreErrc::OutOfBounds);

  protocol::CommandBatch b;
  b.packets = {protocol::action_to_motors(Action::ForwardsLeft, 1000), protocol::action_to_motors(Action::Stop, 1250)};
  CHECK(store.ingest_commands(id, b) == 2);
  const auto got = store.samples(id);
  REQUIRE(got.size() == 2);
  CHECK(datapipe::quantize_joystick(got[0]) == Action::ForwardsLeft);
  CHECK(got[1] == datapipe::joystick_for(Action::Stop, 1250));
  std::swap(b.packets[0], b.packets[1]);
  CHECK(code_of([&] { store.ingest_commands(id, b); }) == StoreErrc::UnsortedBatch);
}

TEST_CASE("records are append-only and survive exact") {
  testing::TempDir dir;
  SessionStore store(dir.path());
  const std::string id = store.create("corners", 0);
  Rng rng(3);
  const auto first = sticks(0, 5000, 100, rng);
  store.ingest_commands(id, first);
  store.ingest_video(id, 0, video(90));
  const std::string samples_before = slurp(dir / id / "samples.csv");
  const std::string frames_before = slurp(dir / id / "frames.csv");
  const std::string pgm_before = slurp(dir / id / "frames" / "00000000.pgm");

  store.ingest_commands(id, sticks(5000, 9000, 100, rng));
  store.ingest_video(id, 3000, video(90));
  CHECK(slurp(dir / id / "samples.csv").rfind(samples_before, 0) == 0);
  CHECK(slurp(dir / id / "frames.csv").rfind(frames_before, 0) == 0);
  CHECK(slurp(dir / id / "frames" / "00000000.pgm") == pgm_before);

  const auto stored = store.samples(id);
  REQUIRE(stored.size() == 90);
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(stored[i] == first[i]);
}

TEST_CASE("closing") {
  testing::TempDir dir;
  ManualClock clock;
  SessionStore store(dir.path(), clock.fn());
  const std::string id = store.create("corners", 0);
  std::vector<JoystickSample> s{{0, 1, 9000}};
  store.ingest_commands(id, s);
  CHECK(code_of([&] { store.close(id, 8000); }) == StoreErrc::OutOfBounds);
  store.close(id);
  CHECK(store.info(id).close_ms == 9000);
  CHECK(code_of([&] { store.ingest_commands(id, s); }) == StoreErrc::SessionClosed);
  CHECK(code_of([&] { store.close(id); }) == StoreErrc::SessionClosed);
  CHECK(code_of([&] { store.log_event(id, {9000, "x"}); }) == StoreErrc::SessionClosed);
}

TEST_CASE("export needs closed sessions and paired frames") {
  testing::TempDir dir;
  SessionStore store(dir.path());
  const std::string id = store.create("corners", 0);
  store.ingest_video(id, 0, video(60));
  std::vector<JoystickSample> far{{0, 1, 100000}};
  store.ingest_commands(id, far);
  const std::vector<std::string> ids{id};
  CHECK(code_of([&] { build_export(store, ids, {}); }) == StoreErrc::SessionLive);
  store.close(id);
  CHECK(code_of([&] { build_export(store, ids, {}); }) == StoreErrc::EmptyAfterPairing);
  ExportOptions both;
  both.stack = 10;
  both.canny = true;
  CHECK(code_of([&] { build_export(store, ids, both); }) == StoreErrc::Malformed);
  CHECK(code_of([&] { build_export(store, {}, {}); }) == StoreErrc::Malformed);
}

TEST_CASE("manifest counts match a brute-force recount and exports are deterministic") {
  testing::TempDir dir;
  SessionStore store(dir.path());
  Rng rng(11);
  std::vector<std::string> ids;
  std::array<std::size_t, kActionCount> raw{};
  for (int k = 0; k < 2; ++k) {
    const std::string id = store.create("corners", 0);
    const auto v = video(600);
    const auto s = sticks(130, 19000, 170, rng);
    store.ingest_video(id, 0, v);
    store.ingest_commands(id, s);
    store.close(id);
    ids.push_back(id);
    for (const auto& f : store.frames(id)) {
      long best = -1;
      std::uint64_t bd = 0;
      for (std::size_t j = 0; j < s.size(); ++j) {
        const std::uint64_t d = f.timestamp_ms > s[j].timestamp_ms ? f.timestamp_ms - s[j].timestamp_ms
                                                                   : s[j].timestamp_ms - f.timestamp_ms;
        if (best < 0 || d < bd) best = static_cast<long>(j), bd = d;
      }
      if (bd <= 500) ++raw[to_index(datapipe::quantize_joystick(s[static_cast<std::size_t>(best)]))];
    }
  }
  const std::size_t top = *std::max_element(raw.begin(), raw.end());
  std::size_t present = 0;
  for (auto c : raw) present += c > 0;

  ExportOptions opt;
  opt.preprocess = {8, 6, true};
  const ExportResult a = export_sessions(store, ids, opt, dir / "ex1");
  CHECK(a.total == top * present);
  for (int c = 0; c < kActionCount; ++c) CHECK(a.counts[c] == (raw[c] ? top : 0));
  CHECK(slurp(dir / "ex1" / "manifest.csv") == manifest_csv(a.counts));

  opt.balance = false;
  const auto unbalanced = build_export(store, ids, opt);
  CHECK(datapipe::class_counts(unbalanced) == raw);
  CHECK(unbalanced.meta.params.at("balanced") == "0");

  opt.balance = true;
  export_sessions(store, ids, opt, dir / "ex2");
  for (const auto& e : fs::directory_iterator(dir / "ex1"))
    CHECK(slurp(e.path()) == slurp(dir / "ex2" / e.path().filename()));
}

TEST_CASE("collect_oracle records a closed session") {
  testing::TempDir dir;
  SessionStore store(dir.path());
  const sim::WorldMap map = sim::load_map_file(testing::map_path("corners"));
  CollectOptions opt;
  opt.seconds = 30;
  const CollectResult r = collect_oracle(store, "corners", map, opt);
  CHECK(r.video_frames == 900);
  CHECK(r.stored_frames == 120);
  CHECK(r.samples == 300);
  const SessionInfo info = store.info(r.session_id);
  CHECK(info.state == SessionState::Closed);
  CHECK(info.open_ms == 1'000'000);
  CHECK(info.close_ms == 1'030'000);
  CHECK(info.events == r.collisions);
  const auto frames = store.frames(r.session_id);
  CHECK(frames.front().timestamp_ms == 1'000'000);
  CHECK(frames.front().image == sim::render(map, sim::start_state(map)));
}

TEST_CASE("teleop session") {
  testing::TempDir dir;
  SessionStore store(dir.path());
  const std::string id = store.create("straight", 0);
  TeleopSession t(store, id, sim::load_map_file(testing::map_path("straight")));
  const std::string token = t.join();
  CHECK(code_of([&] { t.join(); }) == StoreErrc::Conflict);
  CHECK(code_of([&] { t.push_joystick("nope", {0, 1, 0}); }) == StoreErrc::Conflict);
  CHECK(code_of([&] { t.push_joystick(token, {0, 2, 0}); }) == StoreErrc::Malformed);

  t.tick(100);
  CHECK(t.status().action == Action::Stop);
  t.push_joystick(token, {0, 1, 150});
  for (std::uint64_t now = 200; now <= 10000; now += 100) t.tick(now);
  const TeleopStatus s = t.status();
  CHECK(s.ticks == 100);
  CHECK(s.action == Action::Forwards);
  CHECK(s.collisions > 0);
  CHECK(store.info(id).frames == 100);
  CHECK(store.events(id).size() == s.collisions);
  CHECK(store.events(id).front().kind == "collision");
  CHECK(s.pose.x == doctest::Approx(9.5 - 0.06).epsilon(0.01));
  CHECK(t.latest_frame()->timestamp_ms == 10000);

  t.leave(token);
  CHECK(t.status().has_controller == false);
  const std::string again = t.join();
  CHECK(again != token);
  t.close();
  CHECK(store.info(id).state == SessionState::Closed);
  CHECK(code_of([&] { t.join(); }) == StoreErrc::SessionClosed);
}
