#include <doctest.h>

#include <httplib.h>
#include <json.hpp>

#include <thread>

#include "deskpilot/collect.hpp"
#include "deskpilot/http_server.hpp"
#include "deskpilot/model_io.hpp"
#include "deskpilot/tar.hpp"
#include "support.hpp"

using namespace deskpilot;
using namespace deskpilot::server;
using json = nlohmann::json;

namespace {

struct Harness {
  testing::TempDir dir;
  std::atomic<std::uint64_t> now{2'000'000};
  std::unique_ptr<ApiServer> server;
  std::thread thread;
  int port = 0;

  explicit Harness(bool ticker = false, std::uint64_t tick_ms = 100, std::optional<cnn::Model> model = std::nullopt,
                   bool real_clock = false) {
    ServerOptions o;
    o.data_dir = dir / "data";
    o.maps_dir = testing::source_dir() / "fixtures" / "maps";
    o.run_ticker = ticker;
    o.tick_ms = tick_ms;
    o.model = std::move(model);
    Clock clock = real_clock ? Clock(system_clock_ms) : Clock([this] { return now.load(); });
    server = std::make_unique<ApiServer>(std::move(o), clock);
    port = server->bind("127.0.0.1", 0);
    thread = std::thread([this] { server->run(); });
    server->wait_until_ready();
  }
  ~Harness() {
    server->stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }
};

json body(const httplib::Result& r) { return json::parse(r->body); }

std::string create(httplib::Client& c, const std::string& map, std::uint64_t open_ms) {
  const auto r = c.Post("/api/session", json{{"map", map}, {"open_ms", open_ms}}.dump(), "application/json");
  REQUIRE(r);
  REQUIRE(r->status == 201);
  return body(r)["session_id"];
}

httplib::Result upload_video(httplib::Client& c, const std::string& id, std::uint64_t start,
                             std::span<const datapipe::RawVideoFrame> frames) {
  const VideoPayload p = encode_video_payload(frames);
  const httplib::MultipartFormDataItems items{{"start_ms", std::to_string(start), "", "text/plain"},
                                              {"frames", p.frames, "frames.bin", "application/octet-stream"},
                                              {"index", p.index, "index.csv", "text/csv"}};
  return c.Post("/api/session/" + id + "/video", items);
}

std::vector<datapipe::RawVideoFrame> video(int n) {
  std::vector<datapipe::RawVideoFrame> v;
  for (int i = 0; i < n; ++i)
    v.push_back({GrayImage(16, 12, static_cast<std::uint8_t>(i)), static_cast<std::uint64_t>(std::llround(i * 1000.0 / 30))});
  return v;
}

}  // namespace

TEST_CASE("video payload index round trip") {
  const auto v = video(5);
  const VideoPayload p = encode_video_payload(v);
  CHECK(p.index.rfind("offset_ms,byte_offset,byte_length\n", 0) == 0);
  const ParsedVideo parsed = parse_video_index(p.index, p.frames.size());
  REQUIRE(parsed.offsets.size() == 5);
  CHECK(parsed.offsets[3] == 100);
  const auto [at, len] = parsed.ranges[2];
  CHECK(decode_pgm(std::span(reinterpret_cast<const std::uint8_t*>(p.frames.data()) + at, len)) == v[2].image);
  CHECK_THROWS_AS(parse_video_index(p.index, p.frames.size() - 1), StoreError);
  CHECK_THROWS_AS(parse_video_index("a,b\n", 0), StoreError);
}

TEST_CASE("quantizer endpoints") {
  Harness h;
  auto c = h.client();
  const auto r = c.Get("/api/quantizer");
  REQUIRE(r);
  CHECK(r->status == 200);
  const json q = body(r);
  CHECK(q["stop_radius"] == 0.15);
  CHECK(q["full_radius"] == 0.5);
  CHECK(q["cone_degrees"] == 30.0);
  REQUIRE(q["labels"].size() == 9);
  CHECK(q["labels"][6]["name"] == "ForwardsLeft");

  for (int i = -10; i <= 10; ++i) {
    for (int j = -10; j <= 10; ++j) {
      const double x = i / 10.0, y = j / 10.0;
      const auto a = c.Get("/api/quantize?x=" + std::to_string(x) + "&y=" + std::to_string(y));
      REQUIRE(a);
      REQUIRE(body(a)["label"] == to_index(datapipe::quantize_joystick({x, y, 0})));
    }
  }
  const auto bad = c.Get("/api/quantize?x=abc&y=0");
  CHECK(bad->status == 400);
  CHECK(body(bad)["code"] == "malformed_payload");
}

TEST_CASE("session lifecycle over HTTP") {
  Harness h;
  auto c = h.client();
  const std::string id = create(c, "corners", 1000);
  auto r = c.Post("/api/session", "heldout\n", "text/plain");
  CHECK(r->status == 201);
  CHECK(body(r)["session_id"] == "s00002");
  CHECK(c.Post("/api/session", json{{"map", "nowhere"}}.dump(), "application/json")->status == 400);
  CHECK(c.Post("/api/session", json{{"map", "../x"}}.dump(), "application/json")->status == 400);

  r = c.Get("/api/session/s99999");
  CHECK(r->status == 404);
  CHECK(body(r)["code"] == "unknown_session");

  r = upload_video(c, id, 1000, video(60));
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(body(r)["stored"] == 8);
  r = upload_video(c, id, 0, video(3));
  CHECK(r->status == 400);
  CHECK(body(r)["code"] == "timestamp_out_of_bounds");

  json cmds = json::array();
  for (int k = 0; k < 8; ++k) cmds.push_back({{"t", 1000 + 250 * k}, {"x", 0.0}, {"y", 1.0}});
  r = c.Post("/api/session/" + id + "/commands", cmds.dump(), "application/json");
  CHECK(body(r)["stored"] == 8);

  json unsorted = json::array({{{"t", 3000}, {"x", 0}, {"y", 1}}, {{"t", 2999}, {"x", 0}, {"y", 1}}});
  r = c.Post("/api/session/" + id + "/commands", unsorted.dump(), "application/json");
  CHECK(r->status == 400);
  CHECK(body(r)["code"] == "unsorted_batch");
  CHECK(body(r)["index"] == 1);

  std::string packets;
  for (std::uint64_t t : {3000, 3250}) {
    const auto b = protocol::encode_packet(protocol::action_to_motors(Action::ForwardsRight, t));
    packets.append(b.begin(), b.end());
  }
  r = c.Post("/api/session/" + id + "/commands", packets, "application/octet-stream");
  CHECK(body(r)["stored"] == 2);
  packets[5] ^= 0x40;
  r = c.Post("/api/session/" + id + "/commands", packets, "application/octet-stream");
  CHECK(r->status == 400);
  CHECK(body(r)["code"] == "bad_checksum");
  r = c.Post("/api/session/" + id + "/commands", packets.substr(0, 20), "application/octet-stream");
  CHECK(r->status == 400);

  r = c.Get("/api/session/" + id + "/export");
  CHECK(r->status == 409);
  CHECK(body(r)["code"] == "session_live");

  r = c.Get("/api/session/" + id + "/frame");
  CHECK(r->status == 200);
  CHECK(r->get_header_value("X-Timestamp-Ms") == "2733");
  CHECK(decode_pgm(std::span(reinterpret_cast<const std::uint8_t*>(r->body.data()), r->body.size())).at(0, 0) == 52);

  r = c.Post("/api/session/" + id + "/close", "", "application/json");
  CHECK(body(r)["state"] == "closed");
  CHECK(body(r)["close_ms"] == 2'000'000);
  r = c.Post("/api/session/" + id + "/commands", cmds.dump(), "application/json");
  CHECK(r->status == 409);
  CHECK(body(r)["code"] == "session_closed");

  r = c.Get("/api/session/" + id);
  CHECK(body(r)["frames"] == 8);
  CHECK(body(r)["samples"] == 10);

  r = c.Get("/api/session/" + id + "/export?width=8&height=6&balance=0");
  REQUIRE(r->status == 200);
  CHECK(r->get_header_value("X-Export-Total") == "8");
  const auto entries = untar(r->body);
  std::set<std::string> names;
  for (const auto& e : entries) names.insert(e.name);
  CHECK(names.count("dataset/labels.csv") == 1);
  CHECK(names.count("dataset/meta.txt") == 1);
  CHECK(names.count("dataset/manifest.csv") == 1);
  CHECK(names.count("dataset/1000_0.pgm") == 1);
  for (const auto& e : entries)
    if (e.name == "dataset/manifest.csv") CHECK(e.data.find("7,Forwards,8") != std::string::npos);
  CHECK(c.Get("/api/session/" + id + "/export?balance=maybe")->status == 400);
}

TEST_CASE("multi-session export and empty pairing") {
  Harness h;
  auto c = h.client();
  SessionStore& store = h.server->store();
  const sim::WorldMap map = sim::load_map_file(testing::map_path("corners"));
  CollectOptions o;
  o.seconds = 10;
  const auto a = collect_oracle(store, "corners", map, o);
  o.start_ms = 3'000'000;
  const auto b = collect_oracle(store, "corners", map, o);
  auto r = c.Get("/api/export?sessions=" + a.session_id + "," + b.session_id + "&balance=0");
  REQUIRE(r->status == 200);
  CHECK(r->get_header_value("X-Export-Total") == "80");

  const std::string lonely = create(c, "corners", 0);
  upload_video(c, lonely, 0, video(30));
  c.Post("/api/session/" + lonely + "/close", "", "application/json");
  r = c.Get("/api/session/" + lonely + "/export");
  CHECK(r->status == 400);
  CHECK(body(r)["code"] == "empty_after_pairing");
}

TEST_CASE("teleop over HTTP") {
  Harness h;
  auto c = h.client();
  const std::string id = create(c, "straight", 1'999'000);
  auto r = c.Post("/api/session/" + id + "/joystick", json{{"t", 1'999'500}, {"x", 0}, {"y", 1}}.dump(), "application/json");
  CHECK(r->status == 409);

  r = c.Post("/api/session/" + id + "/join", "", "application/json");
  REQUIRE(r->status == 200);
  const std::string token = body(r)["token"];
  CHECK(body(r)["tick_ms"] == 100);
  r = c.Post("/api/session/" + id + "/join", "", "application/json");
  CHECK(r->status == 409);
  CHECK(body(r)["code"] == "conflict");

  r = c.Post("/api/session/" + id + "/joystick",
             json{{"t", 2'000'000}, {"x", 0.0}, {"y", 1.0}, {"token", "wrong"}}.dump(), "application/json");
  CHECK(r->status == 409);
  httplib::Headers hdr{{"X-Controller-Token", token}};
  r = c.Post("/api/session/" + id + "/joystick", hdr, json{{"t", 2'000'000}, {"x", 0.0}, {"y", 1.0}}.dump(),
             "application/json");
  REQUIRE(r->status == 200);
  CHECK(body(r)["label"] == 7);
  CHECK(body(r)["name"] == "Forwards");

  for (std::uint64_t k = 1; k <= 100; ++k) {
    h.now = 2'000'000 + 100 * k;
    h.server->tick_all(h.now);
  }
  r = c.Get("/api/session/" + id + "/status");
  const json s = body(r);
  CHECK(s["frames"] == 100);
  CHECK(s["elapsed_ms"] == 11'000);
  CHECK(s["teleop"]["ticks"] == 100);
  CHECK(s["teleop"]["has_controller"] == true);
  CHECK(s["teleop"]["collisions"].get<int>() > 0);
  CHECK(s["events"] == s["teleop"]["collisions"]);

  r = c.Get("/api/session/" + id + "/frame");
  CHECK(r->get_header_value("X-Timestamp-Ms") == "2010000");
  CHECK(c.Get("/api/session/" + id + "/predict")->status == 404);

  r = c.Post("/api/session/" + id + "/leave", json{{"token", token}}.dump(), "application/json");
  CHECK(r->status == 200);
  CHECK(c.Post("/api/session/" + id + "/join", "", "application/json")->status == 200);
  r = c.Post("/api/session/" + id + "/close", "", "application/json");
  CHECK(body(r)["state"] == "closed");
  h.server->tick_all(h.now + 100);
  CHECK(body(c.Get("/api/session/" + id))["frames"] == 100);
  CHECK(c.Post("/api/session/" + id + "/join", "", "application/json")->status == 409);
}

TEST_CASE("predict endpoint with a model") {
  cnn::ModelConfig cfg;
  cfg.height = 12;
  cfg.width = 16;
  cfg.conv1_filters = 4;
  cfg.conv2_filters = 8;
  cfg.dense = 16;
  Harness h(false, 100, cnn::Model{cfg, cnn::init_params(cfg, 1)});
  auto c = h.client();
  const std::string id = create(c, "corners", 0);
  CHECK(c.Get("/api/session/" + id + "/predict")->status == 404);
  upload_video(c, id, 0, video(10));
  const auto r = c.Get("/api/session/" + id + "/predict");
  REQUIRE(r->status == 200);
  const json p = body(r);
  REQUIRE(p["confidences"].size() == 9);
  double sum = 0;
  for (double v : p["confidences"]) sum += v;
  CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("background ticker runs at the tick rate") {
  Harness h(true, 50, std::nullopt, true);
  auto c = h.client();
  const std::string id = body(c.Post("/api/session", "straight", "text/plain"))["session_id"];
  REQUIRE(c.Post("/api/session/" + id + "/join", "", "application/json")->status == 200);
  const auto t0 = std::chrono::steady_clock::now();
  const int before = body(c.Get("/api/session/" + id))["frames"];
  std::this_thread::sleep_for(std::chrono::milliseconds(1000));
  const int after = body(c.Get("/api/session/" + id))["frames"];
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double expected = secs * 20.0;
  CHECK(after - before >= expected - 3);
  CHECK(after - before <= expected + 3);
}
