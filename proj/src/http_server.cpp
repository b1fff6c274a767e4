#include "deskpilot/http_server.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "deskpilot/autopilot.hpp"
#include "deskpilot/tar.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace deskpilot::server {

VideoPayload encode_video_payload(std::span<const datapipe::RawVideoFrame> frames) {
  VideoPayload p;
  p.index = "offset_ms,byte_offset,byte_length\n";
  for (const auto& f : frames) {
    const auto bytes = encode_pgm(f.image);
    p.index += std::to_string(f.offset_ms) + "," + std::to_string(p.frames.size()) + "," +
               std::to_string(bytes.size()) + "\n";
    p.frames.append(bytes.begin(), bytes.end());
  }
  return p;
}

namespace {

std::uint64_t parse_field(std::string_view s, const char* what) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw StoreError(StoreErrc::Malformed, std::string("bad ") + what + ": '" + std::string(s) + "'");
  return v;
}

}  // namespace

ParsedVideo parse_video_index(std::string_view index, std::size_t frames_size) {
  ParsedVideo out;
  std::size_t pos = 0;
  bool header = true;
  while (pos < index.size()) {
    std::size_t end = index.find('\n', pos);
    if (end == std::string_view::npos) end = index.size();
    std::string_view line = index.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line != "offset_ms,byte_offset,byte_length")
        throw StoreError(StoreErrc::Malformed, "index header must be offset_ms,byte_offset,byte_length");
      continue;
    }
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string_view::npos) throw StoreError(StoreErrc::Malformed, "index row needs three fields");
    const std::uint64_t off = parse_field(line.substr(0, c1), "offset_ms");
    const std::uint64_t at = parse_field(line.substr(c1 + 1, c2 - c1 - 1), "byte_offset");
    const std::uint64_t len = parse_field(line.substr(c2 + 1), "byte_length");
    if (at > frames_size || len > frames_size - at)
      throw StoreError(StoreErrc::Malformed, "index row points outside the frames payload");
    out.offsets.push_back(off);
    out.ranges.emplace_back(at, len);
  }
  if (header && !index.empty()) throw StoreError(StoreErrc::Malformed, "empty index");
  return out;
}

struct ApiServer::Impl {
  ServerOptions opt;
  Clock clock;
  SessionStore store;
  httplib::Server http;
  std::mutex teleop_mu;
  std::map<std::string, std::shared_ptr<TeleopSession>> teleop;
  std::atomic<bool> stopping{false};
  std::mutex tick_mu;
  std::condition_variable tick_cv;
  std::atomic<int> export_counter{0};

  Impl(ServerOptions o, Clock c)
      : opt(std::move(o)), clock(c), store(opt.data_dir / "sessions", c) {
    fs::create_directories(opt.data_dir / "exports");
    routes();
  }

  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                         long index = -1) {
    json body{{"code", code}, {"message", message}};
    if (index >= 0) body["index"] = index;
    send_json(res, status, body);
  }

  static int status_for(StoreErrc e) {
    switch (e) {
      case StoreErrc::UnknownSession: return 404;
      case StoreErrc::SessionClosed:
      case StoreErrc::SessionLive:
      case StoreErrc::Conflict: return 409;
      case StoreErrc::Io: return 500;
      default: return 400;
    }
  }

  // Runs a handler, mapping library exceptions onto JSON errors.
  template <typename F>
  httplib::Server::Handler wrap(F f) {
    return [this, f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const StoreError& e) {
        send_error(res, status_for(e.code()), errc_name(e.code()), e.what(), e.index());
      } catch (const datapipe::DataError& e) {
        send_error(res, 400, "data_error", e.what());
      } catch (const ShapeError& e) {
        send_error(res, 400, "shape_error", e.what());
      } catch (const PgmError& e) {
        send_error(res, 400, "malformed_payload", e.what());
      } catch (const protocol::ProtocolError& e) {
        send_error(res, 400, protocol::errc_name(e.code()), e.what());
      } catch (const json::exception& e) {
        send_error(res, 400, "malformed_payload", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  static std::string id_of(const httplib::Request& req) { return req.path_params.at("id"); }

  std::shared_ptr<TeleopSession> find_teleop(const std::string& id) {
    std::lock_guard lock(teleop_mu);
    const auto it = teleop.find(id);
    return it == teleop.end() ? nullptr : it->second;
  }

  fs::path map_path(const std::string& name) const { return opt.maps_dir / (name + ".map"); }

  json info_json(const SessionInfo& i) const {
    return {{"session_id", i.id},
            {"map", i.map_name},
            {"state", i.state == SessionState::Live ? "live" : "closed"},
            {"open_ms", i.open_ms},
            {"close_ms", i.close_ms},
            {"frames", i.frames},
            {"samples", i.samples},
            {"events", i.events}};
  }

  static std::uint64_t json_ms(const json& v, const char* key) {
    if (!v.contains(key) || !v[key].is_number_unsigned())
      throw StoreError(StoreErrc::Malformed, std::string("field '") + key + "' must be a non-negative integer");
    return v[key].get<std::uint64_t>();
  }

  static datapipe::JoystickSample sample_from(const json& v) {
    if (!v.is_object()) throw StoreError(StoreErrc::Malformed, "sample must be an object {t,x,y}");
    if (!v.contains("x") || !v["x"].is_number() || !v.contains("y") || !v["y"].is_number())
      throw StoreError(StoreErrc::Malformed, "sample needs numeric x and y");
    return {v["x"].get<double>(), v["y"].get<double>(), json_ms(v, "t")};
  }

  ExportOptions export_options(const httplib::Request& req) const {
    ExportOptions o;
    auto flag = [&](const char* k, bool& dst) {
      if (!req.has_param(k)) return;
      const std::string v = req.get_param_value(k);
      if (v == "1" || v == "true") dst = true;
      else if (v == "0" || v == "false") dst = false;
      else throw StoreError(StoreErrc::Malformed, std::string("bad flag ") + k + "=" + v);
    };
    auto number = [&](const char* k, auto& dst) {
      if (req.has_param(k)) dst = static_cast<std::remove_reference_t<decltype(dst)>>(parse_field(req.get_param_value(k), k));
    };
    flag("resize", o.resize);
    flag("equalize", o.preprocess.equalize);
    flag("canny", o.canny);
    flag("balance", o.balance);
    number("width", o.preprocess.width);
    number("height", o.preprocess.height);
    number("stack", o.stack);
    number("max_gap_ms", o.max_gap_ms);
    return o;
  }

  void send_export(const std::vector<std::string>& ids, const httplib::Request& req, httplib::Response& res) {
    const ExportOptions o = export_options(req);
    const std::string name = "export-" + std::to_string(clock()) + "-" + std::to_string(export_counter++);
    const ExportResult r = export_sessions(store, ids, o, opt.data_dir / "exports" / name);
    res.status = 200;
    res.set_header("Content-Disposition", "attachment; filename=\"" + name + ".tar\"");
    res.set_header("X-Export-Total", std::to_string(r.total));
    res.set_content(tar_directory(r.dir, "dataset"), "application/x-tar");
  }

  void routes() {
    http.set_payload_max_length(std::size_t{1} << 30);

    http.Post("/api/session", wrap([this](const httplib::Request& req, httplib::Response& res) {
      std::string map;
      std::optional<std::uint64_t> open_ms;
      const auto body = json::parse(req.body, nullptr, false);
      if (!body.is_discarded() && body.is_object()) {
        if (!body.contains("map") || !body["map"].is_string()) throw StoreError(StoreErrc::Malformed, "missing map");
        map = body["map"].get<std::string>();
        if (body.contains("open_ms")) open_ms = json_ms(body, "open_ms");
      } else {
        map = req.body;
        while (!map.empty() && (map.back() == '\n' || map.back() == '\r' || map.back() == ' ')) map.pop_back();
      }
      if (map.empty() || map.find_first_of("/\\.") != std::string::npos)
        throw StoreError(StoreErrc::Malformed, "invalid map name");
      if (!fs::exists(map_path(map))) throw StoreError(StoreErrc::Malformed, "unknown map: " + map);
      const std::string id = store.create(map, open_ms);
      send_json(res, 201, {{"session_id", id}});
    }));

    http.Get("/api/session/:id", wrap([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, info_json(store.info(id_of(req))));
    }));

    http.Post("/api/session/:id/video", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = id_of(req);
      store.info(id);
      if (!req.is_multipart_form_data()) throw StoreError(StoreErrc::Malformed, "video upload must be multipart");
      if (!req.has_file("start_ms")) throw StoreError(StoreErrc::Malformed, "missing start_ms");
      const std::uint64_t start = parse_field(req.get_file_value("start_ms").content, "start_ms");
      const std::string frames = req.has_file("frames") ? req.get_file_value("frames").content : std::string();
      const std::string index = req.has_file("index") ? req.get_file_value("index").content : std::string();
      const ParsedVideo v = parse_video_index(index, frames.size());
      const std::size_t stored = store.ingest_video(id, start, v.offsets, [&](std::size_t i) {
        const auto [at, len] = v.ranges[i];
        return decode_pgm(std::span(reinterpret_cast<const std::uint8_t*>(frames.data()) + at, len));
      });
      send_json(res, 200, {{"stored", stored}});
    }));

    http.Post("/api/session/:id/commands", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = id_of(req);
      std::size_t stored = 0;
      if (req.get_header_value("Content-Type") == "application/octet-stream") {
        if (req.body.size() % protocol::kPacketSize != 0)
          throw StoreError(StoreErrc::Malformed, "packet stream length is not a multiple of 19");
        protocol::CommandBatch batch;
        const auto* bytes = reinterpret_cast<const std::uint8_t*>(req.body.data());
        for (std::size_t at = 0; at < req.body.size(); at += protocol::kPacketSize)
          batch.packets.push_back(protocol::decode_packet(std::span(bytes + at, protocol::kPacketSize)));
        stored = store.ingest_commands(id, batch);
      } else {
        const json body = json::parse(req.body);
        if (!body.is_array()) throw StoreError(StoreErrc::Malformed, "commands must be a JSON array of {t,x,y}");
        std::vector<datapipe::JoystickSample> samples;
        for (const auto& v : body) samples.push_back(sample_from(v));
        stored = store.ingest_commands(id, samples);
      }
      send_json(res, 200, {{"stored", stored}});
    }));

    http.Post("/api/session/:id/close", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = id_of(req);
      if (auto t = find_teleop(id)) t->close();
      else store.close(id);
      send_json(res, 200, info_json(store.info(id)));
    }));

    http.Post("/api/session/:id/join", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = id_of(req);
      std::shared_ptr<TeleopSession> t;
      {
        std::lock_guard lock(teleop_mu);
        auto& slot = teleop[id];
        if (!slot) {
          try {
            const SessionInfo info = store.info(id);
            TeleopOptions to;
            to.tick_ms = opt.tick_ms;
            slot = std::make_shared<TeleopSession>(store, id, sim::load_map_file(map_path(info.map_name).string()), to);
          } catch (...) {
            teleop.erase(id);
            throw;
          }
        }
        t = slot;
      }
      send_json(res, 200, {{"token", t->join()}, {"tick_ms", t->tick_ms()}});
    }));

    http.Post("/api/session/:id/leave", wrap([this](const httplib::Request& req, httplib::Response& res) {
      auto t = find_teleop(id_of(req));
      if (!t) throw StoreError(StoreErrc::Conflict, "no live controller");
      const json body = json::parse(req.body);
      t->leave(body.value("token", std::string()));
      send_json(res, 200, {{"ok", true}});
    }));

    http.Post("/api/session/:id/joystick", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = id_of(req);
      auto t = find_teleop(id);
      if (!t) {
        store.info(id);
        throw StoreError(StoreErrc::Conflict, "join the session before sending joystick input");
      }
      const json body = json::parse(req.body);
      std::string token = body.value("token", std::string());
      if (token.empty()) token = req.get_header_value("X-Controller-Token");
      const datapipe::JoystickSample s = sample_from(body);
      t->push_joystick(token, s);
      const Action a = datapipe::quantize_joystick(s);
      send_json(res, 200, {{"label", to_index(a)}, {"name", action_name(a)}});
    }));

    http.Get("/api/session/:id/status", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = id_of(req);
      const SessionInfo info = store.info(id);
      json j = info_json(info);
      const std::uint64_t now = clock();
      j["elapsed_ms"] = (info.state == SessionState::Live ? now : info.close_ms) - std::min(now, info.open_ms);
      if (auto t = find_teleop(id)) {
        const TeleopStatus s = t->status();
        j["teleop"] = {{"has_controller", s.has_controller},
                       {"pose", {{"x", s.pose.x}, {"y", s.pose.y}, {"heading", s.pose.heading}}},
                       {"action", to_index(s.action)},
                       {"collision", s.collision},
                       {"collisions", s.collisions},
                       {"ticks", s.ticks},
                       {"samples", s.samples},
                       {"last_tick_ms", s.last_tick_ms}};
      }
      send_json(res, 200, j);
    }));

    http.Get("/api/session/:id/frame", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = id_of(req);
      std::optional<datapipe::TimestampedFrame> f;
      if (auto t = find_teleop(id)) f = t->latest_frame();
      if (!f) f = store.latest_frame(id);
      if (!f) return send_error(res, 404, "no_frame", "session has no frames yet");
      const auto bytes = encode_pgm(f->image);
      res.set_header("X-Timestamp-Ms", std::to_string(f->timestamp_ms));
      res.set_content(std::string(bytes.begin(), bytes.end()), "image/x-portable-graymap");
    }));

    http.Get("/api/session/:id/predict", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = id_of(req);
      if (!opt.model) return send_error(res, 404, "no_model", "server was started without a model");
      std::optional<datapipe::TimestampedFrame> f;
      if (auto t = find_teleop(id)) f = t->latest_frame();
      if (!f) f = store.latest_frame(id);
      if (!f) return send_error(res, 404, "no_frame", "session has no frames yet");
      datapipe::PreprocessOptions pre;
      pre.width = opt.model->config.width;
      pre.height = opt.model->config.height;
      autopilot::InputBuilder inputs(opt.model->config, autopilot::InputMode::Auto, pre);
      const auto conf = cnn::predict(opt.model->params, opt.model->config, inputs.push(f->image));
      send_json(res, 200, {{"confidences", conf}, {"action", to_index(cnn::argmax(conf))}, {"timestamp_ms", f->timestamp_ms}});
    }));

    http.Get("/api/session/:id/export", wrap([this](const httplib::Request& req, httplib::Response& res) {
      send_export({id_of(req)}, req, res);
    }));

    http.Get("/api/export", wrap([this](const httplib::Request& req, httplib::Response& res) {
      std::vector<std::string> ids;
      std::stringstream ss(req.get_param_value("sessions"));
      std::string id;
      while (std::getline(ss, id, ',')) {
        if (!id.empty()) ids.push_back(id);
      }
      send_export(ids, req, res);
    }));

    http.Get("/api/quantizer", wrap([](const httplib::Request&, httplib::Response& res) {
      json labels = json::array();
      for (Action a : kAllActions) labels.push_back({{"label", to_index(a)}, {"name", action_name(a)}});
      send_json(res, 200,
                {{"stop_radius", datapipe::kSectors.stop_radius},
                 {"full_radius", datapipe::kSectors.full_radius},
                 {"cone_degrees", datapipe::kSectors.cone_degrees},
                 {"x_axis", "right positive"},
                 {"y_axis", "forward positive"},
                 {"labels", labels}});
    }));

    http.Get("/api/quantize", wrap([](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_param("x") || !req.has_param("y")) throw StoreError(StoreErrc::Malformed, "need x and y");
      auto num = [&](const char* k) {
        const std::string v = req.get_param_value(k);
        double d = 0.0;
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
        if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(d))
          throw StoreError(StoreErrc::Malformed, std::string("bad number ") + k + "=" + v);
        return d;
      };
      const Action a = datapipe::quantize_joystick({num("x"), num("y"), 0});
      send_json(res, 200, {{"label", to_index(a)}, {"name", action_name(a)}});
    }));
  }

  void tick_all(std::uint64_t now) {
    std::vector<std::shared_ptr<TeleopSession>> live;
    {
      std::lock_guard lock(teleop_mu);
      for (auto& [id, t] : teleop) live.push_back(t);
    }
    for (auto& t : live) {
      try {
        t->tick(now);
      } catch (const std::exception&) {
        // a closed or failing session stops ticking; the error surfaces on its next request
      }
    }
  }

  void ticker() {
    // fixed-rate schedule so render time does not accumulate as drift
    std::unique_lock lock(tick_mu);
    auto next = std::chrono::steady_clock::now();
    while (!stopping) {
      next += std::chrono::milliseconds(opt.tick_ms);
      if (tick_cv.wait_until(lock, next, [this] { return stopping.load(); })) break;
      lock.unlock();
      tick_all(clock());
      lock.lock();
    }
  }
};

ApiServer::ApiServer(ServerOptions options, Clock clock) : impl_(std::make_unique<Impl>(std::move(options), clock)) {}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->http.bind_to_any_port(host);
  return impl_->http.bind_to_port(host, port) ? port : -1;
}

void ApiServer::run() {
  std::thread ticker;
  if (impl_->opt.run_ticker) ticker = std::thread([this] { impl_->ticker(); });
  impl_->http.listen_after_bind();
  {
    std::lock_guard lock(impl_->tick_mu);
    impl_->stopping = true;
  }
  impl_->tick_cv.notify_all();
  if (ticker.joinable()) ticker.join();
}

void ApiServer::stop() {
  {
    std::lock_guard lock(impl_->tick_mu);
    impl_->stopping = true;
  }
  impl_->tick_cv.notify_all();
  impl_->http.stop();
}

void ApiServer::wait_until_ready() const { impl_->http.wait_until_ready(); }

void ApiServer::tick_all(std::uint64_t now_ms) { impl_->tick_all(now_ms); }

SessionStore& ApiServer::store() { return impl_->store; }

}  // namespace deskpilot::server
