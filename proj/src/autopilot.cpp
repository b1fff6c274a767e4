#include "deskpilot/autopilot.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "deskpilot/imaging.hpp"
#include "deskpilot/rng.hpp"

namespace deskpilot::autopilot {

InputMode resolve_input_mode(InputMode mode, int channels) {
  if (mode == InputMode::Auto) {
    if (channels == 1) return InputMode::Single;
    if (channels == 2) return InputMode::Canny;
    return InputMode::Stack;
  }
  const bool ok = (mode == InputMode::Single && channels == 1) || (mode == InputMode::Canny && channels == 2) ||
                  (mode == InputMode::Stack && channels >= 1);
  if (!ok) throw ShapeError("input mode does not match a model with " + std::to_string(channels) + " channels");
  return mode;
}

InputBuilder::InputBuilder(const cnn::ModelConfig& config, InputMode mode,
                           const datapipe::PreprocessOptions& preprocess)
    : channels_(config.channels), mode_(resolve_input_mode(mode, config.channels)), preprocess_(preprocess) {
  if (preprocess.width != config.width || preprocess.height != config.height)
    throw ShapeError("preprocessing yields " + std::to_string(preprocess.height) + "x" +
                     std::to_string(preprocess.width) + " but the model expects " + std::to_string(config.height) +
                     "x" + std::to_string(config.width));
}

Tensor InputBuilder::push(const GrayImage& raw_frame) {
  const GrayImage frame = datapipe::preprocess_frame(raw_frame, preprocess_);
  Tensor single = datapipe::image_to_tensor(frame);
  const int h = single.dim(1);
  const int w = single.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  switch (mode_) {
    case InputMode::Single:
      return single;
    case InputMode::Canny: {
      Tensor t({2, h, w});
      std::copy(single.data(), single.data() + plane, t.data());
      const GrayImage edges = imaging::canny(frame);
      const auto px = edges.pixels();
      for (std::size_t i = 0; i < plane; ++i) t[plane + i] = px[i] / 255.0;
      return t;
    }
    case InputMode::Stack:
    case InputMode::Auto:
      break;
  }
  if (history_.empty()) history_.assign(static_cast<std::size_t>(channels_), single);
  else {
    history_.pop_front();
    history_.push_back(std::move(single));
  }
  Tensor t({channels_, h, w});
  for (int c = 0; c < channels_; ++c) std::copy(history_[c].data(), history_[c].data() + plane, t.data() + c * plane);
  return t;
}

DriveReport drive(const cnn::Model& model, const sim::WorldMap& map, const sim::CarState& start,
                  const DriveOptions& opt) {
  const cnn::ModelConfig& cfg = model.config;
  cfg.validate();
  if (opt.steps < 0) throw std::invalid_argument("drive: steps must be >= 0");
  if (!(opt.rate_hz > 0.0)) throw std::invalid_argument("drive: rate_hz must be positive");
  InputBuilder inputs(cfg, opt.input, opt.preprocess);

  DriveReport r;
  r.rate_hz = opt.rate_hz;
  r.seed = opt.seed;
  r.start = start;
  r.log.reserve(static_cast<std::size_t>(opt.steps));
  const double dt = 1.0 / opt.rate_hz;
  sim::CarState s = start;
  for (int i = 0; i < opt.steps; ++i) {
    const Tensor input = inputs.push(sim::render(map, s, opt.render));
    StepLog entry;
    entry.step = i;
    entry.confidences = cnn::predict(model.params, cfg, input);
    const Action wanted = cnn::argmax(entry.confidences);
    const auto stamp = static_cast<std::uint64_t>(std::llround(i * 1000.0 / opt.rate_hz));
    entry.packet = protocol::encode_packet(protocol::action_to_motors(wanted, stamp));
    entry.action = protocol::motors_to_action(protocol::decode_packet(entry.packet));

    const sim::StepResult res = sim::step(map, s, entry.action, dt);
    entry.collision = res.collision;
    r.collisions += res.collision ? 1 : 0;
    r.distance_m += std::hypot(res.state.x - s.x, res.state.y - s.y);
    s = res.state;
    r.log.push_back(entry);
  }
  r.steps = opt.steps;
  r.elapsed_s = opt.steps / opt.rate_hz;
  r.end = s;
  return r;
}

std::vector<sim::CarState> sample_start_poses(const sim::WorldMap& map, int count, std::uint64_t seed) {
  std::vector<std::pair<int, int>> cells;
  for (int row = 1; row + 1 < map.rows(); ++row) {
    for (int col = 1; col + 1 < map.cols(); ++col) {
      bool clear = true;
      for (int dr = -1; dr <= 1 && clear; ++dr)
        for (int dc = -1; dc <= 1 && clear; ++dc) clear = map.cell(col + dc, row + dr) == sim::Cell::Free;
      if (clear) cells.emplace_back(col, row);
    }
  }
  if (cells.empty()) throw std::invalid_argument("sample_start_poses: map has no cell with free neighbours");

  Rng rng(seed);
  const double jitter_xy = 0.2 * map.cell_size();
  const double jitter_heading = 10.0 * std::numbers::pi / 180.0;
  std::vector<sim::CarState> poses;
  for (int k = 0; k < count; ++k) {
    const auto [col, row] = cells[rng.below(cells.size())];
    sim::CarState s;
    s.x = map.center_x(col) + rng.uniform(-jitter_xy, jitter_xy);
    s.y = map.center_y(row) + rng.uniform(-jitter_xy, jitter_xy);
    double best = -1.0;
    for (int q = 0; q < 4; ++q) {
      const double a = q * std::numbers::pi / 2.0;
      const double d = sim::ray_distance(map, s.x, s.y, a, 1e6);
      if (d > best) {
        best = d;
        s.heading = a;
      }
    }
    s.heading = sim::wrap_angle(s.heading + rng.uniform(-jitter_heading, jitter_heading));
    poses.push_back(s);
  }
  return poses;
}

namespace {

nlohmann::json pose_json(const sim::CarState& s) {
  return {{"x", s.x}, {"y", s.y}, {"heading", s.heading}};
}

std::string hex(const protocol::PacketBytes& b) {
  std::ostringstream o;
  o << std::hex << std::setfill('0');
  for (auto v : b) o << std::setw(2) << static_cast<int>(v);
  return o.str();
}

}  // namespace

std::string report_json(const DriveReport& r) {
  nlohmann::json j;
  j["steps"] = r.steps;
  j["collisions"] = r.collisions;
  j["distance_m"] = r.distance_m;
  j["elapsed_s"] = r.elapsed_s;
  j["rate_hz"] = r.rate_hz;
  j["seed"] = r.seed;
  j["start"] = pose_json(r.start);
  j["end"] = pose_json(r.end);
  auto& log = j["log"] = nlohmann::json::array();
  for (const auto& e : r.log) {
    log.push_back({{"step", e.step},
                   {"action", to_index(e.action)},
                   {"collision", e.collision},
                   {"packet", hex(e.packet)},
                   {"confidences", e.confidences}});
  }
  return j.dump(2) + "\n";
}

std::string action_log_csv(const DriveReport& r) {
  std::ostringstream o;
  o << "step,action,collision\n";
  for (const auto& e : r.log) o << e.step << ',' << to_index(e.action) << ',' << (e.collision ? 1 : 0) << '\n';
  return o.str();
}

}  // namespace deskpilot::autopilot
