#include "deskpilot/collect.hpp"

#include <cmath>

namespace deskpilot::server {

CollectResult collect_oracle(SessionStore& store, const std::string& map_name, const sim::WorldMap& map,
                             const CollectOptions& opt) {
  if (!(opt.seconds >= 0.0) || opt.tick_ms == 0 || !(opt.video_fps > 0.0))
    throw std::invalid_argument("collect: seconds >= 0, tick_ms > 0 and video_fps > 0 required");
  const auto duration_ms = static_cast<std::uint64_t>(std::llround(opt.seconds * 1000.0));
  const std::uint64_t ticks = (duration_ms + opt.tick_ms - 1) / opt.tick_ms;

  CollectResult result;
  result.session_id = store.create(map_name, opt.start_ms);
  const std::string& id = result.session_id;

  std::vector<sim::CarState> states;
  std::vector<datapipe::JoystickSample> samples;
  states.reserve(ticks);
  samples.reserve(ticks);
  sim::CarState s = sim::start_state(map);
  const double dt = opt.tick_ms / 1000.0;
  for (std::uint64_t k = 0; k < ticks; ++k) {
    const std::uint64_t t = opt.start_ms + k * opt.tick_ms;
    states.push_back(s);
    const Action a = sim::oracle_policy(map, s);
    samples.push_back(datapipe::joystick_for(a, t));
    const sim::StepResult r = sim::step(map, s, a, dt);
    if (r.collision) {
      ++result.collisions;
      store.log_event(id, {t, "collision"});
    }
    s = r.state;
  }

  std::vector<std::uint64_t> offsets;
  for (std::uint64_t i = 0;; ++i) {
    const auto o = static_cast<std::uint64_t>(std::llround(static_cast<double>(i) * 1000.0 / opt.video_fps));
    if (o >= duration_ms) break;
    offsets.push_back(o);
  }
  result.video_frames = offsets.size();
  result.stored_frames = store.ingest_video(id, opt.start_ms, offsets, [&](std::size_t i) {
    return sim::render(map, states[offsets[i] / opt.tick_ms], opt.render);
  });
  result.samples = store.ingest_commands(id, samples);
  store.close(id, opt.start_ms + duration_ms);
  return result;
}

}  // namespace deskpilot::server
