#include "deskpilot/teleop.hpp"

#include <cmath>
#include <random>

namespace deskpilot::server {

TeleopSession::TeleopSession(SessionStore& store, std::string session_id, sim::WorldMap map, TeleopOptions options)
    : store_(store), id_(std::move(session_id)), map_(std::move(map)), options_(options) {
  if (options_.tick_ms == 0) throw std::invalid_argument("teleop: tick_ms must be positive");
  const SessionInfo info = store_.info(id_);
  if (info.state != SessionState::Live) throw StoreError(StoreErrc::SessionClosed, "session is closed: " + id_);
  status_.session_id = id_;
  status_.pose = sim::start_state(map_);
  status_.open_ms = info.open_ms;
}

std::string TeleopSession::join() {
  std::lock_guard lock(mu_);
  if (!status_.live) throw StoreError(StoreErrc::SessionClosed, "session is closed: " + id_);
  if (!token_.empty()) throw StoreError(StoreErrc::Conflict, "session already has a controller");
  std::random_device rd;
  token_ = std::to_string(rd()) + "-" + std::to_string(++token_counter_);
  status_.has_controller = true;
  return token_;
}

void TeleopSession::leave(const std::string& token) {
  std::lock_guard lock(mu_);
  if (token_.empty() || token != token_) throw StoreError(StoreErrc::Conflict, "not the controller of this session");
  token_.clear();
  status_.has_controller = false;
}

void TeleopSession::push_joystick(const std::string& token, const datapipe::JoystickSample& sample) {
  std::lock_guard lock(mu_);
  if (token_.empty() || token != token_) throw StoreError(StoreErrc::Conflict, "not the controller of this session");
  if (!(std::abs(sample.x) <= 1.0 && std::abs(sample.y) <= 1.0))
    throw StoreError(StoreErrc::Malformed, "joystick x and y must lie in [-1, 1]");
  store_.ingest_commands(id_, std::span(&sample, 1));
  latest_sample_ = sample;
  ++status_.samples;
}

void TeleopSession::tick(std::uint64_t now_ms) {
  std::lock_guard lock(mu_);
  if (!status_.live) return;
  const Action a = latest_sample_ ? datapipe::quantize_joystick(*latest_sample_) : Action::Stop;
  const sim::StepResult r = sim::step(map_, status_.pose, a, options_.tick_ms / 1000.0);
  status_.pose = r.state;
  status_.action = a;
  status_.collision = r.collision;
  datapipe::TimestampedFrame frame{sim::render(map_, r.state, options_.render), now_ms};
  store_.append_frame(id_, frame);
  if (r.collision) {
    ++status_.collisions;
    store_.log_event(id_, {now_ms, "collision"});
  }
  latest_frame_ = std::move(frame);
  ++status_.ticks;
  status_.last_tick_ms = now_ms;
}

void TeleopSession::close() {
  std::lock_guard lock(mu_);
  if (!status_.live) return;
  store_.close(id_);
  status_.live = false;
  token_.clear();
  status_.has_controller = false;
}

TeleopStatus TeleopSession::status() const {
  std::lock_guard lock(mu_);
  return status_;
}

std::optional<datapipe::TimestampedFrame> TeleopSession::latest_frame() const {
  std::lock_guard lock(mu_);
  return latest_frame_;
}

}  // namespace deskpilot::server
