#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "deskpilot/cnn.hpp"
#include "deskpilot/datapipe.hpp"
#include "deskpilot/protocol.hpp"
#include "deskpilot/sim.hpp"

namespace deskpilot::autopilot {

/// How the model's input channels are built from rendered frames.
enum class InputMode {
  Auto,    // C=1 single, C=2 image + canny, otherwise a stack of C frames
  Single,
  Canny,
  Stack,
};

struct DriveOptions {
  int steps = 500;
  double rate_hz = 4.0;
  std::uint64_t seed = 1;
  sim::RenderConfig render;
  datapipe::PreprocessOptions preprocess;
  InputMode input = InputMode::Auto;
};

struct StepLog {
  int step = 0;
  Action action = Action::Stop;
  bool collision = false;
  protocol::PacketBytes packet{};
  std::array<double, kActionCount> confidences{};

  friend bool operator==(const StepLog&, const StepLog&) = default;
};

struct DriveReport {
  int steps = 0;
  int collisions = 0;
  double distance_m = 0.0;
  double elapsed_s = 0.0;
  double rate_hz = 0.0;
  std::uint64_t seed = 0;
  sim::CarState start;
  sim::CarState end;
  std::vector<StepLog> log;

  friend bool operator==(const DriveReport&, const DriveReport&) = default;
};

/// Turns raw camera frames into model inputs exactly as training did. Stacked
/// models get a rolling buffer, padded with the first frame at start.
class InputBuilder {
 public:
  InputBuilder(const cnn::ModelConfig& config, InputMode mode, const datapipe::PreprocessOptions& preprocess);

  Tensor push(const GrayImage& raw_frame);
  InputMode mode() const { return mode_; }

 private:
  int channels_;
  InputMode mode_;
  datapipe::PreprocessOptions preprocess_;
  std::deque<Tensor> history_;
};

/// Per step: render, preprocess exactly as in training, predict, argmax, encode
/// the motor packet, decode it and apply the decoded action for 1/rate_hz.
/// Throws ShapeError when the model input does not match the preprocessing.
DriveReport drive(const cnn::Model& model, const sim::WorldMap& map, const sim::CarState& start,
                  const DriveOptions& options);

/// The concrete mode Auto stands for, checked against the model channel count.
InputMode resolve_input_mode(InputMode mode, int channels);

/// Seeded start poses on free cells whose 8 neighbours are free, heading along
/// the longest open cardinal direction with a little jitter.
std::vector<sim::CarState> sample_start_poses(const sim::WorldMap& map, int count, std::uint64_t seed);

std::string report_json(const DriveReport& r);
std::string action_log_csv(const DriveReport& r);

}  // namespace deskpilot::autopilot
