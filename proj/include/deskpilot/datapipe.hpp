#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "deskpilot/action.hpp"
#include "deskpilot/image.hpp"
#include "deskpilot/imaging.hpp"
#include "deskpilot/tensor.hpp"

namespace deskpilot::datapipe {

struct TimestampedFrame {
  GrayImage image;
  std::uint64_t timestamp_ms = 0;
};

struct RawVideoFrame {
  GrayImage image;
  std::uint64_t offset_ms = 0;  // time since the start of the video
};

struct JoystickSample {
  double x = 0.0;  // right positive
  double y = 0.0;  // forward positive
  std::uint64_t timestamp_ms = 0;

  friend bool operator==(const JoystickSample&, const JoystickSample&) = default;
};

struct LabeledExample {
  Tensor tensor;  // C x H x W, values in [0, 1]
  Action label = Action::Stop;
  std::uint64_t timestamp_ms = 0;
  // Shared by every duplicate of one recorded example; splits never separate them.
  std::uint64_t origin_id = 0;

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

struct DatasetMeta {
  int channels = 1;
  int height = 0;
  int width = 0;
  std::map<std::string, std::string> params;

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct Dataset {
  std::vector<LabeledExample> examples;
  DatasetMeta meta;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t kDefaultSliceIntervalMs = 250;
inline constexpr std::uint64_t kDefaultMaxGapMs = 500;
inline constexpr int kDefaultStackSize = 10;

// ---- slicing --------------------------------------------------------------

/// Indices of the frames picked for ticks 0, interval, 2*interval, ... up to the
/// last offset. Nearest offset wins, ties go to the earlier frame, and a frame
/// already taken by the previous tick is not reused.
std::vector<std::size_t> select_slice_indices(std::span<const std::uint64_t> offsets,
                                              std::uint64_t interval_ms = kDefaultSliceIntervalMs);

std::vector<TimestampedFrame> slice_video(std::span<const RawVideoFrame> frames, std::uint64_t video_start_ms,
                                          std::uint64_t interval_ms = kDefaultSliceIntervalMs);

// ---- labels ---------------------------------------------------------------

struct SectorGeometry {
  double stop_radius = 0.15;
  double full_radius = 0.5;
  double cone_degrees = 30.0;
};

inline constexpr SectorGeometry kSectors{};

Action quantize_joystick(const JoystickSample& s);

/// A canonical stick position inside the sector for `a`.
JoystickSample joystick_for(Action a, std::uint64_t timestamp_ms);

struct PairedFrame {
  TimestampedFrame frame;
  Action label = Action::Stop;
  std::size_t sample_index = 0;
};

/// Nearest-timestamp matching (either direction, ties to the earlier sample);
/// frames with no sample within `max_gap_ms` are dropped.
std::vector<PairedFrame> pair(std::span<const TimestampedFrame> frames, std::span<const JoystickSample> samples,
                              std::uint64_t max_gap_ms = kDefaultMaxGapMs);

// ---- tensors --------------------------------------------------------------

struct PreprocessOptions {
  int width = 64;
  int height = 48;
  bool equalize = true;
};

/// resize -> (equalize) : the exact transform applied at train and drive time.
GrayImage preprocess_frame(const GrayImage& img, const PreprocessOptions& opts);

/// Bytes / 255 into a 1 x H x W tensor.
Tensor image_to_tensor(const GrayImage& img);
GrayImage channel_to_image(const Tensor& t, int channel);

Dataset build_dataset(std::span<const PairedFrame> pairs, const PreprocessOptions& opts);

// ---- dataset transforms ---------------------------------------------------

std::array<std::size_t, kActionCount> class_counts(const Dataset& d);

Dataset balance_by_duplication(const Dataset& d);

/// Sliding windows of n single-channel examples (oldest -> newest channels);
/// windows spanning more than n*interval + interval are skipped.
Dataset stack_frames(const Dataset& single, int n = kDefaultStackSize,
                     std::uint64_t interval_ms = kDefaultSliceIntervalMs);

Dataset add_canny_channel(const Dataset& d, const imaging::CannyParams& params = {});

/// Mirror every image and swap left/right labels; appended after the originals.
/// Copies keep their timestamps, so the result is for training, not export.
Dataset augment_flip(const Dataset& d);

struct Split {
  Dataset train;
  Dataset test;
};

/// Seeded permutation over origin groups; groups are moved to the test side
/// until it holds round(N * test_fraction) examples.
Split split(const Dataset& d, double test_fraction, std::uint64_t seed);

/// First example of each origin, in order.
Dataset unique_origins(const Dataset& d);

Dataset concat(std::span<const Dataset> parts);

// ---- files ----------------------------------------------------------------

/// `<timestamp>_<channel>.pgm` per image, `labels.csv` (timestamp_ms,label,
/// sorted) and `meta.txt`. The directory must be absent or empty. Examples that
/// share a timestamp must carry the same tensor (duplicates share one file).
void export_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset import_dataset(const std::filesystem::path& dir);

/// Stable sort by timestamp, the order export writes rows in.
Dataset sorted_by_timestamp(const Dataset& d);

}  // namespace deskpilot::datapipe
