#include "deskpilot/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_map>

#include "deskpilot/rng.hpp"

namespace deskpilot::datapipe {

namespace fs = std::filesystem;

namespace {

std::uint64_t abs_diff(std::uint64_t a, std::uint64_t b) { return a > b ? a - b : b - a; }

void require_same_shape(const Dataset& d) {
  for (const auto& e : d.examples) {
    if (e.tensor.shape() != d.examples.front().tensor.shape())
      throw ShapeError("dataset: examples have mixed shapes");
  }
}

Dataset with_examples(const Dataset& like, std::vector<LabeledExample> examples) {
  Dataset out;
  out.meta = like.meta;
  out.examples = std::move(examples);
  return out;
}

}  // namespace

std::vector<std::size_t> select_slice_indices(std::span<const std::uint64_t> offsets, std::uint64_t interval_ms) {
  if (interval_ms == 0) throw std::invalid_argument("slice_video: interval must be positive");
  for (std::size_t i = 1; i < offsets.size(); ++i) {
    if (offsets[i] <= offsets[i - 1]) throw DataError("slice_video: frame offsets must be strictly increasing");
  }
  std::vector<std::size_t> picked;
  if (offsets.empty()) return picked;

  const std::uint64_t last = offsets.back();
  std::size_t j = 0;  // first frame with offset >= tick
  for (std::uint64_t tick = 0; tick <= last; tick += interval_ms) {
    while (j < offsets.size() && offsets[j] < tick) ++j;
    std::size_t best = j;
    if (j == offsets.size() || (j > 0 && abs_diff(offsets[j - 1], tick) <= abs_diff(offsets[j], tick))) best = j - 1;
    if (!picked.empty() && picked.back() >= best) continue;
    picked.push_back(best);
  }
  return picked;
}

std::vector<TimestampedFrame> slice_video(std::span<const RawVideoFrame> frames, std::uint64_t video_start_ms,
                                          std::uint64_t interval_ms) {
  std::vector<std::uint64_t> offsets;
  offsets.reserve(frames.size());
  for (const auto& f : frames) offsets.push_back(f.offset_ms);
  std::vector<TimestampedFrame> out;
  for (std::size_t i : select_slice_indices(offsets, interval_ms))
    out.push_back(TimestampedFrame{frames[i].image, video_start_ms + frames[i].offset_ms});
  return out;
}

Action quantize_joystick(const JoystickSample& s) {
  const double r = std::hypot(s.x, s.y);
  if (r < kSectors.stop_radius) return Action::Stop;
  if (r < kSectors.full_radius) return s.y >= 0.0 ? Action::SlightlyForwards : Action::SlightlyBackwards;
  constexpr double to_deg = 180.0 / std::numbers::pi;
  if (s.y >= 0.0) {
    const double theta = std::atan2(s.x, s.y) * to_deg;  // 0 = straight ahead, negative = left
    if (std::abs(theta) <= kSectors.cone_degrees) return Action::Forwards;
    return theta < 0.0 ? Action::ForwardsLeft : Action::ForwardsRight;
  }
  const double phi = std::atan2(s.x, -s.y) * to_deg;  // 0 = straight back
  if (std::abs(phi) <= kSectors.cone_degrees) return Action::Backwards;
  return phi < 0.0 ? Action::BackwardsLeft : Action::BackwardsRight;
}

JoystickSample joystick_for(Action a, std::uint64_t timestamp_ms) {
  constexpr double d = std::numbers::sqrt2 / 2.0;
  switch (a) {
    case Action::BackwardsLeft: return {-d, -d, timestamp_ms};
    case Action::Backwards: return {0.0, -1.0, timestamp_ms};
    case Action::BackwardsRight: return {d, -d, timestamp_ms};
    case Action::SlightlyForwards: return {0.0, 0.3, timestamp_ms};
    case Action::Stop: return {0.0, 0.0, timestamp_ms};
    case Action::SlightlyBackwards: return {0.0, -0.3, timestamp_ms};
    case Action::ForwardsLeft: return {-d, d, timestamp_ms};
    case Action::Forwards: return {0.0, 1.0, timestamp_ms};
    case Action::ForwardsRight: return {d, d, timestamp_ms};
  }
  return {0.0, 0.0, timestamp_ms};
}

std::vector<PairedFrame> pair(std::span<const TimestampedFrame> frames, std::span<const JoystickSample> samples,
                              std::uint64_t max_gap_ms) {
  for (std::size_t i = 1; i < frames.size(); ++i)
    if (frames[i].timestamp_ms < frames[i - 1].timestamp_ms) throw DataError("pair: frames not sorted by timestamp");
  for (std::size_t i = 1; i < samples.size(); ++i)
    if (samples[i].timestamp_ms < samples[i - 1].timestamp_ms) throw DataError("pair: samples not sorted by timestamp");

  std::vector<PairedFrame> out;
  if (samples.empty()) return out;
  std::size_t j = 0;  // first sample with t >= frame t
  for (const auto& f : frames) {
    const std::uint64_t t = f.timestamp_ms;
    while (j < samples.size() && samples[j].timestamp_ms < t) ++j;
    // The earliest sample at the nearest earlier timestamp wins ties.
    std::size_t best;
    if (j == samples.size()) {
      best = j - 1;
    } else if (j == 0) {
      best = 0;
    } else {
      best = abs_diff(samples[j - 1].timestamp_ms, t) <= abs_diff(samples[j].timestamp_ms, t) ? j - 1 : j;
    }
    while (best > 0 && samples[best - 1].timestamp_ms == samples[best].timestamp_ms) --best;
    if (abs_diff(samples[best].timestamp_ms, t) > max_gap_ms) continue;
    out.push_back(PairedFrame{f, quantize_joystick(samples[best]), best});
  }
  return out;
}

GrayImage preprocess_frame(const GrayImage& img, const PreprocessOptions& opts) {
  GrayImage out = imaging::resize(img, opts.width, opts.height);
  if (opts.equalize) out = imaging::equalize_hist(out);
  return out;
}

Tensor image_to_tensor(const GrayImage& img) {
  Tensor t({1, img.height(), img.width()});
  const auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) t[i] = px[i] / 255.0;
  return t;
}

GrayImage channel_to_image(const Tensor& t, int channel) {
  if (t.rank() != 3 || channel < 0 || channel >= t.dim(0)) throw ShapeError("channel_to_image: bad channel/shape");
  const int h = t.dim(1);
  const int w = t.dim(2);
  GrayImage img(w, h);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  auto px = img.pixels();
  for (std::size_t i = 0; i < plane; ++i) px[i] = clamp_to_byte(t[channel * plane + i] * 255.0);
  return img;
}

Dataset build_dataset(std::span<const PairedFrame> pairs, const PreprocessOptions& opts) {
  Dataset d;
  d.meta.channels = 1;
  d.meta.height = opts.height;
  d.meta.width = opts.width;
  d.meta.params["equalize"] = opts.equalize ? "1" : "0";
  d.examples.reserve(pairs.size());
  for (const auto& p : pairs) {
    d.examples.push_back(LabeledExample{image_to_tensor(preprocess_frame(p.frame.image, opts)), p.label,
                                        p.frame.timestamp_ms, p.frame.timestamp_ms});
  }
  return d;
}

std::array<std::size_t, kActionCount> class_counts(const Dataset& d) {
  std::array<std::size_t, kActionCount> counts{};
  for (const auto& e : d.examples) ++counts[to_index(e.label)];
  return counts;
}

Dataset balance_by_duplication(const Dataset& d) {
  if (d.empty()) throw DataError("balance_by_duplication: empty dataset");
  std::array<std::vector<std::size_t>, kActionCount> by_class;
  for (std::size_t i = 0; i < d.examples.size(); ++i) by_class[to_index(d.examples[i].label)].push_back(i);
  std::size_t target = 0;
  for (const auto& members : by_class) target = std::max(target, members.size());

  Dataset out = d;
  for (const auto& members : by_class) {
    if (members.empty()) continue;
    for (std::size_t k = members.size(); k < target; ++k) out.examples.push_back(d.examples[members[k % members.size()]]);
  }
  out.meta.params["balanced"] = "1";
  return out;
}

Dataset stack_frames(const Dataset& single, int n, std::uint64_t interval_ms) {
  if (n < 1) throw std::invalid_argument("stack_frames: n must be >= 1");
  Dataset out;
  out.meta = single.meta;
  out.meta.channels = n;
  out.meta.params["stack"] = std::to_string(n);
  if (single.examples.size() < static_cast<std::size_t>(n)) return out;
  if (single.meta.channels != 1) throw ShapeError("stack_frames: input must be single-channel");
  require_same_shape(single);
  for (std::size_t i = 1; i < single.examples.size(); ++i) {
    if (single.examples[i].timestamp_ms <= single.examples[i - 1].timestamp_ms)
      throw DataError("stack_frames: frames must be strictly increasing in time");
  }

  const int h = single.examples.front().tensor.dim(1);
  const int w = single.examples.front().tensor.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::uint64_t max_span = static_cast<std::uint64_t>(n) * interval_ms + interval_ms;
  for (std::size_t last = static_cast<std::size_t>(n) - 1; last < single.examples.size(); ++last) {
    const std::size_t first = last + 1 - static_cast<std::size_t>(n);
    const auto& newest = single.examples[last];
    if (newest.timestamp_ms - single.examples[first].timestamp_ms > max_span) continue;
    Tensor t({n, h, w});
    for (int c = 0; c < n; ++c) {
      const auto& src = single.examples[first + static_cast<std::size_t>(c)].tensor;
      std::copy(src.data(), src.data() + plane, t.data() + c * plane);
    }
    out.examples.push_back(LabeledExample{std::move(t), newest.label, newest.timestamp_ms, newest.origin_id});
  }
  return out;
}

Dataset add_canny_channel(const Dataset& d, const imaging::CannyParams& params) {
  if (d.meta.channels != 1) throw ShapeError("add_canny_channel: dataset must have C=1");
  Dataset out;
  out.meta = d.meta;
  out.meta.channels = 2;
  out.meta.params["canny"] = "1";
  out.examples.reserve(d.size());
  for (const auto& e : d.examples) {
    if (e.tensor.rank() != 3 || e.tensor.dim(0) != 1) throw ShapeError("add_canny_channel: example must have C=1");
    const int h = e.tensor.dim(1);
    const int w = e.tensor.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const GrayImage edges = imaging::canny(channel_to_image(e.tensor, 0), params);
    Tensor t({2, h, w});
    std::copy(e.tensor.data(), e.tensor.data() + plane, t.data());
    const auto px = edges.pixels();
    for (std::size_t i = 0; i < plane; ++i) t[plane + i] = px[i] / 255.0;
    out.examples.push_back(LabeledExample{std::move(t), e.label, e.timestamp_ms, e.origin_id});
  }
  return out;
}

Dataset augment_flip(const Dataset& d) {
  Dataset out = d;
  for (const auto& e : d.examples) {
    Tensor t = e.tensor;
    const int c = t.dim(0);
    const int h = t.dim(1);
    const int w = t.dim(2);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          t[(static_cast<std::size_t>(ch) * h + y) * w + x] = e.tensor[(static_cast<std::size_t>(ch) * h + y) * w + (w - 1 - x)];
    out.examples.push_back(LabeledExample{std::move(t), mirror(e.label), e.timestamp_ms, e.origin_id});
  }
  out.meta.params["flip"] = "1";
  return out;
}

Split split(const Dataset& d, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("split: fraction must be in (0,1)");
  std::vector<std::uint64_t> groups;
  std::unordered_map<std::uint64_t, std::size_t> group_size;
  for (const auto& e : d.examples) {
    if (group_size[e.origin_id]++ == 0) groups.push_back(e.origin_id);
  }
  Rng rng(seed);
  rng.shuffle(std::span(groups));

  const auto target = static_cast<std::size_t>(round_half_up(static_cast<double>(d.size()) * test_fraction));
  std::set<std::uint64_t> test_groups;
  std::size_t taken = 0;
  for (auto g : groups) {
    if (taken >= target) break;
    test_groups.insert(g);
    taken += group_size[g];
  }

  Split s;
  s.train.meta = d.meta;
  s.test.meta = d.meta;
  for (const auto& e : d.examples) (test_groups.count(e.origin_id) ? s.test : s.train).examples.push_back(e);
  return s;
}

Dataset unique_origins(const Dataset& d) {
  std::set<std::uint64_t> seen;
  std::vector<LabeledExample> kept;
  for (const auto& e : d.examples)
    if (seen.insert(e.origin_id).second) kept.push_back(e);
  return with_examples(d, std::move(kept));
}

Dataset concat(std::span<const Dataset> parts) {
  Dataset out;
  bool first = true;
  for (const auto& p : parts) {
    if (p.empty()) continue;
    if (first) {
      out.meta = p.meta;
      first = false;
    } else if (p.meta.channels != out.meta.channels || p.meta.height != out.meta.height || p.meta.width != out.meta.width) {
      throw ShapeError("concat: datasets have different shapes");
    }
    out.examples.insert(out.examples.end(), p.examples.begin(), p.examples.end());
  }
  return out;
}

Dataset sorted_by_timestamp(const Dataset& d) {
  Dataset out = d;
  std::stable_sort(out.examples.begin(), out.examples.end(),
                   [](const LabeledExample& a, const LabeledExample& b) { return a.timestamp_ms < b.timestamp_ms; });
  return out;
}

void export_dataset(const Dataset& d, const fs::path& dir) {
  if (fs::exists(dir) && !fs::is_empty(dir)) throw DataError("export_dataset: directory not empty: " + dir.string());
  fs::create_directories(dir);
  if (!d.empty()) require_same_shape(d);

  const Dataset sorted = sorted_by_timestamp(d);
  std::ofstream labels(dir / "labels.csv", std::ios::binary);
  labels << "timestamp_ms,label\n";
  std::unordered_map<std::uint64_t, const Tensor*> written;
  for (const auto& e : sorted.examples) {
    const auto [it, fresh] = written.emplace(e.timestamp_ms, &e.tensor);
    if (!fresh && *it->second != e.tensor)
      throw DataError("export_dataset: different images share timestamp " + std::to_string(e.timestamp_ms));
  }
  for (const auto& e : sorted.examples) {
    labels << e.timestamp_ms << ',' << to_index(e.label) << '\n';
    if (written.at(e.timestamp_ms) != &e.tensor) continue;
    for (int c = 0; c < e.tensor.dim(0); ++c)
      write_pgm(dir / (std::to_string(e.timestamp_ms) + "_" + std::to_string(c) + ".pgm"), channel_to_image(e.tensor, c));
  }
  if (!labels) throw DataError("export_dataset: failed writing labels.csv");

  const int channels = d.empty() ? d.meta.channels : d.examples.front().tensor.dim(0);
  const int height = d.empty() ? d.meta.height : d.examples.front().tensor.dim(1);
  const int width = d.empty() ? d.meta.width : d.examples.front().tensor.dim(2);
  std::ofstream meta(dir / "meta.txt", std::ios::binary);
  meta << "channels=" << channels << "\nheight=" << height << "\nwidth=" << width << '\n';
  for (const auto& [k, v] : d.meta.params) meta << "param." << k << '=' << v << '\n';
}

Dataset import_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("import_dataset: not a directory: " + dir.string());
  Dataset d;
  {
    std::ifstream meta(dir / "meta.txt");
    std::string line;
    while (std::getline(meta, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      if (key == "channels") d.meta.channels = std::stoi(value);
      else if (key == "height") d.meta.height = std::stoi(value);
      else if (key == "width") d.meta.width = std::stoi(value);
      else if (key.rfind("param.", 0) == 0) d.meta.params[key.substr(6)] = value;
    }
  }

  std::ifstream labels(dir / "labels.csv");
  if (!labels) throw DataError("import_dataset: missing labels.csv");
  std::string line;
  std::getline(labels, line);  // header
  std::set<std::uint64_t> labelled;
  std::unordered_map<std::uint64_t, Tensor> cache;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::uint64_t ts = 0;
    char comma = 0;
    int label = -1;
    if (!(row >> ts >> comma >> label) || comma != ',' || !action_from_index(label))
      throw DataError("import_dataset: malformed label row: " + line);
    labelled.insert(ts);
    auto it = cache.find(ts);
    if (it == cache.end()) {
      const int channels = std::max(1, d.meta.channels);
      std::vector<GrayImage> planes;
      for (int c = 0; c < channels; ++c) {
        const fs::path p = dir / (std::to_string(ts) + "_" + std::to_string(c) + ".pgm");
        if (!fs::exists(p)) throw DataError("import_dataset: missing image for timestamp " + std::to_string(ts));
        planes.push_back(read_pgm(p));
      }
      const int h = planes.front().height();
      const int w = planes.front().width();
      Tensor t({channels, h, w});
      const std::size_t plane = static_cast<std::size_t>(h) * w;
      for (int c = 0; c < channels; ++c) {
        if (planes[c].width() != w || planes[c].height() != h)
          throw ShapeError("import_dataset: channel size mismatch at timestamp " + std::to_string(ts));
        const auto px = planes[c].pixels();
        for (std::size_t i = 0; i < plane; ++i) t[c * plane + i] = px[i] / 255.0;
      }
      it = cache.emplace(ts, std::move(t)).first;
    }
    d.examples.push_back(LabeledExample{it->second, static_cast<Action>(label), ts, ts});
  }

  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".pgm") continue;
    const std::string stem = entry.path().stem().string();
    const auto us = stem.find('_');
    const std::uint64_t ts = std::stoull(stem.substr(0, us));
    if (!labelled.count(ts)) throw DataError("import_dataset: image without label row for timestamp " + std::to_string(ts));
  }
  if (!d.empty()) {
    d.meta.channels = d.examples.front().tensor.dim(0);
    d.meta.height = d.examples.front().tensor.dim(1);
    d.meta.width = d.examples.front().tensor.dim(2);
  }
  return d;
}

}  // namespace deskpilot::datapipe
