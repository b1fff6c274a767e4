// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <string>

#include "deskpilot/autopilot.hpp"
#include "deskpilot/collect.hpp"
#include "deskpilot/imaging.hpp"
#include "deskpilot/model_io.hpp"
#include "deskpilot/protocol.hpp"
#include "deskpilot/rng.hpp"
#include "deskpilot/store.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace deskpilot;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failed = 0;

void report(const char* name, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
  std::fflush(stdout);
  g_failed += !o.pass;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

constexpr std::uint64_t kSeed = 1;
constexpr int kEpochs = 20;
constexpr double kTestFraction = 0.33;

// Shared state built by the end-to-end run and reused by later criteria.
struct Pipeline {
  testing::TempDir dir;
  std::unique_ptr<server::SessionStore> store;
  std::string session;
  datapipe::Dataset exported;
  datapipe::Split split;
  cnn::Model model;
  bool trained = false;
};

cnn::TrainOptions train_options(int epochs) {
  cnn::TrainOptions o;
  o.epochs = epochs;
  o.seed = kSeed;
  return o;
}

cnn::ModelConfig config_for(const datapipe::Dataset& d) {
  cnn::ModelConfig c;
  c.channels = d.meta.channels;
  c.height = d.meta.height;
  c.width = d.meta.width;
  return c;
}

// ---- criteria ---------------------------------------------------------------

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = testing::gradient_check(60, 2024, 1e-5);
  const double secs = seconds_since(t0);
  return {r.networks >= 50 && r.max_rel_error < 1e-4 && secs < 30.0,
          fmt("%d random networks, %zu coordinates, max relative error %.3g (< 1e-4), %.1f s (< 30 s)", r.networks,
              r.coordinates, r.max_rel_error, secs)};
}

Outcome end_to_end(Pipeline& p) {
  const auto t0 = std::chrono::steady_clock::now();
  p.store = std::make_unique<server::SessionStore>(p.dir / "store");
  const sim::WorldMap map = sim::load_map_file(testing::map_path("corners"));
  const auto collected = server::collect_oracle(*p.store, "corners", map, {});
  p.session = collected.session_id;

  server::ExportOptions eo;  // balance + equalize on, 64x48
  const std::vector<std::string> ids{p.session};
  const auto exported = server::export_sessions(*p.store, ids, eo, p.dir / "export");
  p.exported = datapipe::import_dataset(exported.dir);
  p.split = datapipe::split(p.exported, kTestFraction, kSeed);

  const cnn::ModelConfig cfg = config_for(p.exported);
  const auto trained = cnn::train(cfg, p.split.train, train_options(kEpochs));
  p.model = {cfg, trained.params};
  p.trained = true;
  cnn::save_model(p.model.params, cfg, p.dir / "model.ccnn");

  const double acc = cnn::evaluate(p.model.params, cfg, p.split.test).accuracy;
  const double acc_unique = cnn::evaluate(p.model.params, cfg, datapipe::unique_origins(p.split.test)).accuracy;
  const double secs = seconds_since(t0);
  return {acc >= 0.90 && secs < 600.0,
          fmt("collect %zu frames / %zu samples, export %zu rows, train %zu / test %zu, %d epochs; holdout accuracy "
              "%.4f (>= 0.90), unique-origin holdout %.4f, %.0f s (< 600 s)",
              collected.stored_frames, collected.samples, exported.total, p.split.train.size(), p.split.test.size(),
              kEpochs, acc, acc_unique, secs)};
}

Outcome class_balance(Pipeline& p) {
  if (!p.trained) return {false, "needs the end-to-end model"};
  const auto counts = datapipe::class_counts(p.exported);
  std::size_t top = 0;
  for (auto c : counts) top = std::max(top, c);
  bool equal = true;
  for (auto c : counts) equal = equal && (c == 0 || c == top);

  const auto raw = datapipe::class_counts(datapipe::unique_origins(p.exported));
  std::size_t raw_top = 0;
  for (auto c : raw) raw_top = std::max(raw_top, c);
  std::vector<Action> minority;
  for (Action a : kAllActions)
    if (raw[to_index(a)] > 0 && raw[to_index(a)] < raw_top) minority.push_back(a);
  if (minority.empty()) return {false, "export has no minority class"};

  const datapipe::Dataset plain_train = datapipe::unique_origins(p.split.train);
  const auto plain = cnn::train(p.model.config, plain_train, train_options(kEpochs));
  const datapipe::Dataset test = datapipe::unique_origins(p.split.test);
  const auto with = cnn::evaluate(p.model.params, p.model.config, test);
  const auto without = cnn::evaluate(plain.params, p.model.config, test);

  double r_with = 0.0, r_without = 0.0;
  std::string per_class;
  for (Action a : minority) {
    r_with += with.recall(a) / minority.size();
    r_without += without.recall(a) / minority.size();
    per_class += fmt(" %d:%.3f/%.3f", to_index(a), without.recall(a), with.recall(a));
  }
  std::string count_text;
  for (int c = 0; c < kActionCount; ++c)
    if (counts[c]) count_text += fmt(" %d:%zu", c, counts[c]);
  return {equal && r_without < r_with,
          fmt("balanced counts%s (equal: %s); minority recall without/with duplication%s; mean %.4f < %.4f",
              count_text.c_str(), equal ? "yes" : "no", per_class.c_str(), r_without, r_with)};
}

Outcome closed_loop(Pipeline& p) {
  if (!p.trained) return {false, "needs the end-to-end model"};
  const sim::WorldMap map = sim::load_map_file(testing::map_path("heldout"));
  const auto t0 = std::chrono::steady_clock::now();
  int clean = 0;
  std::string runs;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    autopilot::DriveOptions o;
    o.steps = 500;
    o.rate_hz = 4.0;
    o.seed = seed;
    const auto start = autopilot::sample_start_poses(map, 1, seed).front();
    const auto r = autopilot::drive(p.model, map, start, o);
    clean += r.collisions == 0;
    runs += fmt(" %d", r.collisions);
  }
  const double secs = seconds_since(t0);
  return {clean >= 8 && secs < 60.0,
          fmt("heldout map, 10 starts x 500 steps at 4 Hz: %d/10 collision-free (>= 8), collisions per run:%s; %.1f s "
              "(< 60 s)",
              clean, runs.c_str(), secs)};
}

Outcome pairing() {
  Rng rng(77);
  std::size_t frames_total = 0, dropped = 0, mismatches = 0;
  for (int set = 0; set < 1000; ++set) {
    std::vector<datapipe::TimestampedFrame> frames;
    std::vector<datapipe::JoystickSample> samples;
    std::uint64_t t = rng.below(1000);
    for (std::size_t n = 1 + rng.below(40); n-- > 0;) frames.push_back({GrayImage(1, 1), t += rng.below(600)});
    t = rng.below(1000);
    for (std::size_t n = rng.below(40); n-- > 0;)
      samples.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), t += rng.below(900)});
    const auto got = datapipe::pair(frames, samples, 500);
    std::size_t k = 0;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      long best = -1;
      std::uint64_t best_d = 0;
      for (std::size_t s = 0; s < samples.size(); ++s) {
        const auto a = frames[f].timestamp_ms, b = samples[s].timestamp_ms;
        const std::uint64_t d = a > b ? a - b : b - a;
        if (best < 0 || d < best_d) best = static_cast<long>(s), best_d = d;
      }
      ++frames_total;
      if (best < 0 || best_d > 500) {
        ++dropped;
        continue;
      }
      const auto s = static_cast<std::size_t>(best);
      if (k >= got.size() || got[k].frame.timestamp_ms != frames[f].timestamp_ms || got[k].sample_index != s ||
          got[k].label != datapipe::quantize_joystick(samples[s]))
        ++mismatches;
      ++k;
    }
    if (k != got.size()) ++mismatches;
  }
  return {mismatches == 0 && dropped > 0,
          fmt("1000 random sets, %zu frames, %zu dropped at max_gap 500 ms, %zu mismatches", frames_total, dropped,
              mismatches)};
}

Outcome imaging_goldens() {
  std::vector<std::string> bad;
  const GrayImage flat(6, 4, 90);
  if (!(imaging::equalize_hist(flat) == flat)) bad.push_back("equalize constant");
  GrayImage half(4, 4, 0);
  for (int x = 0; x < 4; ++x) half.at(x, 2) = half.at(x, 3) = 255;
  if (!(imaging::equalize_hist(half) == half)) bad.push_back("equalize half/half");
  const GrayImage small(2, 2, std::vector<std::uint8_t>{10, 10, 20, 30});
  if (!(imaging::equalize_hist(small) == GrayImage(2, 2, std::vector<std::uint8_t>{0, 0, 128, 255})))
    bad.push_back("equalize 2x2");

  GrayImage step(32, 32, 0);
  for (int y = 0; y < 32; ++y)
    for (int x = 16; x < 32; ++x) step.at(x, y) = 255;
  const GrayImage e = imaging::canny(step, {1.0, 20.0, 60.0});
  std::set<int> cols;
  for (int y = 2; y < 30; ++y)
    for (int x = 2; x < 30; ++x)
      if (e.at(x, y)) cols.insert(x);
  if (cols.size() != 1) bad.push_back(fmt("canny step columns=%zu", cols.size()));
  for (const GrayImage& c : {flat, GrayImage(32, 32, 255)}) {
    const GrayImage ce = imaging::canny(c, {1.0, 20.0, 60.0});
    if (std::any_of(ce.pixels().begin(), ce.pixels().end(), [](auto v) { return v != 0; }))
      bad.push_back("canny constant not empty");
  }
  std::string detail = "3 equalize examples bit-exact; step edge columns {";
  for (int c : cols) detail += std::to_string(c);
  detail += "}; constant images give empty edge maps";
  for (const auto& b : bad) detail += "; failed " + b;
  return {bad.empty(), detail};
}

Outcome protocol_checks() {
  Rng rng(5);
  std::size_t roundtrip_bad = 0;
  for (int i = 0; i < 10000; ++i) {
    protocol::CommandPacket p;
    p.timestamp_ms = rng.next_u64();
    for (std::uint8_t m = 0; m < 3; ++m) {
      const auto dir = static_cast<protocol::Direction>(rng.below(3));
      const auto speed = dir == protocol::Direction::Release ? 0 : rng.below(256);
      p.commands[m] = {static_cast<std::uint8_t>(m + 1), dir, static_cast<std::uint8_t>(speed)};
    }
    roundtrip_bad += !(protocol::decode_packet(protocol::encode_packet(p)) == p);
  }
  const auto fixture = protocol::encode_packet(protocol::action_to_motors(Action::Stop, 0));
  std::size_t tried = 0, undetected = 0;
  for (std::size_t pos = 0; pos < fixture.size(); ++pos) {
    for (int v = 0; v < 256; ++v) {
      if (v == fixture[pos]) continue;
      auto b = fixture;
      b[pos] = static_cast<std::uint8_t>(v);
      ++tried;
      try {
        protocol::decode_packet(b);
        ++undetected;
      } catch (const protocol::ProtocolError&) {
      }
    }
  }
  return {roundtrip_bad == 0 && undetected == 0 && fixture[18] == 0x55,
          fmt("10000 round trips, %zu mismatches; %zu single-byte corruptions of the all-stop packet, %zu undetected",
              roundtrip_bad, tried, undetected)};
}

Outcome multi_frame(Pipeline& p) {
  if (!p.store) return {false, "needs the collected session"};
  // Window checks against the single-frame sequence they were cut from.
  const auto frames = p.store->frames(p.session);
  const auto samples = p.store->samples(p.session);
  const auto paired = datapipe::pair(frames, samples);
  const datapipe::Dataset single = datapipe::build_dataset(paired, {});
  const datapipe::Dataset stacked = datapipe::stack_frames(single, 10);
  std::size_t bad = 0, next = 9;
  for (const auto& ex : stacked.examples) {
    while (next < single.size() && single.examples[next].timestamp_ms != ex.timestamp_ms) ++next;
    if (next >= single.size()) {
      ++bad;
      break;
    }
    const auto& first = single.examples[next - 9];
    const auto& last = single.examples[next];
    const std::size_t plane = first.tensor.size();
    bool ok = ex.tensor.dim(0) == 10 && ex.label == last.label && last.timestamp_ms - first.timestamp_ms <= 2750;
    for (int c = 0; ok && c < 10; ++c)
      ok = std::equal(single.examples[next - 9 + c].tensor.values().begin(),
                      single.examples[next - 9 + c].tensor.values().end(), ex.tensor.values().begin() + c * plane);
    bad += !ok;
  }

  server::ExportOptions eo;
  eo.stack = 10;
  const std::vector<std::string> ids{p.session};
  const auto d = server::build_export(*p.store, ids, eo);
  const auto sp = datapipe::split(d, kTestFraction, kSeed);
  const datapipe::Dataset train = datapipe::unique_origins(sp.train);
  const cnn::ModelConfig cfg = config_for(d);
  const int epochs = 3;
  const cnn::Model m{cfg, cnn::train(cfg, train, train_options(epochs)).params};
  const double acc = cnn::evaluate(m.params, cfg, datapipe::unique_origins(sp.test)).accuracy;

  const sim::WorldMap map = sim::load_map_file(testing::map_path("heldout"));
  autopilot::DriveOptions o;
  o.steps = 500;
  const auto r = autopilot::drive(m, map, autopilot::sample_start_poses(map, 1, 1).front(), o);
  return {bad == 0 && !stacked.empty() && d.meta.channels == 10 && r.steps == 500,
          fmt("%zu windows checked (C=10, span <= 2750 ms, last-frame label), %zu bad; stacked model (%d epochs on %zu "
              "examples, holdout %.3f, not gated) drove %d steps, %d collisions",
              stacked.size(), bad, epochs, train.size(), acc, r.steps, r.collisions)};
}

Outcome determinism(Pipeline& p) {
  if (!p.trained) return {false, "needs the end-to-end data"};
  // A fixed slice of the training side keeps the double run short.
  datapipe::Dataset subset;
  subset.meta = p.split.train.meta;
  subset.examples.assign(p.split.train.examples.begin(),
                         p.split.train.examples.begin() + std::min<std::size_t>(600, p.split.train.size()));
  const cnn::ModelConfig cfg = config_for(subset);
  const auto a = cnn::train(cfg, subset, train_options(2));
  const auto b = cnn::train(cfg, subset, train_options(2));
  cnn::save_model(a.params, cfg, p.dir / "det_a.ccnn");
  cnn::save_model(b.params, cfg, p.dir / "det_b.ccnn");
  const bool files_equal = cnn::serialize_model(a.params, cfg) == cnn::serialize_model(b.params, cfg) &&
                           fs::file_size(p.dir / "det_a.ccnn") == fs::file_size(p.dir / "det_b.ccnn");

  const sim::WorldMap map = sim::load_map_file(testing::map_path("heldout"));
  autopilot::DriveOptions o;
  o.steps = 200;
  o.seed = 3;
  const auto start = autopilot::sample_start_poses(map, 1, o.seed).front();
  const auto r1 = autopilot::drive(p.model, map, start, o);
  const auto r2 = autopilot::drive(p.model, map, start, o);
  const bool reports_equal = r1 == r2 && autopilot::report_json(r1) == autopilot::report_json(r2);
  return {files_equal && reports_equal,
          fmt("two trainings (seed 1, %zu examples, 2 epochs): model files %s (%zu bytes); two drives: reports %s",
              subset.size(), files_equal ? "identical" : "DIFFER", static_cast<std::size_t>(fs::file_size(p.dir / "det_a.ccnn")),
              reports_equal ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  Pipeline p;
  report("gradient-oracle", gradients);
  report("imaging-goldens", imaging_goldens);
  report("protocol", protocol_checks);
  report("pairing-oracle", pairing);
  report("end-to-end-imitation", [&] { return end_to_end(p); });
  report("class-balance", [&] { return class_balance(p); });
  report("closed-loop-driving", [&] { return closed_loop(p); });
  report("multi-frame", [&] { return multi_frame(p); });
  report("determinism", [&] { return determinism(p); });
  std::printf("%d of 9 criteria failed\n", g_failed);
  return g_failed == 0 ? 0 : 1;
}
