// deskpilot command line: every subcommand is a thin composition of library calls.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deskpilot/autopilot.hpp"
#include "deskpilot/cnn.hpp"
#include "deskpilot/collect.hpp"
#include "deskpilot/datapipe.hpp"
#include "deskpilot/http_server.hpp"
#include "deskpilot/model_io.hpp"
#include "deskpilot/sim.hpp"
#include "deskpilot/store.hpp"

namespace fs = std::filesystem;
using namespace deskpilot;

namespace {

struct CliError : std::runtime_error {
  CliError(std::string c, const std::string& m) : std::runtime_error(m), code(std::move(c)) {}
  std::string code;
};

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

int fail(const std::string& code, const std::string& message) {
  std::cerr << "error: code=" << code << " message=" << quoted(message) << '\n';
  return 1;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw CliError("io", "cannot write " + path.string());
}

std::string map_name_of(const fs::path& p) { return p.stem().string(); }

// ---- serve -----------------------------------------------------------------

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = "data";
  std::string maps_dir = "fixtures/maps";
  std::uint64_t tick_ms = server::kDefaultTickMs;
  std::string model;
};

server::ApiServer* g_server = nullptr;

int run_serve(const ServeArgs& a) {
  server::ServerOptions o;
  o.data_dir = a.data_dir;
  o.maps_dir = a.maps_dir;
  o.tick_ms = a.tick_ms;
  if (!a.model.empty()) o.model = cnn::load_model(a.model);
  server::ApiServer srv(o);
  const int port = srv.bind(a.host, a.port);
  if (port < 0) throw CliError("io", "cannot bind " + a.host + ":" + std::to_string(a.port));
  std::cout << "listening on http://" << a.host << ":" << port << std::endl;
  g_server = &srv;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  srv.run();
  g_server = nullptr;
  return 0;
}

// ---- collect ---------------------------------------------------------------

struct CollectArgs {
  std::string map;
  bool oracle = false;
  double seconds = 600.0;
  std::string out;
  std::uint64_t start_ms = 1'000'000;
};

int run_collect(const CollectArgs& a) {
  if (!a.oracle) throw CliError("usage", "collect needs --oracle (the scripted driver is the only one available)");
  const sim::WorldMap map = sim::load_map_file(a.map);
  server::SessionStore store(a.out);
  server::CollectOptions o;
  o.seconds = a.seconds;
  o.start_ms = a.start_ms;
  const auto r = server::collect_oracle(store, map_name_of(a.map), map, o);
  std::cout << "session=" << r.session_id << " video_frames=" << r.video_frames << " stored_frames=" << r.stored_frames
            << " samples=" << r.samples << " collisions=" << r.collisions << '\n';
  return 0;
}

// ---- slice -----------------------------------------------------------------

struct SliceArgs {
  std::string frames;
  std::string index;
  std::uint64_t start_ms = 0;
  std::uint64_t interval_ms = datapipe::kDefaultSliceIntervalMs;
  std::string out;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CliError("io", "cannot read " + p.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_frames(const fs::path& dir, const std::vector<datapipe::TimestampedFrame>& frames) {
  if (fs::exists(dir) && !fs::is_empty(dir)) throw CliError("io", "output directory not empty: " + dir.string());
  fs::create_directories(dir);
  std::string csv = "timestamp_ms\n";
  for (const auto& f : frames) {
    write_pgm(dir / (std::to_string(f.timestamp_ms) + ".pgm"), f.image);
    csv += std::to_string(f.timestamp_ms) + "\n";
  }
  write_text(dir / "frames.csv", csv);
}

std::vector<datapipe::TimestampedFrame> read_frames(const fs::path& dir) {
  std::vector<datapipe::TimestampedFrame> out;
  std::istringstream csv(read_file(dir / "frames.csv"));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const std::uint64_t t = std::stoull(line);
    out.push_back({read_pgm(dir / (std::to_string(t) + ".pgm")), t});
  }
  return out;
}

int run_slice(const SliceArgs& a) {
  const std::string frames = read_file(a.frames);
  const auto v = server::parse_video_index(read_file(a.index), frames.size());
  std::vector<datapipe::RawVideoFrame> raw;
  for (std::size_t i = 0; i < v.offsets.size(); ++i) {
    const auto [at, len] = v.ranges[i];
    raw.push_back({decode_pgm(std::span(reinterpret_cast<const std::uint8_t*>(frames.data()) + at, len)), v.offsets[i]});
  }
  const auto sliced = datapipe::slice_video(raw, a.start_ms, a.interval_ms);
  write_frames(a.out, sliced);
  std::cout << "frames_in=" << raw.size() << " frames_out=" << sliced.size() << '\n';
  return 0;
}

// ---- pair ------------------------------------------------------------------

struct SourceArgs {
  std::string store;
  std::vector<std::string> sessions;
  std::string frames;
  std::string samples;
};

std::vector<datapipe::JoystickSample> read_samples(const fs::path& p) {
  std::vector<datapipe::JoystickSample> out;
  std::istringstream csv(read_file(p));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string t, x, y;
    if (!std::getline(row, t, ',') || !std::getline(row, x, ',') || !std::getline(row, y, ','))
      throw CliError("malformed_payload", "samples row needs timestamp_ms,x,y: " + line);
    out.push_back({std::stod(x), std::stod(y), std::stoull(t)});
  }
  return out;
}

struct PairArgs {
  SourceArgs src;
  std::uint64_t max_gap_ms = datapipe::kDefaultMaxGapMs;
  std::string out;
};

int run_pair(const PairArgs& a) {
  std::vector<datapipe::TimestampedFrame> frames;
  std::vector<datapipe::JoystickSample> samples;
  if (!a.src.store.empty()) {
    if (a.src.sessions.size() != 1) throw CliError("usage", "pair takes exactly one --session");
    server::SessionStore store(a.src.store);
    frames = store.frames(a.src.sessions.front());
    samples = store.samples(a.src.sessions.front());
  } else {
    if (a.src.frames.empty() || a.src.samples.empty())
      throw CliError("usage", "pair needs --store/--session or --frames/--samples");
    frames = read_frames(a.src.frames);
    samples = read_samples(a.src.samples);
  }
  const auto paired = datapipe::pair(frames, samples, a.max_gap_ms);
  datapipe::Dataset d;
  if (!paired.empty()) {
    datapipe::PreprocessOptions keep;
    keep.width = paired.front().frame.image.width();
    keep.height = paired.front().frame.image.height();
    keep.equalize = false;
    d = datapipe::build_dataset(paired, keep);
  }
  datapipe::export_dataset(d, a.out);
  if (paired.empty()) std::cerr << "warning: no frame had a joystick sample within " << a.max_gap_ms << " ms; dataset is empty\n";
  std::cout << "frames=" << frames.size() << " samples=" << samples.size() << " paired=" << paired.size() << '\n';
  return 0;
}

// ---- preprocess --------------------------------------------------------------

struct PreprocessArgs {
  SourceArgs src;
  std::string dataset;
  std::string out;
  server::ExportOptions opt;
  bool no_resize = false;
  bool no_equalize = false;
  bool no_balance = false;
};

int run_preprocess(PreprocessArgs a) {
  a.opt.resize = !a.no_resize;
  a.opt.preprocess.equalize = !a.no_equalize;
  a.opt.balance = !a.no_balance;
  std::array<std::size_t, kActionCount> counts{};
  std::size_t total = 0;
  if (!a.src.store.empty()) {
    server::SessionStore store(a.src.store);
    std::vector<std::string> ids = a.src.sessions;
    if (ids.empty()) ids = store.list();
    const auto r = server::export_sessions(store, ids, a.opt, a.out);
    counts = r.counts;
    total = r.total;
  } else {
    if (a.dataset.empty()) throw CliError("usage", "preprocess needs --store or --dataset");
    const datapipe::Dataset in = datapipe::import_dataset(a.dataset);
    if (in.meta.channels != 1) throw CliError("shape_error", "--dataset input must be single-channel");
    datapipe::PreprocessOptions pre = a.opt.preprocess;
    datapipe::Dataset d;
    d.meta = in.meta;
    for (const auto& e : in.examples) {
      const GrayImage src = datapipe::channel_to_image(e.tensor, 0);
      if (!a.opt.resize) {
        pre.width = src.width();
        pre.height = src.height();
      }
      d.examples.push_back({datapipe::image_to_tensor(datapipe::preprocess_frame(src, pre)), e.label, e.timestamp_ms,
                            e.origin_id});
    }
    d.meta.width = pre.width;
    d.meta.height = pre.height;
    d = datapipe::unique_origins(d);
    if (a.opt.stack > 1) d = datapipe::stack_frames(d, a.opt.stack);
    if (a.opt.canny) d = datapipe::add_canny_channel(d);
    if (a.opt.balance && !d.empty()) d = datapipe::balance_by_duplication(d);
    for (const auto& [k, v] : a.opt.params()) d.meta.params[k] = v;
    datapipe::export_dataset(d, a.out);
    counts = datapipe::class_counts(d);
    total = d.size();
    write_text(fs::path(a.out) / "manifest.csv", server::manifest_csv(counts));
  }
  std::cout << "examples=" << total;
  for (Action c : kAllActions) std::cout << " c" << to_index(c) << "=" << counts[to_index(c)];
  std::cout << '\n';
  return 0;
}

// ---- train / eval --------------------------------------------------------------

struct SplitArgs {
  double test_fraction = 0.33;
  bool no_split = false;
};

datapipe::Split split_of(const datapipe::Dataset& d, const SplitArgs& s, std::uint64_t seed) {
  if (s.no_split) return {d, datapipe::Dataset{{}, d.meta}};
  return datapipe::split(d, s.test_fraction, seed);
}

struct TrainArgs {
  std::string dataset;
  std::string out;
  std::string history;
  std::uint64_t seed = 1;
  SplitArgs split;
  int epochs = 20;
  int batch_size = 32;
  double lr = 0.001;
  bool flip = false;
  bool dedupe = false;
  cnn::ModelConfig config;
};

int run_train(const TrainArgs& a) {
  const datapipe::Dataset d = datapipe::import_dataset(a.dataset);
  if (d.empty()) throw CliError("data_error", "dataset is empty");
  datapipe::Dataset train = split_of(d, a.split, a.seed).train;
  if (a.dedupe) train = datapipe::unique_origins(train);
  if (a.flip) train = datapipe::augment_flip(train);
  cnn::ModelConfig cfg = a.config;
  cfg.channels = d.meta.channels;
  cfg.height = d.meta.height;
  cfg.width = d.meta.width;
  cnn::TrainOptions o;
  o.epochs = a.epochs;
  o.batch_size = a.batch_size;
  o.seed = a.seed;
  o.adam.lr = a.lr;
  o.on_epoch = [](const cnn::EpochStats& e) {
    std::cout << "epoch=" << e.epoch << " loss=" << e.loss << " accuracy=" << e.accuracy << std::endl;
  };
  const auto r = cnn::train(cfg, train, o);
  cnn::save_model(r.params, cfg, a.out);
  if (!a.history.empty()) write_text(a.history, cnn::history_csv(r.history));
  std::cout << "trained_on=" << train.size() << " model=" << a.out << '\n';
  return 0;
}

struct EvalArgs {
  std::string model;
  std::string dataset;
  std::string confusion;
  std::uint64_t seed = 1;
  SplitArgs split;
  bool unique = false;
};

std::string confusion_csv(const cnn::Evaluation& ev) {
  std::string s = "true\\pred";
  for (int j = 0; j < kActionCount; ++j) s += "," + std::to_string(j);
  s += "\n";
  for (int i = 0; i < kActionCount; ++i) {
    s += std::to_string(i);
    for (int j = 0; j < kActionCount; ++j) s += "," + std::to_string(ev.confusion[i][j]);
    s += "\n";
  }
  return s;
}

int run_eval(const EvalArgs& a) {
  const cnn::Model m = cnn::load_model(a.model);
  const datapipe::Dataset d = datapipe::import_dataset(a.dataset);
  datapipe::Dataset test = a.split.no_split ? d : split_of(d, a.split, a.seed).test;
  if (a.unique) test = datapipe::unique_origins(test);
  if (test.empty()) throw CliError("data_error", "evaluation set is empty");
  const auto ev = cnn::evaluate(m.params, m.config, test);
  if (!a.confusion.empty()) write_text(a.confusion, confusion_csv(ev));
  std::printf("accuracy=%.17g examples=%zu\n", ev.accuracy, test.size());
  return 0;
}

// ---- drive / render-map ------------------------------------------------------

struct PoseArgs {
  std::optional<double> x, y, heading_deg;
};

std::optional<sim::CarState> pose_of(const PoseArgs& p, const sim::WorldMap& map) {
  if (!p.x && !p.y && !p.heading_deg) return std::nullopt;
  sim::CarState s = sim::start_state(map);
  if (p.x) s.x = *p.x;
  if (p.y) s.y = *p.y;
  if (p.heading_deg) s.heading = sim::wrap_angle(*p.heading_deg * std::numbers::pi / 180.0);
  if (map.is_wall_at(s.x, s.y)) throw CliError("bad_pose", "pose lies inside a wall");
  return s;
}

struct DriveArgs {
  std::string model;
  std::string map;
  int steps = 500;
  double rate_hz = 4.0;
  std::uint64_t seed = 1;
  PoseArgs pose;
  bool from_start = false;
  std::string report;
  std::string log;
};

int run_drive(const DriveArgs& a) {
  const cnn::Model m = cnn::load_model(a.model);
  const sim::WorldMap map = sim::load_map_file(a.map);
  sim::CarState start;
  if (auto p = pose_of(a.pose, map)) start = *p;
  else if (a.from_start) start = sim::start_state(map);
  else start = autopilot::sample_start_poses(map, 1, a.seed).front();
  autopilot::DriveOptions o;
  o.steps = a.steps;
  o.rate_hz = a.rate_hz;
  o.seed = a.seed;
  o.preprocess.width = m.config.width;
  o.preprocess.height = m.config.height;
  const auto r = autopilot::drive(m, map, start, o);
  if (!a.report.empty()) write_text(a.report, autopilot::report_json(r));
  if (!a.log.empty()) write_text(a.log, autopilot::action_log_csv(r));
  std::printf("steps=%d collisions=%d distance_m=%.6f elapsed_s=%.6f\n", r.steps, r.collisions, r.distance_m,
              r.elapsed_s);
  return 0;
}

struct RenderArgs {
  std::string map;
  PoseArgs pose;
  std::string out;
  sim::RenderConfig render;
};

int run_render(const RenderArgs& a) {
  const sim::WorldMap map = sim::load_map_file(a.map);
  const sim::CarState s = pose_of(a.pose, map).value_or(sim::start_state(map));
  write_pgm(a.out, sim::render(map, s, a.render));
  std::printf("x=%.6f y=%.6f heading=%.6f out=%s\n", s.x, s.y, s.heading, a.out.c_str());
  return 0;
}

void add_pose(CLI::App* app, PoseArgs& p) {
  app->add_option("--x", p.x, "Pose x in metres (east)");
  app->add_option("--y", p.y, "Pose y in metres (north)");
  app->add_option("--heading", p.heading_deg, "Heading in degrees, 0 = east, counter-clockwise");
}

void add_source(CLI::App* app, SourceArgs& s) {
  app->add_option("--store", s.store, "Session store directory");
  app->add_option("--session", s.sessions, "Session id (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deskpilot: simulated desk-car data collection, training and autopilot"};
  app.set_config("--config", "", "Config file with defaults (key=value, [subcommand] sections)");
  app.require_subcommand(1);

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "Run the HTTP ingestion and teleoperation server");
  c_serve->add_option("--host", serve.host);
  c_serve->add_option("--port", serve.port);
  c_serve->add_option("--data-dir", serve.data_dir);
  c_serve->add_option("--maps-dir", serve.maps_dir);
  c_serve->add_option("--tick-ms", serve.tick_ms);
  c_serve->add_option("--model", serve.model, "Model file enabling /predict");

  CollectArgs collect;
  auto* c_collect = app.add_subcommand("collect", "Record a session driven by the scripted oracle");
  c_collect->add_option("--map", collect.map)->required();
  c_collect->add_flag("--oracle", collect.oracle, "Drive with oracle_policy");
  c_collect->add_option("--seconds", collect.seconds);
  c_collect->add_option("--out", collect.out, "Session store directory")->required();
  c_collect->add_option("--start-ms", collect.start_ms, "Timestamp of the first tick");

  SliceArgs slice;
  auto* c_slice = app.add_subcommand("slice", "Slice a video payload into timestamped frames");
  c_slice->add_option("--frames", slice.frames, "Concatenated PGM frames")->required();
  c_slice->add_option("--index", slice.index, "CSV offset_ms,byte_offset,byte_length")->required();
  c_slice->add_option("--start-ms", slice.start_ms)->required();
  c_slice->add_option("--interval-ms", slice.interval_ms);
  c_slice->add_option("--out", slice.out)->required();

  PairArgs pair;
  auto* c_pair = app.add_subcommand("pair", "Label frames with the nearest joystick sample");
  add_source(c_pair, pair.src);
  c_pair->add_option("--frames", pair.src.frames, "Directory written by slice");
  c_pair->add_option("--samples", pair.src.samples, "CSV timestamp_ms,x,y");
  c_pair->add_option("--max-gap-ms", pair.max_gap_ms);
  c_pair->add_option("--out", pair.out)->required();

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "Export a training dataset from sessions or a paired dataset");
  add_source(c_pre, pre.src);
  c_pre->add_option("--dataset", pre.dataset, "Paired dataset directory");
  c_pre->add_option("--out", pre.out)->required();
  c_pre->add_option("--width", pre.opt.preprocess.width);
  c_pre->add_option("--height", pre.opt.preprocess.height);
  c_pre->add_flag("--no-resize", pre.no_resize);
  c_pre->add_flag("--no-equalize", pre.no_equalize);
  c_pre->add_flag("--no-balance", pre.no_balance);
  c_pre->add_flag("--canny", pre.opt.canny);
  c_pre->add_option("--stack", pre.opt.stack, "Frames per multi-frame example (0 = off)");
  c_pre->add_option("--max-gap-ms", pre.opt.max_gap_ms);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train the CNN on the train side of a seeded split");
  c_train->add_option("--dataset", train.dataset)->required();
  c_train->add_option("--out", train.out)->required();
  c_train->add_option("--history", train.history, "CSV epoch,loss,accuracy");
  c_train->add_option("--seed", train.seed);
  c_train->add_option("--test-fraction", train.split.test_fraction);
  c_train->add_flag("--no-split", train.split.no_split);
  c_train->add_option("--epochs", train.epochs);
  c_train->add_option("--batch-size", train.batch_size);
  c_train->add_option("--lr", train.lr);
  c_train->add_flag("--flip", train.flip, "Append mirrored copies of the training side");
  c_train->add_flag("--dedupe", train.dedupe, "Drop duplicated copies before training");
  c_train->add_option("--conv1", train.config.conv1_filters);
  c_train->add_option("--conv2", train.config.conv2_filters);
  c_train->add_option("--kernel", train.config.kernel);
  c_train->add_option("--dense", train.config.dense);
  c_train->add_option("--dropout", train.config.dropout);

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Accuracy and confusion matrix on the held-out side");
  c_eval->add_option("--model", eval.model)->required();
  c_eval->add_option("--dataset", eval.dataset)->required();
  c_eval->add_option("--confusion", eval.confusion, "CSV output");
  c_eval->add_option("--seed", eval.seed);
  c_eval->add_option("--test-fraction", eval.split.test_fraction);
  c_eval->add_flag("--no-split", eval.split.no_split, "Evaluate on the whole dataset");
  c_eval->add_flag("--unique", eval.unique, "Count each duplicated example once");

  DriveArgs drive;
  auto* c_drive = app.add_subcommand("drive", "Closed-loop autopilot run");
  c_drive->add_option("--model", drive.model)->required();
  c_drive->add_option("--map", drive.map)->required();
  c_drive->add_option("--steps", drive.steps);
  c_drive->add_option("--rate-hz", drive.rate_hz);
  c_drive->add_option("--seed", drive.seed, "Selects the start pose when none is given");
  c_drive->add_flag("--from-start", drive.from_start, "Start at the map's S cell");
  add_pose(c_drive, drive.pose);
  c_drive->add_option("--report", drive.report, "DriveReport JSON");
  c_drive->add_option("--log", drive.log, "CSV step,action,collision");

  RenderArgs render;
  auto* c_render = app.add_subcommand("render-map", "Render the camera view at a pose");
  c_render->add_option("--map", render.map)->required();
  add_pose(c_render, render.pose);
  c_render->add_option("--out", render.out)->required();
  c_render->add_option("--width", render.render.width);
  c_render->add_option("--height", render.render.height);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage", e.what());
    return 2;
  }

  try {
    if (*c_serve) return run_serve(serve);
    if (*c_collect) return run_collect(collect);
    if (*c_slice) return run_slice(slice);
    if (*c_pair) return run_pair(pair);
    if (*c_pre) return run_preprocess(pre);
    if (*c_train) return run_train(train);
    if (*c_eval) return run_eval(eval);
    if (*c_drive) return run_drive(drive);
    if (*c_render) return run_render(render);
  } catch (const CliError& e) {
    return fail(e.code, e.what());
  } catch (const server::StoreError& e) {
    return fail(server::errc_name(e.code()), e.what());
  } catch (const cnn::ModelFileError& e) {
    return fail(std::string("model_") + cnn::errc_name(e.code()), e.what());
  } catch (const protocol::ProtocolError& e) {
    return fail(protocol::errc_name(e.code()), e.what());
  } catch (const sim::MapError& e) {
    return fail("bad_map", e.what());
  } catch (const PgmError& e) {
    return fail("bad_image", e.what());
  } catch (const ShapeError& e) {
    return fail("shape_error", e.what());
  } catch (const datapipe::DataError& e) {
    return fail("data_error", e.what());
  } catch (const std::invalid_argument& e) {
    return fail("invalid_argument", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
