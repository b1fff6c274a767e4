#include "deskpilot/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace deskpilot::sim {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Oracle thresholds (metres).
constexpr double kOracleBlocked = 0.4;
constexpr double kOracleImbalance = 0.3;
constexpr double kOracleSideAngle = std::numbers::pi / 6.0;
constexpr double kOracleRange = 8.0;

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      if (!cur.empty() && cur.back() == '\r') cur.pop_back();
      lines.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty() && cur.back() == '\r') cur.pop_back();
  if (!cur.empty()) lines.push_back(cur);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

}  // namespace

double wrap_angle(double radians) {
  double r = std::fmod(radians, kTwoPi);
  if (r < 0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

WorldMap::WorldMap(int cols, int rows, std::vector<Cell> cells, int start_col, int start_row,
                   double start_heading, double cell_size)
    : cols_(cols),
      rows_(rows),
      cells_(std::move(cells)),
      start_col_(start_col),
      start_row_(start_row),
      start_heading_(wrap_angle(start_heading)),
      cell_size_(cell_size) {
  if (cols < 3 || rows < 3) throw MapError("map smaller than 3x3", 0, 0);
  if (cells_.size() != static_cast<std::size_t>(cols) * rows) throw MapError("cell count mismatch", 0, 0);
  if (!(cell_size > 0.0)) throw MapError("cell size must be positive", 0, 0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const bool boundary = r == 0 || c == 0 || r == rows - 1 || c == cols - 1;
      if (boundary && cell(c, r) != Cell::Wall) throw MapError("open boundary", r, c);
    }
  }
  if (start_col < 0 || start_row < 0 || start_col >= cols || start_row >= rows ||
      cell(start_col, start_row) != Cell::Free)
    throw MapError("start cell is not free", start_row, start_col);
}

bool WorldMap::is_wall_at(double x, double y) const {
  if (!(x >= 0.0) || !(y >= 0.0) || x >= width_m() || y >= height_m()) return true;
  const int col = static_cast<int>(x / cell_size_);
  const int row = rows_ - 1 - static_cast<int>(y / cell_size_);
  if (col < 0 || col >= cols_ || row < 0 || row >= rows_) return true;
  return cell(col, row) == Cell::Wall;
}

std::size_t WorldMap::free_cell_count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), Cell::Free));
}

WorldMap WorldMap::flipped_north_south() const {
  std::vector<Cell> flipped(cells_.size());
  for (int r = 0; r < rows_; ++r)
    for (int c = 0; c < cols_; ++c)
      flipped[static_cast<std::size_t>(rows_ - 1 - r) * cols_ + c] = cell(c, r);
  return WorldMap(cols_, rows_, std::move(flipped), start_col_, rows_ - 1 - start_row_, -start_heading_,
                  cell_size_);
}

std::string WorldMap::to_text() const {
  std::string out;
  for (int r = 0; r < rows_; ++r) {
    for (int c = 0; c < cols_; ++c) {
      if (c == start_col_ && r == start_row_) out.push_back('S');
      else out.push_back(cell(c, r) == Cell::Wall ? '#' : '.');
    }
    out.push_back('\n');
  }
  return out;
}

WorldMap load_map(std::string_view text) {
  auto lines = split_lines(text);
  double heading = 0.0;
  if (!lines.empty() && lines.back().size() == 1 && std::string_view("><^v").find(lines.back()[0]) != std::string_view::npos) {
    switch (lines.back()[0]) {
      case '>': heading = 0.0; break;
      case '^': heading = std::numbers::pi / 2.0; break;
      case '<': heading = std::numbers::pi; break;
      case 'v': heading = 3.0 * std::numbers::pi / 2.0; break;
    }
    lines.pop_back();
  }
  if (lines.empty()) throw MapError("empty map", 0, 0);
  const int rows = static_cast<int>(lines.size());
  const int cols = static_cast<int>(lines.front().size());
  if (rows < 3 || cols < 3) throw MapError("map smaller than 3x3", 0, 0);

  std::vector<Cell> cells;
  cells.reserve(static_cast<std::size_t>(rows) * cols);
  int start_col = -1;
  int start_row = -1;
  for (int r = 0; r < rows; ++r) {
    const auto& line = lines[r];
    if (static_cast<int>(line.size()) != cols)
      throw MapError("non-rectangular row", r, std::min(static_cast<int>(line.size()), cols));
    for (int c = 0; c < cols; ++c) {
      switch (line[c]) {
        case '#': cells.push_back(Cell::Wall); break;
        case '.': cells.push_back(Cell::Free); break;
        case 'S':
          if (start_col >= 0) throw MapError("multiple starts", r, c);
          start_col = c;
          start_row = r;
          cells.push_back(Cell::Free);
          break;
        default: throw MapError(std::string("unexpected character '") + line[c] + "'", r, c);
      }
    }
  }
  if (start_col < 0) throw MapError("no start", 0, 0);
  return WorldMap(cols, rows, std::move(cells), start_col, start_row, heading);
}

WorldMap load_map_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open map file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_map(ss.str());
}

CarState start_state(const WorldMap& map) {
  return CarState{map.center_x(map.start_col()), map.center_y(map.start_row()), map.start_heading(), 0.0};
}

CarState flip_north_south(const WorldMap& map, const CarState& s) {
  return CarState{s.x, map.height_m() - s.y, wrap_angle(-s.heading), s.speed};
}

Motion action_motion(Action a) {
  constexpr double v = 0.6;
  constexpr double slow = 0.3;
  constexpr double w = 0.9;
  switch (a) {
    case Action::Forwards: return {v, 0.0};
    case Action::Backwards: return {-v, 0.0};
    case Action::ForwardsLeft: return {v, w};
    case Action::ForwardsRight: return {v, -w};
    // reversing with the wheels turned swings the nose the other way
    case Action::BackwardsLeft: return {-v, -w};
    case Action::BackwardsRight: return {-v, w};
    case Action::SlightlyForwards: return {slow, 0.0};
    case Action::SlightlyBackwards: return {-slow, 0.0};
    case Action::Stop: return {0.0, 0.0};
  }
  return {0.0, 0.0};
}

StepResult step(const WorldMap& map, const CarState& state, Action action, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
  const Motion m = action_motion(action);
  if (action == Action::Stop) return {CarState{state.x, state.y, state.heading, 0.0}, false};

  CarState next;
  next.x = state.x + m.v * std::cos(state.heading) * dt;
  next.y = state.y + m.v * std::sin(state.heading) * dt;
  next.heading = wrap_angle(state.heading + m.omega * dt);
  next.speed = m.v;
  if (map.is_wall_at(next.x, next.y)) {
    CarState blocked = state;
    blocked.speed = 0.0;
    return {blocked, true};
  }
  return {next, false};
}

RayHit cast_ray(const WorldMap& map, double x, double y, double dx, double dy, double max_t) {
  const double cs = map.cell_size();
  // grid units, origin at the south-west corner
  const double gx = x / cs;
  const double gy = y / cs;
  int ix = static_cast<int>(std::floor(gx));
  int iy = static_cast<int>(std::floor(gy));

  constexpr double inf = std::numeric_limits<double>::infinity();
  const double delta_x = dx == 0.0 ? inf : std::abs(1.0 / dx);
  const double delta_y = dy == 0.0 ? inf : std::abs(1.0 / dy);
  const int step_x = dx < 0 ? -1 : 1;
  const int step_y = dy < 0 ? -1 : 1;
  double side_x = dx == 0.0 ? inf : (dx < 0 ? (gx - ix) : (ix + 1.0 - gx)) * delta_x;
  double side_y = dy == 0.0 ? inf : (dy < 0 ? (gy - iy) : (iy + 1.0 - gy)) * delta_y;

  const double max_grid_t = max_t / cs;
  while (true) {
    bool ew;
    double t;
    if (side_x < side_y) {
      t = side_x;
      side_x += delta_x;
      ix += step_x;
      ew = true;
    } else {
      t = side_y;
      side_y += delta_y;
      iy += step_y;
      ew = false;
    }
    if (t > max_grid_t) return {max_t, false, false};
    const int row = map.rows() - 1 - iy;
    if (ix < 0 || iy < 0 || ix >= map.cols() || row < 0 || map.cell(ix, row) == Cell::Wall)
      return {t * cs, true, ew};
  }
}

double ray_distance(const WorldMap& map, double x, double y, double angle, double max_range) {
  const RayHit h = cast_ray(map, x, y, std::cos(angle), std::sin(angle), max_range);
  return h.hit ? h.distance : max_range;
}

GrayImage render(const WorldMap& map, const CarState& state, const RenderConfig& cfg) {
  if (cfg.width < 8 || cfg.height < 8 || !(cfg.fov > 0.0 && cfg.fov < std::numbers::pi) || !(cfg.max_depth > 0.0))
    throw std::invalid_argument("render: invalid RenderConfig");
  const int w = cfg.width;
  const int h = cfg.height;
  GrayImage img(w, h, shading::kCeiling);

  const double horizon = h / 2.0;
  const int first_floor_row = static_cast<int>(std::ceil(horizon));
  const double floor_span = std::max(1.0, (h - 1) - horizon);
  for (int r = first_floor_row; r < h; ++r) {
    const double t = (r - horizon) / floor_span;
    const std::uint8_t v = clamp_to_byte(shading::kFloorFar + (shading::kFloorNear - shading::kFloorFar) * t);
    for (int c = 0; c < w; ++c) img.at(c, r) = v;
  }

  const double dir_x = std::cos(state.heading);
  const double dir_y = std::sin(state.heading);
  // unit vector to the camera's left, scaled to the image half-width
  const double half = std::tan(cfg.fov / 2.0);
  const double left_x = -dir_y * half;
  const double left_y = dir_x * half;
  const double focal = (w / 2.0) / half;

  for (int c = 0; c < w; ++c) {
    // +1 at the left edge, -1 at the right; exact negation between mirrored columns
    const double cam = static_cast<double>(w - 2 * c - 1) / w;
    const double rx = dir_x + left_x * cam;
    const double ry = dir_y + left_y * cam;
    const RayHit hit = cast_ray(map, state.x, state.y, rx, ry, cfg.max_depth);
    if (!hit.hit) continue;
    const double perp = std::max(hit.distance, 1e-6);
    double shade = 255.0 * std::max(0.0, 1.0 - perp / cfg.max_depth);
    if (hit.east_west_face) shade *= shading::kSideFactor;
    const std::uint8_t v = clamp_to_byte(shade);
    const double half_line = focal * shading::kWallHeight / perp / 2.0;
    for (int r = 0; r < h; ++r) {
      if (std::abs(r + 0.5 - horizon) < half_line) img.at(c, r) = v;
    }
  }
  return img;
}

OracleRays oracle_rays(const WorldMap& map, const CarState& s) {
  return OracleRays{ray_distance(map, s.x, s.y, s.heading + kOracleSideAngle, kOracleRange),
                    ray_distance(map, s.x, s.y, s.heading, kOracleRange),
                    ray_distance(map, s.x, s.y, s.heading - kOracleSideAngle, kOracleRange)};
}

Action oracle_policy(const WorldMap& map, const CarState& state) {
  const OracleRays r = oracle_rays(map, state);
  if (r.center < kOracleBlocked) return Action::Backwards;
  if (r.left - r.right > kOracleImbalance) return Action::ForwardsLeft;
  if (r.right - r.left > kOracleImbalance) return Action::ForwardsRight;
  return Action::Forwards;
}

}  // namespace deskpilot::sim
