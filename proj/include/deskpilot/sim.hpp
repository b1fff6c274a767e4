#pragma once

#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "deskpilot/action.hpp"
#include "deskpilot/image.hpp"

namespace deskpilot::sim {

enum class Cell : std::uint8_t { Free, Wall };

class MapError : public std::runtime_error {
 public:
  MapError(const std::string& what, int row, int col)
      : std::runtime_error(what + " at row " + std::to_string(row) + ", col " + std::to_string(col)),
        row_(row),
        col_(col) {}
  int row() const { return row_; }
  int col() const { return col_; }

 private:
  int row_;
  int col_;
};

/// Occupancy grid. Text row 0 is the northern edge; world y grows north so
/// that positive turn rates are counter-clockwise (left turns).
class WorldMap {
 public:
  static constexpr double kDefaultCellSize = 0.5;

  WorldMap(int cols, int rows, std::vector<Cell> cells, int start_col, int start_row, double start_heading,
           double cell_size = kDefaultCellSize);

  int cols() const { return cols_; }
  int rows() const { return rows_; }
  double cell_size() const { return cell_size_; }
  double width_m() const { return cols_ * cell_size_; }
  double height_m() const { return rows_ * cell_size_; }

  int start_col() const { return start_col_; }
  int start_row() const { return start_row_; }
  double start_heading() const { return start_heading_; }

  /// Cell by text coordinates (row 0 = north).
  Cell cell(int col, int row) const { return cells_[static_cast<std::size_t>(row) * cols_ + col]; }

  /// True for wall cells and for anything outside the grid.
  bool is_wall_at(double x, double y) const;

  /// World coordinates of the centre of a text-addressed cell.
  double center_x(int col) const { return (col + 0.5) * cell_size_; }
  double center_y(int row) const { return (rows_ - row - 0.5) * cell_size_; }

  std::size_t free_cell_count() const;

  /// Row-reversed copy (mirror across an east-west axis).
  WorldMap flipped_north_south() const;

  std::string to_text() const;

 private:
  int cols_;
  int rows_;
  std::vector<Cell> cells_;
  int start_col_;
  int start_row_;
  double start_heading_;
  double cell_size_;
};

WorldMap load_map(std::string_view text);
WorldMap load_map_file(const std::string& path);

struct CarState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // radians, [0, 2*pi)
  double speed = 0.0;    // m/s of the last applied action

  friend bool operator==(const CarState&, const CarState&) = default;
};

CarState start_state(const WorldMap& map);

/// Pose mirrored the same way as WorldMap::flipped_north_south.
CarState flip_north_south(const WorldMap& map, const CarState& s);

struct Motion {
  double v;      // m/s, forward positive
  double omega;  // rad/s, counter-clockwise positive
};

Motion action_motion(Action a);

struct StepResult {
  CarState state;
  bool collision = false;
};

/// Euler-integrates one action; a move that would enter a wall freezes the pose.
StepResult step(const WorldMap& map, const CarState& state, Action action, double dt);

double wrap_angle(double radians);

struct RenderConfig {
  int width = 128;
  int height = 96;
  double fov = std::numbers::pi / 3.0;
  double max_depth = 8.0;
};

namespace shading {
inline constexpr std::uint8_t kCeiling = 25;
inline constexpr double kFloorNear = 120.0;  // bottom row
inline constexpr double kFloorFar = 40.0;    // horizon row
inline constexpr double kSideFactor = 0.8;   // east/west-facing walls
inline constexpr double kWallHeight = 0.5;   // metres, centred on the camera
}  // namespace shading

GrayImage render(const WorldMap& map, const CarState& state, const RenderConfig& cfg = {});

struct RayHit {
  double distance;       // along the ray direction as given (perpendicular for camera rays)
  bool hit;              // false when nothing within range
  bool east_west_face;   // hit a wall face whose normal points east or west
};

/// DDA traversal from (x, y) along (dx, dy). `distance` is the ray parameter t
/// at the hit point p + t*(dx, dy), so unit directions give metres.
RayHit cast_ray(const WorldMap& map, double x, double y, double dx, double dy, double max_t);

/// Euclidean distance to the first wall along `angle`, capped at `max_range`.
double ray_distance(const WorldMap& map, double x, double y, double angle, double max_range = 8.0);

struct OracleRays {
  double left;
  double center;
  double right;
};

OracleRays oracle_rays(const WorldMap& map, const CarState& state);

/// Scripted driver used to mass-produce demonstrations.
Action oracle_policy(const WorldMap& map, const CarState& state);

}  // namespace deskpilot::sim
