#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "safemr/envs.hpp"
#include "safemr/safety_index.hpp"

namespace safemr {

/// One grid axis. Non-periodic axes place `points` nodes on [lo, hi];
/// periodic axes place them on (lo, hi] with spacing (hi - lo) / points.
struct GridAxis {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
  int points = 2;
  bool periodic = false;

  double spacing() const;
  double value(int i) const;
};

/// Row-major cell ordering: the last axis varies fastest.
class StateGrid {
 public:
  StateGrid() = default;
  explicit StateGrid(std::vector<GridAxis> axes);

  std::size_t dims() const { return axes_.size(); }
  const GridAxis& axis(std::size_t i) const { return axes_[i]; }
  std::size_t cell_count() const { return cell_count_; }
  std::size_t stride(std::size_t axis) const { return strides_[axis]; }
  std::vector<int> unravel(std::size_t cell) const;
  std::size_t ravel(const std::vector<int>& idx) const;
  std::vector<double> coords(std::size_t cell) const;

  /// (x, y, psi) over [-3,3]^2 x (-pi, pi].
  static StateGrid aircraft(int nx = 61, int ny = 61, int npsi = 41, double half_width = 3.0);
  /// Robot offset (dx, dy) from a single obstacle at the origin.
  static StateGrid particle_plane(const EnvConfig& cfg, int n = 41, double reach = 1.0);
  /// Robot offset (dx, dy) and velocity (vx, vy) around a single obstacle.
  static StateGrid particle_phase(const EnvConfig& cfg, int npos = 41, int nvel = 9, double reach = 1.0);

 private:
  std::vector<GridAxis> axes_;
  std::vector<std::size_t> strides_;
  std::size_t cell_count_ = 0;
};

/// Parses "61x61x41" (or "61,61,41") into per-axis point counts.
std::vector<int> parse_grid_spec(const std::string& spec);

enum class FieldProvenance { reachability_oracle, learned_phi };
std::string to_string(FieldProvenance p);

struct UnsafeSetField {
  StateGrid grid;
  std::vector<double> value;    // reachability value or phi; unsafe iff flagged
  std::vector<std::uint8_t> unsafe;
  FieldProvenance provenance = FieldProvenance::learned_phi;

  std::size_t unsafe_count() const;
  /// CSV with one row per cell: axis coordinates, value, unsafe flag.
  void write_csv(const std::filesystem::path& path) const;
  /// `<prefix>.bin` (uint8 flags then float64 values, little-endian) and
  /// `<prefix>.json` header.
  void write_binary(const std::filesystem::path& prefix) const;
};

struct ReachabilityOptions {
  int horizon_steps = 200;
  int action_count = 9;
  double tolerance = 1e-6;
};

struct ReachabilityResult {
  UnsafeSetField field;
  int iterations = 0;
  double last_change = 0.0;
};

/// Grid value iteration for the aircraft task,
///   V_{t+1}(s) = max(l(s), min_a V_t(f(s, a))),  l(s) = d_min - d(s),
/// with multilinear interpolation (periodic in psi). Successors outside the
/// x/y range take l at their position. A cell is unsafe iff V >= 0.
ReachabilityResult true_unsafe_set(const EnvConfig& cfg, const StateGrid& grid, const ReachabilityOptions& opt = {});

/// Cells where phi > 0. Aircraft grids are (x, y, psi); particle grids are
/// (dx, dy) around one obstacle with zero velocity, so d_dot = 0.
UnsafeSetField learned_unsafe_set(const SafetyIndexParams& p, const EnvConfig& cfg, const StateGrid& grid);

/// K action samples, nested so every K-set is a subset of the 2K-set.
/// 1-D: van der Corput points on [-limit, limit] starting with both ends.
/// 2-D: directions at van der Corput angles, scaled to the box boundary.
std::vector<Eigen::VectorXd> action_samples(const EnvConfig& cfg, int k);

struct FeasibilityReport {
  std::size_t cells_checked = 0;
  std::size_t infeasible_count = 0;
  double infeasible_fraction = 0.0;
  std::vector<std::size_t> infeasible_cells;
};

/// Brute-force check that every cell admits an action with negative
/// residual. Aircraft: (x, y, psi) grid. Particle: (dx, dy, vx, vy) grid
/// around one obstacle; for pillars, cells inside the pillar are skipped.
/// Throws ConfigError for K < 2.
FeasibilityReport verify_feasibility(const SafetyIndexParams& p, const EnvConfig& cfg, const StateGrid& grid, int k);

struct SetMetrics {
  std::size_t area_a = 0;
  std::size_t area_b = 0;
  double coverage = 1.0;  // fraction of b's unsafe cells also unsafe in a
  std::size_t symmetric_difference = 0;
};

SetMetrics set_metrics(const UnsafeSetField& a, const UnsafeSetField& b);

/// Single-obstacle particle state used by the particle grids.
EnvState particle_probe_state(const EnvConfig& cfg, const Eigen::Vector2d& offset, const Eigen::Vector2d& vel);

}  // namespace safemr
