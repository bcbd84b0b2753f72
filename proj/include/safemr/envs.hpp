#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "safemr/safety_index.hpp"

namespace safemr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SimulationFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Task { aircraft, goal, push };
enum class ObstacleKind { hazard, pillar };

std::string to_string(Task t);
std::string to_string(ObstacleKind k);
Task task_from_string(const std::string& s);
ObstacleKind obstacle_kind_from_string(const std::string& s);

struct EnvConfig {
  Task task = Task::goal;
  ObstacleKind obstacle_kind = ObstacleKind::pillar;
  double obstacle_radius = 0.15;
  int obstacle_count = 4;
  double dt = 0.05;
  int horizon = 500;
  /// Symmetric action box: per-axis velocity command (particle) or turn
  /// rate (aircraft).
  double action_limit = 1.0;
  double ego_speed = 1.0;
  double intruder_speed = 1.0;
  double d_min = 0.1;
  /// Square half width (particle) or disc radius (aircraft).
  double arena_half_width = 2.0;
  double robot_radius = 0.1;
  double goal_radius = 0.3;
  double box_radius = 0.2;
  double sensor_range = 5.0;
  std::uint64_t seed = 0;

  void validate() const;
  int action_dim() const { return task == Task::aircraft ? 1 : 2; }
  int obs_dim() const;

  static EnvConfig aircraft();
  static EnvConfig particle(Task task, ObstacleKind kind, double radius);
  /// "Pillars-0.15-Goal" style names.
  std::string name() const;
};

struct Obstacle {
  Eigen::Vector2d center;
  double radius = 0.0;
};

/// Intruder position (x, y) and heading difference psi in the ego frame.
struct AircraftState {
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0;
};

struct ParticleState {
  Eigen::Vector2d pos = Eigen::Vector2d::Zero();
  Eigen::Vector2d vel = Eigen::Vector2d::Zero();
  Eigen::Vector2d goal = Eigen::Vector2d::Zero();
  Eigen::Vector2d box = Eigen::Vector2d::Zero();
  std::vector<Obstacle> obstacles;
  std::uint64_t goals_reached = 0;
};

struct EnvState {
  int t = 0;
  std::uint64_t seed = 0;
  std::variant<AircraftState, ParticleState> body;

  const AircraftState& aircraft() const { return std::get<AircraftState>(body); }
  const ParticleState& particle() const { return std::get<ParticleState>(body); }
};

struct StepResult {
  EnvState next_state;
  double reward = 0.0;
  bool violation = false;  // features_next.d < d_min
  DistanceFeature features_now;
  DistanceFeature features_next;
  bool done = false;      // episode over (horizon or left the arena)
  bool terminal = false;  // absorbing; never set by the current tasks
};

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

/// One RK4 step of the relative Dubins dynamics with constant turn rate.
AircraftState aircraft_propagate(const AircraftState& s, double omega, const EnvConfig& cfg);
DistanceFeature aircraft_features(const AircraftState& s, const EnvConfig& cfg);

DistanceFeature particle_features(const ParticleState& s, const EnvConfig& cfg);
/// Index of the obstacle that defines particle_features, or -1.
int nearest_obstacle(const ParticleState& s, const EnvConfig& cfg);

/// Deterministic simulator shared by training, evaluation and the oracles.
class Environment {
 public:
  explicit Environment(EnvConfig cfg);

  const EnvConfig& config() const { return cfg_; }
  int obs_dim() const { return cfg_.obs_dim(); }
  int action_dim() const { return cfg_.action_dim(); }

  /// Throws ConfigError when placement fails after 10k tries.
  EnvState reset(std::uint64_t seed) const;
  /// Actions outside the box are clamped. Throws SimulationFault on NaN.
  StepResult step(const EnvState& s, const Eigen::VectorXd& action) const;
  DistanceFeature features(const EnvState& s) const;
  Eigen::VectorXd observe(const EnvState& s) const;

 private:
  EnvConfig cfg_;
};

}  // namespace safemr
