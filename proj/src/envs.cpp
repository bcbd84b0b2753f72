#include "safemr/envs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace safemr {

namespace {

constexpr int kMaxPlacementTries = 10000;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Placer {
  std::mt19937_64 rng;
  double lo, hi;

  Eigen::Vector2d point(double margin) {
    std::uniform_real_distribution<double> u(lo + margin, hi - margin);
    const double x = u(rng);
    const double y = u(rng);
    return {x, y};
  }
};

double surface_clearance(const Eigen::Vector2d& p, const std::vector<Obstacle>& obs) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& o : obs) best = std::min(best, (p - o.center).norm() - o.radius);
  return best;
}

Eigen::Vector2d clamp_to_arena(const Eigen::Vector2d& p, double half_width, double body_radius) {
  const double lim = half_width - body_radius;
  return p.cwiseMax(-lim).cwiseMin(lim);
}

bool finite_state(const EnvState& s) {
  if (const auto* a = std::get_if<AircraftState>(&s.body)) {
    return std::isfinite(a->x) && std::isfinite(a->y) && std::isfinite(a->psi);
  }
  const auto& p = s.particle();
  return p.pos.allFinite() && p.vel.allFinite() && p.goal.allFinite() && p.box.allFinite();
}

/// Goal (or push target) placement shared by reset and relocation.
Eigen::Vector2d place_goal(Placer& placer, const EnvConfig& cfg, const ParticleState& s,
                           const Eigen::Vector2d& avoid) {
  for (int i = 0; i < kMaxPlacementTries; ++i) {
    const Eigen::Vector2d g = placer.point(cfg.goal_radius);
    if (surface_clearance(g, s.obstacles) < cfg.robot_radius + cfg.d_min + 0.05) continue;
    if ((g - avoid).norm() < cfg.goal_radius + 0.5) continue;
    return g;
  }
  throw ConfigError("goal placement failed after 10000 tries; arena too crowded");
}

}  // namespace

std::string to_string(Task t) {
  switch (t) {
    case Task::aircraft: return "aircraft";
    case Task::goal: return "goal";
    case Task::push: return "push";
  }
  return "goal";
}

std::string to_string(ObstacleKind k) { return k == ObstacleKind::hazard ? "hazard" : "pillar"; }

Task task_from_string(const std::string& s) {
  if (s == "aircraft") return Task::aircraft;
  if (s == "goal") return Task::goal;
  if (s == "push") return Task::push;
  throw ConfigError("unknown task: " + s);
}

ObstacleKind obstacle_kind_from_string(const std::string& s) {
  if (s == "hazard" || s == "hazards") return ObstacleKind::hazard;
  if (s == "pillar" || s == "pillars") return ObstacleKind::pillar;
  throw ConfigError("unknown obstacle kind: " + s);
}

void EnvConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("env.dt must be positive");
  if (horizon <= 0) throw ConfigError("env.horizon must be positive");
  if (!(action_limit > 0.0)) throw ConfigError("env.action_limit must be positive");
  if (!(d_min > 0.0)) throw ConfigError("env.d_min must be positive");
  if (!(arena_half_width > 0.0)) throw ConfigError("env.arena_half_width must be positive");
  if (!(sensor_range > 0.0)) throw ConfigError("env.sensor_range must be positive");
  if (task == Task::aircraft) {
    if (!(ego_speed > 0.0) || intruder_speed < 0.0) throw ConfigError("env speeds invalid");
    return;
  }
  if (obstacle_radius != 0.15 && obstacle_radius != 0.30) {
    throw ConfigError("env.obstacle_radius must be 0.15 or 0.30");
  }
  if (obstacle_count < 0) throw ConfigError("env.obstacle_count must be >= 0");
  if (!(robot_radius >= 0.0) || !(goal_radius > 0.0) || !(box_radius > 0.0)) {
    throw ConfigError("env body radii invalid");
  }
}

int EnvConfig::obs_dim() const {
  switch (task) {
    case Task::aircraft: return 6;
    case Task::goal: return 8;
    case Task::push: return 12;
  }
  return 0;
}

EnvConfig EnvConfig::aircraft() {
  EnvConfig c;
  c.task = Task::aircraft;
  c.obstacle_count = 0;
  c.dt = 0.1;
  c.horizon = 100;
  c.action_limit = 1.0;
  c.ego_speed = 1.0;
  c.intruder_speed = 1.0;
  c.d_min = 0.5;
  c.arena_half_width = 3.0;
  return c;
}

EnvConfig EnvConfig::particle(Task task, ObstacleKind kind, double radius) {
  EnvConfig c;
  c.task = task;
  c.obstacle_kind = kind;
  c.obstacle_radius = radius;
  return c;
}

std::string EnvConfig::name() const {
  if (task == Task::aircraft) return "Aircraft";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-%.2f-%s", obstacle_kind == ObstacleKind::pillar ? "Pillars" : "Hazards",
                obstacle_radius, task == Task::goal ? "Goal" : "Push");
  return buf;
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a + std::numbers::pi, two_pi);
  if (r < 0.0) r += two_pi;
  // r in [0, 2pi); map to (-pi, pi].
  const double w = r - std::numbers::pi;
  return w == -std::numbers::pi ? std::numbers::pi : w;
}

AircraftState aircraft_propagate(const AircraftState& s, double omega, const EnvConfig& cfg) {
  const double ve = cfg.ego_speed;
  const double vp = cfg.intruder_speed;
  auto deriv = [&](double x, double y, double psi, double out[3]) {
    out[0] = -ve + vp * std::cos(psi) + omega * y;
    out[1] = vp * std::sin(psi) - omega * x;
    out[2] = -omega;
  };
  const double h = cfg.dt;
  double k1[3], k2[3], k3[3], k4[3];
  deriv(s.x, s.y, s.psi, k1);
  deriv(s.x + 0.5 * h * k1[0], s.y + 0.5 * h * k1[1], s.psi + 0.5 * h * k1[2], k2);
  deriv(s.x + 0.5 * h * k2[0], s.y + 0.5 * h * k2[1], s.psi + 0.5 * h * k2[2], k3);
  deriv(s.x + h * k3[0], s.y + h * k3[1], s.psi + h * k3[2], k4);
  AircraftState n;
  n.x = s.x + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
  n.y = s.y + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
  n.psi = wrap_angle(s.psi + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]));
  return n;
}

DistanceFeature aircraft_features(const AircraftState& s, const EnvConfig& cfg) {
  const double d = std::hypot(s.x, s.y);
  if (d == 0.0) return {kDistanceFloor, 0.0};
  // The ego turn-rate terms are perpendicular to (x, y) and drop out.
  const double xdot = -cfg.ego_speed + cfg.intruder_speed * std::cos(s.psi);
  const double ydot = cfg.intruder_speed * std::sin(s.psi);
  return {std::max(d, kDistanceFloor), (s.x * xdot + s.y * ydot) / d};
}

int nearest_obstacle(const ParticleState& s, const EnvConfig& cfg) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < s.obstacles.size(); ++i) {
    const auto& o = s.obstacles[i];
    const double d = (s.pos - o.center).norm() - o.radius - cfg.robot_radius;
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

DistanceFeature particle_features(const ParticleState& s, const EnvConfig& cfg) {
  const int i = nearest_obstacle(s, cfg);
  if (i < 0) return {cfg.sensor_range, 0.0};
  const auto& o = s.obstacles[static_cast<std::size_t>(i)];
  const Eigen::Vector2d rel = s.pos - o.center;
  const double r = rel.norm();
  const double d = std::min(r - o.radius - cfg.robot_radius, cfg.sensor_range);
  const double d_dot = r > 0.0 ? rel.dot(s.vel) / r : 0.0;
  return {std::max(d, kDistanceFloor), d_dot};
}

Environment::Environment(EnvConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

EnvState Environment::reset(std::uint64_t seed) const {
  EnvState st;
  st.seed = seed;
  st.t = 0;
  if (cfg_.task == Task::aircraft) {
    std::mt19937_64 rng(splitmix64(seed));
    std::uniform_real_distribution<double> u(-cfg_.arena_half_width, cfg_.arena_half_width);
    std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi);
    for (int i = 0; i < kMaxPlacementTries; ++i) {
      AircraftState a{u(rng), u(rng), wrap_angle(ang(rng))};
      const double d = std::hypot(a.x, a.y);
      if (d > cfg_.arena_half_width || d <= cfg_.d_min) continue;
      st.body = a;
      return st;
    }
    throw ConfigError("aircraft placement failed after 10000 tries");
  }

  Placer placer{std::mt19937_64(splitmix64(seed)), -cfg_.arena_half_width, cfg_.arena_half_width};
  ParticleState p;
  const double gap = 2.0 * cfg_.robot_radius + 2.0 * cfg_.d_min;
  int tries = 0;
  while (static_cast<int>(p.obstacles.size()) < cfg_.obstacle_count) {
    if (++tries > kMaxPlacementTries) {
      throw ConfigError("obstacle placement failed after 10000 tries; arena too crowded");
    }
    const Eigen::Vector2d c = placer.point(cfg_.obstacle_radius);
    bool ok = true;
    for (const auto& o : p.obstacles) {
      if ((c - o.center).norm() - o.radius - cfg_.obstacle_radius < gap) ok = false;
    }
    if (ok) p.obstacles.push_back({c, cfg_.obstacle_radius});
  }

  const double safe_clearance = cfg_.robot_radius + cfg_.d_min + 0.1;
  bool placed = false;
  for (int i = 0; i < kMaxPlacementTries && !placed; ++i) {
    p.pos = placer.point(cfg_.robot_radius);
    placed = surface_clearance(p.pos, p.obstacles) >= safe_clearance;
  }
  if (!placed) throw ConfigError("robot placement failed after 10000 tries; arena too crowded");

  if (cfg_.task == Task::push) {
    placed = false;
    for (int i = 0; i < kMaxPlacementTries && !placed; ++i) {
      p.box = placer.point(cfg_.box_radius + 0.3);
      placed = (p.box - p.pos).norm() > cfg_.box_radius + cfg_.robot_radius + 0.3;
    }
    if (!placed) throw ConfigError("box placement failed after 10000 tries");
    p.goal = place_goal(placer, cfg_, p, p.box);
  } else {
    p.box = p.pos;
    p.goal = place_goal(placer, cfg_, p, p.pos);
  }
  st.body = std::move(p);
  return st;
}

StepResult Environment::step(const EnvState& s, const Eigen::VectorXd& action) const {
  if (action.size() != action_dim()) throw std::invalid_argument("action has wrong dimension");
  StepResult r;
  r.features_now = features(s);
  r.next_state = s;
  r.next_state.t = s.t + 1;
  const Eigen::VectorXd a = action.cwiseMax(-cfg_.action_limit).cwiseMin(cfg_.action_limit);
  if (!a.allFinite()) throw SimulationFault("non-finite action");

  if (cfg_.task == Task::aircraft) {
    const auto next = aircraft_propagate(s.aircraft(), a[0], cfg_);
    r.next_state.body = next;
    r.reward = -a.norm();
    r.done = r.next_state.t >= cfg_.horizon || std::hypot(next.x, next.y) > cfg_.arena_half_width;
  } else {
    ParticleState p = s.particle();
    const Eigen::Vector2d old_pos = p.pos;
    const Eigen::Vector2d old_box = p.box;
    p.vel = a;
    p.pos = clamp_to_arena(p.pos + a * cfg_.dt, cfg_.arena_half_width, cfg_.robot_radius);
    if (cfg_.obstacle_kind == ObstacleKind::pillar) {
      // A few passes settle contact with neighbouring pillars.
      for (int pass = 0; pass < 4; ++pass) {
        bool moved = false;
        for (const auto& o : p.obstacles) {
          const Eigen::Vector2d rel = p.pos - o.center;
          const double reach = o.radius + cfg_.robot_radius;
          const double dist = rel.norm();
          if (dist < reach) {
            const Eigen::Vector2d dir = dist > 0.0 ? Eigen::Vector2d(rel / dist) : Eigen::Vector2d(-a.normalized());
            p.pos = o.center + reach * dir;
            moved = true;
          }
        }
        if (!moved) break;
      }
    }
    if (cfg_.task == Task::push) {
      const Eigen::Vector2d rel = p.box - p.pos;
      const double reach = cfg_.box_radius + cfg_.robot_radius;
      const double dist = rel.norm();
      if (dist < reach && dist > 0.0) {
        p.box = clamp_to_arena(p.box + (reach - dist) * rel / dist, cfg_.arena_half_width, cfg_.box_radius);
      }
    }

    const Eigen::Vector2d& tracked_old = cfg_.task == Task::push ? old_box : old_pos;
    const Eigen::Vector2d& tracked_new = cfg_.task == Task::push ? p.box : p.pos;
    const double before = (p.goal - tracked_old).norm();
    const double after = (p.goal - tracked_new).norm();
    r.reward = before - after;
    if (after <= cfg_.goal_radius) {
      r.reward += 1.0;
      ++p.goals_reached;
      Placer placer{std::mt19937_64(splitmix64(s.seed ^ splitmix64(p.goals_reached))),
                    -cfg_.arena_half_width, cfg_.arena_half_width};
      p.goal = place_goal(placer, cfg_, p, tracked_new);
    }
    r.next_state.body = std::move(p);
    r.done = r.next_state.t >= cfg_.horizon;
  }
  if (!finite_state(r.next_state)) throw SimulationFault("simulation produced a non-finite state");
  r.features_next = features(r.next_state);
  r.violation = r.features_next.d < cfg_.d_min;
  return r;
}

DistanceFeature Environment::features(const EnvState& s) const {
  if (cfg_.task == Task::aircraft) return aircraft_features(s.aircraft(), cfg_);
  return particle_features(s.particle(), cfg_);
}

Eigen::VectorXd Environment::observe(const EnvState& s) const {
  const DistanceFeature f = features(s);
  Eigen::VectorXd o(obs_dim());
  if (cfg_.task == Task::aircraft) {
    const auto& a = s.aircraft();
    o << a.x, a.y, std::sin(a.psi), std::cos(a.psi), f.d, f.d_dot;
    return o;
  }
  const auto& p = s.particle();
  Eigen::Vector2d bearing = Eigen::Vector2d::Zero();
  const int i = nearest_obstacle(p, cfg_);
  if (i >= 0) {
    const Eigen::Vector2d rel = p.obstacles[static_cast<std::size_t>(i)].center - p.pos;
    if (rel.norm() > 0.0) bearing = rel.normalized();
  }
  const Eigen::Vector2d to_goal = p.goal - p.pos;
  o.head<8>() << to_goal.x(), to_goal.y(), p.vel.x(), p.vel.y(), f.d, f.d_dot, bearing.x(), bearing.y();
  if (cfg_.task == Task::push) {
    const Eigen::Vector2d to_box = p.box - p.pos;
    const Eigen::Vector2d box_to_goal = p.goal - p.box;
    o.tail<4>() << to_box.x(), to_box.y(), box_to_goal.x(), box_to_goal.y();
  }
  return o;
}

}  // namespace safemr
