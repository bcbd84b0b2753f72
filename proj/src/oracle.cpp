#include "safemr/oracle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace safemr {

namespace {

/// Base-2 radical inverse, with index 1 mapped to 1 so that the 1-D
/// sequence starts at both interval ends: 0, 1, 1/2, 1/4, 3/4, ...
double van_der_corput(std::uint64_t i) {
  double out = 0.0;
  double base = 0.5;
  while (i > 0) {
    if (i & 1u) out += base;
    base *= 0.5;
    i >>= 1;
  }
  return out;
}

double interval_sample(int j) {
  if (j == 0) return 0.0;
  if (j == 1) return 1.0;
  return van_der_corput(static_cast<std::uint64_t>(j - 1));
}

/// Multilinear interpolation of an aircraft value table; points off the
/// x/y range fall back to `outside`.
class AircraftInterpolator {
 public:
  AircraftInterpolator(const StateGrid& g, const std::vector<double>& v) : g_(g), v_(v) {}

  template <typename Outside>
  double operator()(double x, double y, double psi, Outside outside) const {
    int i0[3];
    double t[3];
    const double pts[3] = {x, y, psi};
    for (int a = 0; a < 2; ++a) {
      const GridAxis& ax = g_.axis(static_cast<std::size_t>(a));
      if (pts[a] < ax.lo || pts[a] > ax.hi) return outside();
      const double f = (pts[a] - ax.lo) / ax.spacing();
      int i = static_cast<int>(std::floor(f));
      i = std::clamp(i, 0, ax.points - 2);
      i0[a] = i;
      t[a] = f - i;
    }
    const GridAxis& ap = g_.axis(2);
    const double f = (wrap_angle(psi) - (ap.lo + ap.spacing())) / ap.spacing();
    const double fl = std::floor(f);
    i0[2] = static_cast<int>(((static_cast<long>(fl) % ap.points) + ap.points) % ap.points);
    t[2] = f - fl;

    double acc = 0.0;
    for (int corner = 0; corner < 8; ++corner) {
      double w = 1.0;
      std::size_t cell = 0;
      for (int a = 0; a < 3; ++a) {
        const int bit = (corner >> a) & 1;
        w *= bit ? t[a] : 1.0 - t[a];
        int k = i0[a] + bit;
        if (a == 2) k %= ap.points;
        cell += static_cast<std::size_t>(k) * g_.stride(static_cast<std::size_t>(a));
      }
      if (w != 0.0) acc += w * v_[cell];
    }
    return acc;
  }

 private:
  const StateGrid& g_;
  const std::vector<double>& v_;
};

AircraftState aircraft_cell_state(const StateGrid& g, std::size_t cell) {
  const auto c = g.coords(cell);
  return {c[0], c[1], c[2]};
}

void require_aircraft(const EnvConfig& cfg, const StateGrid& grid, const char* what) {
  if (cfg.task != Task::aircraft) throw ConfigError(std::string(what) + " is only available for the aircraft task");
  if (grid.dims() != 3 || !grid.axis(2).periodic) throw ConfigError("aircraft grids are (x, y, periodic psi)");
}

}  // namespace

double GridAxis::spacing() const {
  return periodic ? (hi - lo) / points : (hi - lo) / (points - 1);
}

double GridAxis::value(int i) const {
  return periodic ? lo + (i + 1) * spacing() : lo + i * spacing();
}

StateGrid::StateGrid(std::vector<GridAxis> axes) : axes_(std::move(axes)) {
  if (axes_.empty()) throw ConfigError("a grid needs at least one axis");
  strides_.assign(axes_.size(), 1);
  cell_count_ = 1;
  for (std::size_t i = axes_.size(); i-- > 0;) {
    if (axes_[i].points < 2) throw ConfigError("grid resolution must be >= 2 per axis");
    if (!(axes_[i].hi > axes_[i].lo)) throw ConfigError("grid axis needs hi > lo");
    strides_[i] = cell_count_;
    cell_count_ *= static_cast<std::size_t>(axes_[i].points);
  }
}

std::vector<int> StateGrid::unravel(std::size_t cell) const {
  std::vector<int> idx(axes_.size());
  for (std::size_t i = 0; i < axes_.size(); ++i) {
    idx[i] = static_cast<int>(cell / strides_[i]);
    cell %= strides_[i];
  }
  return idx;
}

std::size_t StateGrid::ravel(const std::vector<int>& idx) const {
  std::size_t cell = 0;
  for (std::size_t i = 0; i < axes_.size(); ++i) {
    int k = idx[i];
    if (axes_[i].periodic) k = ((k % axes_[i].points) + axes_[i].points) % axes_[i].points;
    cell += static_cast<std::size_t>(k) * strides_[i];
  }
  return cell;
}

std::vector<double> StateGrid::coords(std::size_t cell) const {
  const auto idx = unravel(cell);
  std::vector<double> c(axes_.size());
  for (std::size_t i = 0; i < axes_.size(); ++i) c[i] = axes_[i].value(idx[i]);
  return c;
}

StateGrid StateGrid::aircraft(int nx, int ny, int npsi, double half_width) {
  return StateGrid({{"x", -half_width, half_width, nx, false},
                    {"y", -half_width, half_width, ny, false},
                    {"psi", -std::numbers::pi, std::numbers::pi, npsi, true}});
}

StateGrid StateGrid::particle_plane(const EnvConfig& cfg, int n, double reach) {
  const double r = cfg.obstacle_radius + cfg.robot_radius + reach;
  return StateGrid({{"dx", -r, r, n, false}, {"dy", -r, r, n, false}});
}

StateGrid StateGrid::particle_phase(const EnvConfig& cfg, int npos, int nvel, double reach) {
  const double r = cfg.obstacle_radius + cfg.robot_radius + reach;
  const double v = cfg.action_limit;
  return StateGrid({{"dx", -r, r, npos, false},
                    {"dy", -r, r, npos, false},
                    {"vx", -v, v, nvel, false},
                    {"vy", -v, v, nvel, false}});
}

std::vector<int> parse_grid_spec(const std::string& spec) {
  std::vector<int> out;
  std::string norm = spec;
  std::replace(norm.begin(), norm.end(), 'x', ',');
  std::istringstream in(norm);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ConfigError("bad grid spec: " + spec);
    }
  }
  if (out.empty()) throw ConfigError("bad grid spec: " + spec);
  return out;
}

std::string to_string(FieldProvenance p) {
  return p == FieldProvenance::reachability_oracle ? "reachability_oracle" : "learned_phi";
}

std::size_t UnsafeSetField::unsafe_count() const {
  return static_cast<std::size_t>(std::count(unsafe.begin(), unsafe.end(), std::uint8_t{1}));
}

void UnsafeSetField::write_csv(const std::filesystem::path& path) const {
  std::ofstream o(path);
  if (!o) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t a = 0; a < grid.dims(); ++a) o << grid.axis(a).name << ',';
  o << "value,unsafe\n";
  o.precision(17);
  for (std::size_t c = 0; c < grid.cell_count(); ++c) {
    for (double x : grid.coords(c)) o << x << ',';
    o << value[c] << ',' << static_cast<int>(unsafe[c]) << '\n';
  }
}

void UnsafeSetField::write_binary(const std::filesystem::path& prefix) const {
  std::ofstream b(prefix.string() + ".bin", std::ios::binary);
  if (!b) throw std::runtime_error("cannot write " + prefix.string() + ".bin");
  b.write(reinterpret_cast<const char*>(unsafe.data()), static_cast<std::streamsize>(unsafe.size()));
  for (double v : value) {
    std::uint64_t raw = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) raw = __builtin_bswap64(raw);
    b.write(reinterpret_cast<const char*>(&raw), sizeof raw);
  }
  nlohmann::json j;
  j["provenance"] = to_string(provenance);
  j["cell_count"] = grid.cell_count();
  j["order"] = "row-major, last axis fastest";
  j["layout"] = "uint8 unsafe[cell_count], float64-le value[cell_count]";
  for (std::size_t a = 0; a < grid.dims(); ++a) {
    const auto& ax = grid.axis(a);
    j["axes"].push_back({{"name", ax.name}, {"lo", ax.lo}, {"hi", ax.hi}, {"points", ax.points}, {"periodic", ax.periodic}});
  }
  std::ofstream h(prefix.string() + ".json");
  h << j.dump(2) << '\n';
}

ReachabilityResult true_unsafe_set(const EnvConfig& cfg, const StateGrid& grid, const ReachabilityOptions& opt) {
  require_aircraft(cfg, grid, "backward reachability");
  if (opt.action_count < 1) throw ConfigError("reachability needs at least one action");
  const std::size_t n = grid.cell_count();
  auto margin = [&](double x, double y) { return cfg.d_min - std::hypot(x, y); };

  std::vector<double> l(n);
  std::vector<AircraftState> cells(n);
  for (std::size_t c = 0; c < n; ++c) {
    cells[c] = aircraft_cell_state(grid, c);
    l[c] = margin(cells[c].x, cells[c].y);
  }
  std::vector<double> omegas;
  for (int a = 0; a < opt.action_count; ++a) {
    omegas.push_back(opt.action_count == 1 ? 0.0
                                           : -cfg.action_limit + 2.0 * cfg.action_limit * a / (opt.action_count - 1));
  }
  // Successors are fixed across iterations.
  std::vector<AircraftState> succ(n * omegas.size());
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t a = 0; a < omegas.size(); ++a) succ[c * omegas.size() + a] = aircraft_propagate(cells[c], omegas[a], cfg);
  }

  std::vector<double> v = l;
  std::vector<double> next(n);
  ReachabilityResult res;
  for (int it = 0; it < opt.horizon_steps; ++it) {
    AircraftInterpolator interp(grid, v);
    double change = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < omegas.size(); ++a) {
        const AircraftState& s = succ[c * omegas.size() + a];
        best = std::min(best, interp(s.x, s.y, s.psi, [&] { return margin(s.x, s.y); }));
      }
      next[c] = std::max(l[c], best);
      change = std::max(change, std::abs(next[c] - v[c]));
    }
    v.swap(next);
    res.iterations = it + 1;
    res.last_change = change;
    if (change < opt.tolerance) break;
  }
  res.field.grid = grid;
  res.field.provenance = FieldProvenance::reachability_oracle;
  res.field.value = std::move(v);
  res.field.unsafe.resize(n);
  for (std::size_t c = 0; c < n; ++c) res.field.unsafe[c] = res.field.value[c] >= 0.0 ? 1 : 0;
  return res;
}

EnvState particle_probe_state(const EnvConfig& cfg, const Eigen::Vector2d& offset, const Eigen::Vector2d& vel) {
  ParticleState p;
  p.obstacles.push_back({Eigen::Vector2d::Zero(), cfg.obstacle_radius});
  p.pos = offset;
  p.vel = vel;
  const double corner = cfg.arena_half_width - cfg.goal_radius;
  p.goal = Eigen::Vector2d(corner, corner);
  p.box = Eigen::Vector2d(-corner, corner);
  EnvState s;
  s.body = std::move(p);
  return s;
}

UnsafeSetField learned_unsafe_set(const SafetyIndexParams& p, const EnvConfig& cfg, const StateGrid& grid) {
  UnsafeSetField f;
  f.grid = grid;
  f.provenance = FieldProvenance::learned_phi;
  const std::size_t n = grid.cell_count();
  f.value.resize(n);
  f.unsafe.resize(n);
  if (cfg.task == Task::aircraft) {
    require_aircraft(cfg, grid, "learned unsafe set");
    for (std::size_t c = 0; c < n; ++c) f.value[c] = phi(p, aircraft_features(aircraft_cell_state(grid, c), cfg));
  } else {
    if (grid.dims() != 2) throw ConfigError("particle unsafe-set grids are (dx, dy)");
    for (std::size_t c = 0; c < n; ++c) {
      const auto xy = grid.coords(c);
      const EnvState s = particle_probe_state(cfg, {xy[0], xy[1]}, Eigen::Vector2d::Zero());
      f.value[c] = phi(p, particle_features(s.particle(), cfg));
    }
  }
  for (std::size_t c = 0; c < n; ++c) f.unsafe[c] = f.value[c] > 0.0 ? 1 : 0;
  return f;
}

std::vector<Eigen::VectorXd> action_samples(const EnvConfig& cfg, int k) {
  if (k < 2) throw ConfigError("feasibility check needs K >= 2 action samples");
  std::vector<Eigen::VectorXd> out;
  const double lim = cfg.action_limit;
  for (int j = 0; j < k; ++j) {
    if (cfg.action_dim() == 1) {
      Eigen::VectorXd a(1);
      a[0] = -lim + 2.0 * lim * interval_sample(j);
      out.push_back(a);
    } else {
      const double th = 2.0 * std::numbers::pi * van_der_corput(static_cast<std::uint64_t>(j));
      Eigen::Vector2d u(std::cos(th), std::sin(th));
      u *= lim / u.cwiseAbs().maxCoeff();
      out.push_back(Eigen::VectorXd(u));
    }
  }
  return out;
}

FeasibilityReport verify_feasibility(const SafetyIndexParams& p, const EnvConfig& cfg, const StateGrid& grid, int k) {
  const auto actions = action_samples(cfg, k);
  FeasibilityReport rep;
  const Environment env(cfg);
  if (cfg.task == Task::aircraft) {
    require_aircraft(cfg, grid, "feasibility check");
    for (std::size_t c = 0; c < grid.cell_count(); ++c) {
      const AircraftState s = aircraft_cell_state(grid, c);
      const DistanceFeature now = aircraft_features(s, cfg);
      bool ok = false;
      for (const auto& a : actions) {
        if (residual(p, now, aircraft_features(aircraft_propagate(s, a[0], cfg), cfg)) < 0.0) {
          ok = true;
          break;
        }
      }
      ++rep.cells_checked;
      if (!ok) rep.infeasible_cells.push_back(c);
    }
  } else {
    if (grid.dims() != 4) throw ConfigError("particle feasibility grids are (dx, dy, vx, vy)");
    const double inside = cfg.obstacle_radius + cfg.robot_radius;
    for (std::size_t c = 0; c < grid.cell_count(); ++c) {
      const auto x = grid.coords(c);
      const Eigen::Vector2d off(x[0], x[1]);
      if (cfg.obstacle_kind == ObstacleKind::pillar && off.norm() < inside) continue;
      const EnvState s = particle_probe_state(cfg, off, {x[2], x[3]});
      const DistanceFeature now = particle_features(s.particle(), cfg);
      bool ok = false;
      for (const auto& a : actions) {
        const StepResult r = env.step(s, a);
        if (residual(p, now, r.features_next) < 0.0) {
          ok = true;
          break;
        }
      }
      ++rep.cells_checked;
      if (!ok) rep.infeasible_cells.push_back(c);
    }
  }
  rep.infeasible_count = rep.infeasible_cells.size();
  rep.infeasible_fraction =
      rep.cells_checked == 0 ? 0.0 : static_cast<double>(rep.infeasible_count) / static_cast<double>(rep.cells_checked);
  return rep;
}

SetMetrics set_metrics(const UnsafeSetField& a, const UnsafeSetField& b) {
  if (a.unsafe.size() != b.unsafe.size()) throw ConfigError("fields live on different grids");
  SetMetrics m;
  std::size_t both = 0;
  for (std::size_t c = 0; c < a.unsafe.size(); ++c) {
    const bool ua = a.unsafe[c] != 0;
    const bool ub = b.unsafe[c] != 0;
    m.area_a += ua;
    m.area_b += ub;
    both += ua && ub;
    m.symmetric_difference += ua != ub;
  }
  m.coverage = m.area_b == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(m.area_b);
  return m;
}

}  // namespace safemr
