#include "safemr/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "json.hpp"

namespace safemr {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Mode m) {
  switch (m) {
    case Mode::safemr: return "safemr";
    case Mode::jointsis: return "jointsis";
    case Mode::fac_phi0: return "fac_phi0";
    case Mode::fac_phih: return "fac_phih";
  }
  return "?";
}

Mode mode_from_string(const std::string& s) {
  if (s == "safemr") return Mode::safemr;
  if (s == "jointsis") return Mode::jointsis;
  if (s == "fac_phi0") return Mode::fac_phi0;
  if (s == "fac_phih") return Mode::fac_phih;
  throw ConfigError("unknown mode '" + s + "'");
}

std::string algorithm_tag(Mode m) {
  switch (m) {
    case Mode::safemr: return "SafeMR";
    case Mode::jointsis: return "JointSIS";
    case Mode::fac_phi0: return "FAC-phi0";
    case Mode::fac_phih: return "FAC-phih";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  env.validate();
  agent.validate();
  try {
    schedule.validate();
    box.validate();
    mag_reg.validate();
    effective_zeta().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (mode == Mode::safemr || mode == Mode::jointsis) {
    if (!box.contains(effective_zeta())) throw ConfigError("zeta: initial value lies outside the box");
  }
  if (seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
  if (total_env_steps <= 0) throw ConfigError("run.total_env_steps must be positive");
  if (start_steps < 0 || update_after < 0) throw ConfigError("run.start_steps/update_after must be >= 0");
  if (eval_interval <= 0) throw ConfigError("run.eval_interval must be positive");
  if (eval_episodes <= 0) throw ConfigError("run.eval_episodes must be positive");
  if (final_window <= 0) throw ConfigError("run.final_window must be positive");
}

SafetyIndexParams ExperimentConfig::effective_zeta() const {
  SafetyIndexParams p = zeta_init;
  p.d_min = env.d_min;
  if (mode == Mode::fac_phi0) {
    // (0 + d_min)^1 - d - 0 * d_dot
    p.sigma = 0.0;
    p.k = 0.0;
    p.n = 1.0;
  } else if (mode == Mode::fac_phih) {
    p.sigma = phih_sigma;
    p.k = phih_k;
    p.n = phih_n;
  }
  return p;
}

MagRegWeights ExperimentConfig::effective_mag_reg() const {
  if (mode == Mode::jointsis) return {0.0, 0.0};
  return mag_reg;
}

MultiTimescaleSchedule ExperimentConfig::effective_schedule() const {
  MultiTimescaleSchedule s = schedule;
  s.freeze_zeta = mode == Mode::fac_phi0 || mode == Mode::fac_phih;
  return s;
}

// ---------------------------------------------------------------- config io

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& path, const std::string& v) {
  const std::string t = trim(v);
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError(path + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::int64_t to_int(const std::string& path, const std::string& v) {
  const std::string t = trim(v);
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError(path + ": expected an integer, got '" + v + "'");
  }
  return out;
}

template <class T>
std::vector<T> to_list(const std::string& path, const std::string& v) {
  std::vector<T> out;
  std::istringstream is(v);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (trim(tok).empty()) continue;
    out.push_back(static_cast<T>(to_int(path, tok)));
  }
  return out;
}

template <class F>
auto wrap(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    if (std::string_view(e.what()).starts_with(path)) throw;
    throw ConfigError(path + ": " + e.what());
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

using Setter = std::function<void(const std::string& path, const std::string& value)>;

std::map<std::string, Setter> setters(ExperimentConfig& c) {
  std::map<std::string, Setter> m;
  auto dbl = [&m](const std::string& key, double* dst) {
    m[key] = [dst](const std::string& p, const std::string& v) { *dst = to_double(p, v); };
  };
  auto int_ = [&m](const std::string& key, auto* dst) {
    m[key] = [dst](const std::string& p, const std::string& v) {
      *dst = static_cast<std::remove_pointer_t<decltype(dst)>>(to_int(p, v));
    };
  };
  auto ignore = [&m](const std::string& key) { m[key] = [](const std::string&, const std::string&) {}; };

  m["run.name"] = [&c](const std::string&, const std::string& v) { c.name = trim(v); };
  m["run.mode"] = [&c](const std::string& p, const std::string& v) {
    c.mode = wrap(p, [&] { return mode_from_string(trim(v)); });
  };
  m["run.seeds"] = [&c](const std::string& p, const std::string& v) { c.seeds = to_list<std::uint64_t>(p, v); };
  int_("run.total_env_steps", &c.total_env_steps);
  int_("run.start_steps", &c.start_steps);
  int_("run.update_after", &c.update_after);
  int_("run.eval_interval", &c.eval_interval);
  int_("run.eval_episodes", &c.eval_episodes);
  int_("run.final_window", &c.final_window);
  m["run.output_dir"] = [&c](const std::string&, const std::string& v) { c.output_dir = trim(v); };

  // Consumed in the first pass; they select the task defaults.
  ignore("env.task");
  ignore("env.obstacle_kind");
  dbl("env.obstacle_radius", &c.env.obstacle_radius);
  int_("env.obstacle_count", &c.env.obstacle_count);
  dbl("env.dt", &c.env.dt);
  int_("env.horizon", &c.env.horizon);
  dbl("env.action_limit", &c.env.action_limit);
  dbl("env.ego_speed", &c.env.ego_speed);
  dbl("env.intruder_speed", &c.env.intruder_speed);
  dbl("env.d_min", &c.env.d_min);
  dbl("env.arena_half_width", &c.env.arena_half_width);
  dbl("env.robot_radius", &c.env.robot_radius);
  dbl("env.goal_radius", &c.env.goal_radius);
  dbl("env.box_radius", &c.env.box_radius);
  dbl("env.sensor_range", &c.env.sensor_range);

  m["agent.policy_hidden"] = [&c](const std::string& p, const std::string& v) {
    c.agent.policy_hidden = to_list<int>(p, v);
  };
  m["agent.critic_hidden"] = [&c](const std::string& p, const std::string& v) {
    c.agent.critic_hidden = to_list<int>(p, v);
  };
  m["agent.multiplier_hidden"] = [&c](const std::string& p, const std::string& v) {
    c.agent.multiplier_hidden = to_list<int>(p, v);
  };
  m["agent.activation"] = [&c](const std::string& p, const std::string& v) {
    c.agent.activation = wrap(p, [&] { return activation_from_string(trim(v)); });
  };
  dbl("agent.gamma", &c.agent.gamma);
  dbl("agent.alpha", &c.agent.alpha);
  dbl("agent.tau", &c.agent.tau);
  dbl("agent.critic_lr", &c.agent.critic_lr);
  int_("agent.batch_size", &c.agent.batch_size);
  int_("agent.buffer_capacity", &c.agent.buffer_capacity);
  dbl("agent.constraint_discount", &c.agent.constraint_discount);

  int_("schedule.m_pi", &c.schedule.m_pi);
  int_("schedule.m_lambda", &c.schedule.m_lambda);
  int_("schedule.m_phi", &c.schedule.m_phi);
  dbl("schedule.beta_pi", &c.schedule.beta_pi);
  dbl("schedule.beta_lambda", &c.schedule.beta_lambda);
  dbl("schedule.beta_zeta", &c.schedule.beta_zeta);

  dbl("mag_reg.a", &c.mag_reg.a);
  dbl("mag_reg.b", &c.mag_reg.b);

  dbl("zeta.sigma", &c.zeta_init.sigma);
  dbl("zeta.k", &c.zeta_init.k);
  dbl("zeta.n", &c.zeta_init.n);
  dbl("zeta.eta_D", &c.zeta_init.eta_D);

  dbl("box.sigma_lo", &c.box.sigma.lo);
  dbl("box.sigma_hi", &c.box.sigma.hi);
  dbl("box.k_lo", &c.box.k.lo);
  dbl("box.k_hi", &c.box.k.hi);
  dbl("box.n_lo", &c.box.n.lo);
  dbl("box.n_hi", &c.box.n.hi);

  dbl("baseline.phih_sigma", &c.phih_sigma);
  dbl("baseline.phih_k", &c.phih_k);
  dbl("baseline.phih_n", &c.phih_n);
  return m;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::ini_parser::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }

  ExperimentConfig cfg;
  const std::string task = tree.get<std::string>("env.task", "goal");
  const Task t = wrap("env.task", [&] { return task_from_string(trim(task)); });
  if (t == Task::aircraft) {
    cfg.env = EnvConfig::aircraft();
    cfg.total_env_steps = 100000;
  } else {
    const ObstacleKind k = wrap("env.obstacle_kind", [&] {
      return obstacle_kind_from_string(trim(tree.get<std::string>("env.obstacle_kind", "pillar")));
    });
    cfg.env = EnvConfig::particle(t, k, 0.15);
  }

  const auto table = setters(cfg);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError(section + ": key outside of any section");
    for (const auto& [key, node] : body) {
      const std::string path = section + "." + key;
      const auto it = table.find(path);
      if (it == table.end()) throw ConfigError(path + ": unknown key");
      it->second(path, node.data());
    }
  }
  cfg.zeta_init.d_min = cfg.env.d_min;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_config_text(const ExperimentConfig& c) {
  std::ostringstream o;
  o << "[run]\n"
    << "name = " << c.name << "\n"
    << "mode = " << to_string(c.mode) << "\n"
    << "seeds = " << join(c.seeds) << "\n"
    << "total_env_steps = " << c.total_env_steps << "\n"
    << "start_steps = " << c.start_steps << "\n"
    << "update_after = " << c.update_after << "\n"
    << "eval_interval = " << c.eval_interval << "\n"
    << "eval_episodes = " << c.eval_episodes << "\n"
    << "final_window = " << c.final_window << "\n"
    << "output_dir = " << c.output_dir.string() << "\n\n";
  const EnvConfig& e = c.env;
  o << "[env]\n"
    << "task = " << to_string(e.task) << "\n"
    << "obstacle_kind = " << to_string(e.obstacle_kind) << "\n"
    << "obstacle_radius = " << fmt(e.obstacle_radius) << "\n"
    << "obstacle_count = " << e.obstacle_count << "\n"
    << "dt = " << fmt(e.dt) << "\n"
    << "horizon = " << e.horizon << "\n"
    << "action_limit = " << fmt(e.action_limit) << "\n"
    << "ego_speed = " << fmt(e.ego_speed) << "\n"
    << "intruder_speed = " << fmt(e.intruder_speed) << "\n"
    << "d_min = " << fmt(e.d_min) << "\n"
    << "arena_half_width = " << fmt(e.arena_half_width) << "\n"
    << "robot_radius = " << fmt(e.robot_radius) << "\n"
    << "goal_radius = " << fmt(e.goal_radius) << "\n"
    << "box_radius = " << fmt(e.box_radius) << "\n"
    << "sensor_range = " << fmt(e.sensor_range) << "\n\n";
  const AgentConfig& a = c.agent;
  o << "[agent]\n"
    << "policy_hidden = " << join(a.policy_hidden) << "\n"
    << "critic_hidden = " << join(a.critic_hidden) << "\n"
    << "multiplier_hidden = " << join(a.multiplier_hidden) << "\n"
    << "activation = " << to_string(a.activation) << "\n"
    << "gamma = " << fmt(a.gamma) << "\n"
    << "alpha = " << fmt(a.alpha) << "\n"
    << "tau = " << fmt(a.tau) << "\n"
    << "critic_lr = " << fmt(a.critic_lr) << "\n"
    << "batch_size = " << a.batch_size << "\n"
    << "buffer_capacity = " << a.buffer_capacity << "\n"
    << "constraint_discount = " << fmt(a.constraint_discount) << "\n\n";
  const auto& s = c.schedule;
  o << "[schedule]\n"
    << "m_pi = " << s.m_pi << "\n"
    << "m_lambda = " << s.m_lambda << "\n"
    << "m_phi = " << s.m_phi << "\n"
    << "beta_pi = " << fmt(s.beta_pi) << "\n"
    << "beta_lambda = " << fmt(s.beta_lambda) << "\n"
    << "beta_zeta = " << fmt(s.beta_zeta) << "\n\n";
  o << "[mag_reg]\n"
    << "a = " << fmt(c.mag_reg.a) << "\n"
    << "b = " << fmt(c.mag_reg.b) << "\n\n";
  o << "[zeta]\n"
    << "sigma = " << fmt(c.zeta_init.sigma) << "\n"
    << "k = " << fmt(c.zeta_init.k) << "\n"
    << "n = " << fmt(c.zeta_init.n) << "\n"
    << "eta_D = " << fmt(c.zeta_init.eta_D) << "\n\n";
  o << "[box]\n"
    << "sigma_lo = " << fmt(c.box.sigma.lo) << "\n"
    << "sigma_hi = " << fmt(c.box.sigma.hi) << "\n"
    << "k_lo = " << fmt(c.box.k.lo) << "\n"
    << "k_hi = " << fmt(c.box.k.hi) << "\n"
    << "n_lo = " << fmt(c.box.n.lo) << "\n"
    << "n_hi = " << fmt(c.box.n.hi) << "\n\n";
  o << "[baseline]\n"
    << "phih_sigma = " << fmt(c.phih_sigma) << "\n"
    << "phih_k = " << fmt(c.phih_k) << "\n"
    << "phih_n = " << fmt(c.phih_n) << "\n";
  return o.str();
}

// ------------------------------------------------------------------ training

fs::path run_directory(const ExperimentConfig& cfg) {
  fs::path root = cfg.output_dir;
  if (root.is_relative()) {
    if (const char* env = std::getenv("SAFEMR_OUTPUT_ROOT"); env && *env) root = fs::path(env) / root;
  }
  return root / cfg.name;
}

fs::path seed_directory(const fs::path& run_dir, std::uint64_t seed) {
  return run_dir / ("seed_" + std::to_string(seed));
}

namespace {

// Distinct, reproducible episode seeds for training and evaluation.
std::uint64_t train_episode_seed(std::uint64_t seed, std::uint64_t episode) {
  return (seed << 32) ^ episode;
}
std::uint64_t eval_base_seed(std::uint64_t seed) { return (1ULL << 62) | (seed << 24); }

json zeta_json(const SafetyIndexParams& p) { return {{"sigma", p.sigma}, {"k", p.k}, {"n", p.n}}; }

json interval_json(const Interval95& iv) {
  return {{"mean", iv.mean}, {"ci95_half_width", iv.half_width}, {"n", iv.n}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream o(path);
  if (!o) throw std::runtime_error("cannot write " + path.string());
  o << j.dump(2) << '\n';
}

class ZetaCsv {
 public:
  explicit ZetaCsv(const fs::path& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    out_.precision(17);
    out_ << "step,sigma,k,n,mean_multiplier,mean_residual,mag_reg\n";
  }
  void add(const ZetaLogLine& l) {
    out_ << l.step << ',' << l.sigma << ',' << l.k << ',' << l.n << ',' << l.mean_multiplier << ','
         << l.mean_residual << ',' << l.mag_reg << '\n';
  }
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

json seed_summary_json(const ExperimentConfig& cfg, const SeedResult& r, const UpdateCounts& counts) {
  const RunSummary s = summarize(algorithm_tag(cfg.mode), cfg.env.name(), {r.evals}, cfg.final_window);
  json j;
  j["algorithm"] = algorithm_tag(cfg.mode);
  j["environment"] = cfg.env.name();
  j["seed"] = r.seed;
  j["env_steps"] = r.env_steps;
  j["learner_steps"] = r.learner_steps;
  j["final_return"] = s.final_return.mean;
  j["final_cost"] = s.final_cost.mean;
  j["final_zeta"] = zeta_json(r.final_zeta);
  j["evaluations"] = r.evals.size();
  j["counts"] = {{"critic", counts.critic},
                 {"policy", counts.policy},
                 {"multiplier", counts.multiplier},
                 {"zeta", counts.zeta}};
  j["diverged"] = r.diverged;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

}  // namespace

Agent load_agent(const ExperimentConfig& cfg, const fs::path& checkpoint_dir) {
  Agent agent(cfg.env.obs_dim(), cfg.env.action_dim(), cfg.env.action_limit, cfg.agent, cfg.schedule.beta_pi,
              cfg.schedule.beta_lambda, 0);
  agent.load(checkpoint_dir);
  return agent;
}

SeedResult train_seed(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir,
                      const ProgressFn& progress) {
  cfg.validate();
  fs::create_directories(dir);
  const Environment env(cfg.env);
  Agent agent(env.obs_dim(), env.action_dim(), cfg.env.action_limit, cfg.agent, cfg.schedule.beta_pi,
              cfg.schedule.beta_lambda, seed);
  Synthesizer syn(std::move(agent), cfg.effective_zeta(), cfg.effective_schedule(), cfg.box,
                  cfg.effective_mag_reg());
  ReplayBuffer buffer(cfg.agent.buffer_capacity, seed ^ 0x9e3779b97f4a7c15ULL);
  std::mt19937_64 explore(seed + 0x5bd1e995ULL);
  std::uniform_real_distribution<double> unif(-cfg.env.action_limit, cfg.env.action_limit);

  SeedResult result;
  result.seed = seed;
  ZetaCsv zeta_log(dir / "zeta.csv");
  const fs::path ckpt = dir / "checkpoint";

  std::uint64_t episode = 0;
  EnvState state = env.reset(train_episode_seed(seed, episode));
  Eigen::VectorXd obs = env.observe(state);

  auto evaluate = [&](std::int64_t learner_step) {
    EvalRecord rec = evaluate_policy(syn.agent(), cfg.env, cfg.eval_episodes, eval_base_seed(seed));
    rec.iteration = learner_step;
    rec.sigma = syn.zeta().sigma;
    rec.k = syn.zeta().k;
    rec.n = syn.zeta().n;
    rec.seed = seed;
    result.evals.push_back(rec);
    write_eval_csv(dir / "eval.csv", result.evals);
    zeta_log.flush();
    fs::create_directories(ckpt);
    syn.save_checkpoint(ckpt, result.env_steps);
    if (progress) progress(seed, result.env_steps, rec);
  };

  try {
    for (std::int64_t t = 1; t <= cfg.total_env_steps; ++t) {
      Eigen::VectorXd action(env.action_dim());
      if (t <= cfg.start_steps) {
        for (Eigen::Index i = 0; i < action.size(); ++i) action[i] = unif(explore);
      } else {
        action = syn.agent().act(obs, ActMode::stochastic);
      }
      StepResult r = env.step(state, action);
      Eigen::VectorXd next_obs = env.observe(r.next_state);

      Transition tr;
      tr.obs = obs;
      tr.action = action;
      tr.reward = r.reward;
      tr.next_obs = next_obs;
      tr.feat_now = r.features_now;
      tr.feat_next = r.features_next;
      tr.violation = r.violation;
      tr.done = r.terminal;
      buffer.add(std::move(tr));
      result.env_steps = t;

      if (r.done || r.terminal) {
        state = env.reset(train_episode_seed(seed, ++episode));
        obs = env.observe(state);
      } else {
        state = std::move(r.next_state);
        obs = std::move(next_obs);
      }

      if (t >= cfg.update_after && buffer.size() >= cfg.agent.batch_size) {
        const std::int64_t step = ++result.learner_steps;
        const IterationReport rep = syn.training_iteration(step, buffer);
        if (rep.zeta) zeta_log.add(*rep.zeta);
        if (step % cfg.eval_interval == 0) evaluate(step);
      }
    }
    if (result.evals.empty() || result.evals.back().iteration != result.learner_steps) evaluate(result.learner_steps);
  } catch (const DivergenceError& e) {
    result.diverged = true;
    result.error = e.what();
  } catch (const NumericError& e) {
    result.diverged = true;
    result.error = e.what();
  }
  zeta_log.flush();
  result.final_zeta = syn.zeta();
  write_json(dir / "summary.json", seed_summary_json(cfg, result, syn.counts()));
  return result;
}

namespace {

json run_summary_json(const ExperimentConfig& cfg, const std::vector<SeedResult>& results) {
  std::vector<std::vector<EvalRecord>> per_seed;
  std::vector<EvalRecord> all;
  for (const auto& r : results) {
    per_seed.push_back(r.evals);
    all.insert(all.end(), r.evals.begin(), r.evals.end());
  }
  const RunSummary s = summarize(algorithm_tag(cfg.mode), cfg.env.name(), per_seed, cfg.final_window);
  json j;
  j["name"] = cfg.name;
  j["algorithm"] = s.algorithm;
  j["environment"] = s.environment;
  j["mode"] = to_string(cfg.mode);
  j["mag_reg"] = {{"a", cfg.effective_mag_reg().a}, {"b", cfg.effective_mag_reg().b}};
  j["final_return"] = interval_json(s.final_return);
  j["final_cost"] = interval_json(s.final_cost);
  j["safe"] = s.safe();
  j["final_zeta_mean"] = {{"sigma", s.sigma}, {"k", s.k}, {"n", s.n}};
  json seeds = json::array();
  for (const auto& r : results) {
    const RunSummary one = summarize(s.algorithm, s.environment, {r.evals}, cfg.final_window);
    seeds.push_back({{"seed", r.seed},
                     {"final_return", one.final_return.mean},
                     {"final_cost", one.final_cost.mean},
                     {"final_zeta", zeta_json(r.final_zeta)},
                     {"diverged", r.diverged}});
  }
  j["seeds"] = seeds;
  json curve = json::array();
  for (const auto& p : aggregate(all)) {
    curve.push_back({{"iteration", p.iteration},
                     {"return", interval_json(p.ret)},
                     {"cost", interval_json(p.cost)}});
  }
  j["curve"] = curve;
  return j;
}

}  // namespace

std::vector<SeedResult> train(const ExperimentConfig& cfg, int jobs, const ProgressFn& progress) {
  cfg.validate();
  const fs::path run_dir = run_directory(cfg);
  fs::create_directories(run_dir);
  {
    std::ofstream o(run_dir / "config.ini");
    o << to_config_text(cfg);
  }
  std::vector<SeedResult> results(cfg.seeds.size());
  if (jobs <= 1 || cfg.seeds.size() == 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
      results[i] = train_seed(cfg, cfg.seeds[i], seed_directory(run_dir, cfg.seeds[i]), progress);
    }
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::exception_ptr failure;
    auto worker = [&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (next >= cfg.seeds.size() || failure) return;
          i = next++;
        }
        try {
          results[i] = train_seed(cfg, cfg.seeds[i], seed_directory(run_dir, cfg.seeds[i]), progress);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          failure = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }
  write_json(run_dir / "summary.json", run_summary_json(cfg, results));
  return results;
}

RunSummary summarize_run_dir(const fs::path& run_dir) {
  const ExperimentConfig cfg = load_config(run_dir / "config.ini");
  std::vector<std::vector<EvalRecord>> per_seed;
  for (std::uint64_t seed : cfg.seeds) {
    const fs::path csv = seed_directory(run_dir, seed) / "eval.csv";
    if (!fs::exists(csv)) throw std::runtime_error("missing " + csv.string());
    per_seed.push_back(read_eval_csv(csv));
  }
  return summarize(algorithm_tag(cfg.mode), cfg.env.name(), per_seed, cfg.final_window);
}

}  // namespace safemr
