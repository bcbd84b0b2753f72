// Command-line front end: train, evaluate, boundary, verify, compare.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "safemr/eval.hpp"
#include "safemr/harness.hpp"
#include "safemr/oracle.hpp"
#include "safemr/synthesis.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace safemr;

namespace {

struct CommonOpts {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string grid;
  int actions = 0;
};

// Config of the run a checkpoint belongs to: <run>/seed_N/checkpoint.
ExperimentConfig config_for(const std::string& config_path, const std::string& checkpoint) {
  if (!config_path.empty()) return load_config(config_path);
  if (checkpoint.empty()) throw ConfigError("--config or --checkpoint is required");
  const fs::path guess = fs::path(checkpoint).parent_path().parent_path() / "config.ini";
  if (!fs::exists(guess)) throw ConfigError("no --config given and " + guess.string() + " does not exist");
  return load_config(guess);
}

fs::path out_dir(const std::string& out, const std::string& fallback) {
  fs::path p = out.empty() ? fs::path(fallback) : fs::path(out);
  if (p.is_relative()) {
    if (const char* root = std::getenv("SAFEMR_OUTPUT_ROOT"); root && *root) p = fs::path(root) / p;
  }
  fs::create_directories(p);
  return p;
}

StateGrid aircraft_grid(const std::string& spec) {
  const auto dims = parse_grid_spec(spec.empty() ? "61x61x41" : spec);
  if (dims.size() != 3) throw ConfigError("--grid: aircraft grids have three axes (x, y, psi)");
  return StateGrid::aircraft(dims[0], dims[1], dims[2]);
}

StateGrid feasibility_grid(const EnvConfig& env, const std::string& spec) {
  if (env.task == Task::aircraft) return aircraft_grid(spec);
  const auto dims = parse_grid_spec(spec.empty() ? "41x9" : spec);
  if (dims.size() == 2) return StateGrid::particle_phase(env, dims[0], dims[1]);
  if (dims.size() == 4 && dims[0] == dims[1] && dims[2] == dims[3]) {
    return StateGrid::particle_phase(env, dims[0], dims[2]);
  }
  throw ConfigError("--grid: particle grids are NPOSxNVEL or NPOSxNPOSxNVELxNVEL");
}

SafetyIndexParams certificate(const ExperimentConfig& cfg, const std::string& checkpoint,
                              const std::optional<double>& sigma, const std::optional<double>& k,
                              const std::optional<double>& n) {
  if (sigma || k || n) {
    if (!(sigma && k && n)) throw ConfigError("explicit certificates need all of --sigma, --k and --n");
    SafetyIndexParams p = cfg.effective_zeta();
    p.sigma = *sigma;
    p.k = *k;
    p.n = *n;
    if (!cfg.box.contains(p)) {
      throw ConfigError("explicit certificate (" + std::to_string(*sigma) + ", " + std::to_string(*k) + ", " +
                        std::to_string(*n) + ") lies outside the zeta box");
    }
    return p;
  }
  if (checkpoint.empty()) throw ConfigError("--checkpoint or an explicit --sigma/--k/--n is required");
  return read_checkpoint_zeta(checkpoint);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream o(path);
  if (!o) throw std::runtime_error("cannot write " + path.string());
  o << j.dump(2) << '\n';
}

void write_slice(const fs::path& path, const UnsafeSetField& f, double psi) {
  const StateGrid& g = f.grid;
  int best = 0;
  for (int i = 1; i < g.axis(2).points; ++i) {
    if (std::abs(wrap_angle(g.axis(2).value(i) - psi)) < std::abs(wrap_angle(g.axis(2).value(best) - psi))) best = i;
  }
  std::ofstream o(path);
  o.precision(17);
  o << "x,y,psi,value,unsafe\n";
  for (int i = 0; i < g.axis(0).points; ++i) {
    for (int j = 0; j < g.axis(1).points; ++j) {
      const std::size_t c = g.ravel({i, j, best});
      o << g.axis(0).value(i) << ',' << g.axis(1).value(j) << ',' << g.axis(2).value(best) << ',' << f.value[c] << ','
        << static_cast<int>(f.unsafe[c]) << '\n';
    }
  }
}

json metrics_json(const SetMetrics& m) {
  return {{"area_learned", m.area_a},
          {"area_true", m.area_b},
          {"coverage", m.coverage},
          {"symmetric_difference", m.symmetric_difference}};
}

int cmd_train(const CommonOpts& o, int jobs, std::optional<std::int64_t> steps) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.seed) cfg.seeds = {*o.seed};
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (steps) cfg.total_env_steps = *steps;
  cfg.validate();
  const auto results = train(cfg, jobs, [](std::uint64_t seed, std::int64_t env_step, const EvalRecord& r) {
    std::printf("seed %llu  env_step %lld  iter %lld  return %.4f  cost %.3f  zeta (%.4f, %.4f, %.4f)  lambda %.4f\n",
                static_cast<unsigned long long>(seed), static_cast<long long>(env_step),
                static_cast<long long>(r.iteration), r.mean_return, r.mean_episode_cost, r.sigma, r.k, r.n,
                r.mean_multiplier);
    std::fflush(stdout);
  });
  int rc = 0;
  for (const auto& r : results) {
    if (r.diverged) {
      std::fprintf(stderr, "seed %llu diverged: %s\n", static_cast<unsigned long long>(r.seed), r.error.c_str());
      rc = 3;
    }
  }
  std::printf("run directory: %s\n", run_directory(cfg).string().c_str());
  return rc;
}

int cmd_evaluate(const CommonOpts& o, const std::string& checkpoint, int episodes, const std::string& trajectory) {
  const ExperimentConfig cfg = config_for(o.config, checkpoint);
  if (checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const Agent agent = load_agent(cfg, checkpoint);
  const std::uint64_t seed = o.seed.value_or(0);
  EvalRecord rec;
  if (!trajectory.empty()) {
    TrajectoryCsvWriter writer(trajectory, cfg.env);
    rec = evaluate_policy(agent, cfg.env, episodes, seed, std::ref(writer));
  } else {
    rec = evaluate_policy(agent, cfg.env, episodes, seed);
  }
  const SafetyIndexParams z = read_checkpoint_zeta(checkpoint);
  const json j = {{"environment", cfg.env.name()},
                  {"episodes", episodes},
                  {"seed", seed},
                  {"mean_return", rec.mean_return},
                  {"mean_episode_cost", rec.mean_episode_cost},
                  {"mean_multiplier", rec.mean_multiplier},
                  {"zeta", {{"sigma", z.sigma}, {"k", z.k}, {"n", z.n}}}};
  std::cout << j.dump(2) << '\n';
  if (!o.out.empty()) write_json(out_dir(o.out, "") / "evaluation.json", j);
  return 0;
}

int cmd_boundary(const CommonOpts& o, const std::string& checkpoint, const std::optional<double>& sigma,
                 const std::optional<double>& k, const std::optional<double>& n, double psi, int horizon) {
  const ExperimentConfig cfg = config_for(o.config, checkpoint);
  const SafetyIndexParams p = certificate(cfg, checkpoint, sigma, k, n);
  const fs::path out = out_dir(o.out, "boundary");
  json j = {{"environment", cfg.env.name()}, {"zeta", {{"sigma", p.sigma}, {"k", p.k}, {"n", p.n}}}};

  if (cfg.env.task != Task::aircraft) {
    const auto dims = parse_grid_spec(o.grid.empty() ? "41" : o.grid);
    const StateGrid g = StateGrid::particle_plane(cfg.env, dims[0]);
    const UnsafeSetField learned = learned_unsafe_set(p, cfg.env, g);
    learned.write_csv(out / "learned.csv");
    learned.write_binary(out / "learned");
    j["area_learned"] = learned.unsafe_count();
    write_json(out / "metrics.json", j);
    std::cout << j.dump(2) << '\n';
    return 0;
  }

  const StateGrid g = aircraft_grid(o.grid);
  const UnsafeSetField learned = learned_unsafe_set(p, cfg.env, g);
  ReachabilityOptions ro;
  ro.horizon_steps = horizon;
  if (o.actions > 0) ro.action_count = o.actions;
  const ReachabilityResult truth = true_unsafe_set(cfg.env, g, ro);
  learned.write_csv(out / "learned.csv");
  learned.write_binary(out / "learned");
  truth.field.write_csv(out / "true.csv");
  truth.field.write_binary(out / "true");
  write_slice(out / "slice_learned.csv", learned, psi);
  write_slice(out / "slice_true.csv", truth.field, psi);
  j["metrics"] = metrics_json(set_metrics(learned, truth.field));
  j["oracle_iterations"] = truth.iterations;
  j["oracle_last_change"] = truth.last_change;
  write_json(out / "metrics.json", j);
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_verify(const CommonOpts& o, const std::string& checkpoint, const std::optional<double>& sigma,
               const std::optional<double>& k, const std::optional<double>& n) {
  const ExperimentConfig cfg = config_for(o.config, checkpoint);
  const SafetyIndexParams p = certificate(cfg, checkpoint, sigma, k, n);
  const StateGrid g = feasibility_grid(cfg.env, o.grid);
  const int kk = o.actions > 0 ? o.actions : 16;
  const FeasibilityReport rep = verify_feasibility(p, cfg.env, g, kk);
  const json j = {{"environment", cfg.env.name()},
                  {"zeta", {{"sigma", p.sigma}, {"k", p.k}, {"n", p.n}}},
                  {"actions", kk},
                  {"cells_checked", rep.cells_checked},
                  {"infeasible_count", rep.infeasible_count},
                  {"infeasible_fraction", rep.infeasible_fraction}};
  std::cout << j.dump(2) << '\n';
  if (!o.out.empty()) write_json(out_dir(o.out, "") / "feasibility.json", j);
  return 0;
}

int cmd_compare(const CommonOpts& o, const std::vector<std::string>& runs) {
  std::vector<RunSummary> summaries;
  json zeta_rows = json::array();
  for (const auto& dir : runs) {
    const ExperimentConfig cfg = load_config(fs::path(dir) / "config.ini");
    const RunSummary s = summarize_run_dir(dir);
    summaries.push_back(s);
    zeta_rows.push_back({{"run", dir},
                         {"algorithm", s.algorithm},
                         {"environment", s.environment},
                         {"a", cfg.effective_mag_reg().a},
                         {"b", cfg.effective_mag_reg().b},
                         {"sigma", s.sigma},
                         {"k", s.k},
                         {"n", s.n},
                         {"final_return", s.final_return.mean},
                         {"final_return_ci95", s.final_return.half_width},
                         {"final_cost", s.final_cost.mean}});
  }
  std::printf("%-24s %-10s %-8s %-8s %12s %10s %8s %8s %8s\n", "environment", "algorithm", "a", "b", "return",
              "cost", "sigma", "k", "n");
  for (const auto& r : zeta_rows) {
    std::printf("%-24s %-10s %-8.3f %-8.3f %12.4f %10.4f %8.4f %8.4f %8.4f\n",
                r["environment"].get<std::string>().c_str(), r["algorithm"].get<std::string>().c_str(),
                r["a"].get<double>(), r["b"].get<double>(), r["final_return"].get<double>(),
                r["final_cost"].get<double>(), r["sigma"].get<double>(), r["k"].get<double>(), r["n"].get<double>());
  }
  json table = json::array();
  for (const auto& row : improvement_table(summaries)) {
    json r = {{"environment", row.environment},
              {"safemr_return", row.safemr_return},
              {"safemr_safe", row.safemr_safe},
              {"best_safe_algorithm", row.best_safe_algorithm},
              {"best_safe_return", row.best_safe_return}};
    r["improvement"] = row.improvement ? json(*row.improvement) : json(nullptr);
    table.push_back(r);
    if (row.improvement) {
      std::printf("%s: SafeMR %.4f vs %s %.4f -> %+.1f%%\n", row.environment.c_str(), row.safemr_return,
                  row.best_safe_algorithm.c_str(), row.best_safe_return, 100.0 * *row.improvement);
    } else {
      std::printf("%s: SafeMR %.4f, no safe baseline with nonzero return\n", row.environment.c_str(),
                  row.safemr_return);
    }
  }
  if (!o.out.empty()) {
    write_json(out_dir(o.out, "") / "compare.json", {{"runs", zeta_rows}, {"improvement", table}});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safe policy and energy-function certificate learning"};
  app.require_subcommand(1);

  CommonOpts o;
  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "experiment config file");
    sub->add_option("--seed", o.seed, "single seed (overrides the config)");
    sub->add_option("--out", o.out, "output directory (relative paths honour SAFEMR_OUTPUT_ROOT)");
    sub->add_option("--grid", o.grid, "grid spec such as 61x61x41");
    sub->add_option("--actions", o.actions, "number of sampled actions K");
  };

  int jobs = 1;
  std::optional<std::int64_t> steps;
  auto* train_cmd = app.add_subcommand("train", "train every seed of a config");
  add_common(train_cmd);
  train_cmd->get_option("--config")->required();
  train_cmd->add_option("--jobs", jobs, "seeds trained concurrently")->check(CLI::PositiveNumber);
  train_cmd->add_option("--steps", steps, "override run.total_env_steps");

  std::string checkpoint;
  int episodes = 20;
  std::string trajectory;
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint in deterministic mode");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval_cmd->add_option("--episodes", episodes, "evaluation episodes")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--trajectory", trajectory, "write per-step trajectory CSV");

  std::optional<double> sigma, k, n;
  double psi = 0.0;
  int horizon = 200;
  auto* boundary_cmd = app.add_subcommand("boundary", "learned vs reachable unsafe sets");
  add_common(boundary_cmd);
  boundary_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory");
  boundary_cmd->add_option("--sigma", sigma);
  boundary_cmd->add_option("--k", k);
  boundary_cmd->add_option("--n", n);
  boundary_cmd->add_option("--psi", psi, "heading slice for the 2-D export");
  boundary_cmd->add_option("--horizon", horizon, "value-iteration horizon")->check(CLI::PositiveNumber);

  auto* verify_cmd = app.add_subcommand("verify", "brute-force feasibility of a certificate");
  add_common(verify_cmd);
  verify_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory");
  verify_cmd->add_option("--sigma", sigma);
  verify_cmd->add_option("--k", k);
  verify_cmd->add_option("--n", n);

  std::vector<std::string> runs;
  auto* compare_cmd = app.add_subcommand("compare", "summary and improvement tables over run directories");
  add_common(compare_cmd);
  compare_cmd->add_option("runs", runs, "run directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(o, jobs, steps);
    if (*eval_cmd) return cmd_evaluate(o, checkpoint, episodes, trajectory);
    if (*boundary_cmd) return cmd_boundary(o, checkpoint, sigma, k, n, psi, horizon);
    if (*verify_cmd) return cmd_verify(o, checkpoint, sigma, k, n);
    if (*compare_cmd) return cmd_compare(o, runs);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
