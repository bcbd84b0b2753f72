#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "safemr/harness.hpp"
#include "support.hpp"

using namespace safemr;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tiny_run(const std::string& mode, const std::filesystem::path& out, const std::string& name) {
  return "[run]\nname = " + name + "\nmode = " + mode + "\nseeds = 3\ntotal_env_steps = 1500\n" +
         "start_steps = 300\nupdate_after = 200\neval_interval = 500\neval_episodes = 2\noutput_dir = " +
         out.string() +
         "\n\n[env]\ntask = aircraft\nhorizon = 100\n\n[agent]\npolicy_hidden = 8\ncritic_hidden = 8\n"
         "multiplier_hidden = 8\nbatch_size = 16\n";
}

std::vector<std::vector<double>> read_zeta_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config errors name the field path") {
  CHECK(error_of("[schedule]\nm_pi = two\n").find("schedule.m_pi") != std::string::npos);
  CHECK(error_of("[agent]\ngama = 0.9\n").find("agent.gama: unknown key") != std::string::npos);
  CHECK(error_of("[bogus]\nx = 1\n").find("bogus.x") != std::string::npos);
  CHECK(error_of("[env]\ntask = fly\n").find("env.task") != std::string::npos);
  CHECK(error_of("[run]\nmode = magic\n").find("magic") != std::string::npos);
  CHECK(error_of("[zeta]\nsigma = 5.0\n").find("zeta") != std::string::npos);
  CHECK(error_of("[schedule]\nm_pi = 10\nm_lambda = 4\n") != "");
  CHECK(error_of("[agent]\npolicy_hidden = 64,x\n").find("agent.policy_hidden") != std::string::npos);
}

TEST_CASE("task defaults and mode substitutions") {
  const ExperimentConfig air = parse_config("[env]\ntask = aircraft\n");
  CHECK(air.total_env_steps == 100000);
  CHECK(air.env.task == Task::aircraft);
  const ExperimentConfig goal = parse_config("[env]\ntask = goal\nobstacle_kind = pillar\n");
  CHECK(goal.total_env_steps == 200000);

  ExperimentConfig c = parse_config("[run]\nmode = jointsis\n[mag_reg]\na = 0.45\n");
  CHECK(c.effective_mag_reg().is_zero());
  c.mode = Mode::fac_phi0;
  CHECK(c.effective_zeta().sigma == 0.0);
  CHECK(c.effective_zeta().k == 0.0);
  CHECK(c.effective_zeta().n == 1.0);
  CHECK(c.effective_schedule().freeze_zeta);
  c.mode = Mode::fac_phih;
  CHECK(c.effective_zeta().sigma == 0.3);
  CHECK(c.effective_zeta().k == 0.5);
  CHECK(c.effective_zeta().d_min == c.env.d_min);
  c.mode = Mode::safemr;
  CHECK(!c.effective_schedule().freeze_zeta);
  CHECK(c.effective_mag_reg().a == 0.45);
  CHECK(algorithm_tag(Mode::fac_phi0) == "FAC-phi0");
}

TEST_CASE("config text round trips") {
  ExperimentConfig c = parse_config(
      "[run]\nname = rt\nmode = fac_phih\nseeds = 0,4,9\n[env]\ntask = push\nobstacle_kind = hazard\n"
      "obstacle_radius = 0.3\n[agent]\npolicy_hidden = 32,16\nalpha = 0.05\n[schedule]\nbeta_zeta = 1e-4\n"
      "[zeta]\nsigma = 0.123456789012345\n[baseline]\nphih_k = 0.7\n");
  const ExperimentConfig back = parse_config(to_config_text(c));
  CHECK(to_config_text(back) == to_config_text(c));
  CHECK(back.seeds == std::vector<std::uint64_t>{0, 4, 9});
  CHECK(back.env.task == Task::push);
  CHECK(back.agent.policy_hidden == std::vector<int>{32, 16});
  CHECK(back.zeta_init.sigma == 0.123456789012345);
  CHECK(back.schedule.beta_zeta == 1e-4);
  CHECK(back.phih_k == 0.7);
}

TEST_CASE("run directories honour the output root variable") {
  ExperimentConfig c;
  c.name = "abc";
  c.output_dir = "rel";
  ::setenv("SAFEMR_OUTPUT_ROOT", "/tmp/root_x", 1);
  CHECK(run_directory(c) == std::filesystem::path("/tmp/root_x/rel/abc"));
  c.output_dir = "/abs";
  CHECK(run_directory(c) == std::filesystem::path("/abs/abc"));
  ::unsetenv("SAFEMR_OUTPUT_ROOT");
  CHECK(seed_directory("/r", 7) == std::filesystem::path("/r/seed_7"));
}

TEST_CASE("jointsis logs a zero regularizer and safemr a positive one") {
  testsupport::TempDir dir("harness_js");
  for (const std::string mode : {"jointsis", "safemr"}) {
    const ExperimentConfig c = parse_config(tiny_run(mode, dir.path(), mode));
    const auto results = train(c);
    REQUIRE(results.size() == 1);
    CHECK(!results[0].diverged);
    const auto rows = read_zeta_csv(seed_directory(run_directory(c), 3) / "zeta.csv");
    REQUIRE(!rows.empty());
    for (const auto& r : rows) {
      if (mode == "jointsis") {
        REQUIRE(r.back() == 0.0);
      } else {
        REQUIRE(r.back() > 0.0);
      }
    }
  }
}

TEST_CASE("fac_phi0 logs a constant certificate") {
  testsupport::TempDir dir("harness_fac");
  const ExperimentConfig c = parse_config(tiny_run("fac_phi0", dir.path(), "fac"));
  train(c);
  const auto rows = read_zeta_csv(seed_directory(run_directory(c), 3) / "zeta.csv");
  REQUIRE(!rows.empty());
  for (const auto& r : rows) {
    REQUIRE(r[1] == 0.0);
    REQUIRE(r[2] == 0.0);
    REQUIRE(r[3] == 1.0);
  }
}

TEST_CASE("same seed gives an identical summary") {
  testsupport::TempDir a("harness_a"), b("harness_b");
  const ExperimentConfig ca = parse_config(tiny_run("safemr", a.path(), "det"));
  const ExperimentConfig cb = parse_config(tiny_run("safemr", b.path(), "det"));
  train(ca);
  train(cb);
  const std::string sa = read_file(run_directory(ca) / "summary.json");
  const std::string sb = read_file(run_directory(cb) / "summary.json");
  CHECK(!sa.empty());
  CHECK(sa == sb);
  CHECK(read_file(seed_directory(run_directory(ca), 3) / "zeta.csv") ==
        read_file(seed_directory(run_directory(cb), 3) / "zeta.csv"));

  const auto j = nlohmann::json::parse(sa);
  CHECK(j.at("algorithm").get<std::string>() == "SafeMR");
  const RunSummary s = summarize_run_dir(run_directory(ca));
  CHECK(s.final_return.mean == doctest::Approx(j.at("final_return").at("mean").get<double>()));

  // Checkpoints reload into an agent that acts like the trained one.
  const Agent agent = load_agent(ca, seed_directory(run_directory(ca), 3) / "checkpoint");
  const EvalRecord e1 = evaluate_policy(agent, ca.env, 1, 5);
  const EvalRecord e2 = evaluate_policy(load_agent(cb, seed_directory(run_directory(cb), 3) / "checkpoint"), cb.env, 1, 5);
  CHECK(e1.mean_return == e2.mean_return);
}
