#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "safemr/agent.hpp"
#include "safemr/envs.hpp"

namespace safemr {

struct EvalRecord {
  std::int64_t iteration = 0;
  double mean_return = 0.0;
  double mean_episode_cost = 0.0;  // violations per episode
  double sigma = 0.0;
  double k = 0.0;
  double n = 0.0;
  double mean_multiplier = 0.0;
  std::uint64_t seed = 0;
};

struct TrajectoryRow {
  int episode = 0;
  int t = 0;
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
  double d = 0.0;
  double d_dot = 0.0;
  bool violation = false;
};

using PolicyFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& obs, const EnvState& state)>;
using TrajectorySink = std::function<void(const TrajectoryRow&)>;

/// Flattened state for trajectory export.
std::vector<double> flatten_state(const EnvState& s);
std::vector<std::string> state_column_names(const EnvConfig& cfg);

/// Runs `episodes` episodes seeded seed, seed+1, ...; returns mean
/// undiscounted return and mean violation count per episode.
EvalRecord evaluate_policy(const PolicyFn& policy, const EnvConfig& cfg, int episodes, std::uint64_t seed,
                           const TrajectorySink& sink = {});
/// Deterministic-mode agent evaluation; also averages lambda over visited states.
EvalRecord evaluate_policy(const Agent& agent, const EnvConfig& cfg, int episodes, std::uint64_t seed,
                           const TrajectorySink& sink = {});

class TrajectoryCsvWriter {
 public:
  TrajectoryCsvWriter(const std::filesystem::path& path, const EnvConfig& cfg);
  void operator()(const TrajectoryRow& row);

 private:
  std::shared_ptr<std::ofstream> out_;
};

struct TrajectoryRecount {
  double mean_return = 0.0;
  double mean_episode_cost = 0.0;
  int episodes = 0;
};
/// Recomputes return and cost from an exported trajectory CSV.
TrajectoryRecount recount_trajectory_csv(const std::filesystem::path& path);

struct Interval95 {
  double mean = 0.0;
  double half_width = 0.0;  // Student-t, n-1 dof; 0 when n < 2
  int n = 0;
};

Interval95 t_interval(const std::vector<double>& xs);

struct CurvePoint {
  std::int64_t iteration = 0;
  Interval95 ret;
  Interval95 cost;
};

/// Groups records by iteration across seeds.
std::vector<CurvePoint> aggregate(const std::vector<EvalRecord>& records);

struct RunSummary {
  std::string algorithm;  // SafeMR | JointSIS | FAC-phi0 | FAC-phih
  std::string environment;
  Interval95 final_return;
  Interval95 final_cost;
  double sigma = 0.0, k = 0.0, n = 0.0;  // mean final certificate over seeds
  bool safe() const { return final_cost.mean == 0.0; }
};

/// Per-seed final value = mean over that seed's last `window` evaluations.
RunSummary summarize(const std::string& algorithm, const std::string& environment,
                     const std::vector<std::vector<EvalRecord>>& per_seed, int window = 10);

struct ImprovementRow {
  std::string environment;
  double safemr_return = 0.0;
  bool safemr_safe = false;
  std::string best_safe_algorithm;  // empty when no safe baseline exists
  double best_safe_return = 0.0;
  std::optional<double> improvement;  // (S - B) / B, unset when B == 0 or no baseline
};

std::vector<ImprovementRow> improvement_table(const std::vector<RunSummary>& summaries);

void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRecord>& records);
std::vector<EvalRecord> read_eval_csv(const std::filesystem::path& path);

}  // namespace safemr
