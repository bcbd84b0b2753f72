#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "safemr/agent.hpp"
#include "safemr/envs.hpp"
#include "safemr/eval.hpp"
#include "safemr/safety_index.hpp"
#include "safemr/synthesis.hpp"

namespace safemr {

enum class Mode { safemr, jointsis, fac_phi0, fac_phih };
std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);
/// Algorithm tag used in summaries: SafeMR, JointSIS, FAC-phi0, FAC-phih.
std::string algorithm_tag(Mode m);

struct ExperimentConfig {
  std::string name = "run";
  Mode mode = Mode::safemr;
  EnvConfig env;
  AgentConfig agent;
  MultiTimescaleSchedule schedule;
  MagRegWeights mag_reg{0.35, 0.15};
  SafetyIndexParams zeta_init;  // d_min is taken from env
  ZetaBox box;
  // Handcrafted certificate of the fac_phih baseline.
  double phih_sigma = 0.3;
  double phih_k = 0.5;
  double phih_n = 2.0;

  std::vector<std::uint64_t> seeds{0};
  std::int64_t total_env_steps = 200000;
  std::int64_t start_steps = 5000;    // uniform random actions before this
  std::int64_t update_after = 1000;   // first learner step
  std::int64_t eval_interval = 2500;  // learner steps
  int eval_episodes = 20;
  int final_window = 10;
  std::filesystem::path output_dir = "runs";

  void validate() const;
  /// Certificate, weights and schedule after the mode substitutions.
  SafetyIndexParams effective_zeta() const;
  MagRegWeights effective_mag_reg() const;
  MultiTimescaleSchedule effective_schedule() const;
};

/// Sectioned key = value text. Unknown sections or keys and malformed
/// values throw ConfigError naming the field path, e.g. "schedule.m_pi".
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Round-trips through parse_config.
std::string to_config_text(const ExperimentConfig& cfg);

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<EvalRecord> evals;
  SafetyIndexParams final_zeta;
  std::int64_t env_steps = 0;
  std::int64_t learner_steps = 0;
  bool diverged = false;
  std::string error;
};

/// Output root: `cfg.output_dir / cfg.name`, with a relative output_dir
/// resolved against $SAFEMR_OUTPUT_ROOT when set.
std::filesystem::path run_directory(const ExperimentConfig& cfg);
std::filesystem::path seed_directory(const std::filesystem::path& run_dir, std::uint64_t seed);

using ProgressFn = std::function<void(std::uint64_t seed, std::int64_t env_step, const EvalRecord&)>;

/// Trains one seed and writes eval.csv, zeta.csv, checkpoint/ and
/// summary.json under `dir`. A divergence-guard trip keeps the partial logs
/// and returns with diverged = true.
SeedResult train_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir,
                      const ProgressFn& progress = {});

/// Runs every seed (sequentially, or `jobs` at a time) and writes the run
/// summary.json. Returns the per-seed results in seed order.
std::vector<SeedResult> train(const ExperimentConfig& cfg, int jobs = 1, const ProgressFn& progress = {});

/// Rebuilds the run summary from the per-seed eval.csv files of a run.
RunSummary summarize_run_dir(const std::filesystem::path& run_dir);

/// Agent shaped for `cfg` with weights and optimizer state from a checkpoint.
Agent load_agent(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint_dir);

}  // namespace safemr
