#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>

#include <Eigen/Dense>

#include "safemr/agent.hpp"
#include "safemr/safety_index.hpp"

namespace safemr {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Update periods and step sizes of the nested learner: critics every step,
/// policy every m_pi, multiplier every m_lambda, certificate every m_phi.
struct MultiTimescaleSchedule {
  int m_pi = 2;
  int m_lambda = 4;
  int m_phi = 10;
  double beta_pi = 3e-4;
  double beta_lambda = 1e-4;
  double beta_zeta = 1e-3;
  /// Fixed-certificate baselines: the certificate never updates.
  bool freeze_zeta = false;

  /// Throws ConfigError-compatible std::invalid_argument unless
  /// 0 < m_pi < m_lambda < m_phi and all step sizes are positive.
  void validate() const;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct ZetaBox {
  Interval sigma{0.01, 1.0};
  Interval k{0.01, 3.0};
  Interval n{1.0, 3.0};

  void validate() const;
  bool contains(const SafetyIndexParams& p) const;
  SafetyIndexParams project(SafetyIndexParams p) const;
};

/// Divergence guard threshold on |loss| and gradient norms.
inline constexpr double kDivergenceLimit = 1e6;

/// mean_i[lambda_i * residual(zeta; now_i, next_i)] + mag_reg(zeta)
double zeta_loss(const Batch& batch, const Eigen::VectorXd& lambda, const SafetyIndexParams& p,
                 const MagRegWeights& w);

/// Gradient of zeta_loss with respect to (sigma, k, n). The return term of the
/// regularized Lagrangian does not depend on the certificate.
ZetaGradient zeta_grad(const Batch& batch, const Eigen::VectorXd& lambda, const SafetyIndexParams& p,
                       const MagRegWeights& w);
/// Convenience overload evaluating lambda from the agent's multiplier network.
ZetaGradient zeta_grad(const Batch& batch, const Agent& agent, const SafetyIndexParams& p,
                       const MagRegWeights& w);

/// Plain descent step followed by a componentwise clamp into `box`.
SafetyIndexParams zeta_step(const SafetyIndexParams& p, const ZetaGradient& grad, double beta_zeta,
                            const ZetaBox& box);

struct UpdateCounts {
  std::int64_t critic = 0;
  std::int64_t policy = 0;
  std::int64_t multiplier = 0;
  std::int64_t zeta = 0;
};

/// Emitted every m_phi learner steps; frozen certificates log their constant value.
struct ZetaLogLine {
  std::int64_t step = 0;
  double sigma = 0.0;
  double k = 0.0;
  double n = 0.0;
  double mean_multiplier = 0.0;
  double mean_residual = 0.0;
  double mag_reg = 0.0;
};

struct IterationReport {
  CriticStats critic;
  std::optional<double> policy_loss;
  std::optional<ZetaLogLine> zeta;
};

/// Owns the agent and certificate parameters and runs one learner step at a
/// time in the fixed order: critics, policy, multiplier, certificate.
class Synthesizer {
 public:
  Synthesizer(Agent agent, SafetyIndexParams zeta, MultiTimescaleSchedule schedule, ZetaBox box,
              MagRegWeights weights);

  /// One learner step; `step` is 1-based. Requires buffer.size() >= batch size.
  IterationReport training_iteration(std::int64_t step, ReplayBuffer& buffer);
  /// Same, on a caller-provided batch.
  IterationReport training_iteration(std::int64_t step, const Batch& batch);

  Agent& agent() { return agent_; }
  const Agent& agent() const { return agent_; }
  const SafetyIndexParams& zeta() const { return zeta_; }
  const MultiTimescaleSchedule& schedule() const { return schedule_; }
  const ZetaBox& box() const { return box_; }
  const MagRegWeights& weights() const { return weights_; }
  const UpdateCounts& counts() const { return counts_; }

  /// Agent weights and optimizers plus zeta, counters and schedule.
  void save_checkpoint(const std::filesystem::path& dir, std::int64_t env_steps) const;
  /// Restores into an already-constructed synthesizer of the same shape.
  /// Returns the stored env step counter.
  std::int64_t load_checkpoint(const std::filesystem::path& dir);

 private:
  Agent agent_;
  SafetyIndexParams zeta_;
  MultiTimescaleSchedule schedule_;
  ZetaBox box_;
  MagRegWeights weights_;
  UpdateCounts counts_;
};

/// Reads only the certificate parameters from a checkpoint directory.
SafetyIndexParams read_checkpoint_zeta(const std::filesystem::path& dir);

}  // namespace safemr
