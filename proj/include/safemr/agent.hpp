#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "safemr/approximator.hpp"
#include "safemr/safety_index.hpp"

namespace safemr {

struct Transition {
  Eigen::VectorXd obs;
  Eigen::VectorXd action;
  double reward = 0.0;
  Eigen::VectorXd next_obs;
  DistanceFeature feat_now;
  DistanceFeature feat_next;
  bool violation = false;
  bool done = false;  // absorbing; no bootstrap past it
};

/// Column-major minibatch, one transition per column.
struct Batch {
  Eigen::MatrixXd obs;
  Eigen::MatrixXd action;
  Eigen::VectorXd reward;
  Eigen::MatrixXd next_obs;
  std::vector<DistanceFeature> feat_now;
  std::vector<DistanceFeature> feat_next;
  Eigen::VectorXd done;

  Eigen::Index size() const { return obs.cols(); }
  static Batch from(const std::vector<Transition>& ts);
};

/// Fixed-capacity FIFO with uniform sampling over the filled region.
/// add() and sample() lock, so one rollout writer and one learner reader
/// may share an instance.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::uint64_t seed);

  void add(Transition t);
  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }
  /// i-th oldest stored transition.
  Transition at(std::size_t i) const;
  Batch sample(std::size_t n);

 private:
  mutable std::mutex mu_;
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::size_t filled_ = 0;
  std::vector<Transition> data_;
  std::mt19937_64 rng_;
};

struct AgentConfig {
  std::vector<int> policy_hidden{64, 64};
  std::vector<int> critic_hidden{64, 64};
  std::vector<int> multiplier_hidden{64};
  Activation activation = Activation::relu;
  double gamma = 0.99;
  double alpha = 0.1;
  double tau = 0.005;
  double critic_lr = 3e-4;
  std::size_t batch_size = 256;
  std::size_t buffer_capacity = 100000;
  /// 0 regresses the one-step residual; > 0 bootstraps future residuals.
  double constraint_discount = 0.0;

  void validate() const;
};

struct AgentNets {
  Mlp policy;        // squash_gaussian head
  Mlp q1, q2;        // twin reward critics
  Mlp q1_target, q2_target;
  Mlp q_constraint;  // one-step energy residual critic
  Mlp q_constraint_target;
  Mlp multiplier;    // nonneg head
  SquashedGaussian head;
  double alpha = 0.1;
  double gamma = 0.99;
  double tau = 0.005;
};

enum class ActMode { stochastic, deterministic };

struct CriticStats {
  double reward_loss = 0.0;
  double constraint_loss = 0.0;
  double mean_constraint_target = 0.0;
};

struct PolicyMultiplierGrads {
  Eigen::VectorXd policy;      // G_theta, apply by descent
  Eigen::VectorXd multiplier;  // G_xi, apply by ascent
  double policy_loss = 0.0;
  double mean_multiplier = 0.0;
  double mean_constraint_q = 0.0;
};

class Agent {
 public:
  Agent(int obs_dim, int action_dim, double action_limit, const AgentConfig& cfg,
        double beta_pi, double beta_lambda, std::uint64_t seed);

  const AgentConfig& config() const { return cfg_; }
  AgentNets& nets() { return nets_; }
  const AgentNets& nets() const { return nets_; }
  int obs_dim() const { return obs_dim_; }
  int action_dim() const { return action_dim_; }

  Eigen::VectorXd act(const Eigen::VectorXd& obs, ActMode mode);
  /// Same as act(), with caller-supplied noise (ignored when deterministic).
  Eigen::VectorXd act_with_noise(const Eigen::VectorXd& obs, ActMode mode,
                                 const Eigen::VectorXd& noise) const;

  /// Soft Bellman regression for the twin reward critics, residual
  /// regression for the constraint critic, then target averaging.
  CriticStats critic_update(const Batch& batch, const SafetyIndexParams& zeta);

  /// Gradients of
  ///   mean[alpha log pi(a|s) - min Q(s,a) + lambda(s) Qc(s,a)]
  /// w.r.t. policy weights (multiplier frozen) and of mean[lambda(s) Qc(s,a)]
  /// w.r.t. multiplier weights (policy frozen), a ~ pi reparameterized.
  PolicyMultiplierGrads policy_and_multiplier_grads(const Batch& batch);

  void apply_policy_step(const Eigen::VectorXd& grad);
  void apply_multiplier_step(const Eigen::VectorXd& grad);

  Eigen::VectorXd multiplier_values(const Eigen::MatrixXd& obs) const;

  GradStep& policy_opt() { return policy_opt_; }
  GradStep& multiplier_opt() { return multiplier_opt_; }

  void save(const std::filesystem::path& dir) const;
  /// Restores weights and optimizer state written by save().
  void load(const std::filesystem::path& dir);

  std::mt19937_64& rng() { return rng_; }

 private:
  Eigen::MatrixXd critic_input(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& action) const;
  Eigen::MatrixXd standard_normal(Eigen::Index rows, Eigen::Index cols);

  AgentConfig cfg_;
  int obs_dim_;
  int action_dim_;
  AgentNets nets_;
  GradStep q1_opt_, q2_opt_, qc_opt_, policy_opt_, multiplier_opt_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
};

/// theta_target <- (1 - tau) theta_target + tau theta
void soft_update(Mlp& target, const Mlp& live, double tau);

}  // namespace safemr
