#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace safemr {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Activation { tanh, relu };

/// Map applied to the final affine layer.
///  - identity: raw outputs.
///  - nonneg: softplus, every component >= 0.
///  - squash_gaussian: outputs are [mean (m), log_std (m)], log_std clamped
///    to [kLogStdMin, kLogStdMax]. Sampling lives in SquashedGaussian.
enum class OutputMap { identity, nonneg, squash_gaussian };

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

std::string to_string(Activation a);
std::string to_string(OutputMap m);
Activation activation_from_string(const std::string& s);
OutputMap output_map_from_string(const std::string& s);

/// Intermediate values of a batched forward pass, consumed by backward().
struct Tape {
  std::vector<Eigen::MatrixXd> inputs;  // input of each layer, (in_dim x batch)
  Eigen::MatrixXd final_pre;            // final layer before the output map
};

struct MlpGradient {
  Eigen::VectorXd params;
  Eigen::MatrixXd inputs;  // (input_dim x batch)
};

/// Fully connected network with a flat parameter vector.
///
/// Parameter layout per layer: W (out x in, column-major) followed by b (out).
/// Batches are column-major matrices, one sample per column.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> layer_dims, Activation activation, OutputMap output_map);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static Mlp make(std::vector<int> layer_dims, Activation activation,
                  OutputMap output_map, std::mt19937_64& rng);

  static std::size_t param_count_for(const std::vector<int>& layer_dims);

  int input_dim() const { return layer_dims_.front(); }
  int output_dim() const { return layer_dims_.back(); }
  int num_layers() const { return static_cast<int>(layer_dims_.size()) - 1; }
  const std::vector<int>& layer_dims() const { return layer_dims_; }
  Activation activation() const { return activation_; }
  OutputMap output_map() const { return output_map_; }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }
  std::size_t param_count() const { return static_cast<std::size_t>(params_.size()); }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x, Tape* tape = nullptr) const;

  /// Reverse-mode gradient of sum(upstream .* forward(x)) w.r.t. parameters
  /// and inputs. `tape` must come from forward_batch on the same parameters.
  MlpGradient backward(const Tape& tape, const Eigen::MatrixXd& upstream) const;

  /// Writes `<prefix>.bin` (little-endian float64 parameters) and
  /// `<prefix>.json` (layer_dims, activation, output_map).
  void save(const std::filesystem::path& prefix) const;
  static Mlp load(const std::filesystem::path& prefix);

 private:
  struct LayerView {
    Eigen::Map<const Eigen::MatrixXd> w;
    Eigen::Map<const Eigen::VectorXd> b;
  };
  LayerView layer(int i) const;
  std::size_t layer_offset(int i) const;

  std::vector<int> layer_dims_;
  Activation activation_ = Activation::tanh;
  OutputMap output_map_ = OutputMap::identity;
  Eigen::VectorXd params_;
};

enum class Direction { descent, ascent };

/// Adaptive-moment optimizer state for one parameter vector.
class GradStep {
 public:
  GradStep() = default;
  GradStep(double step_size, std::size_t n_params, double moment_decay_1 = 0.9,
           double moment_decay_2 = 0.999, double epsilon = 1e-8);

  /// Throws NumericError (and leaves everything untouched) on a non-finite
  /// gradient. An all-zero gradient is a no-op, moments included.
  void apply(Eigen::VectorXd& params, const Eigen::VectorXd& grad, Direction direction);

  double step_size() const { return step_size_; }
  void set_step_size(double s) { step_size_ = s; }
  std::int64_t steps_taken() const { return t_; }

  // Raw state, for checkpoints.
  double moment_decay_1() const { return b1_; }
  double moment_decay_2() const { return b2_; }
  double epsilon() const { return eps_; }
  const Eigen::VectorXd& first_moment() const { return m_; }
  const Eigen::VectorXd& second_moment() const { return v_; }
  void restore(std::int64_t t, Eigen::VectorXd m, Eigen::VectorXd v);

 private:
  double step_size_ = 1e-3;
  double b1_ = 0.9;
  double b2_ = 0.999;
  double eps_ = 1e-8;
  std::int64_t t_ = 0;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;  // index into [params..., inputs...]
  std::size_t checked = 0;
};

/// Compares backward() against central differences of sum(u .* forward(x))
/// for a fixed pseudo-random upstream u, over every parameter and input.
GradCheckReport grad_check(const Mlp& f, const Eigen::VectorXd& x, double tol,
                           double h = 1e-5, std::uint64_t upstream_seed = 7);

/// Relative error convention shared by the gradient checks.
double relative_error(double a, double b, double floor = 1e-6);

/// tanh-squashed diagonal Gaussian over a box [center - half, center + half].
struct SquashedGaussian {
  Eigen::VectorXd center;
  Eigen::VectorXd half_width;

  struct Sample {
    Eigen::VectorXd action;
    Eigen::VectorXd pre_tanh;  // u = mean + std * noise (clamped)
    double log_prob = 0.0;
  };

  /// Pre-tanh values are clamped to +-kPreTanhLimit so actions stay strictly
  /// inside the box in floating point.
  static constexpr double kPreTanhLimit = 15.0;

  Sample sample(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_std,
                const Eigen::VectorXd& noise) const;
  Eigen::VectorXd mode(const Eigen::VectorXd& mean) const;
  double log_prob(const Eigen::VectorXd& action, const Eigen::VectorXd& mean,
                  const Eigen::VectorXd& log_std) const;
};

/// log(1 - tanh(u)^2), stable for large |u|.
double log1m_tanh_sq(double u);

}  // namespace safemr
