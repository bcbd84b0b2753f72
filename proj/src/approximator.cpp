#include "safemr/approximator.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "json.hpp"

namespace safemr {

namespace {

double softplus(double z) {
  return z > 30.0 ? z : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return out;
  }
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

std::string to_string(OutputMap m) {
  switch (m) {
    case OutputMap::identity: return "identity";
    case OutputMap::nonneg: return "nonneg";
    case OutputMap::squash_gaussian: return "squash_gaussian";
  }
  return "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw std::invalid_argument("unknown activation: " + s);
}

OutputMap output_map_from_string(const std::string& s) {
  if (s == "identity") return OutputMap::identity;
  if (s == "nonneg") return OutputMap::nonneg;
  if (s == "squash_gaussian") return OutputMap::squash_gaussian;
  throw std::invalid_argument("unknown output map: " + s);
}

Mlp::Mlp(std::vector<int> layer_dims, Activation activation, OutputMap output_map)
    : layer_dims_(std::move(layer_dims)), activation_(activation), output_map_(output_map) {
  if (layer_dims_.size() < 2) throw ShapeError("an Mlp needs at least input and output dims");
  for (int d : layer_dims_) {
    if (d <= 0) throw ShapeError("layer dims must be positive");
  }
  if (output_map_ == OutputMap::squash_gaussian && layer_dims_.back() % 2 != 0) {
    throw ShapeError("squash_gaussian output needs an even width (mean, log_std)");
  }
  params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(param_count_for(layer_dims_)));
}

Mlp Mlp::make(std::vector<int> layer_dims, Activation activation, OutputMap output_map,
              std::mt19937_64& rng) {
  Mlp net(std::move(layer_dims), activation, output_map);
  std::size_t off = 0;
  for (int i = 0; i < net.num_layers(); ++i) {
    const int in = net.layer_dims_[i];
    const int out = net.layer_dims_[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    const std::size_t n = static_cast<std::size_t>(in + 1) * out;
    for (std::size_t j = 0; j < n; ++j) net.params_[static_cast<Eigen::Index>(off + j)] = u(rng);
    off += n;
  }
  return net;
}

std::size_t Mlp::param_count_for(const std::vector<int>& layer_dims) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i) {
    n += static_cast<std::size_t>(layer_dims[i] + 1) * layer_dims[i + 1];
  }
  return n;
}

std::size_t Mlp::layer_offset(int i) const {
  std::size_t off = 0;
  for (int j = 0; j < i; ++j) off += static_cast<std::size_t>(layer_dims_[j] + 1) * layer_dims_[j + 1];
  return off;
}

Mlp::LayerView Mlp::layer(int i) const {
  const int in = layer_dims_[i];
  const int out = layer_dims_[i + 1];
  const double* base = params_.data() + layer_offset(i);
  return {Eigen::Map<const Eigen::MatrixXd>(base, out, in),
          Eigen::Map<const Eigen::VectorXd>(base + static_cast<std::ptrdiff_t>(in) * out, out)};
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
  return forward_batch(x).col(0);
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& x, Tape* tape) const {
  if (x.rows() != input_dim()) {
    throw ShapeError("input has " + std::to_string(x.rows()) + " rows, expected " +
                     std::to_string(input_dim()));
  }
  if (tape) {
    tape->inputs.clear();
    tape->inputs.reserve(static_cast<std::size_t>(num_layers()));
  }
  Eigen::MatrixXd a = x;
  for (int i = 0; i < num_layers(); ++i) {
    const auto l = layer(i);
    Eigen::MatrixXd z = l.w * a;
    z.colwise() += l.b;
    if (tape) tape->inputs.push_back(std::move(a));
    if (i + 1 < num_layers()) {
      if (activation_ == Activation::tanh) {
        a = z.array().tanh().matrix();
      } else {
        a = z.cwiseMax(0.0);
      }
    } else {
      if (tape) tape->final_pre = z;
      a = std::move(z);
    }
  }
  switch (output_map_) {
    case OutputMap::identity: break;
    case OutputMap::nonneg: a = a.unaryExpr([](double z) { return softplus(z); }); break;
    case OutputMap::squash_gaussian: {
      const Eigen::Index m = a.rows() / 2;
      a.bottomRows(m) = a.bottomRows(m).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
      break;
    }
  }
  return a;
}

MlpGradient Mlp::backward(const Tape& tape, const Eigen::MatrixXd& upstream) const {
  if (static_cast<int>(tape.inputs.size()) != num_layers()) throw ShapeError("tape does not match network");
  if (upstream.rows() != output_dim() || upstream.cols() != tape.final_pre.cols()) {
    throw ShapeError("upstream shape does not match forward output");
  }
  Eigen::MatrixXd g = upstream;
  switch (output_map_) {
    case OutputMap::identity: break;
    case OutputMap::nonneg:
      g = g.cwiseProduct(tape.final_pre.unaryExpr([](double z) { return sigmoid(z); }));
      break;
    case OutputMap::squash_gaussian: {
      const Eigen::Index m = g.rows() / 2;
      for (Eigen::Index c = 0; c < g.cols(); ++c) {
        for (Eigen::Index r = m; r < 2 * m; ++r) {
          const double z = tape.final_pre(r, c);
          if (z < kLogStdMin || z > kLogStdMax) g(r, c) = 0.0;
        }
      }
      break;
    }
  }

  MlpGradient out;
  out.params = Eigen::VectorXd::Zero(params_.size());
  for (int i = num_layers() - 1; i >= 0; --i) {
    const auto l = layer(i);
    const Eigen::MatrixXd& a_in = tape.inputs[static_cast<std::size_t>(i)];
    const int in = layer_dims_[i];
    const int o = layer_dims_[i + 1];
    double* base = out.params.data() + layer_offset(i);
    Eigen::Map<Eigen::MatrixXd>(base, o, in).noalias() = g * a_in.transpose();
    Eigen::Map<Eigen::VectorXd>(base + static_cast<std::ptrdiff_t>(in) * o, o) = g.rowwise().sum();
    Eigen::MatrixXd g_in = l.w.transpose() * g;
    if (i > 0) {
      // a_in is the activation output of layer i-1.
      if (activation_ == Activation::tanh) {
        g_in.array() *= (1.0 - a_in.array().square());
      } else {
        g_in.array() *= (a_in.array() > 0.0).cast<double>();
      }
    }
    g = std::move(g_in);
  }
  out.inputs = std::move(g);
  return out;
}

void Mlp::save(const std::filesystem::path& prefix) const {
  const auto bin = std::filesystem::path(prefix.string() + ".bin");
  const auto meta = std::filesystem::path(prefix.string() + ".json");
  std::ofstream ob(bin, std::ios::binary);
  if (!ob) throw std::runtime_error("cannot write " + bin.string());
  for (Eigen::Index i = 0; i < params_.size(); ++i) {
    const std::uint64_t raw = to_little_endian(std::bit_cast<std::uint64_t>(params_[i]));
    ob.write(reinterpret_cast<const char*>(&raw), sizeof raw);
  }
  nlohmann::json j;
  j["layer_dims"] = layer_dims_;
  j["activation"] = to_string(activation_);
  j["output_map"] = to_string(output_map_);
  j["param_count"] = param_count();
  j["dtype"] = "float64-le";
  std::ofstream om(meta);
  if (!om) throw std::runtime_error("cannot write " + meta.string());
  om << j.dump(2) << '\n';
}

Mlp Mlp::load(const std::filesystem::path& prefix) {
  const auto bin = std::filesystem::path(prefix.string() + ".bin");
  const auto meta = std::filesystem::path(prefix.string() + ".json");
  std::ifstream im(meta);
  if (!im) throw std::runtime_error("cannot read " + meta.string());
  const auto j = nlohmann::json::parse(im);
  Mlp net(j.at("layer_dims").get<std::vector<int>>(),
          activation_from_string(j.at("activation").get<std::string>()),
          output_map_from_string(j.at("output_map").get<std::string>()));
  std::ifstream ib(bin, std::ios::binary);
  if (!ib) throw std::runtime_error("cannot read " + bin.string());
  for (Eigen::Index i = 0; i < net.params_.size(); ++i) {
    std::uint64_t raw = 0;
    if (!ib.read(reinterpret_cast<char*>(&raw), sizeof raw)) {
      throw std::runtime_error("truncated weight file " + bin.string());
    }
    net.params_[i] = std::bit_cast<double>(to_little_endian(raw));
  }
  return net;
}

GradStep::GradStep(double step_size, std::size_t n_params, double moment_decay_1,
                   double moment_decay_2, double epsilon)
    : step_size_(step_size), b1_(moment_decay_1), b2_(moment_decay_2), eps_(epsilon),
      m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_params))),
      v_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_params))) {
  if (!(step_size > 0.0)) throw std::invalid_argument("step size must be positive");
  if (!(b1_ > 0.0 && b1_ < 1.0 && b2_ > 0.0 && b2_ < 1.0)) {
    throw std::invalid_argument("moment decays must lie in (0,1)");
  }
  if (!(eps_ > 0.0)) throw std::invalid_argument("epsilon must be positive");
}

void GradStep::apply(Eigen::VectorXd& params, const Eigen::VectorXd& grad, Direction direction) {
  if (grad.size() != params.size() || grad.size() != m_.size()) {
    throw ShapeError("gradient length does not match parameters");
  }
  if (!grad.allFinite()) throw NumericError("non-finite gradient, step refused");
  if (grad.isZero(0.0)) return;
  ++t_;
  m_ = b1_ * m_ + (1.0 - b1_) * grad;
  v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const double sign = direction == Direction::descent ? -1.0 : 1.0;
  params.array() += sign * step_size_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

void GradStep::restore(std::int64_t t, Eigen::VectorXd m, Eigen::VectorXd v) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw ShapeError("moment buffers do not match");
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

GradCheckReport grad_check(const Mlp& f, const Eigen::VectorXd& x, double tol, double h,
                           std::uint64_t upstream_seed) {
  std::mt19937_64 rng(upstream_seed);
  std::normal_distribution<double> nd;
  Eigen::VectorXd u(f.output_dim());
  for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = nd(rng);

  Tape tape;
  f.forward_batch(x, &tape);
  const MlpGradient g = f.backward(tape, u);

  auto objective = [&](const Mlp& net, const Eigen::VectorXd& in) { return u.dot(net.forward(in)); };

  GradCheckReport rep;
  Mlp probe = f;
  auto record = [&](double analytic, double numeric, std::size_t idx) {
    const double e = relative_error(analytic, numeric);
    ++rep.checked;
    if (e > rep.max_rel_error) {
      rep.max_rel_error = e;
      rep.worst_index = idx;
    }
  };
  for (Eigen::Index i = 0; i < probe.params().size(); ++i) {
    const double orig = probe.params()[i];
    probe.params()[i] = orig + h;
    const double fp = objective(probe, x);
    probe.params()[i] = orig - h;
    const double fm = objective(probe, x);
    probe.params()[i] = orig;
    record(g.params[i], (fp - fm) / (2.0 * h), static_cast<std::size_t>(i));
  }
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double fp = objective(f, xp);
    xp[i] = x[i] - h;
    const double fm = objective(f, xp);
    xp[i] = x[i];
    record(g.inputs(i, 0), (fp - fm) / (2.0 * h), static_cast<std::size_t>(probe.params().size() + i));
  }
  rep.passed = rep.max_rel_error <= tol;
  return rep;
}

double log1m_tanh_sq(double u) {
  // 1 - tanh(u)^2 = 4 e^{-2|u|} / (1 + e^{-2|u|})^2
  const double au = std::abs(u);
  return 2.0 * (std::numbers::ln2 - au - std::log1p(std::exp(-2.0 * au)));
}

SquashedGaussian::Sample SquashedGaussian::sample(const Eigen::VectorXd& mean,
                                                  const Eigen::VectorXd& log_std,
                                                  const Eigen::VectorXd& noise) const {
  Sample s;
  const Eigen::Index m = mean.size();
  s.pre_tanh.resize(m);
  s.action.resize(m);
  double lp = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double sd = std::exp(log_std[i]);
    const double u = std::clamp(mean[i] + sd * noise[i], -kPreTanhLimit, kPreTanhLimit);
    const double eps = (u - mean[i]) / sd;
    s.pre_tanh[i] = u;
    s.action[i] = center[i] + half_width[i] * std::tanh(u);
    lp += -0.5 * eps * eps - log_std[i] - 0.5 * std::log(2.0 * std::numbers::pi) -
          std::log(half_width[i]) - log1m_tanh_sq(u);
  }
  s.log_prob = lp;
  return s;
}

Eigen::VectorXd SquashedGaussian::mode(const Eigen::VectorXd& mean) const {
  Eigen::VectorXd a(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    a[i] = center[i] + half_width[i] * std::tanh(std::clamp(mean[i], -kPreTanhLimit, kPreTanhLimit));
  }
  return a;
}

double SquashedGaussian::log_prob(const Eigen::VectorXd& action, const Eigen::VectorXd& mean,
                                  const Eigen::VectorXd& log_std) const {
  double lp = 0.0;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double t = (action[i] - center[i]) / half_width[i];
    if (!(std::abs(t) < 1.0)) return -std::numeric_limits<double>::infinity();
    const double u = std::atanh(t);
    const double eps = (u - mean[i]) / std::exp(log_std[i]);
    lp += -0.5 * eps * eps - log_std[i] - 0.5 * std::log(2.0 * std::numbers::pi) -
          std::log(half_width[i]) - log1m_tanh_sq(u);
  }
  return lp;
}

}  // namespace safemr
