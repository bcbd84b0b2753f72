#include "safemr/agent.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace safemr {

namespace {

std::vector<int> dims(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> d{in};
  d.insert(d.end(), hidden.begin(), hidden.end());
  d.push_back(out);
  return d;
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
}

void write_vector(const std::filesystem::path& path, const Eigen::VectorXd& v) {
  // Optimizer moments: raw float64 dump, native byte order.
  std::ofstream o(path, std::ios::binary);
  if (!o) throw std::runtime_error("cannot write " + path.string());
  o.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

Eigen::VectorXd read_vector(const std::filesystem::path& path, Eigen::Index n) {
  Eigen::VectorXd v(n);
  std::ifstream i(path, std::ios::binary);
  if (!i || !i.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
    throw std::runtime_error("cannot read " + path.string());
  }
  return v;
}

}  // namespace

Batch Batch::from(const std::vector<Transition>& ts) {
  if (ts.empty()) throw std::invalid_argument("empty batch");
  const auto n = static_cast<Eigen::Index>(ts.size());
  Batch b;
  b.obs.resize(ts[0].obs.size(), n);
  b.next_obs.resize(ts[0].next_obs.size(), n);
  b.action.resize(ts[0].action.size(), n);
  b.reward.resize(n);
  b.done.resize(n);
  b.feat_now.reserve(ts.size());
  b.feat_next.reserve(ts.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = ts[static_cast<std::size_t>(i)];
    b.obs.col(i) = t.obs;
    b.next_obs.col(i) = t.next_obs;
    b.action.col(i) = t.action;
    b.reward[i] = t.reward;
    b.done[i] = t.done ? 1.0 : 0.0;
    b.feat_now.push_back(t.feat_now);
    b.feat_next.push_back(t.feat_next);
  }
  return b;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::add(Transition t) {
  std::lock_guard lock(mu_);
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
  } else {
    data_[cursor_] = std::move(t);
  }
  cursor_ = (cursor_ + 1) % capacity_;
  filled_ = std::min(filled_ + 1, capacity_);
}

std::size_t ReplayBuffer::size() const {
  std::lock_guard lock(mu_);
  return filled_;
}

Transition ReplayBuffer::at(std::size_t i) const {
  std::lock_guard lock(mu_);
  if (i >= filled_) throw std::out_of_range("replay index out of range");
  const std::size_t oldest = filled_ < capacity_ ? 0 : cursor_;
  return data_[(oldest + i) % capacity_];
}

Batch ReplayBuffer::sample(std::size_t n) {
  std::lock_guard lock(mu_);
  if (filled_ == 0) throw std::logic_error("sampling from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, filled_ - 1);
  const Transition& first = data_[0];
  const auto bn = static_cast<Eigen::Index>(n);
  Batch b;
  b.obs.resize(first.obs.size(), bn);
  b.next_obs.resize(first.next_obs.size(), bn);
  b.action.resize(first.action.size(), bn);
  b.reward.resize(bn);
  b.done.resize(bn);
  b.feat_now.resize(n);
  b.feat_next.resize(n);
  for (Eigen::Index i = 0; i < bn; ++i) {
    const Transition& t = data_[pick(rng_)];
    b.obs.col(i) = t.obs;
    b.next_obs.col(i) = t.next_obs;
    b.action.col(i) = t.action;
    b.reward[i] = t.reward;
    b.done[i] = t.done ? 1.0 : 0.0;
    b.feat_now[static_cast<std::size_t>(i)] = t.feat_now;
    b.feat_next[static_cast<std::size_t>(i)] = t.feat_next;
  }
  return b;
}

void AgentConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("agent.gamma must lie in [0,1)");
  if (!(alpha >= 0.0)) throw std::invalid_argument("agent.alpha must be >= 0");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("agent.tau must lie in (0,1]");
  if (!(critic_lr > 0.0)) throw std::invalid_argument("agent.critic_lr must be positive");
  if (batch_size == 0) throw std::invalid_argument("agent.batch_size must be positive");
  if (buffer_capacity < batch_size) throw std::invalid_argument("agent.buffer_capacity below batch size");
  if (!(constraint_discount >= 0.0 && constraint_discount < 1.0)) {
    throw std::invalid_argument("agent.constraint_discount must lie in [0,1)");
  }
}

void soft_update(Mlp& target, const Mlp& live, double tau) {
  target.params() = (1.0 - tau) * target.params() + tau * live.params();
}

Agent::Agent(int obs_dim, int action_dim, double action_limit, const AgentConfig& cfg, double beta_pi,
             double beta_lambda, std::uint64_t seed)
    : cfg_(cfg), obs_dim_(obs_dim), action_dim_(action_dim), rng_(seed) {
  cfg_.validate();
  const int critic_in = obs_dim + action_dim;
  nets_.policy = Mlp::make(dims(obs_dim, cfg.policy_hidden, 2 * action_dim), cfg.activation,
                           OutputMap::squash_gaussian, rng_);
  nets_.q1 = Mlp::make(dims(critic_in, cfg.critic_hidden, 1), cfg.activation, OutputMap::identity, rng_);
  nets_.q2 = Mlp::make(dims(critic_in, cfg.critic_hidden, 1), cfg.activation, OutputMap::identity, rng_);
  nets_.q_constraint =
      Mlp::make(dims(critic_in, cfg.critic_hidden, 1), cfg.activation, OutputMap::identity, rng_);
  nets_.multiplier = Mlp::make(dims(obs_dim, cfg.multiplier_hidden, 1), cfg.activation, OutputMap::nonneg, rng_);
  nets_.q1_target = nets_.q1;
  nets_.q2_target = nets_.q2;
  nets_.q_constraint_target = nets_.q_constraint;
  nets_.head.center = Eigen::VectorXd::Zero(action_dim);
  nets_.head.half_width = Eigen::VectorXd::Constant(action_dim, action_limit);
  nets_.alpha = cfg.alpha;
  nets_.gamma = cfg.gamma;
  nets_.tau = cfg.tau;

  q1_opt_ = GradStep(cfg.critic_lr, nets_.q1.param_count());
  q2_opt_ = GradStep(cfg.critic_lr, nets_.q2.param_count());
  qc_opt_ = GradStep(cfg.critic_lr, nets_.q_constraint.param_count());
  policy_opt_ = GradStep(beta_pi, nets_.policy.param_count());
  multiplier_opt_ = GradStep(beta_lambda, nets_.multiplier.param_count());
}

Eigen::MatrixXd Agent::standard_normal(Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = normal_(rng_);
  }
  return m;
}

Eigen::MatrixXd Agent::critic_input(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& action) const {
  Eigen::MatrixXd x(obs.rows() + action.rows(), obs.cols());
  x.topRows(obs.rows()) = obs;
  x.bottomRows(action.rows()) = action;
  return x;
}

Eigen::VectorXd Agent::act(const Eigen::VectorXd& obs, ActMode mode) {
  Eigen::VectorXd noise = Eigen::VectorXd::Zero(action_dim_);
  if (mode == ActMode::stochastic) {
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = normal_(rng_);
  }
  return act_with_noise(obs, mode, noise);
}

Eigen::VectorXd Agent::act_with_noise(const Eigen::VectorXd& obs, ActMode mode,
                                      const Eigen::VectorXd& noise) const {
  const Eigen::VectorXd out = nets_.policy.forward(obs);
  const Eigen::VectorXd mean = out.head(action_dim_);
  if (mode == ActMode::deterministic) return nets_.head.mode(mean);
  return nets_.head.sample(mean, out.tail(action_dim_), noise).action;
}

Eigen::VectorXd Agent::multiplier_values(const Eigen::MatrixXd& obs) const {
  return nets_.multiplier.forward_batch(obs).row(0).transpose();
}

CriticStats Agent::critic_update(const Batch& batch, const SafetyIndexParams& zeta) {
  const Eigen::Index n = batch.size();
  if (n == 0) throw std::invalid_argument("critic_update on an empty batch");
  const int m = action_dim_;
  CriticStats stats;

  // Next actions from the current policy.
  const Eigen::MatrixXd pol = nets_.policy.forward_batch(batch.next_obs);
  const Eigen::MatrixXd noise = standard_normal(m, n);
  Eigen::MatrixXd next_action(m, n);
  Eigen::VectorXd next_logp(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto s = nets_.head.sample(pol.col(i).head(m), pol.col(i).tail(m), noise.col(i));
    next_action.col(i) = s.action;
    next_logp[i] = s.log_prob;
  }
  const Eigen::MatrixXd next_in = critic_input(batch.next_obs, next_action);
  const Eigen::VectorXd tq1 = nets_.q1_target.forward_batch(next_in).row(0).transpose();
  const Eigen::VectorXd tq2 = nets_.q2_target.forward_batch(next_in).row(0).transpose();
  const Eigen::VectorXd soft_v = tq1.cwiseMin(tq2) - nets_.alpha * next_logp;
  const Eigen::VectorXd y =
      batch.reward + nets_.gamma * (Eigen::VectorXd::Ones(n) - batch.done).cwiseProduct(soft_v);

  Eigen::VectorXd yc(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    yc[i] = residual(zeta, batch.feat_now[static_cast<std::size_t>(i)], batch.feat_next[static_cast<std::size_t>(i)]);
  }
  if (cfg_.constraint_discount > 0.0) {
    const Eigen::VectorXd tqc = nets_.q_constraint_target.forward_batch(next_in).row(0).transpose();
    yc += cfg_.constraint_discount * (Eigen::VectorXd::Ones(n) - batch.done).cwiseProduct(tqc);
  }
  stats.mean_constraint_target = yc.mean();

  const Eigen::MatrixXd in = critic_input(batch.obs, batch.action);
  auto regress = [&](Mlp& net, GradStep& opt, const Eigen::VectorXd& target) {
    Tape tape;
    const Eigen::VectorXd q = net.forward_batch(in, &tape).row(0).transpose();
    const Eigen::VectorXd err = q - target;
    const double loss = err.squaredNorm() / static_cast<double>(n);
    check_finite(loss, "critic loss");
    const Eigen::MatrixXd up = (2.0 / static_cast<double>(n)) * err.transpose();
    opt.apply(net.params(), net.backward(tape, up).params, Direction::descent);
    return loss;
  };
  stats.reward_loss = 0.5 * (regress(nets_.q1, q1_opt_, y) + regress(nets_.q2, q2_opt_, y));
  stats.constraint_loss = regress(nets_.q_constraint, qc_opt_, yc);

  soft_update(nets_.q1_target, nets_.q1, nets_.tau);
  soft_update(nets_.q2_target, nets_.q2, nets_.tau);
  soft_update(nets_.q_constraint_target, nets_.q_constraint, nets_.tau);
  return stats;
}

PolicyMultiplierGrads Agent::policy_and_multiplier_grads(const Batch& batch) {
  const Eigen::Index n = batch.size();
  if (n == 0) throw std::invalid_argument("policy gradient on an empty batch");
  const int m = action_dim_;
  const double inv_n = 1.0 / static_cast<double>(n);
  const double alpha = nets_.alpha;
  PolicyMultiplierGrads out;

  Tape pol_tape;
  const Eigen::MatrixXd pol = nets_.policy.forward_batch(batch.obs, &pol_tape);
  const Eigen::MatrixXd noise = standard_normal(m, n);
  Eigen::MatrixXd action(m, n), pre(m, n);
  Eigen::VectorXd logp(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto s = nets_.head.sample(pol.col(i).head(m), pol.col(i).tail(m), noise.col(i));
    action.col(i) = s.action;
    pre.col(i) = s.pre_tanh;
    logp[i] = s.log_prob;
  }

  const Eigen::MatrixXd in = critic_input(batch.obs, action);
  Tape t1, t2, tc, tl;
  const Eigen::VectorXd q1 = nets_.q1.forward_batch(in, &t1).row(0).transpose();
  const Eigen::VectorXd q2 = nets_.q2.forward_batch(in, &t2).row(0).transpose();
  const Eigen::VectorXd qc = nets_.q_constraint.forward_batch(in, &tc).row(0).transpose();
  const Eigen::VectorXd lam = nets_.multiplier.forward_batch(batch.obs, &tl).row(0).transpose();

  Eigen::MatrixXd up1 = Eigen::MatrixXd::Zero(1, n);
  Eigen::MatrixXd up2 = Eigen::MatrixXd::Zero(1, n);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool first = q1[i] <= q2[i];
    (first ? up1 : up2)(0, i) = -inv_n;
    loss += alpha * logp[i] - std::min(q1[i], q2[i]) + lam[i] * qc[i];
  }
  out.policy_loss = loss * inv_n;
  check_finite(out.policy_loss, "policy loss");
  out.mean_multiplier = lam.mean();
  out.mean_constraint_q = qc.mean();

  // dL/da through the critics (only the action rows of the input gradient).
  Eigen::MatrixXd grad_a = nets_.q1.backward(t1, up1).inputs.bottomRows(m);
  grad_a += nets_.q2.backward(t2, up2).inputs.bottomRows(m);
  grad_a += nets_.q_constraint.backward(tc, (lam * inv_n).transpose()).inputs.bottomRows(m);

  // Reparameterized chain rule into (mean, log_std).
  Eigen::MatrixXd up_pol(2 * m, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const double u = pre(j, i);
      const double t = std::tanh(u);
      const double sd = std::exp(pol(m + j, i));
      const double eps = noise(j, i);
      const bool clipped = std::abs(pol(j, i) + sd * eps) > SquashedGaussian::kPreTanhLimit;
      const double da_du = nets_.head.half_width[j] * (1.0 - t * t);
      const double dl_du = clipped ? 0.0 : grad_a(j, i) * da_du + alpha * inv_n * 2.0 * t;
      up_pol(j, i) = dl_du;
      up_pol(m + j, i) = dl_du * sd * eps - alpha * inv_n;
    }
  }
  out.policy = nets_.policy.backward(pol_tape, up_pol).params;
  out.multiplier = nets_.multiplier.backward(tl, (qc * inv_n).transpose()).params;
  return out;
}

void Agent::apply_policy_step(const Eigen::VectorXd& grad) {
  policy_opt_.apply(nets_.policy.params(), grad, Direction::descent);
}

void Agent::apply_multiplier_step(const Eigen::VectorXd& grad) {
  multiplier_opt_.apply(nets_.multiplier.params(), grad, Direction::ascent);
}

void Agent::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const std::pair<const char*, const Mlp*> named[] = {
      {"policy", &nets_.policy},
      {"q1", &nets_.q1},
      {"q2", &nets_.q2},
      {"q1_target", &nets_.q1_target},
      {"q2_target", &nets_.q2_target},
      {"q_constraint", &nets_.q_constraint},
      {"q_constraint_target", &nets_.q_constraint_target},
      {"multiplier", &nets_.multiplier},
  };
  for (const auto& [name, net] : named) net->save(dir / name);

  nlohmann::json j;
  const std::pair<const char*, const GradStep*> opts[] = {
      {"q1", &q1_opt_}, {"q2", &q2_opt_}, {"q_constraint", &qc_opt_},
      {"policy", &policy_opt_}, {"multiplier", &multiplier_opt_},
  };
  for (const auto& [name, opt] : opts) {
    j["optimizers"][name] = {{"step_size", opt->step_size()},
                             {"moment_decay_1", opt->moment_decay_1()},
                             {"moment_decay_2", opt->moment_decay_2()},
                             {"epsilon", opt->epsilon()},
                             {"t", opt->steps_taken()}};
    write_vector(dir / (std::string(name) + ".m.bin"), opt->first_moment());
    write_vector(dir / (std::string(name) + ".v.bin"), opt->second_moment());
  }
  j["alpha"] = nets_.alpha;
  j["gamma"] = nets_.gamma;
  j["tau"] = nets_.tau;
  j["action_limit"] = nets_.head.half_width[0];
  std::ostringstream rs;
  rs << rng_;
  j["rng"] = rs.str();
  std::ofstream o(dir / "agent.json");
  o << j.dump(2) << '\n';
}

void Agent::load(const std::filesystem::path& dir) {
  nets_.policy = Mlp::load(dir / "policy");
  nets_.q1 = Mlp::load(dir / "q1");
  nets_.q2 = Mlp::load(dir / "q2");
  nets_.q1_target = Mlp::load(dir / "q1_target");
  nets_.q2_target = Mlp::load(dir / "q2_target");
  nets_.q_constraint = Mlp::load(dir / "q_constraint");
  nets_.q_constraint_target = Mlp::load(dir / "q_constraint_target");
  nets_.multiplier = Mlp::load(dir / "multiplier");
  if (nets_.policy.input_dim() != obs_dim_ || nets_.policy.output_dim() != 2 * action_dim_) {
    throw ShapeError("checkpoint policy does not match task dimensions");
  }

  std::ifstream in(dir / "agent.json");
  if (!in) throw std::runtime_error("missing agent.json in " + dir.string());
  const auto j = nlohmann::json::parse(in);
  const std::pair<const char*, std::pair<GradStep*, const Mlp*>> opts[] = {
      {"q1", {&q1_opt_, &nets_.q1}},
      {"q2", {&q2_opt_, &nets_.q2}},
      {"q_constraint", {&qc_opt_, &nets_.q_constraint}},
      {"policy", {&policy_opt_, &nets_.policy}},
      {"multiplier", {&multiplier_opt_, &nets_.multiplier}},
  };
  for (const auto& [name, p] : opts) {
    const auto& oj = j.at("optimizers").at(name);
    const auto n = static_cast<Eigen::Index>(p.second->param_count());
    GradStep g(oj.at("step_size").get<double>(), p.second->param_count(), oj.at("moment_decay_1").get<double>(),
               oj.at("moment_decay_2").get<double>(), oj.at("epsilon").get<double>());
    g.restore(oj.at("t").get<std::int64_t>(), read_vector(dir / (std::string(name) + ".m.bin"), n),
              read_vector(dir / (std::string(name) + ".v.bin"), n));
    *p.first = std::move(g);
  }
  nets_.alpha = j.at("alpha").get<double>();
  nets_.gamma = j.at("gamma").get<double>();
  nets_.tau = j.at("tau").get<double>();
  std::istringstream rs(j.at("rng").get<std::string>());
  rs >> rng_;
}

}  // namespace safemr
