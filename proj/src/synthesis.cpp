#include "safemr/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "json.hpp"

namespace safemr {

namespace {

void guard(double value, const char* what) {
  if (!std::isfinite(value) || std::abs(value) > kDivergenceLimit) {
    throw DivergenceError(std::string("divergence guard tripped on ") + what + " = " + std::to_string(value));
  }
}

}  // namespace

void MultiTimescaleSchedule::validate() const {
  if (!(m_pi > 0 && m_pi < m_lambda && m_lambda < m_phi)) {
    throw std::invalid_argument("schedule requires 0 < m_pi < m_lambda < m_phi");
  }
  if (!(beta_pi > 0.0 && beta_lambda > 0.0 && beta_zeta > 0.0)) {
    throw std::invalid_argument("schedule step sizes must be positive");
  }
}

void ZetaBox::validate() const {
  for (const Interval* iv : {&sigma, &k, &n}) {
    if (!(iv->lo > 0.0 && iv->lo <= iv->hi)) throw std::invalid_argument("zeta box bounds must satisfy 0 < lo <= hi");
  }
  if (n.lo < 1.0) throw std::invalid_argument("zeta box requires n.lo >= 1");
}

bool ZetaBox::contains(const SafetyIndexParams& p) const {
  auto in = [](double v, const Interval& iv) { return v >= iv.lo && v <= iv.hi; };
  return in(p.sigma, sigma) && in(p.k, k) && in(p.n, n);
}

SafetyIndexParams ZetaBox::project(SafetyIndexParams p) const {
  p.sigma = std::clamp(p.sigma, sigma.lo, sigma.hi);
  p.k = std::clamp(p.k, k.lo, k.hi);
  p.n = std::clamp(p.n, n.lo, n.hi);
  return p;
}

double zeta_loss(const Batch& batch, const Eigen::VectorXd& lambda, const SafetyIndexParams& p,
                 const MagRegWeights& w) {
  const auto n = static_cast<std::size_t>(batch.size());
  if (n == 0) throw std::invalid_argument("zeta_loss on an empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += lambda[static_cast<Eigen::Index>(i)] * residual(p, batch.feat_now[i], batch.feat_next[i]);
  }
  return acc / static_cast<double>(n) + mag_reg(p, w);
}

ZetaGradient zeta_grad(const Batch& batch, const Eigen::VectorXd& lambda, const SafetyIndexParams& p,
                       const MagRegWeights& w) {
  const auto n = static_cast<std::size_t>(batch.size());
  if (n == 0) throw std::invalid_argument("zeta_grad on an empty batch");
  if (static_cast<std::size_t>(lambda.size()) != n) throw std::invalid_argument("lambda length mismatch");
  ZetaGradient g;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = lambda[static_cast<Eigen::Index>(i)];
    if (l == 0.0) continue;
    g += residual_grad(p, batch.feat_now[i], batch.feat_next[i]) * l;
  }
  g = g * (1.0 / static_cast<double>(n));
  g += mag_reg_grad(p, w);
  return g;
}

ZetaGradient zeta_grad(const Batch& batch, const Agent& agent, const SafetyIndexParams& p,
                       const MagRegWeights& w) {
  return zeta_grad(batch, agent.multiplier_values(batch.obs), p, w);
}

SafetyIndexParams zeta_step(const SafetyIndexParams& p, const ZetaGradient& grad, double beta_zeta,
                            const ZetaBox& box) {
  SafetyIndexParams next = p;
  next.sigma -= beta_zeta * grad.sigma;
  next.k -= beta_zeta * grad.k;
  next.n -= beta_zeta * grad.n;
  return box.project(next);
}

Synthesizer::Synthesizer(Agent agent, SafetyIndexParams zeta, MultiTimescaleSchedule schedule, ZetaBox box,
                         MagRegWeights weights)
    : agent_(std::move(agent)), zeta_(zeta), schedule_(schedule), box_(box), weights_(weights) {
  schedule_.validate();
  box_.validate();
  weights_.validate();
  zeta_.validate();
  if (!schedule_.freeze_zeta && !box_.contains(zeta_)) {
    throw std::invalid_argument("initial certificate parameters lie outside the zeta box");
  }
}

IterationReport Synthesizer::training_iteration(std::int64_t step, ReplayBuffer& buffer) {
  const std::size_t bs = agent_.config().batch_size;
  if (buffer.size() < bs) throw std::logic_error("replay buffer holds fewer transitions than one batch");
  return training_iteration(step, buffer.sample(bs));
}

IterationReport Synthesizer::training_iteration(std::int64_t step, const Batch& batch) {
  if (step <= 0) throw std::invalid_argument("learner steps are 1-based");
  IterationReport rep;

  rep.critic = agent_.critic_update(batch, zeta_);
  ++counts_.critic;
  guard(rep.critic.reward_loss, "reward critic loss");
  guard(rep.critic.constraint_loss, "constraint critic loss");

  const bool do_policy = step % schedule_.m_pi == 0;
  const bool do_multiplier = step % schedule_.m_lambda == 0;
  if (do_policy || do_multiplier) {
    const PolicyMultiplierGrads g = agent_.policy_and_multiplier_grads(batch);
    guard(g.policy_loss, "policy loss");
    if (do_policy) {
      guard(g.policy.norm(), "policy gradient norm");
      agent_.apply_policy_step(g.policy);
      ++counts_.policy;
      rep.policy_loss = g.policy_loss;
    }
    if (do_multiplier) {
      guard(g.multiplier.norm(), "multiplier gradient norm");
      agent_.apply_multiplier_step(g.multiplier);
      ++counts_.multiplier;
    }
  }

  if (step % schedule_.m_phi == 0) {
    const Eigen::VectorXd lambda = agent_.multiplier_values(batch.obs);
    if (!schedule_.freeze_zeta) {
      const ZetaGradient g = zeta_grad(batch, lambda, zeta_, weights_);
      guard(g.norm(), "zeta gradient norm");
      guard(zeta_loss(batch, lambda, zeta_, weights_), "zeta loss");
      zeta_ = zeta_step(zeta_, g, schedule_.beta_zeta, box_);
      ++counts_.zeta;
    }

    ZetaLogLine line;
    line.step = step;
    line.sigma = zeta_.sigma;
    line.k = zeta_.k;
    line.n = zeta_.n;
    line.mean_multiplier = lambda.mean();
    double res = 0.0;
    for (std::size_t i = 0; i < batch.feat_now.size(); ++i) res += residual(zeta_, batch.feat_now[i], batch.feat_next[i]);
    line.mean_residual = res / static_cast<double>(batch.feat_now.size());
    line.mag_reg = mag_reg(zeta_, weights_);
    rep.zeta = line;
  }
  return rep;
}

void Synthesizer::save_checkpoint(const std::filesystem::path& dir, std::int64_t env_steps) const {
  agent_.save(dir);
  nlohmann::json j;
  j["zeta"] = {{"sigma", zeta_.sigma}, {"k", zeta_.k}, {"n", zeta_.n}, {"d_min", zeta_.d_min}, {"eta_D", zeta_.eta_D}};
  j["mag_reg"] = {{"a", weights_.a}, {"b", weights_.b}};
  j["schedule"] = {{"m_pi", schedule_.m_pi},           {"m_lambda", schedule_.m_lambda},
                   {"m_phi", schedule_.m_phi},         {"beta_pi", schedule_.beta_pi},
                   {"beta_lambda", schedule_.beta_lambda}, {"beta_zeta", schedule_.beta_zeta},
                   {"freeze_zeta", schedule_.freeze_zeta}};
  j["counts"] = {{"critic", counts_.critic},
                 {"policy", counts_.policy},
                 {"multiplier", counts_.multiplier},
                 {"zeta", counts_.zeta}};
  j["env_steps"] = env_steps;
  std::ofstream o(dir / "synthesis.json");
  if (!o) throw std::runtime_error("cannot write synthesis.json in " + dir.string());
  o << j.dump(2) << '\n';
}

std::int64_t Synthesizer::load_checkpoint(const std::filesystem::path& dir) {
  agent_.load(dir);
  std::ifstream in(dir / "synthesis.json");
  if (!in) throw std::runtime_error("missing synthesis.json in " + dir.string());
  const auto j = nlohmann::json::parse(in);
  zeta_ = read_checkpoint_zeta(dir);
  const auto& c = j.at("counts");
  counts_.critic = c.at("critic").get<std::int64_t>();
  counts_.policy = c.at("policy").get<std::int64_t>();
  counts_.multiplier = c.at("multiplier").get<std::int64_t>();
  counts_.zeta = c.at("zeta").get<std::int64_t>();
  return j.at("env_steps").get<std::int64_t>();
}

SafetyIndexParams read_checkpoint_zeta(const std::filesystem::path& dir) {
  std::ifstream in(dir / "synthesis.json");
  if (!in) throw std::runtime_error("missing synthesis.json in " + dir.string());
  const auto j = nlohmann::json::parse(in).at("zeta");
  SafetyIndexParams p;
  p.sigma = j.at("sigma").get<double>();
  p.k = j.at("k").get<double>();
  p.n = j.at("n").get<double>();
  p.d_min = j.at("d_min").get<double>();
  p.eta_D = j.at("eta_D").get<double>();
  p.validate();
  return p;
}

}  // namespace safemr
