#include "safemr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

namespace safemr {

std::vector<double> flatten_state(const EnvState& s) {
  if (const auto* a = std::get_if<AircraftState>(&s.body)) return {a->x, a->y, a->psi};
  const auto& p = s.particle();
  return {p.pos.x(), p.pos.y(), p.vel.x(), p.vel.y(), p.goal.x(), p.goal.y(), p.box.x(), p.box.y()};
}

std::vector<std::string> state_column_names(const EnvConfig& cfg) {
  if (cfg.task == Task::aircraft) return {"x", "y", "psi"};
  return {"px", "py", "vx", "vy", "gx", "gy", "bx", "by"};
}

EvalRecord evaluate_policy(const PolicyFn& policy, const EnvConfig& cfg, int episodes, std::uint64_t seed,
                           const TrajectorySink& sink) {
  if (episodes <= 0) throw std::invalid_argument("evaluation needs at least one episode");
  const Environment env(cfg);
  double total_return = 0.0;
  double total_cost = 0.0;
  for (int ep = 0; ep < episodes; ++ep) {
    EnvState s = env.reset(seed + static_cast<std::uint64_t>(ep));
    bool done = false;
    while (!done) {
      const Eigen::VectorXd a = policy(env.observe(s), s);
      StepResult r = env.step(s, a);
      total_return += r.reward;
      total_cost += r.violation ? 1.0 : 0.0;
      if (sink) {
        TrajectoryRow row;
        row.episode = ep;
        row.t = s.t;
        row.state = flatten_state(s);
        row.action.assign(a.data(), a.data() + a.size());
        row.reward = r.reward;
        row.d = r.features_next.d;
        row.d_dot = r.features_next.d_dot;
        row.violation = r.violation;
        sink(row);
      }
      done = r.done || r.terminal;
      s = std::move(r.next_state);
    }
  }
  EvalRecord rec;
  rec.mean_return = total_return / episodes;
  rec.mean_episode_cost = total_cost / episodes;
  rec.seed = seed;
  return rec;
}

EvalRecord evaluate_policy(const Agent& agent, const EnvConfig& cfg, int episodes, std::uint64_t seed,
                           const TrajectorySink& sink) {
  double lambda_sum = 0.0;
  std::size_t visits = 0;
  const Mlp& mult = agent.nets().multiplier;
  PolicyFn fn = [&](const Eigen::VectorXd& obs, const EnvState&) {
    lambda_sum += mult.forward(obs)[0];
    ++visits;
    return agent.act_with_noise(obs, ActMode::deterministic, Eigen::VectorXd::Zero(agent.action_dim()));
  };
  EvalRecord rec = evaluate_policy(fn, cfg, episodes, seed, sink);
  rec.mean_multiplier = visits ? lambda_sum / static_cast<double>(visits) : 0.0;
  return rec;
}

TrajectoryCsvWriter::TrajectoryCsvWriter(const std::filesystem::path& path, const EnvConfig& cfg)
    : out_(std::make_shared<std::ofstream>(path)) {
  if (!*out_) throw std::runtime_error("cannot write " + path.string());
  *out_ << "episode,t";
  for (const auto& c : state_column_names(cfg)) *out_ << ',' << c;
  for (int i = 0; i < cfg.action_dim(); ++i) *out_ << ",a" << i;
  *out_ << ",reward,d,d_dot,violation\n";
  out_->precision(17);
}

void TrajectoryCsvWriter::operator()(const TrajectoryRow& row) {
  auto& o = *out_;
  o << row.episode << ',' << row.t;
  for (double v : row.state) o << ',' << v;
  for (double v : row.action) o << ',' << v;
  o << ',' << row.reward << ',' << row.d << ',' << row.d_dot << ',' << (row.violation ? 1 : 0) << '\n';
}

TrajectoryRecount recount_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    std::string tok;
    while (std::getline(hs, tok, ',')) header.push_back(tok);
  }
  const auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("trajectory CSV lacks column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_ep = col("episode"), c_r = col("reward"), c_v = col("violation");
  std::map<int, std::pair<double, double>> per_episode;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, ',')) f.push_back(tok);
    if (f.size() != header.size()) throw std::runtime_error("malformed trajectory row: " + line);
    auto& acc = per_episode[std::stoi(f[c_ep])];
    acc.first += std::stod(f[c_r]);
    acc.second += std::stod(f[c_v]);
  }
  TrajectoryRecount r;
  r.episodes = static_cast<int>(per_episode.size());
  for (const auto& [ep, acc] : per_episode) {
    r.mean_return += acc.first;
    r.mean_episode_cost += acc.second;
  }
  if (r.episodes > 0) {
    r.mean_return /= r.episodes;
    r.mean_episode_cost /= r.episodes;
  }
  return r;
}

Interval95 t_interval(const std::vector<double>& xs) {
  Interval95 out;
  out.n = static_cast<int>(xs.size());
  if (xs.empty()) return out;
  out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() < 2) return out;
  double ss = 0.0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  const boost::math::students_t dist(static_cast<double>(xs.size() - 1));
  out.half_width = boost::math::quantile(dist, 0.975) * sd / std::sqrt(static_cast<double>(xs.size()));
  return out;
}

std::vector<CurvePoint> aggregate(const std::vector<EvalRecord>& records) {
  std::map<std::int64_t, std::pair<std::vector<double>, std::vector<double>>> by_iter;
  for (const auto& r : records) {
    auto& slot = by_iter[r.iteration];
    slot.first.push_back(r.mean_return);
    slot.second.push_back(r.mean_episode_cost);
  }
  std::vector<CurvePoint> out;
  for (const auto& [it, v] : by_iter) out.push_back({it, t_interval(v.first), t_interval(v.second)});
  return out;
}

RunSummary summarize(const std::string& algorithm, const std::string& environment,
                     const std::vector<std::vector<EvalRecord>>& per_seed, int window) {
  RunSummary s;
  s.algorithm = algorithm;
  s.environment = environment;
  std::vector<double> rets, costs;
  double sg = 0.0, kk = 0.0, nn = 0.0;
  for (const auto& recs : per_seed) {
    if (recs.empty()) continue;
    const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(window), recs.size());
    double r = 0.0, c = 0.0;
    for (std::size_t i = recs.size() - w; i < recs.size(); ++i) {
      r += recs[i].mean_return;
      c += recs[i].mean_episode_cost;
    }
    rets.push_back(r / static_cast<double>(w));
    costs.push_back(c / static_cast<double>(w));
    sg += recs.back().sigma;
    kk += recs.back().k;
    nn += recs.back().n;
  }
  s.final_return = t_interval(rets);
  s.final_cost = t_interval(costs);
  if (!rets.empty()) {
    s.sigma = sg / static_cast<double>(rets.size());
    s.k = kk / static_cast<double>(rets.size());
    s.n = nn / static_cast<double>(rets.size());
  }
  return s;
}

std::vector<ImprovementRow> improvement_table(const std::vector<RunSummary>& summaries) {
  std::vector<std::string> envs;
  for (const auto& s : summaries) {
    if (std::find(envs.begin(), envs.end(), s.environment) == envs.end()) envs.push_back(s.environment);
  }
  std::vector<ImprovementRow> rows;
  for (const auto& env : envs) {
    const RunSummary* safemr = nullptr;
    const RunSummary* best = nullptr;
    for (const auto& s : summaries) {
      if (s.environment != env) continue;
      if (s.algorithm == "SafeMR") {
        safemr = &s;
      } else if (s.safe() && (!best || s.final_return.mean > best->final_return.mean)) {
        best = &s;
      }
    }
    if (!safemr) continue;
    ImprovementRow row;
    row.environment = env;
    row.safemr_return = safemr->final_return.mean;
    row.safemr_safe = safemr->safe();
    if (best) {
      row.best_safe_algorithm = best->algorithm;
      row.best_safe_return = best->final_return.mean;
      if (best->final_return.mean != 0.0) {
        row.improvement = (row.safemr_return - row.best_safe_return) / row.best_safe_return;
      }
    }
    rows.push_back(row);
  }
  return rows;
}

void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRecord>& records) {
  std::ofstream o(path);
  if (!o) throw std::runtime_error("cannot write " + path.string());
  o.precision(17);
  o << "iteration,mean_return,mean_episode_cost,sigma,k,n,mean_multiplier,seed\n";
  for (const auto& r : records) {
    o << r.iteration << ',' << r.mean_return << ',' << r.mean_episode_cost << ',' << r.sigma << ',' << r.k << ','
      << r.n << ',' << r.mean_multiplier << ',' << r.seed << '\n';
  }
}

std::vector<EvalRecord> read_eval_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<EvalRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f[8];
    for (auto& x : f) std::getline(ls, x, ',');
    EvalRecord r;
    r.iteration = std::stoll(f[0]);
    r.mean_return = std::stod(f[1]);
    r.mean_episode_cost = std::stod(f[2]);
    r.sigma = std::stod(f[3]);
    r.k = std::stod(f[4]);
    r.n = std::stod(f[5]);
    r.mean_multiplier = std::stod(f[6]);
    r.seed = std::stoull(f[7]);
    out.push_back(r);
  }
  return out;
}

}  // namespace safemr
