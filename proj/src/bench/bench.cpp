#include "deduct/bench.hpp"
#include "deduct/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace deduct::bench {

double succ_rate(std::span<const sim::EpisodeLog> logs) {
  if (logs.empty()) throw DomainError("succ_rate: no episodes");
  Money deducted, cost, bill;
  for (const auto& l : logs) {
    deducted += l.total_deducted;
    cost += l.total_cost;
    bill += l.bill;
  }
  if (bill.is_zero()) throw DomainError("succ_rate: total bill is zero");
  return static_cast<double>((deducted - cost).minor()) / static_cast<double>(bill.minor());
}

void validate_policy_name(const std::string& name) {
  if (std::find(kAllPolicies.begin(), kAllPolicies.end(), name) == kAllPolicies.end()) {
    throw ConfigError("unknown policy '" + name + "'");
  }
}

BenchConfig BenchConfig::from_ini(const IniConfig& ini) {
  BenchConfig c;
  const std::string s = "bench";
  c.train_accounts = static_cast<int>(ini.get_int(s, "train_accounts", c.train_accounts));
  c.eval_accounts = static_cast<int>(ini.get_int(s, "eval_accounts", c.eval_accounts));
  c.seeds = static_cast<int>(ini.get_int(s, "seeds", c.seeds));
  c.master_seed = static_cast<std::uint64_t>(ini.get_int(s, "seed", static_cast<long long>(c.master_seed)));
  c.log_policy = ini.get_string(s, "log_policy", c.log_policy);
  c.retry_daily = ini.get_bool(s, "retry_daily", c.retry_daily);
  c.alpha_grid = ini.get_doubles(s, "alpha_grid", c.alpha_grid);
  c.curve_accounts = static_cast<int>(ini.get_int(s, "curve_accounts", c.curve_accounts));
  if (ini.has(s, "policies")) {
    c.policies.clear();
    std::stringstream ss(ini.get_string(s, "policies", ""));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item.erase(0, item.find_first_not_of(" \t"));
      item.erase(item.find_last_not_of(" \t") + 1);
      if (item.empty()) continue;
      validate_policy_name(item);
      c.policies.push_back(item);
    }
  }
  if (c.train_accounts < 1 || c.eval_accounts < 1) throw ConfigError("bench account counts must be positive");
  if (c.seeds < 1) throw ConfigError("bench.seeds must be >= 1");
  if (c.log_policy != "heuristic" && c.log_policy != "full") {
    throw ConfigError("bench.log_policy must be 'heuristic' or 'full'");
  }
  if (c.alpha_grid.empty()) throw ConfigError("bench.alpha_grid must not be empty");
  for (double a : c.alpha_grid) {
    if (!(a >= 0.0)) throw ConfigError("bench.alpha_grid values must be >= 0");
  }
  if (c.curve_accounts < 0) throw ConfigError("bench.curve_accounts must be >= 0");
  return c;
}

std::optional<std::uint64_t> seed_override() {
  const char* v = std::getenv("DEDUCT_SEED");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (*end != '\0' || v[0] == '-') throw ConfigError(std::string("DEDUCT_SEED is not an unsigned integer: ") + v);
  return static_cast<std::uint64_t>(s);
}

ExperimentConfig ExperimentConfig::from_ini(const IniConfig& ini) {
  ExperimentConfig c;
  c.gen = sim::GenConfig::from_ini(ini);
  c.predictor = predictor::PredictorConfig::from_ini(ini);
  c.agent = agent::AgentConfig::from_ini(ini);
  c.bench = BenchConfig::from_ini(ini);
  const std::string s = "dnn";
  if (ini.has(s, "hidden_dims")) {
    c.dnn.hidden.clear();
    for (double d : ini.get_doubles(s, "hidden_dims", {})) {
      if (d < 1.0) throw ConfigError("dnn.hidden_dims must be positive");
      c.dnn.hidden.push_back(static_cast<std::size_t>(d));
    }
  }
  c.dnn.lr = ini.get_double(s, "lr", c.dnn.lr);
  c.dnn.max_epochs = static_cast<int>(ini.get_int(s, "max_epochs", c.dnn.max_epochs));
  c.dnn.patience = static_cast<int>(ini.get_int(s, "patience", c.dnn.patience));
  c.dnn.lookback_days = c.predictor.lookback_days;
  if (auto seed = seed_override()) {
    c.bench.master_seed = *seed;
    c.gen.seed = *seed;
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  return from_ini(IniConfig::load(path));
}

std::uint64_t run_seed(const ExperimentConfig& cfg, int run) {
  return derive_seed(cfg.bench.master_seed, "run", static_cast<std::uint64_t>(run));
}

Split split_accounts(std::size_t n_accounts, int n_train, int n_eval, std::uint64_t seed) {
  if (static_cast<std::size_t>(n_train + n_eval) > n_accounts) {
    throw ConfigError("dataset holds " + std::to_string(n_accounts) + " accounts, split needs " +
                      std::to_string(n_train + n_eval));
  }
  std::vector<std::size_t> order(n_accounts);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, "split");
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
  }
  Split s;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.eval.assign(order.begin() + n_train, order.begin() + n_train + n_eval);
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.eval.begin(), s.eval.end());
  return s;
}

std::vector<sim::EpisodeLog> historical_logs(const sim::Dataset& ds, const std::string& log_policy,
                                             Money cost_c, bool retry_daily) {
  std::vector<sim::EpisodeLog> logs;
  logs.reserve(ds.accounts.size());
  for (const auto& acc : ds.accounts) {
    sim::TrueEnv env(acc);
    if (log_policy == "full") {
      baselines::FullDeductionPolicy p(retry_daily);
      logs.push_back(sim::run_episode(acc, env, p, cost_c));
    } else {
      baselines::HeuristicPolicy p;
      logs.push_back(sim::run_episode(acc, env, p, cost_c));
    }
  }
  return logs;
}

RunContext make_context(const ExperimentConfig& cfg, sim::Dataset data, std::uint64_t seed) {
  RunContext ctx;
  ctx.seed = seed;
  ctx.data = std::move(data);
  ctx.split = split_accounts(ctx.data.accounts.size(), cfg.bench.train_accounts,
                             cfg.bench.eval_accounts, seed);
  ctx.logs = historical_logs(ctx.data, cfg.bench.log_policy, cfg.gen.cost_c, cfg.bench.retry_daily);
  return ctx;
}

namespace {

std::vector<predictor::Sample> split_samples(const ExperimentConfig& cfg, const RunContext& ctx,
                                             const std::vector<std::size_t>& idx) {
  std::vector<sim::EpisodeLog> logs;
  for (auto i : idx) logs.push_back(ctx.logs[i]);
  return predictor::build_samples(ctx.data, idx, cfg.predictor.target, logs);
}

}  // namespace

void train_run_predictor(const ExperimentConfig& cfg, RunContext& ctx) {
  auto pcfg = cfg.predictor;
  pcfg.seed = derive_seed(ctx.seed, "predictor");
  const auto samples = split_samples(cfg, ctx, ctx.split.train);
  attach_predictor(cfg, ctx, predictor::train_predictor(ctx.data, samples, pcfg, &ctx.predictor_report));
}

void attach_predictor(const ExperimentConfig& cfg, RunContext& ctx,
                      std::unique_ptr<predictor::BalancePredictor> model) {
  ctx.predictor = std::move(model);
  const auto eval_samples = split_samples(cfg, ctx, ctx.split.eval);
  if (!eval_samples.empty()) {
    const auto preds = predictor::predict_samples(*ctx.predictor, ctx.data, eval_samples);
    std::vector<double> labels;
    for (const auto& s : eval_samples) labels.push_back(s.label);
    ctx.eval_mape = predictor::mape(preds, labels);
  }
  ctx.train_predictions.clear();
  ctx.train_predictions.reserve(ctx.split.train.size());
  for (auto i : ctx.split.train) {
    ctx.train_predictions.push_back(predictor::predict_episode(*ctx.predictor, ctx.data.accounts[i]));
  }
}

void train_run_dnn(const ExperimentConfig& cfg, RunContext& ctx) {
  auto dcfg = cfg.dnn;
  dcfg.seed = derive_seed(ctx.seed, "dnn");
  ctx.dnn = std::make_unique<baselines::DnnRegressor>(dcfg);
  ctx.dnn->train(ctx.data, predictor::build_samples(ctx.data, ctx.split.train, predictor::Target::balance));
}

RunContext prepare_run(const ExperimentConfig& cfg, sim::Dataset data, std::uint64_t seed, bool train_dnn) {
  auto ctx = make_context(cfg, std::move(data), seed);
  train_run_predictor(cfg, ctx);
  if (train_dnn) train_run_dnn(cfg, ctx);
  return ctx;
}

namespace {

sim::Dataset run_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  auto gen = cfg.gen;
  gen.seed = derive_seed(seed, "gen");
  gen.accounts = cfg.bench.train_accounts + cfg.bench.eval_accounts;
  return sim::generate_accounts(gen);
}

}  // namespace

RunContext prepare_run(const ExperimentConfig& cfg, int run) {
  const auto seed = run_seed(cfg, run);
  return prepare_run(cfg, run_dataset(cfg, seed), seed, true);
}

std::vector<agent::TrainingEpisode> corrected_episodes(const RunContext& ctx, double alpha) {
  const auto a = predictor::Alpha::from_double(alpha);
  std::vector<agent::TrainingEpisode> out;
  out.reserve(ctx.split.train.size());
  for (std::size_t k = 0; k < ctx.split.train.size(); ++k) {
    const auto idx = ctx.split.train[k];
    auto env = std::make_shared<predictor::CorrectedEnv>(
        predictor::build_corrected_env(ctx.logs[idx], ctx.train_predictions[k], a));
    out.push_back({&ctx.data.accounts[idx], [env] { return std::make_unique<predictor::CorrectedEnv>(*env); }});
  }
  return out;
}

namespace {

std::vector<agent::TrainingEpisode> curve_subset(const std::vector<agent::TrainingEpisode>& eps, int n) {
  return {eps.begin(), eps.begin() + std::min<std::ptrdiff_t>(n, static_cast<std::ptrdiff_t>(eps.size()))};
}

double replay_succ_rate(const std::vector<agent::TrainingEpisode>& eps, sim::DeductionPolicy& policy,
                        Money cost_c) {
  std::vector<sim::EpisodeLog> logs;
  for (const auto& e : eps) {
    auto env = e.make_env();
    logs.push_back(sim::run_episode(*e.account, *env, policy, cost_c));
  }
  return succ_rate(logs);
}

agent::AgentConfig agent_config(const ExperimentConfig& cfg, const RunContext& ctx, const char* tag) {
  auto a = cfg.agent;
  a.seed = derive_seed(ctx.seed ^ cfg.agent.seed, tag);
  return a;
}

}  // namespace

TrainedHier train_hier(const ExperimentConfig& cfg, const RunContext& ctx, double alpha) {
  const auto acfg = agent_config(cfg, ctx, "agent/hier");
  const agent::DeductionFeatures features(acfg);
  auto episodes = corrected_episodes(ctx, alpha);
  const auto curve_eps = curve_subset(episodes, cfg.bench.curve_accounts);
  TrainedHier out;
  out.agent = agent::make_deduction_hier_agent(acfg);
  agent::DeductionHierTask task(std::move(episodes), cfg.gen.cost_c, features);
  Rng rng = make_rng(acfg.seed, "train");
  agent::EvalFn eval;
  if (!curve_eps.empty()) {
    eval = [&] {
      agent::HierPolicy p(*out.agent, features);
      return replay_succ_rate(curve_eps, p, cfg.gen.cost_c);
    };
  }
  out.curve = agent::train_hierarchical(*out.agent, task, rng, eval);
  return out;
}

TrainedFlat train_flat(const ExperimentConfig& cfg, const RunContext& ctx, double alpha) {
  const auto acfg = agent_config(cfg, ctx, "agent/flat");
  const agent::DeductionFeatures features(acfg);
  auto episodes = corrected_episodes(ctx, alpha);
  const auto curve_eps = curve_subset(episodes, cfg.bench.curve_accounts);
  TrainedFlat out;
  out.agent = agent::make_deduction_flat_agent(acfg);
  agent::DeductionFlatTask task(std::move(episodes), cfg.gen.cost_c, features, acfg.eta, acfg.gamma);
  Rng rng = make_rng(acfg.seed, "train");
  agent::EvalFn eval;
  if (!curve_eps.empty()) {
    eval = [&] {
      agent::FlatPolicy p(*out.agent, features);
      return replay_succ_rate(curve_eps, p, cfg.gen.cost_c);
    };
  }
  out.curve = agent::train_flat(*out.agent, task, rng, eval);
  return out;
}

std::vector<sim::EpisodeLog> evaluate(const RunContext& ctx, sim::DeductionPolicy& policy, Money cost_c) {
  std::vector<sim::EpisodeLog> logs;
  logs.reserve(ctx.split.eval.size());
  for (auto i : ctx.split.eval) {
    const auto& acc = ctx.data.accounts[i];
    sim::TrueEnv env(acc);
    logs.push_back(sim::run_episode(acc, env, policy, cost_c));
  }
  return logs;
}

std::vector<sim::EpisodeLog> run_policy(const ExperimentConfig& cfg, const RunContext& ctx,
                                        const std::string& policy) {
  validate_policy_name(policy);
  const Money c = cfg.gen.cost_c;
  const agent::DeductionFeatures features(cfg.agent);
  if (policy == "full") {
    baselines::FullDeductionPolicy p(cfg.bench.retry_daily);
    return evaluate(ctx, p, c);
  }
  if (policy == "heuristic") {
    baselines::HeuristicPolicy p;
    return evaluate(ctx, p, c);
  }
  if (policy == "dnn") {
    if (!ctx.dnn) throw ConfigError("run has no trained DNN baseline");
    baselines::PredictiveDnnPolicy p(*ctx.dnn);
    return evaluate(ctx, p, c);
  }
  const double alpha = cfg.predictor.alpha;
  if (policy == "dqn" || policy == "dqn-ce") {
    auto t = train_flat(cfg, ctx, policy == "dqn" ? 0.0 : alpha);
    agent::FlatPolicy p(*t.agent, features);
    return evaluate(ctx, p, c);
  }
  auto t = train_hier(cfg, ctx, policy == "dqn-a2" ? 0.0 : alpha);
  agent::HierPolicy p(*t.agent, features);
  return evaluate(ctx, p, c);
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

const PolicyRow& BenchReport::row(const std::string& policy) const {
  for (const auto& r : rows) {
    if (r.policy == policy) return r;
  }
  throw std::out_of_range("report has no row for policy " + policy);
}

void add_result(BenchReport& report, const std::string& policy, std::uint64_t seed,
                std::vector<sim::EpisodeLog> logs) {
  auto it = std::find_if(report.rows.begin(), report.rows.end(),
                         [&](const PolicyRow& r) { return r.policy == policy; });
  if (it == report.rows.end()) {
    report.rows.push_back({});
    it = report.rows.end() - 1;
    it->policy = policy;
  }
  it->succ_rates.push_back(succ_rate(logs));
  it->seeds.push_back(seed);
  for (auto& l : logs) {
    it->deducted += l.total_deducted;
    it->cost += l.total_cost;
    it->attempts += static_cast<long long>(l.attempts.size());
    report.raw.entries.push_back({seed, policy, std::move(l)});
  }
}

void finalize(BenchReport& report) {
  for (auto& r : report.rows) {
    r.mean = mean(r.succ_rates);
    r.std = sample_std(r.succ_rates);
  }
}

BenchReport run_experiment(const ExperimentConfig& cfg, std::ostream* progress) {
  BenchReport report;
  for (int run = 0; run < cfg.bench.seeds; ++run) {
    const auto ctx = prepare_run(cfg, run);
    if (progress) {
      *progress << "seed " << ctx.seed << ": predictor MAPE " << std::fixed << std::setprecision(4)
                << ctx.eval_mape << '\n';
    }
    for (const auto& policy : cfg.bench.policies) {
      auto logs = run_policy(cfg, ctx, policy);
      if (progress) {
        *progress << "  " << policy << " SuccRate " << std::fixed << std::setprecision(4)
                  << succ_rate(logs) << '\n' << std::flush;
      }
      add_result(report, policy, ctx.seed, std::move(logs));
    }
  }
  finalize(report);
  return report;
}

std::vector<AlphaPoint> alpha_sweep(const ExperimentConfig& cfg, std::span<const double> grid,
                                    std::ostream* progress) {
  if (grid.empty()) throw ConfigError("alpha grid is empty");
  std::vector<AlphaPoint> points;
  for (double a : grid) {
    if (!(a >= 0.0)) throw ConfigError("alpha values must be >= 0");
    points.push_back({a, {}, 0.0, 0.0});
  }
  const agent::DeductionFeatures features(cfg.agent);
  for (int run = 0; run < cfg.bench.seeds; ++run) {
    const auto seed = run_seed(cfg, run);
    const auto ctx = prepare_run(cfg, run_dataset(cfg, seed), seed, false);
    for (auto& p : points) {
      auto t = train_hier(cfg, ctx, p.alpha);
      agent::HierPolicy policy(*t.agent, features);
      const double sr = succ_rate(evaluate(ctx, policy, cfg.gen.cost_c));
      p.succ_rates.push_back(sr);
      if (progress) {
        *progress << "seed " << seed << " alpha " << p.alpha << " SuccRate " << std::fixed
                  << std::setprecision(4) << sr << '\n' << std::flush;
      }
    }
  }
  for (auto& p : points) {
    p.mean = mean(p.succ_rates);
    p.std = sample_std(p.succ_rates);
  }
  return points;
}

// --- output ----------------------------------------------------------------

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

Money parse_money(const std::string& s) {
  const bool neg = !s.empty() && s[0] == '-';
  const auto body = s.substr(neg ? 1 : 0);
  const auto dot = body.find('.');
  try {
    std::int64_t whole = std::stoll(body.substr(0, dot));
    std::int64_t frac = 0;
    if (dot != std::string::npos) {
      auto f = body.substr(dot + 1);
      if (f.size() > 2) throw ParseError("more than two decimals in amount '" + s + "'", 0);
      f.resize(2, '0');
      frac = std::stoll(f);
    }
    const auto minor = whole * Money::kMinorPerUnit + frac;
    return Money::from_minor(neg ? -minor : minor);
  } catch (const std::logic_error&) {
    throw ParseError("bad amount '" + s + "'", 0);
  }
}

}  // namespace

void write_report_csv(std::ostream& out, const BenchReport& report) {
  out << "policy,succ_rate_mean,succ_rate_std,total_deducted,total_cost,attempts,seeds\n";
  for (const auto& r : report.rows) {
    out << r.policy << ',' << fixed(r.mean) << ',' << fixed(r.std) << ',' << r.deducted << ','
        << r.cost << ',' << r.attempts << ',';
    for (std::size_t i = 0; i < r.seeds.size(); ++i) out << (i ? ";" : "") << r.seeds[i];
    out << '\n';
  }
}

void print_table(std::ostream& out, const BenchReport& report) {
  char line[160];
  std::snprintf(line, sizeof(line), "%-10s %18s %16s %12s %10s\n", "policy", "SuccRate (%)",
                "deducted", "cost", "attempts");
  out << line;
  for (const auto& r : report.rows) {
    const std::string sr = fixed(100.0 * r.mean, 2) + " +- " + fixed(100.0 * r.std, 2);
    std::snprintf(line, sizeof(line), "%-10s %18s %16s %12s %10lld\n", r.policy.c_str(), sr.c_str(),
                  r.deducted.to_string().c_str(), r.cost.to_string().c_str(), r.attempts);
    out << line;
  }
}

void write_attempts_csv(std::ostream& out, const RawLogs& raw) {
  out << "seed,policy,account_id,day,step,requested,outcome,realized,cost\n";
  for (const auto& e : raw.entries) {
    for (const auto& a : e.log.attempts) {
      out << e.seed << ',' << e.policy << ',' << e.log.account_id << ',' << a.day << ',' << a.step
          << ',' << a.requested << ',' << (a.outcome == sim::Outcome::success ? "success" : "fail")
          << ',' << a.realized << ',' << a.cost << '\n';
    }
  }
}

void write_episodes_csv(std::ostream& out, const RawLogs& raw) {
  out << "seed,policy,account_id,bill,deducted,cost,attempts\n";
  for (const auto& e : raw.entries) {
    out << e.seed << ',' << e.policy << ',' << e.log.account_id << ',' << e.log.bill << ','
        << e.log.total_deducted << ',' << e.log.total_cost << ',' << e.log.attempts.size() << '\n';
  }
}

std::vector<std::pair<std::string, double>> recompute_from_episodes(std::istream& in) {
  struct Acc {
    Money deducted, cost, bill;
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::pair<std::string, Acc>>> per_policy;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() != 7) throw ParseError("episodes row needs 7 fields", line_no);
    auto& seeds = per_policy[f[1]];
    if (seeds.empty()) order.push_back(f[1]);
    auto it = std::find_if(seeds.begin(), seeds.end(), [&](const auto& p) { return p.first == f[0]; });
    if (it == seeds.end()) {
      seeds.push_back({f[0], {}});
      it = seeds.end() - 1;
    }
    try {
      it->second.bill += parse_money(f[3]);
      it->second.deducted += parse_money(f[4]);
      it->second.cost += parse_money(f[5]);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  std::vector<std::pair<std::string, double>> out;
  for (const auto& name : order) {
    std::vector<double> rates;
    for (const auto& [seed, a] : per_policy[name]) {
      if (a.bill.is_zero()) throw DomainError("zero total bill in episodes file");
      rates.push_back(static_cast<double>((a.deducted - a.cost).minor()) / static_cast<double>(a.bill.minor()));
    }
    out.emplace_back(name, mean(rates));
  }
  return out;
}

void write_alpha_curve(std::ostream& out, std::span<const AlphaPoint> points) {
  out << "alpha,succ_rate_mean,succ_rate_std,runs\n";
  for (const auto& p : points) {
    out << fixed(p.alpha, 3) << ',' << fixed(p.mean) << ',' << fixed(p.std) << ',' << p.succ_rates.size() << '\n';
  }
}

}  // namespace deduct::bench
