// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances are fixed here.

#include "helpers.hpp"
#include "toy_mdp.hpp"

#include "deduct/baselines.hpp"
#include "deduct/bench.hpp"
#include "deduct/deduction_agent.hpp"
#include "deduct/error.hpp"
#include "deduct/nn.hpp"
#include "deduct/predictor.hpp"

#include <boost/rational.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

using deduct::Money;
using deduct::Rng;
namespace sim = deduct::sim;
namespace nn = deduct::nn;
namespace pred = deduct::predictor;
namespace ag = deduct::agent;
namespace bench = deduct::bench;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTol = 1e-4;
// Central-difference step: smaller steps are dominated by round-off on
// near-zero gradients (the attention bias gradient is exactly zero).
constexpr double kFdStep = 1e-4;
constexpr int kGradConfigs = 60;
constexpr int kInvariantEpisodes = 10'000;
constexpr double kValueTol = 1e-3;
constexpr double kMapeDefault = 0.15;
constexpr double kMapeLinear = 0.05;
constexpr double kPoint = 0.01;
constexpr double kBenchMinutes = 30.0;
constexpr double kPlateau = 0.03;
constexpr int kCorrectionTriples = 10'000;
constexpr int kReplayAccounts = 500;

int failures = 0;

void verdict(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = 2.0 * deduct::uniform01(rng) - 1.0;
  return v;
}

std::size_t dim(Rng& rng, int lo, int hi) {
  return static_cast<std::size_t>(deduct::uniform_int(rng, lo, hi));
}

// --- gradients --------------------------------------------------------------

double check_dense(Rng& rng) {
  nn::Dense d("d", dim(rng, 1, 8), dim(rng, 1, 8));
  d.init(rng);
  const auto x = random_vec(rng, d.in());
  const auto w = random_vec(rng, d.out());
  auto loss = [&](bool grad) {
    std::vector<double> y(d.out());
    d.forward(x, y);
    if (grad) d.backward(x, w, {});
    return nn::dot(y.data(), w.data(), y.size());
  };
  return nn::grad_check(loss, d.params(), kGradTol, 30, rng, kFdStep).worst();
}

double check_mlp(Rng& rng, int variant) {
  const nn::Activation acts[] = {nn::Activation::tanh, nn::Activation::relu, nn::Activation::identity};
  std::vector<std::size_t> sizes{dim(rng, 2, 6)};
  const int depth = deduct::uniform_int(rng, 1, 3);
  for (int i = 0; i < depth; ++i) sizes.push_back(dim(rng, 2, 9));
  sizes.push_back(dim(rng, 1, 4));
  nn::Mlp m("m", sizes, acts[variant % 3]);
  m.init(rng);
  const auto x = random_vec(rng, sizes.front());
  const auto w = random_vec(rng, sizes.back());
  auto loss = [&](bool grad) {
    nn::Mlp::Cache c;
    const auto y = m.forward(x, &c);
    if (grad) m.backward(c, w, {});
    return nn::dot(y.data(), w.data(), y.size());
  };
  return nn::grad_check(loss, m.params(), kGradTol, 30, rng, kFdStep).worst();
}

double check_lstm(Rng& rng) {
  nn::LstmCell cell("c", dim(rng, 1, 5), dim(rng, 1, 8));
  cell.init(rng);
  const std::size_t steps = dim(rng, 1, 7);
  const auto xs = random_vec(rng, steps * cell.input());
  const auto w = random_vec(rng, steps * cell.hidden());
  auto loss = [&](bool grad) {
    nn::LstmSequence::Cache cache;
    const auto hs = nn::LstmSequence::run(cell, xs, steps, &cache);
    if (grad) nn::LstmSequence::backward(cell, cache, w, {});
    return nn::dot(hs.data(), w.data(), hs.size());
  };
  return nn::grad_check(loss, cell.params(), kGradTol, 40, rng, kFdStep).worst();
}

double check_predictor(Rng& rng) {
  pred::PredictorConfig c;
  c.embed_dim = dim(rng, 2, 6);
  c.hidden_dim = dim(rng, 2, 6);
  c.lookback_days = 10;
  pred::BalancePredictor m(c);
  m.init(rng);
  std::vector<sim::ConsumptionEvent> seq;
  const std::size_t n = dim(rng, 1, 8);
  for (std::size_t i = 0; i < n; ++i) {
    const int day = 19 - deduct::uniform_int(rng, 0, 9);
    const auto kind = deduct::uniform01(rng) < 0.5 ? sim::EventKind::consumption : sim::EventKind::payment;
    seq.push_back({day, kind, Money::from_minor(1 + static_cast<std::int64_t>(rng() % 100000))});
  }
  std::sort(seq.begin(), seq.end(), [](const auto& a, const auto& b) { return a.day < b.day; });
  const double label = 10.0 + 500.0 * deduct::uniform01(rng);
  auto loss = [&](bool grad) {
    const auto fw = m.forward(seq, 20);
    const double r = (fw.y_pred - label) / label;
    if (grad) m.backward(seq, 20, fw, 2.0 * r / label);
    return r * r;
  };
  return nn::grad_check(loss, m.params(), kGradTol, 20, rng, kFdStep).worst();
}

double check_neural_q(Rng& rng) {
  ag::NeuralQConfig c;
  c.feature_dim = dim(rng, 2, 6);
  c.seq_dim = dim(rng, 2, 4);
  c.seq_hidden = dim(rng, 2, 4);
  c.hidden = {dim(rng, 2, 7), dim(rng, 2, 5)};
  c.outputs = static_cast<int>(dim(rng, 2, 5));
  ag::NeuralQ q("q", c, rng);
  std::vector<ag::AgentState> states(4);
  std::vector<int> actions;
  std::vector<double> targets;
  for (auto& s : states) {
    s.features = random_vec(rng, c.feature_dim);
    s.steps = dim(rng, 0, 4);
    s.sequence = random_vec(rng, s.steps * c.seq_dim);
    actions.push_back(deduct::uniform_int(rng, 0, c.outputs - 1));
    targets.push_back(2.0 * deduct::uniform01(rng) - 1.0);
  }
  std::vector<const ag::AgentState*> ptrs;
  for (const auto& s : states) ptrs.push_back(&s);
  auto loss = [&](bool grad) { return q.loss(ptrs, actions, targets, grad); };
  return nn::grad_check(loss, q.params(), kGradTol, 30, rng, kFdStep).worst();
}

void gradients() {
  Rng rng(deduct::derive_seed(1, "acceptance/grad"));
  const char* family[] = {"dense", "mlp", "lstm", "predictor", "q-network"};
  double worst[5] = {};
  int configs = 0;
  for (int i = 0; i < kGradConfigs; ++i) {
    double w = 0.0;
    switch (i % 5) {
      case 0: w = check_dense(rng); break;
      case 1: w = check_mlp(rng, i / 5); break;
      case 2: w = check_lstm(rng); break;
      case 3: w = check_predictor(rng); break;
      default: w = check_neural_q(rng); break;
    }
    worst[i % 5] = std::max(worst[i % 5], w);
    ++configs;
  }
  std::string detail = std::to_string(configs) + " configurations, worst relative error";
  double overall = 0.0;
  for (int f = 0; f < 5; ++f) {
    detail += std::string(f ? ", " : " ") + family[f] + " " + fmt("%.2e", worst[f]);
    overall = std::max(overall, worst[f]);
  }
  verdict("gradients", configs >= 50 && overall < kGradTol, detail + " (tol " + fmt("%.0e", kGradTol) + ")");
}

// --- simulator invariants ----------------------------------------------------

void invariants() {
  sim::GenConfig g;
  g.accounts = 2000;
  g.seed = 41;
  const auto ds = sim::generate_accounts(g);
  testkit::InvariantTally tally;
  Rng seeds(deduct::derive_seed(2, "acceptance/invariants"));
  for (int e = 0; e < kInvariantEpisodes; ++e) {
    const auto& acct = ds.accounts[static_cast<std::size_t>(e) % ds.accounts.size()];
    std::unique_ptr<sim::DeductionPolicy> p;
    switch (e % 10) {
      case 0: p = std::make_unique<deduct::baselines::HeuristicPolicy>(); break;
      case 1: p = std::make_unique<deduct::baselines::FullDeductionPolicy>(); break;
      default: p = std::make_unique<testkit::RandomPolicy>(seeds()); break;
    }
    testkit::check_episode(acct, *p, g.cost_c, tally);
  }
  verdict("simulator invariants", tally.episodes == kInvariantEpisodes && tally.violations() == 0,
          std::to_string(tally.episodes) + " episodes, " + std::to_string(tally.attempts) +
              " attempts, violations: conservation " + std::to_string(tally.conservation) +
              ", lower bound " + std::to_string(tally.lower_bound) + ", monotone debt " +
              std::to_string(tally.monotone_debt) + ", step cap " + std::to_string(tally.step_cap) +
              ", outcome rule " + std::to_string(tally.outcome));
}

// --- tabular loops -----------------------------------------------------------

ag::AgentState indexed(int i) {
  ag::AgentState s;
  s.index = i;
  return s;
}

void tabular() {
  const auto cfg = toy::tabular_config();
  bool policy_same = true;
  double worst = 0.0;

  const auto hv = toy::hier_value_iteration(cfg.eta, cfg.gamma);
  ag::HierAgent hier(std::make_unique<ag::TabularQ>("q1", toy::kStates, toy::kSubgoals, cfg.tabular_lr),
                     std::make_unique<ag::TabularQ>("q2", toy::kLowerStates, toy::kLowerActions, cfg.tabular_lr),
                     cfg);
  toy::HierToy htask;
  Rng r1(cfg.seed);
  ag::train_hierarchical(hier, htask, r1);
  for (int s = 0; s < toy::kLive; ++s) {
    const auto q = hier.q1_values(indexed(s));
    const auto& want = hv.q1[static_cast<std::size_t>(s)];
    const auto g = ag::argmax(want);
    policy_same = policy_same && ag::argmax(q) == g;
    worst = std::max(worst, std::abs(q[static_cast<std::size_t>(g)] - want[static_cast<std::size_t>(g)]));
  }
  for (int i = 0; i < toy::kLowerStates; ++i) {
    const auto q = hier.q2_values(indexed(i));
    const auto& want = hv.q2[static_cast<std::size_t>(i)];
    policy_same = policy_same && ag::argmax(q) == ag::argmax(want);
    for (std::size_t a = 0; a < want.size(); ++a) worst = std::max(worst, std::abs(q[a] - want[a]));
  }

  const double discount = 0.85;
  const auto fv = toy::flat_value_iteration(discount);
  ag::FlatAgent flat(std::make_unique<ag::TabularQ>("qf", toy::kStates, toy::kFlatActions, cfg.tabular_lr), cfg);
  toy::FlatToy ftask(discount);
  Rng r2(cfg.seed);
  ag::train_flat(flat, ftask, r2);
  for (int s = 0; s < toy::kLive; ++s) {
    const auto q = flat.values(indexed(s));
    const auto& want = fv[static_cast<std::size_t>(s)];
    policy_same = policy_same && ag::argmax(q) == ag::argmax(want);
    for (std::size_t a = 0; a < want.size(); ++a) worst = std::max(worst, std::abs(q[a] - want[a]));
  }
  verdict("tabular loops vs value iteration", policy_same && worst < kValueTol,
          std::string("greedy policies ") + (policy_same ? "identical" : "differ") +
              ", worst value gap " + fmt("%.2e", worst) + " < " + fmt("%.0e", kValueTol));
}

// --- linear-world predictor ---------------------------------------------------

double linear_world_mape() {
  const auto ds = testkit::make_linear_world(400, 13);
  std::vector<std::size_t> train(300), eval(100);
  std::iota(train.begin(), train.end(), 0);
  std::iota(eval.begin(), eval.end(), 300);
  pred::PredictorConfig c;
  const auto model = pred::train_predictor(ds, pred::build_samples(ds, train, pred::Target::balance), c);
  const auto held = pred::build_samples(ds, eval, pred::Target::balance);
  const auto p = pred::predict_samples(*model, ds, held);
  std::vector<double> y;
  for (const auto& s : held) y.push_back(s.label);
  return pred::mape(p, y);
}

// --- correction ---------------------------------------------------------------

std::int64_t rational_correction(std::int64_t deducted, std::int64_t predicted, std::int64_t micro) {
  using R = boost::rational<std::int64_t>;
  const R shifted = R(micro, 1'000'000) * R(predicted) + R(1, 2);
  return deducted + shifted.numerator() / shifted.denominator();
}

class Script final : public sim::DeductionPolicy {
 public:
  explicit Script(std::vector<std::vector<Money>> days) : days_(std::move(days)) {}
  void begin_episode(const sim::PolicyContext&) override {}
  std::optional<Money> next_amount(const sim::Observation& obs) override {
    const auto& today = days_.at(static_cast<std::size_t>(obs.day));
    const auto i = static_cast<std::size_t>(obs.step - 1);
    if (i >= today.size()) return std::nullopt;
    return today[i];
  }

 private:
  std::vector<std::vector<Money>> days_;
};

void correction() {
  Rng rng(deduct::derive_seed(3, "acceptance/correction"));
  int mismatches = 0;
  for (int i = 0; i < kCorrectionTriples; ++i) {
    const auto ded = static_cast<std::int64_t>(rng() % 100'000'000);
    const auto prd = static_cast<std::int64_t>(rng() % 100'000'000);
    const auto micro = static_cast<std::int64_t>(rng() % 3'000'001);
    const auto got = pred::correct_day(Money::from_minor(ded), Money::from_minor(prd), {micro});
    if (got.minor() != rational_correction(ded, prd, micro)) ++mismatches;
  }

  sim::GenConfig g;
  g.accounts = kReplayAccounts;
  g.seed = 43;
  const auto ds = sim::generate_accounts(g);
  int replay_diff = 0;
  std::size_t attempts = 0;
  for (const auto& acct : ds.accounts) {
    deduct::baselines::HeuristicPolicy h;
    sim::TrueEnv truth(acct);
    const auto log = sim::run_episode(acct, truth, h, g.cost_c);
    attempts += log.attempts.size();
    std::vector<std::vector<Money>> script(static_cast<std::size_t>(log.horizon));
    for (const auto& a : log.attempts) script[static_cast<std::size_t>(a.day)].push_back(a.requested);
    const std::vector<Money> preds(static_cast<std::size_t>(log.horizon), Money::from_units(1e6));
    auto env = pred::build_corrected_env(log, preds, pred::Alpha::from_double(0));
    Script replay(script);
    if (sim::run_episode(acct, env, replay, g.cost_c).attempts != log.attempts) ++replay_diff;
  }
  verdict("correction and replay", mismatches == 0 && replay_diff == 0,
          std::to_string(kCorrectionTriples) + " triples vs exact rationals, " + std::to_string(mismatches) +
              " mismatches; alpha 0 replay of " + std::to_string(ds.accounts.size()) + " logged episodes (" +
              std::to_string(attempts) + " attempts), " + std::to_string(replay_diff) + " differ");
}

// --- reproducibility -----------------------------------------------------------

int cli(const std::string& args) {
  const std::string cmd = std::string(DEDUCT_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void reproducibility() {
  const fs::path dir = fs::temp_directory_path() / ("deduct_accept_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "small.ini") << "[simulation]\naccounts = 80\n[predictor]\nmax_epochs = 3\n"
                                      "[agent]\ntotal_steps = 1500\nepochs = 2\n[dnn]\nmax_epochs = 3\n"
                                      "[bench]\ntrain_accounts = 50\neval_accounts = 30\nseeds = 2\n"
                                      "curve_accounts = 10\n";
  const std::string cfg = (dir / "small.ini").string();
  bool ok = true;
  std::size_t bytes = 0;
  for (const std::string name : {"a", "b"}) {
    ok = ok && cli("bench --config " + cfg + " --out " + (dir / name / "report.csv").string()) == 0;
    ok = ok && cli("sweep-alpha --config " + cfg + " --grid 0,1.6 --out " + (dir / name / "alpha.csv").string()) == 0;
  }
  for (const std::string f : {"report.csv", "report.episodes.csv", "report.attempts.csv", "alpha.csv"}) {
    const auto a = slurp(dir / "a" / f), b = slurp(dir / "b" / f);
    ok = ok && !a.empty() && a == b;
    bytes += a.size();
  }
  fs::remove_all(dir);
  verdict("byte-identical reruns", ok,
          "bench and sweep-alpha run twice, 4 report files (" + std::to_string(bytes) + " bytes) " +
              (ok ? "identical" : "differ or failed"));
}

// --- benchmark orderings and alpha ---------------------------------------------

std::string config_path() {
  if (const char* p = std::getenv("DEDUCT_ACCEPTANCE_CONFIG")) return p;
  return DEDUCT_DEFAULT_CONFIG;
}

void benchmark(double linear_mape) {
  const auto cfg = bench::ExperimentConfig::load(config_path());
  const ag::DeductionFeatures features(cfg.agent);
  bench::BenchReport report;
  std::vector<double> mid_alpha;
  double default_mape = 0.0, bench_seconds = 0.0;
  for (int run = 0; run < cfg.bench.seeds; ++run) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto ctx = bench::prepare_run(cfg, run);
    if (run == 0) default_mape = ctx.eval_mape;
    std::cerr << "seed " << ctx.seed << " predictor MAPE " << ctx.eval_mape << std::endl;
    for (const auto& policy : cfg.bench.policies) {
      auto logs = bench::run_policy(cfg, ctx, policy);
      std::cerr << "  " << policy << " " << bench::succ_rate(logs) << std::endl;
      bench::add_result(report, policy, ctx.seed, std::move(logs));
    }
    bench_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    // Extra point of the alpha curve on the same run; 0 and the default alpha
    // are the dqn-a2 and dqn-a2ce rows.
    auto t = bench::train_hier(cfg, ctx, 1.1);
    ag::HierPolicy policy(*t.agent, features);
    mid_alpha.push_back(bench::succ_rate(bench::evaluate(ctx, policy, cfg.gen.cost_c)));
    std::cerr << "  alpha 1.1 " << mid_alpha.back() << std::endl;
  }
  bench::finalize(report);

  verdict("predictor MAPE", default_mape <= kMapeDefault && linear_mape <= kMapeLinear,
          "default split " + fmt("%.4f", default_mape) + " (<= " + fmt("%.2f", kMapeDefault) +
              "), linear world " + fmt("%.2e", linear_mape) + " (<= " + fmt("%.2f", kMapeLinear) + ")");

  auto sr = [&](const std::string& p) { return report.row(p).mean; };
  const double full = sr("full"), heur = sr("heuristic"), dqn = sr("dqn"), ce = sr("dqn-ce"),
               a2 = sr("dqn-a2"), a2ce = sr("dqn-a2ce");
  const double minutes = bench_seconds / 60.0;
  const bool order = heur - full >= kPoint && a2ce - heur >= kPoint && a2 - dqn >= kPoint &&
                     a2ce - a2 >= kPoint && ce - dqn >= 0.0;
  std::string detail;
  for (const auto& r : report.rows) detail += r.policy + " " + fmt("%.4f", r.mean) + ", ";
  verdict("benchmark orderings", order && minutes < kBenchMinutes,
          detail + std::to_string(cfg.bench.seeds) + " seeds in " + fmt("%.1f", minutes) + " min");

  const double s0 = a2, s16 = a2ce, s11 = bench::mean(mid_alpha);
  verdict("alpha effect", s16 - s0 >= kPoint && std::abs(s11 - s16) <= kPlateau,
          "SuccRate alpha 0 " + fmt("%.4f", s0) + ", 1.1 " + fmt("%.4f", s11) + ", 1.6 " + fmt("%.4f", s16));
}

}  // namespace

int main() {
  try {
    gradients();
    invariants();
    tabular();
    correction();
    reproducibility();
    benchmark(linear_world_mape());
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
