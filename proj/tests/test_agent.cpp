#include <doctest.h>

#include "toy_mdp.hpp"

#include "deduct/agent.hpp"
#include "deduct/deduction_agent.hpp"
#include "deduct/error.hpp"
#include "deduct/predictor.hpp"

#include <cmath>
#include <sstream>

using deduct::Money;
using deduct::Rng;
namespace sim = deduct::sim;
namespace ag = deduct::agent;

namespace {

Money units(double u) { return Money::from_units(u); }

ag::AgentState indexed(int i) {
  ag::AgentState s;
  s.index = i;
  return s;
}

sim::Account one_account(Money bill, int horizon = 3) {
  sim::GenConfig g;
  g.accounts = 1;
  g.horizon_days = horizon;
  sim::Account a = sim::generate_account(g, 0);
  a.truth.bill = bill;
  return a;
}

std::unique_ptr<sim::DeductionEnv> corrected(std::vector<Money> per_day) {
  std::vector<deduct::predictor::CorrectedDay> days;
  for (std::size_t d = 0; d < per_day.size(); ++d) {
    days.push_back({static_cast<int>(d), per_day[d], Money(), {}, per_day[d]});
  }
  return std::make_unique<deduct::predictor::CorrectedEnv>(std::move(days));
}

ag::AgentConfig small_neural() {
  ag::AgentConfig c;
  c.hidden_dims = {8};
  c.history_hidden = 3;
  c.history_window = 4;
  c.total_steps = 600;
  c.batch = 8;
  c.buffer_d1 = 64;
  c.buffer_d2 = 64;
  c.epochs = 3;
  c.sync_every = 20;
  return c;
}

}  // namespace

TEST_CASE("epsilon schedule decays linearly then holds") {
  const ag::EpsilonSchedule s{1.0, 0.05, 100};
  CHECK(s.at(0) == 1.0);
  CHECK(s.at(50) == doctest::Approx(0.525));
  CHECK(s.at(100) == 0.05);
  CHECK(s.at(10'000) == 0.05);
  ag::AgentConfig c;
  c.total_steps = 1000;
  CHECK(c.schedule().decay_steps == 500);
}

TEST_CASE("argmax picks the largest, lowest index on ties") {
  CHECK(ag::argmax(std::vector<double>{1, 9, 3, 2, 0, 0}) == 1);
  CHECK(ag::argmax(std::vector<double>{4, 4, 4}) == 0);
  CHECK(ag::argmax(std::vector<double>{-1, 2, 2}) == 1);
  CHECK_THROWS_AS(ag::argmax(std::vector<double>{}), deduct::DimensionError);
  Rng rng(1);
  const std::vector<double> q{1, 9, 3, 2, 0, 0};
  for (int i = 0; i < 100; ++i) CHECK(ag::epsilon_greedy(q, 0.0, rng) == 1);
}

TEST_CASE("argmax is invariant under positive affine maps") {
  Rng rng(2);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> q(6), t(6);
    for (auto& v : q) v = std::round(10 * (2 * deduct::uniform01(rng) - 1));  // ties happen
    const double scale = 0.01 + 100 * deduct::uniform01(rng);
    const double shift = 1000 * (2 * deduct::uniform01(rng) - 1);
    for (std::size_t i = 0; i < 6; ++i) t[i] = scale * q[i] + shift;
    REQUIRE(ag::argmax(q) == ag::argmax(t));
    Rng a(trial), b(trial);
    REQUIRE(ag::epsilon_greedy(q, 0.3, a) == ag::epsilon_greedy(t, 0.3, b));
  }
}

TEST_CASE("uniform exploration frequencies") {
  Rng rng(3);
  const std::vector<double> q{1, 9, 3, 2, 0, 0};
  std::array<int, 6> counts{};
  const int n = 100'000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(ag::epsilon_greedy(q, 1.0, rng))];
  double chi2 = 0.0;
  for (int c : counts) {
    CHECK(std::abs(c / double(n) - 1.0 / 6.0) < 0.01);
    chi2 += (c - n / 6.0) * (c - n / 6.0) / (n / 6.0);
  }
  CHECK(chi2 < 20.5);  // 5 dof, p = 0.001

  int greedy = 0;
  for (int i = 0; i < n; ++i) greedy += ag::epsilon_greedy(q, 0.3, rng) == 1;
  CHECK(greedy / double(n) == doctest::Approx(0.7 + 0.3 / 6).epsilon(0.02));
}

TEST_CASE("action masks keep a prefix") {
  const std::vector<double> q{1, 2, 3, 9};
  ag::AgentState s;
  CHECK(ag::available(q, s).size() == 4);
  s.allowed = 2;
  CHECK(ag::argmax(ag::available(q, s)) == 1);
  s.allowed = 10;
  CHECK(ag::available(q, s).size() == 4);
}

TEST_CASE("replay buffer is a bounded FIFO with uniform sampling") {
  ag::ReplayBuffer<int> b(5);
  for (int i = 0; i < 8; ++i) b.push(i);
  CHECK(b.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(b.at(i) == static_cast<int>(i) + 3);
  Rng rng(4);
  std::array<int, 8> counts{};
  for (const int* p : b.sample(50'000, rng)) ++counts[static_cast<std::size_t>(*p)];
  for (int i = 0; i < 3; ++i) CHECK(counts[static_cast<std::size_t>(i)] == 0);
  for (int i = 3; i < 8; ++i) CHECK(std::abs(counts[static_cast<std::size_t>(i)] / 50'000.0 - 0.2) < 0.01);
  ag::ReplayBuffer<int> none(0);
  none.push(1);
  CHECK(none.empty());
  CHECK(none.sample(3, rng).empty());
}

TEST_CASE("td targets") {
  auto q = std::make_unique<ag::TabularQ>("t", 3, 4, 1.0);
  for (std::size_t a = 0; a < 4; ++a) q->at(1, a) = static_cast<double>(a) + 2.0;  // max 5
  q->at(2, 0) = 7.0;
  q->at(2, 1) = 1.0;
  ag::DqnLearner plain(std::move(q), 1000, false);

  ag::Transition terminal{indexed(0), 0, 9.9, {}, 0.0};
  CHECK(plain.td_target(terminal) == 9.9);
  ag::Transition t{indexed(0), 0, 9.9, indexed(1), 0.9};
  CHECK(plain.td_target(t) == doctest::Approx(14.4));
  // The mask on the next state limits the bootstrap.
  ag::AgentState masked = indexed(1);
  masked.allowed = 2;
  t.next = masked;
  CHECK(plain.td_target(t) == doctest::Approx(9.9 + 0.9 * 3.0));

  // Double DQN: online chooses, target evaluates.
  auto online = std::make_unique<ag::TabularQ>("d", 3, 2, 1.0);
  ag::DqnLearner dbl(std::move(online), 1000, true);
  auto& on = static_cast<ag::TabularQ&>(dbl.online());
  auto& tg = static_cast<ag::TabularQ&>(dbl.target());
  on.at(1, 0) = 1.0;
  on.at(1, 1) = 2.0;
  tg.at(1, 0) = 10.0;
  tg.at(1, 1) = 3.0;
  CHECK(dbl.td_target({indexed(0), 0, 1.0, indexed(1), 0.5}) == doctest::Approx(2.5));
}

TEST_CASE("two-step chain by hand") {
  // s0 -a0-> s1 (r = 1), s1 -a0-> end (r = 2); discount 0.5; exact learning.
  auto q = std::make_unique<ag::TabularQ>("c", 2, 1, 1.0);
  ag::DqnLearner l(std::move(q), 1, false);
  ag::Transition t1{indexed(0), 0, 1.0, indexed(1), 0.5};
  ag::Transition t2{indexed(1), 0, 2.0, {}, 0.0};
  const ag::Transition* b2[] = {&t2};
  const ag::Transition* b1[] = {&t1};
  l.update(b1);  // Q(s0) = 1 + 0.5 * 0
  CHECK(l.online().values(indexed(0))[0] == 1.0);
  l.update(b2);  // Q(s1) = 2
  l.update(b1);  // Q(s0) = 1 + 0.5 * 2
  CHECK(l.online().values(indexed(0))[0] == 2.0);
  CHECK(l.online().values(indexed(1))[0] == 2.0);
  CHECK(l.updates() == 3);
}

TEST_CASE("target network syncs every K updates") {
  auto q = std::make_unique<ag::TabularQ>("s", 1, 1, 1.0);
  ag::DqnLearner l(std::move(q), 3, false);
  ag::Transition t{indexed(0), 0, 5.0, {}, 0.0};
  const ag::Transition* b[] = {&t};
  l.update(b);
  l.update(b);
  CHECK(l.target().values(indexed(0))[0] == 0.0);
  l.update(b);
  CHECK(l.target().values(indexed(0))[0] == 5.0);
}

TEST_CASE("tabular hierarchical loop reaches the value-iteration fixed point") {
  const auto cfg = toy::tabular_config();
  const auto oracle = toy::hier_value_iteration(cfg.eta, cfg.gamma);
  ag::HierAgent agent(std::make_unique<ag::TabularQ>("q1", toy::kStates, toy::kSubgoals, cfg.tabular_lr),
                      std::make_unique<ag::TabularQ>("q2", toy::kLowerStates, toy::kLowerActions,
                                                     cfg.tabular_lr),
                      cfg);
  toy::HierToy task;
  Rng rng(cfg.seed);
  const auto curve = ag::train_hierarchical(agent, task, rng);
  CHECK(curve.size() == static_cast<std::size_t>(cfg.epochs));

  for (int s = 0; s < toy::kLive; ++s) {
    const auto q = agent.q1_values(indexed(s));
    const auto& want = oracle.q1[static_cast<std::size_t>(s)];
    CHECK(ag::argmax(q) == ag::argmax(want));
    const auto g = static_cast<std::size_t>(ag::argmax(want));
    CHECK(std::abs(q[g] - want[g]) < 1e-3);
  }
  for (int i = 0; i < toy::kLowerStates; ++i) {
    const auto q = agent.q2_values(indexed(i));
    const auto& want = oracle.q2[static_cast<std::size_t>(i)];
    CHECK(ag::argmax(q) == ag::argmax(want));
    for (std::size_t a = 0; a < want.size(); ++a) CHECK(std::abs(q[a] - want[a]) < 1e-3);
  }
}

TEST_CASE("tabular flat loop reaches the value-iteration fixed point") {
  const auto cfg = toy::tabular_config();
  const double discount = 0.85;
  const auto oracle = toy::flat_value_iteration(discount);
  ag::FlatAgent agent(std::make_unique<ag::TabularQ>("qf", toy::kStates, toy::kFlatActions, cfg.tabular_lr),
                      cfg);
  toy::FlatToy task(discount);
  Rng rng(cfg.seed);
  ag::train_flat(agent, task, rng);
  for (int s = 0; s < toy::kLive; ++s) {
    const auto q = agent.values(indexed(s));
    const auto& want = oracle[static_cast<std::size_t>(s)];
    CHECK(ag::argmax(q) == ag::argmax(want));
    for (std::size_t a = 0; a < want.size(); ++a) CHECK(std::abs(q[a] - want[a]) < 1e-3);
  }
}

TEST_CASE("action amounts lie in (0, B]") {
  CHECK(ag::action_amount(25, units(200)) == units(100));
  CHECK(ag::action_amount(50, units(200)) == units(200));
  CHECK(ag::action_amount(1, Money::from_minor(1)) == Money::from_minor(1));
  CHECK(ag::action_amount(1, Money::from_minor(101)) == Money::from_minor(3));
  CHECK_THROWS_AS(ag::action_amount(0, units(1)), std::out_of_range);
  CHECK_THROWS_AS(ag::action_amount(51, units(1)), std::out_of_range);
  for (std::int64_t b = 1; b < 3000; b += 7) {
    for (int a = 1; a <= 50; ++a) {
      const Money m = ag::action_amount(a, Money::from_minor(b));
      REQUIRE(m.positive());
      REQUIRE(m <= Money::from_minor(b));
    }
  }
}

TEST_CASE("lower rewards in the corrected environment") {
  const sim::Account acct = one_account(units(200));
  ag::EpisodeRunner run;
  run.start(acct, corrected({units(150), units(150), units(150)}), units(0.5));
  run.open_day();
  // a = 25: amount 100 fits 150 -> reward 99.5 (bill-normalised here).
  CHECK(run.attempt(ag::action_amount(25, run.remaining())) * 200 == doctest::Approx(99.5));
  CHECK(run.remaining() == units(100));
  run.close_day();
  run.open_day();
  // a = 50 against B = 100 with 150 available: success.
  CHECK(run.attempt(ag::action_amount(50, run.remaining())) * 200 == doctest::Approx(99.5));
  CHECK(run.finished());

  ag::EpisodeRunner fail;
  fail.start(acct, corrected({units(150), units(150), units(150)}), units(0.5));
  fail.open_day();
  CHECK(fail.attempt(ag::action_amount(50, fail.remaining())) * 200 == doctest::Approx(-0.5));
  CHECK(fail.log().attempts.back().outcome == sim::Outcome::fail);
}

TEST_CASE("hierarchical task bookkeeping") {
  const sim::Account acct = one_account(units(200), 4);
  ag::TrainingEpisode ep{&acct, [] { return corrected({units(30), units(0), units(500), units(90)}); }};
  const ag::DeductionFeatures f(12, 30);
  ag::DeductionHierTask task({ep}, units(0.1), f);
  Rng rng(1);
  task.reset(rng);

  double reward_sum = 0.0;
  int lower_steps = 0;
  const int subgoals[] = {3, 0, 5, 2};
  for (int g : subgoals) {
    if (task.episode_done()) break;
    CHECK(task.upper_state().features.size() == f.upper_dim());
    task.begin_day(g);
    int today = 0;
    while (!task.day_done()) {
      const auto s = task.lower_state();
      CHECK(s.features.size() == f.lower_dim());
      CHECK(s.allowed >= 1);
      reward_sum += task.step(static_cast<int>(s.allowed) - 1);
      ++today;
      ++lower_steps;
    }
    CHECK(today <= g);
    task.end_day();
  }
  const auto& log = task.runner().log();
  CHECK(static_cast<int>(log.attempts.size()) == lower_steps);
  // Σ lower rewards + attempts·c = Σ realized, in bill units.
  const double bill = 200.0;
  CHECK(reward_sum * bill + lower_steps * 0.1 == doctest::Approx(log.total_deducted.units()));
  CHECK_THROWS_AS(f.lower(task.runner().context(), 0, 1, {}, units(10), 0), std::invalid_argument);
}

TEST_CASE("failed amounts mask themselves and everything larger") {
  const sim::Account acct = one_account(units(100));
  const auto ctx = sim::public_context(acct);
  const ag::DeductionFeatures f(12, 30);
  std::vector<sim::DeductionAttempt> hist;
  CHECK(f.lower(ctx, 0, 1, hist, units(100), 3).allowed == 50);
  CHECK(f.flat(ctx, 0, 1, hist, units(100)).allowed == 51);
  hist.push_back({0, 1, units(50), sim::Outcome::fail, Money(), units(0.1)});
  // Amounts 2..48 stay below 50; a = 25 would request 50 again.
  CHECK(f.lower(ctx, 0, 2, hist, units(100), 3).allowed == 24);
  CHECK(f.flat(ctx, 0, 2, hist, units(100)).allowed == 25);
  // A failure on an earlier day does not mask today.
  CHECK(f.lower(ctx, 1, 1, hist, units(100), 3).allowed == 50);
  hist.push_back({1, 1, units(1), sim::Outcome::fail, Money(), units(0.1)});
  CHECK(f.lower(ctx, 1, 2, hist, units(100), 3).allowed == 1);
  CHECK(f.flat(ctx, 1, 2, hist, units(100)).allowed == 1);
}

TEST_CASE("deduction networks have the documented widths") {
  auto cfg = small_neural();
  auto hier = ag::make_deduction_hier_agent(cfg);
  auto flat = ag::make_deduction_flat_agent(cfg);
  const sim::Account acct = one_account(units(100));
  const auto ctx = sim::public_context(acct);
  const ag::DeductionFeatures f(cfg);
  const auto up = f.upper(ctx, 0, {}, units(100));
  CHECK(hier->q1_values(up).size() == 6);
  CHECK(hier->q1_values(up) == hier->q1_values(up));
  const auto l1 = f.lower(ctx, 0, 1, {}, units(100), 1);
  const auto l5 = f.lower(ctx, 0, 1, {}, units(100), 5);
  CHECK(hier->q2_values(l1).size() == 50);
  CHECK(hier->q2_values(l1) != hier->q2_values(l5));
  CHECK(flat->values(f.flat(ctx, 0, 1, {}, units(100))).size() == 51);

  cfg.tabular_mode = true;
  CHECK_THROWS_AS(ag::make_deduction_hier_agent(cfg), deduct::ConfigError);
}

TEST_CASE("neural q gradients pass the finite-difference check") {
  Rng rng(8);
  ag::NeuralQConfig c;
  c.feature_dim = 5;
  c.seq_dim = 4;
  c.seq_hidden = 3;
  c.hidden = {6, 4};
  c.outputs = 3;
  ag::NeuralQ q("q", c, rng);
  std::vector<ag::AgentState> states(4);
  for (auto& s : states) {
    s.features.resize(5);
    for (auto& v : s.features) v = 2 * deduct::uniform01(rng) - 1;
    s.steps = 1 + rng() % 4;
    s.sequence.resize(s.steps * 4);
    for (auto& v : s.sequence) v = 2 * deduct::uniform01(rng) - 1;
  }
  states[3].steps = 0;
  states[3].sequence.clear();
  std::vector<const ag::AgentState*> ptrs;
  for (const auto& s : states) ptrs.push_back(&s);
  const std::vector<int> actions{0, 2, 1, 2};
  const std::vector<double> targets{0.5, -1.0, 2.0, 0.1};
  auto loss = [&](bool grad) { return q.loss(ptrs, actions, targets, grad); };
  const auto report = deduct::nn::grad_check(loss, q.params(), 1e-4, 40, rng);
  CHECK(report.passed);
}

TEST_CASE("neural training is deterministic and checkpoints round trip") {
  auto cfg = small_neural();
  const sim::Account acct = one_account(units(300), 5);
  auto make_ep = [&] {
    return ag::TrainingEpisode{&acct, [] {
                                 return corrected({units(40), units(0), units(120), units(10), units(300)});
                               }};
  };
  auto run = [&] {
    auto agent = ag::make_deduction_hier_agent(cfg);
    ag::DeductionHierTask task({make_ep()}, units(0.1), ag::DeductionFeatures(cfg));
    Rng rng(42);
    auto curve = ag::train_hierarchical(*agent, task, rng);
    return std::make_pair(std::move(agent), curve);
  };
  auto [a1, c1] = run();
  auto [a2, c2] = run();
  REQUIRE(c1.size() == c2.size());
  for (std::size_t i = 0; i < c1.size(); ++i) {
    CHECK(c1[i].td_loss_upper == c2[i].td_loss_upper);
    CHECK(c1[i].td_loss_lower == c2[i].td_loss_lower);
    CHECK(c1[i].epsilon == c2[i].epsilon);
  }
  CHECK(a1->env_steps >= cfg.total_steps);

  std::stringstream buf;
  a1->save(buf);
  auto fresh = ag::make_deduction_hier_agent(small_neural());
  fresh->load(buf);
  const auto ctx = sim::public_context(acct);
  const ag::DeductionFeatures f(cfg);
  const auto s = f.upper(ctx, 2, {}, units(300));
  CHECK(fresh->q1_values(s) == a1->q1_values(s));
  CHECK(fresh->env_steps == a1->env_steps);
  CHECK(fresh->upper.updates() == a1->upper.updates());

  std::stringstream flat_ckpt;
  auto flat = ag::make_deduction_flat_agent(cfg);
  flat->save(flat_ckpt);
  CHECK_THROWS_AS(fresh->load(flat_ckpt), deduct::ParseError);
}

TEST_CASE("plan_path respects subgoals and the remaining debt") {
  auto cfg = small_neural();
  const sim::Account acct = one_account(units(300), 6);
  const auto ctx = sim::public_context(acct);
  const ag::DeductionFeatures f(cfg);

  // Force g = 0 everywhere: every day is empty.
  auto agent = ag::make_deduction_hier_agent(cfg);
  auto& up = static_cast<ag::NeuralQ&>(agent->upper.online());
  auto* last_bias = up.params().back();
  last_bias->value.values[0] = 1e6;
  for (const auto& day : ag::plan_path(*agent, f, ctx)) CHECK(day.empty());

  // Force g = 5 and assume every attempt succeeds: amounts track B.
  last_bias->value.values[0] = 0.0;
  last_bias->value.values[5] = 1e6;
  const auto plan = ag::plan_path(*agent, f, ctx, [](int, int, Money) { return sim::Outcome::success; });
  Money remaining = acct.truth.bill;
  for (const auto& day : plan) {
    CHECK(day.size() <= 5);
    for (Money m : day) {
      CHECK(m.positive());
      CHECK(m <= remaining);
      remaining -= m;
    }
  }
  CHECK(plan == ag::plan_path(*agent, f, ctx, [](int, int, Money) { return sim::Outcome::success; }));

  // The greedy policy replays deterministically in the simulator.
  ag::HierPolicy p1(*agent, f), p2(*agent, f);
  sim::TrueEnv e1(acct), e2(acct);
  CHECK(sim::run_episode(acct, e1, p1, units(0.1)).attempts ==
        sim::run_episode(acct, e2, p2, units(0.1)).attempts);
}

TEST_CASE("agent config validation") {
  using deduct::IniConfig;
  const auto c = ag::AgentConfig::from_ini(IniConfig::parse("[agent]\nhidden_dims = 16, 8\ndouble_dqn = true\n"));
  CHECK(c.hidden_dims == std::vector<std::size_t>{16, 8});
  CHECK(c.double_dqn);
  CHECK_THROWS_AS(ag::AgentConfig::from_ini(IniConfig::parse("[agent]\neta = 0\n")), deduct::ConfigError);
  CHECK_THROWS_AS(ag::AgentConfig::from_ini(IniConfig::parse("[agent]\nbatch = 100\nbuffer_d1 = 10\n")),
                  deduct::ConfigError);
  CHECK_THROWS_AS(ag::AgentConfig::from_ini(IniConfig::parse("[agent]\nhidden_dims = 2.5\n")),
                  deduct::ConfigError);
}
