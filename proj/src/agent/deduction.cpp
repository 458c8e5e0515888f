#include "deduct/deduction_agent.hpp"
#include "deduct/error.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace deduct::agent {

Money action_amount(int a, Money remaining) {
  if (a < 1 || a > kAmountActions) throw std::out_of_range("lower action must be in 1..50");
  return Money::from_minor(div_ceil(a * remaining.minor(), kAmountActions));
}

// --- features --------------------------------------------------------------

namespace {

using sim::AccountProfile;
using sim::DeductionAttempt;

constexpr std::size_t kProfileDim = AccountProfile::kAgeBuckets + AccountProfile::kCityTiers +
                                    AccountProfile::kIncomeBands + AccountProfile::kGenderCodes + 2;
constexpr std::size_t kBaseDim = kProfileDim + 3 + 5 + 6;
constexpr std::size_t kTodayDim = 6;
constexpr std::size_t kStepDim = sim::kMaxStepsPerDay;

void one_hot(std::vector<double>& f, int value, int size) {
  for (int i = 0; i < size; ++i) f.push_back(i == value ? 1.0 : 0.0);
}

double ratio(Money a, Money b) {
  return b.positive() ? static_cast<double>(a.minor()) / static_cast<double>(b.minor()) : 0.0;
}

/// Amount actions still worth trying today: within a day the balance only
/// shrinks, so anything at or above a failed amount fails again.
std::size_t open_amount_actions(std::span<const DeductionAttempt> history, int day, Money remaining) {
  bool failed = false;
  Money lowest;
  for (const auto& a : history) {
    if (a.day != day || a.outcome != sim::Outcome::fail) continue;
    lowest = failed ? min(lowest, a.requested) : a.requested;
    failed = true;
  }
  if (!failed) return kAmountActions;
  std::size_t n = 0;
  while (n < static_cast<std::size_t>(kAmountActions) &&
         action_amount(static_cast<int>(n) + 1, remaining) < lowest) {
    ++n;
  }
  return n;
}

}  // namespace

std::size_t DeductionFeatures::upper_dim() const { return kBaseDim; }
std::size_t DeductionFeatures::lower_dim() const { return kBaseDim + 2 * kStepDim + kTodayDim; }
std::size_t DeductionFeatures::flat_dim() const { return kBaseDim + kStepDim + kTodayDim; }

void DeductionFeatures::base(std::vector<double>& f, const sim::PolicyContext& ctx, int day,
                             std::span<const DeductionAttempt> history, Money remaining) const {
  const auto& p = *ctx.profile;
  one_hot(f, p.age_bucket, AccountProfile::kAgeBuckets);
  one_hot(f, p.city_tier, AccountProfile::kCityTiers);
  one_hot(f, p.income_band, AccountProfile::kIncomeBands);
  one_hot(f, p.gender, AccountProfile::kGenderCodes);
  f.push_back(std::min(p.payments_per_day, 2.0) / 2.0);
  f.push_back(std::min(p.transfers_per_day, 2.0) / 2.0);

  f.push_back(ctx.horizon > 0 ? static_cast<double>(day) / ctx.horizon : 0.0);
  f.push_back(ratio(remaining, ctx.bill));
  f.push_back(std::log1p(ctx.bill.units()) / 8.0);

  // Summary of earlier days inside the window.
  const int first = std::max(0, day - days_);
  int success_days = 0, last_success_day = -1, counted_day = -1;
  Money last_success, best_success, yesterday;
  for (const auto& a : history) {
    if (a.day < first || a.day >= day) continue;
    if (a.day == day - 1) yesterday += a.realized;
    if (a.outcome != sim::Outcome::success) continue;
    if (a.day != counted_day) ++success_days, counted_day = a.day;
    last_success_day = a.day;
    last_success = a.realized;
    best_success = max(best_success, a.realized);
  }
  const int span = std::max(1, day - first);
  f.push_back(static_cast<double>(success_days) / span);
  f.push_back(last_success_day < 0 ? 1.0
                                   : std::min(1.0, static_cast<double>(day - last_success_day) / days_));
  f.push_back(ratio(last_success, ctx.bill));
  f.push_back(ratio(best_success, ctx.bill));
  f.push_back(ratio(yesterday, ctx.bill));

  // Visible account activity: outflow sizes against the remaining debt and
  // their timing.
  const int abs_day = ctx.episode_start + day;
  int last_consumption = -1, last_payment = -1, n_consumption = 0;
  Money last_amount, consumption_sum;
  for (const auto& e : ctx.visible_events(day)) {
    if (e.day < abs_day - days_) continue;
    if (e.kind == sim::EventKind::consumption) {
      last_consumption = e.day;
      last_amount = e.amount;
      consumption_sum += e.amount;
      ++n_consumption;
    } else {
      last_payment = e.day;
    }
  }
  const auto since = [&](int d) {
    return d < 0 ? 1.0 : std::min(1.0, static_cast<double>(abs_day - d) / days_);
  };
  const Money mean_amount =
      n_consumption ? Money::from_minor(consumption_sum.minor() / n_consumption) : Money();
  f.push_back(std::min(ratio(last_amount, remaining), 2.0) / 2.0);
  f.push_back(std::min(ratio(mean_amount, remaining), 2.0) / 2.0);
  f.push_back(since(last_consumption));
  f.push_back(since(last_payment));
  f.push_back(last_payment > last_consumption ? 1.0 : 0.0);
  f.push_back(std::log1p(last_amount.units()) / 8.0);
}

void DeductionFeatures::today(std::vector<double>& f, const sim::PolicyContext& ctx, int day, int,
                              std::span<const DeductionAttempt> history, Money remaining) const {
  int fails = 0, successes = 0;
  double last_outcome = 0.0;
  Money min_failed, last_success, total;
  bool any_failed = false;
  for (const auto& a : history) {
    if (a.day != day) continue;
    if (a.outcome == sim::Outcome::success) {
      ++successes;
      last_success = a.realized;
      total += a.realized;
      last_outcome = 1.0;
    } else {
      ++fails;
      min_failed = any_failed ? min(min_failed, a.requested) : a.requested;
      any_failed = true;
      last_outcome = -1.0;
    }
  }
  f.push_back(static_cast<double>(fails) / sim::kMaxStepsPerDay);
  f.push_back(static_cast<double>(successes) / sim::kMaxStepsPerDay);
  f.push_back(any_failed ? std::min(1.0, ratio(min_failed, remaining)) : 1.0);
  f.push_back(std::min(1.0, ratio(last_success, remaining)));
  f.push_back(ratio(total, ctx.bill));
  f.push_back(last_outcome);
}

void DeductionFeatures::sequence(AgentState& s, const sim::PolicyContext& ctx, int day,
                                 std::span<const DeductionAttempt> history) const {
  std::size_t begin = history.size();
  while (begin > 0 && history.size() - begin < window_ && history[begin - 1].day >= day - days_) --begin;
  s.steps = history.size() - begin;
  s.sequence.reserve(s.steps * kSeqDim);
  for (std::size_t i = begin; i < history.size(); ++i) {
    const auto& a = history[i];
    s.sequence.push_back(ratio(a.requested, ctx.bill));
    s.sequence.push_back(a.outcome == sim::Outcome::success ? 1.0 : 0.0);
    s.sequence.push_back(static_cast<double>(day - a.day) / days_);
    s.sequence.push_back(static_cast<double>(a.step) / sim::kMaxStepsPerDay);
  }
}

AgentState DeductionFeatures::upper(const sim::PolicyContext& ctx, int day,
                                    std::span<const DeductionAttempt> history, Money remaining) const {
  AgentState s;
  s.features.reserve(upper_dim());
  base(s.features, ctx, day, history, remaining);
  sequence(s, ctx, day, history);
  return s;
}

AgentState DeductionFeatures::lower(const sim::PolicyContext& ctx, int day, int step,
                                    std::span<const DeductionAttempt> history, Money remaining,
                                    int g) const {
  if (g < 1 || g > sim::kMaxStepsPerDay) throw std::invalid_argument("lower agent needs a subgoal in 1..5");
  AgentState s;
  s.features.reserve(lower_dim());
  base(s.features, ctx, day, history, remaining);
  one_hot(s.features, step - 1, sim::kMaxStepsPerDay);
  one_hot(s.features, g - 1, sim::kMaxStepsPerDay);
  today(s.features, ctx, day, step, history, remaining);
  sequence(s, ctx, day, history);
  s.allowed = std::max<std::size_t>(1, open_amount_actions(history, day, remaining));
  return s;
}

AgentState DeductionFeatures::flat(const sim::PolicyContext& ctx, int day, int step,
                                   std::span<const DeductionAttempt> history, Money remaining) const {
  AgentState s;
  s.features.reserve(flat_dim());
  base(s.features, ctx, day, history, remaining);
  one_hot(s.features, step - 1, sim::kMaxStepsPerDay);
  today(s.features, ctx, day, step, history, remaining);
  sequence(s, ctx, day, history);
  s.allowed = 1 + open_amount_actions(history, day, remaining);
  return s;
}

namespace {

NeuralQConfig network(const AgentConfig& cfg, std::size_t features, std::size_t outputs) {
  NeuralQConfig n;
  n.feature_dim = features;
  n.seq_dim = DeductionFeatures::kSeqDim;
  n.seq_hidden = cfg.history_hidden;
  n.hidden = cfg.hidden_dims;
  n.outputs = outputs;
  n.adam.lr = cfg.lr;
  return n;
}

void require_neural(const AgentConfig& cfg) {
  if (cfg.tabular_mode) throw ConfigError("tabular_mode needs enumerable states; the deduction task has none");
}

}  // namespace

NeuralQConfig upper_network(const AgentConfig& cfg, const DeductionFeatures& f) {
  return network(cfg, f.upper_dim(), kSubgoals);
}
NeuralQConfig lower_network(const AgentConfig& cfg, const DeductionFeatures& f) {
  return network(cfg, f.lower_dim(), kAmountActions);
}
NeuralQConfig flat_network(const AgentConfig& cfg, const DeductionFeatures& f) {
  return network(cfg, f.flat_dim(), kFlatActions);
}

std::unique_ptr<HierAgent> make_deduction_hier_agent(const AgentConfig& cfg) {
  require_neural(cfg);
  const DeductionFeatures f(cfg);
  Rng rng = make_rng(cfg.seed, "hier-init", 0);
  auto q1 = std::make_unique<NeuralQ>("q1", upper_network(cfg, f), rng);
  auto q2 = std::make_unique<NeuralQ>("q2", lower_network(cfg, f), rng);
  return std::make_unique<HierAgent>(std::move(q1), std::move(q2), cfg);
}

std::unique_ptr<FlatAgent> make_deduction_flat_agent(const AgentConfig& cfg) {
  require_neural(cfg);
  const DeductionFeatures f(cfg);
  Rng rng = make_rng(cfg.seed, "flat-init", 0);
  return std::make_unique<FlatAgent>(std::make_unique<NeuralQ>("qf", flat_network(cfg, f), rng), cfg);
}

// --- episode bookkeeping ---------------------------------------------------

void EpisodeRunner::start(const sim::Account& account, std::unique_ptr<sim::DeductionEnv> env,
                          Money cost_c) {
  ctx_ = sim::public_context(account);
  env_ = std::move(env);
  log_ = {};
  log_.account_id = account.id;
  log_.horizon = env_->horizon();
  log_.bill = account.truth.bill;
  cost_ = cost_c;
  remaining_ = account.truth.bill;
  day_ = 0;
  step_ = 1;
}

bool EpisodeRunner::finished() const { return day_ >= log_.horizon || !remaining_.positive(); }

void EpisodeRunner::open_day() {
  env_->begin_day(day_);
  step_ = 1;
}

void EpisodeRunner::close_day() {
  env_->end_day();
  ++day_;
}

double EpisodeRunner::attempt(Money amount) {
  if (step_ > sim::kMaxStepsPerDay) throw std::logic_error("step cap exceeded");
  if (!amount.positive() || amount > remaining_) throw std::logic_error("attempt outside (0, B]");
  const auto outcome = env_->attempt(amount);
  sim::DeductionAttempt a;
  a.day = day_;
  a.step = step_;
  a.requested = amount;
  a.outcome = outcome;
  a.realized = outcome == sim::Outcome::success ? amount : Money();
  a.cost = cost_;
  log_.record(a);
  remaining_ -= a.realized;
  ++step_;
  return (a.realized - cost_).units() / reward_scale();
}

// --- hierarchical task -----------------------------------------------------

DeductionHierTask::DeductionHierTask(std::vector<TrainingEpisode> episodes, Money cost_c,
                                     DeductionFeatures features)
    : episodes_(std::move(episodes)), cost_(cost_c), features_(features) {
  if (episodes_.empty()) throw ConfigError("no training episodes");
}

void DeductionHierTask::reset(Rng& rng) {
  const auto& e = episodes_[static_cast<std::size_t>(
      uniform_int(rng, 0, static_cast<long long>(episodes_.size()) - 1))];
  runner_.start(*e.account, e.make_env(), cost_);
}

AgentState DeductionHierTask::upper_state() const {
  return features_.upper(runner_.context(), runner_.day(), runner_.log().attempts, runner_.remaining());
}

void DeductionHierTask::begin_day(int subgoal) {
  subgoal_ = subgoal;
  runner_.open_day();
}

bool DeductionHierTask::day_done() const {
  return runner_.step() > subgoal_ || !runner_.remaining().positive();
}

AgentState DeductionHierTask::lower_state() const {
  return features_.lower(runner_.context(), runner_.day(), runner_.step(), runner_.log().attempts,
                         runner_.remaining(), subgoal_);
}

double DeductionHierTask::step(int action) {
  return runner_.attempt(action_amount(action + 1, runner_.remaining()));
}

void DeductionHierTask::end_day() { runner_.close_day(); }

// --- flat task -------------------------------------------------------------

DeductionFlatTask::DeductionFlatTask(std::vector<TrainingEpisode> episodes, Money cost_c,
                                     DeductionFeatures features, double eta, double gamma)
    : episodes_(std::move(episodes)), cost_(cost_c), features_(features), eta_(eta), gamma_(gamma) {
  if (episodes_.empty()) throw ConfigError("no training episodes");
}

void DeductionFlatTask::reset(Rng& rng) {
  const auto& e = episodes_[static_cast<std::size_t>(
      uniform_int(rng, 0, static_cast<long long>(episodes_.size()) - 1))];
  runner_.start(*e.account, e.make_env(), cost_);
  runner_.open_day();
}

AgentState DeductionFlatTask::state() const {
  return features_.flat(runner_.context(), runner_.day(), runner_.step(), runner_.log().attempts,
                        runner_.remaining());
}

FlatStep DeductionFlatTask::step(int action) {
  FlatStep out;
  bool day_over = action == 0;
  if (action != 0) {
    out.reward = runner_.attempt(action_amount(action, runner_.remaining()));
    day_over = runner_.step() > sim::kMaxStepsPerDay || !runner_.remaining().positive();
  }
  if (!day_over) {
    out.discount = gamma_;
    return out;
  }
  runner_.close_day();
  if (runner_.finished()) return out;
  runner_.open_day();
  out.discount = eta_;
  return out;
}

// --- greedy policies -------------------------------------------------------

HierPolicy::HierPolicy(const HierAgent& agent, DeductionFeatures features)
    : agent_(&agent), features_(features) {}

void HierPolicy::begin_episode(const sim::PolicyContext& ctx) {
  ctx_ = ctx;
  subgoal_ = 0;
}

std::optional<Money> HierPolicy::next_amount(const sim::Observation& obs) {
  if (obs.step == 1) {
    subgoal_ = argmax(agent_->q1_values(features_.upper(ctx_, obs.day, obs.history, obs.remaining_debt)));
  }
  if (obs.step > subgoal_ || !obs.remaining_debt.positive()) return std::nullopt;
  const auto s = features_.lower(ctx_, obs.day, obs.step, obs.history, obs.remaining_debt, subgoal_);
  return action_amount(argmax(available(agent_->q2_values(s), s)) + 1, obs.remaining_debt);
}

FlatPolicy::FlatPolicy(const FlatAgent& agent, DeductionFeatures features)
    : agent_(&agent), features_(features) {}

void FlatPolicy::begin_episode(const sim::PolicyContext& ctx) { ctx_ = ctx; }

std::optional<Money> FlatPolicy::next_amount(const sim::Observation& obs) {
  if (!obs.remaining_debt.positive()) return std::nullopt;
  const auto s = features_.flat(ctx_, obs.day, obs.step, obs.history, obs.remaining_debt);
  const int a = argmax(available(agent_->values(s), s));
  if (a == 0) return std::nullopt;
  return action_amount(a, obs.remaining_debt);
}

std::vector<std::vector<Money>> plan_path(const HierAgent& agent, const DeductionFeatures& features,
                                          const sim::PolicyContext& ctx, const AssumedOutcome& assume) {
  std::vector<std::vector<Money>> plan(static_cast<std::size_t>(ctx.horizon));
  std::vector<DeductionAttempt> history;
  Money remaining = ctx.bill;
  for (int day = 0; day < ctx.horizon && remaining.positive(); ++day) {
    const int g = argmax(agent.q1_values(features.upper(ctx, day, history, remaining)));
    for (int step = 1; step <= g && remaining.positive(); ++step) {
      const auto s = features.lower(ctx, day, step, history, remaining, g);
      const Money amount = action_amount(argmax(available(agent.q2_values(s), s)) + 1, remaining);
      plan[static_cast<std::size_t>(day)].push_back(amount);
      const auto outcome = assume ? assume(day, step, amount) : sim::Outcome::fail;
      DeductionAttempt a;
      a.day = day;
      a.step = step;
      a.requested = amount;
      a.outcome = outcome;
      a.realized = outcome == sim::Outcome::success ? amount : Money();
      history.push_back(a);
      remaining -= a.realized;
    }
  }
  return plan;
}

}  // namespace deduct::agent
