#include "deduct/error.hpp"
#include "deduct/sim.hpp"

#include <algorithm>
#include <stdexcept>

namespace deduct::sim {

const char* to_string(EventKind kind) {
  return kind == EventKind::consumption ? "consumption" : "payment";
}

EventKind event_kind_from_string(const std::string& s) {
  if (s == "consumption") return EventKind::consumption;
  if (s == "payment") return EventKind::payment;
  throw std::invalid_argument("unknown event kind '" + s + "'");
}

Money Account::outflows_on(int abs_day) const {
  Money total;
  for (const auto& e : events_before(abs_day + 1)) {
    if (e.day == abs_day) total += e.amount;
  }
  return total;
}

Money Account::income_on(int abs_day) const {
  const auto& b = truth.daily_balance;
  const auto d = static_cast<std::size_t>(abs_day);
  return b[d] - (b[d - 1] - outflows_on(abs_day - 1));
}

std::span<const ConsumptionEvent> Account::events_before(int abs_day) const {
  const auto it = std::lower_bound(
      truth.events.begin(), truth.events.end(), abs_day,
      [](const ConsumptionEvent& e, int day) { return e.day < day; });
  return {truth.events.data(), static_cast<std::size_t>(it - truth.events.begin())};
}

AttemptResult attempt_deduction(Money balance, Money amount) {
  if (amount <= balance) return {Outcome::success, amount, balance - amount};
  return {Outcome::fail, Money(), balance};
}

Observation observe(const Account& account, std::span<const DeductionAttempt> executed,
                    int day, int step) {
  Money paid;
  for (const auto& a : executed) paid += a.realized;
  Observation obs;
  obs.profile = &account.profile;
  obs.day = day;
  obs.step = step;
  obs.horizon = account.horizon();
  obs.history = executed;
  obs.bill = account.truth.bill;
  obs.remaining_debt = max(Money(), account.truth.bill - paid);
  return obs;
}

Money privileged_balance(const Account& account, int abs_day) {
  return account.truth.daily_balance.at(static_cast<std::size_t>(abs_day));
}

void EpisodeLog::record(const DeductionAttempt& a) {
  attempts.push_back(a);
  total_deducted += a.realized;
  total_cost += a.cost;
}

Money EpisodeLog::deducted_on(int day) const {
  Money total;
  for (const auto& a : attempts) {
    if (a.day == day) total += a.realized;
  }
  return total;
}

TrueEnv::TrueEnv(const Account& account) : account_(&account) {
  balance_ = account.truth.daily_balance.at(static_cast<std::size_t>(account.episode_start));
  initial_ = balance_;
}

void TrueEnv::begin_day(int day) {
  if (in_day_) throw std::logic_error("TrueEnv::begin_day called twice");
  if (day < day_) throw std::logic_error("TrueEnv days must be visited in order");
  // Skipped days still run their bookkeeping.
  while (day_ < day) {
    in_day_ = true;
    end_day();
  }
  in_day_ = true;
}

Outcome TrueEnv::attempt(Money amount) {
  if (!in_day_) throw std::logic_error("TrueEnv::attempt outside a day");
  const AttemptResult r = attempt_deduction(balance_, amount);
  balance_ = r.new_balance;
  return r.outcome;
}

void TrueEnv::end_day() {
  if (!in_day_) throw std::logic_error("TrueEnv::end_day outside a day");
  in_day_ = false;
  const int abs = account_->absolute_day(day_);
  balance_ = max(Money(), balance_ - account_->outflows_on(abs));
  ++day_;
  if (day_ < horizon()) {
    const Money income = account_->income_on(abs + 1);
    balance_ += income;
    income_credited_ += income;
  }
}

std::span<const ConsumptionEvent> PolicyContext::visible_events(int episode_day) const {
  const int abs = episode_start + episode_day;
  const auto it = std::lower_bound(events.begin(), events.end(), abs,
                                   [](const ConsumptionEvent& e, int d) { return e.day < d; });
  return events.subspan(0, static_cast<std::size_t>(it - events.begin()));
}

PolicyContext public_context(const Account& account) {
  PolicyContext ctx;
  ctx.account_id = account.id;
  ctx.profile = &account.profile;
  ctx.bill = account.truth.bill;
  ctx.horizon = account.horizon();
  ctx.episode_start = account.episode_start;
  ctx.events = account.truth.events;
  return ctx;
}

EpisodeLog run_episode(const Account& account, DeductionEnv& env, DeductionPolicy& policy,
                       Money cost_c) {
  EpisodeLog log;
  log.account_id = account.id;
  log.horizon = env.horizon();
  log.bill = account.truth.bill;
  policy.begin_episode(public_context(account));

  Money remaining = account.truth.bill;
  for (int day = 0; day < log.horizon; ++day) {
    env.begin_day(day);
    for (int step = 1; step <= kMaxStepsPerDay && remaining.positive(); ++step) {
      const Observation obs = observe(account, log.attempts, day, step);
      const std::optional<Money> amount = policy.next_amount(obs);
      if (!amount || !amount->positive()) break;
      if (*amount > remaining) {
        throw std::logic_error("policy requested " + amount->to_string() +
                               " above remaining debt " + remaining.to_string());
      }
      const Outcome outcome = env.attempt(*amount);
      DeductionAttempt a;
      a.day = day;
      a.step = step;
      a.requested = *amount;
      a.outcome = outcome;
      a.realized = outcome == Outcome::success ? *amount : Money();
      a.cost = cost_c;
      log.record(a);
      remaining -= a.realized;
    }
    env.end_day();
  }
  return log;
}

}  // namespace deduct::sim
