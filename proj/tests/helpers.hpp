#pragma once

// Shared fixtures: a random policy and an instrumented true environment used
// by the invariant checks.

#include "deduct/seed.hpp"
#include "deduct/sim.hpp"

#include <optional>
#include <string>
#include <vector>

namespace testkit {

using deduct::Money;
using deduct::Rng;
namespace sim = deduct::sim;

/// Random amounts in (0, B], random early stops.
class RandomPolicy final : public sim::DeductionPolicy {
 public:
  explicit RandomPolicy(std::uint64_t seed) : rng_(seed) {}
  void begin_episode(const sim::PolicyContext&) override {}
  std::optional<Money> next_amount(const sim::Observation& obs) override {
    if (deduct::uniform01(rng_) < 0.15) return std::nullopt;
    const auto b = obs.remaining_debt.minor();
    return Money::from_minor(1 + static_cast<std::int64_t>(rng_() % static_cast<std::uint64_t>(b)));
  }

 private:
  Rng rng_;
};

/// Records the hidden balance before every attempt.
class WatchedEnv final : public sim::DeductionEnv {
 public:
  explicit WatchedEnv(const sim::Account& a) : env_(a) {}
  int horizon() const override { return env_.horizon(); }
  void begin_day(int day) override { env_.begin_day(day); }
  sim::Outcome attempt(Money amount) override {
    pre_balance.push_back(env_.privileged_balance());
    return env_.attempt(amount);
  }
  void end_day() override { env_.end_day(); }

  const sim::TrueEnv& inner() const { return env_; }
  std::vector<Money> pre_balance;

 private:
  sim::TrueEnv env_;
};

struct InvariantTally {
  long long episodes = 0;
  long long attempts = 0;
  long long conservation = 0;
  long long lower_bound = 0;
  long long monotone_debt = 0;
  long long step_cap = 0;
  long long outcome = 0;  // success iff amount fits the hidden balance

  long long violations() const {
    return conservation + lower_bound + monotone_debt + step_cap + outcome;
  }
};

/// Runs one episode with `policy` and counts invariant violations.
inline void check_episode(const sim::Account& account, sim::DeductionPolicy& policy, Money cost_c,
                          InvariantTally& t) {
  WatchedEnv env(account);
  const sim::EpisodeLog log = sim::run_episode(account, env, policy, cost_c);
  ++t.episodes;
  t.attempts += static_cast<long long>(log.attempts.size());

  if (log.total_deducted > env.inner().initial_balance() + env.inner().income_credited()) {
    ++t.conservation;
  }
  Money debt = account.truth.bill;
  std::vector<int> per_day(static_cast<std::size_t>(log.horizon), 0);
  for (std::size_t i = 0; i < log.attempts.size(); ++i) {
    const auto& a = log.attempts[i];
    const bool fits = a.requested <= env.pre_balance[i];
    if (fits != (a.outcome == sim::Outcome::success)) ++t.outcome;
    if (a.outcome == sim::Outcome::success && !fits) ++t.lower_bound;
    const Money next = debt - a.realized;
    if (next > debt || next < Money()) ++t.monotone_debt;
    debt = next;
    if (++per_day[static_cast<std::size_t>(a.day)] > sim::kMaxStepsPerDay) ++t.step_cap;
  }
}

/// Accounts whose balance on every day is exactly the mean amount of the
/// consumption events in the preceding `lookback` days, so a uniform
/// attention readout reproduces the label.
inline sim::Dataset make_linear_world(int n, std::uint64_t seed, int lookback = 30,
                                      int history = 30, int horizon = 30) {
  Rng rng(seed);
  sim::Dataset ds;
  const int days = history + horizon;
  for (int id = 0; id < n; ++id) {
    sim::Account a;
    a.id = static_cast<std::uint64_t>(id);
    a.episode_start = history;
    a.truth.bill = Money::from_units(200);
    int last = -100;
    for (int d = 0; d < days; ++d) {
      if (deduct::uniform01(rng) < 0.25 || d - last >= 8) {
        const double amount = 50.0 + 900.0 * deduct::uniform01(rng);
        a.truth.events.push_back({d, sim::EventKind::consumption, Money::from_units(amount)});
        last = d;
      }
    }
    a.truth.daily_balance.resize(static_cast<std::size_t>(days));
    for (int d = 0; d < days; ++d) {
      std::int64_t sum = 0, count = 0;
      for (const auto& e : a.events_before(d)) {
        if (e.day >= d - lookback) {
          sum += e.amount.minor();
          ++count;
        }
      }
      a.truth.daily_balance[static_cast<std::size_t>(d)] =
          Money::from_minor(count ? deduct::div_round_half_up(sum, count) : 0);
    }
    ds.accounts.push_back(std::move(a));
  }
  return ds;
}

}  // namespace testkit
