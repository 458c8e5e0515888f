#pragma once

#include "deduct/config.hpp"
#include "deduct/money.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace deduct::sim {

/// Maximum number of deduction attempts per account per day.
inline constexpr int kMaxStepsPerDay = 5;

enum class EventKind : std::uint8_t { consumption, payment };

const char* to_string(EventKind kind);
EventKind event_kind_from_string(const std::string& s);

/// One outflow from the saving account. `day` is on the account's absolute
/// timeline (history prefix followed by the episode).
struct ConsumptionEvent {
  int day = 0;
  EventKind kind = EventKind::consumption;
  Money amount;

  friend bool operator==(const ConsumptionEvent&, const ConsumptionEvent&) = default;
};

/// Profile codes (U_p) and activity rates (U_a).
struct AccountProfile {
  static constexpr int kAgeBuckets = 6;
  static constexpr int kCityTiers = 4;
  static constexpr int kIncomeBands = 8;
  static constexpr int kGenderCodes = 2;

  int age_bucket = 0;
  int city_tier = 0;
  int income_band = 0;
  int gender = 0;
  double payments_per_day = 0.0;
  double transfers_per_day = 0.0;

  bool valid() const;
  friend bool operator==(const AccountProfile&, const AccountProfile&) = default;
};

enum class Archetype : std::uint8_t { frequent_spender, payday_cycle, dormant };
inline constexpr int kArchetypeCount = 3;

/// Ground truth. `daily_balance[d]` is the balance available at deduction time
/// on absolute day d in a world without deductions: income credited on day d
/// is included, that day's outflows are not.
struct AccountTruth {
  std::vector<Money> daily_balance;
  Money bill;
  std::vector<ConsumptionEvent> events;  // sorted by day

  friend bool operator==(const AccountTruth&, const AccountTruth&) = default;
};

struct Account {
  std::uint64_t id = 0;
  AccountProfile profile;
  AccountTruth truth;
  /// Absolute day of episode day 0. Days before it are consumption history.
  int episode_start = 0;

  int horizon() const { return static_cast<int>(truth.daily_balance.size()) - episode_start; }
  int absolute_day(int episode_day) const { return episode_start + episode_day; }
  /// Planned outflow total on an absolute day.
  Money outflows_on(int abs_day) const;
  /// Income credited at the start of absolute day `abs_day` (>= 1), recovered
  /// from the no-deduction bookkeeping.
  Money income_on(int abs_day) const;
  /// Events strictly before absolute day `abs_day`, in time order.
  std::span<const ConsumptionEvent> events_before(int abs_day) const;

  friend bool operator==(const Account&, const Account&) = default;
};

struct Dataset {
  std::vector<Account> accounts;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct GenConfig {
  int accounts = 2500;
  int horizon_days = 30;
  int history_days = 30;
  std::uint64_t seed = 7;
  /// Weights for {frequent_spender, payday_cycle, dormant}.
  std::array<double, kArchetypeCount> archetype_mix{0.35, 0.5, 0.15};
  Money cost_c = Money::from_minor(10);
  int payday_period = 10;

  // Income and bill process. Income is lognormal per account; every credit
  // carries multiplicative noise; bills are income times a lognormal ratio.
  double income_median = 520.0;
  double income_sigma = 0.45;
  double income_noise = 0.08;
  double bill_ratio_median = 3.5;
  double bill_ratio_sigma = 0.5;

  static GenConfig from_ini(const IniConfig& ini);
  /// Throws ConfigError on zero accounts, negative horizon and similar.
  void validate() const;
};

/// Deterministic for a fixed config. Each account draws from its own stream
/// derived from (seed, id), so generation order does not matter.
Dataset generate_accounts(const GenConfig& cfg);
Account generate_account(const GenConfig& cfg, std::uint64_t id);

// ---------------------------------------------------------------------------
// Deduction semantics

enum class Outcome : std::uint8_t { success, fail };

struct DeductionAttempt {
  int day = 0;   // episode day
  int step = 1;  // 1..kMaxStepsPerDay
  Money requested;
  Outcome outcome = Outcome::fail;
  Money realized;
  Money cost;

  friend bool operator==(const DeductionAttempt&, const DeductionAttempt&) = default;
};

struct AttemptResult {
  Outcome outcome = Outcome::fail;
  Money realized;
  Money new_balance;
};

/// Success iff amount <= balance. A zero amount is a no-op success.
AttemptResult attempt_deduction(Money balance, Money amount);

/// What a policy is allowed to see.
struct Observation {
  const AccountProfile* profile = nullptr;
  int day = 0;
  int step = 1;
  int horizon = 0;
  std::span<const DeductionAttempt> history;
  Money remaining_debt;
  Money bill;
};

Observation observe(const Account& account, std::span<const DeductionAttempt> executed,
                    int day, int step);

/// Evaluation/labeling oracle. Never call from a policy.
Money privileged_balance(const Account& account, int abs_day);

struct EpisodeLog {
  std::uint64_t account_id = 0;
  int horizon = 0;
  Money bill;
  std::vector<DeductionAttempt> attempts;
  Money total_deducted;
  Money total_cost;

  void record(const DeductionAttempt& a);
  /// Successful total on one episode day.
  Money deducted_on(int day) const;
};

// ---------------------------------------------------------------------------
// Environments and policies

/// A day-structured deduction environment. Days must be visited in order.
class DeductionEnv {
 public:
  virtual ~DeductionEnv() = default;
  virtual int horizon() const = 0;
  virtual void begin_day(int day) = 0;
  virtual Outcome attempt(Money amount) = 0;
  virtual void end_day() = 0;
};

/// The true simulator for one account: hidden balance evolves with the
/// account's income and outflows and with every successful deduction.
class TrueEnv final : public DeductionEnv {
 public:
  explicit TrueEnv(const Account& account);

  int horizon() const override { return account_->horizon(); }
  void begin_day(int day) override;
  Outcome attempt(Money amount) override;
  void end_day() override;

  /// Privileged: current hidden balance.
  Money privileged_balance() const { return balance_; }
  Money income_credited() const { return income_credited_; }
  Money initial_balance() const { return initial_; }

 private:
  const Account* account_;
  int day_ = 0;
  bool in_day_ = false;
  Money balance_;
  Money initial_;
  Money income_credited_;
};

/// Non-privileged per-account context handed to a policy at episode start.
struct PolicyContext {
  std::uint64_t account_id = 0;
  const AccountProfile* profile = nullptr;
  Money bill;
  int horizon = 0;
  int episode_start = 0;
  /// Full consumption stream; policies may only read events before the
  /// current absolute day (see visible_events).
  std::span<const ConsumptionEvent> events;

  std::span<const ConsumptionEvent> visible_events(int episode_day) const;
};

PolicyContext public_context(const Account& account);

class DeductionPolicy {
 public:
  virtual ~DeductionPolicy() = default;
  virtual void begin_episode(const PolicyContext& ctx) = 0;
  /// Next amount for today, or nullopt to stop for the day. Must not exceed
  /// the remaining debt; zero is treated as "stop".
  virtual std::optional<Money> next_amount(const Observation& obs) = 0;
};

/// Runs one episode: at most kMaxStepsPerDay attempts per day, stopping early
/// when the policy declines or the debt is cleared.
EpisodeLog run_episode(const Account& account, DeductionEnv& env, DeductionPolicy& policy,
                       Money cost_c);

// ---------------------------------------------------------------------------
// Dataset file I/O (one JSON object per line)

void write_dataset(const Dataset& ds, std::ostream& out);
Dataset read_dataset(std::istream& in);
void export_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// ---------------------------------------------------------------------------
// Calibration statistics over the episode window.

struct PopulationStats {
  double mean_consumption_amount = 0.0;   // units, consumption-kind events
  double mean_consumption_events = 0.0;   // per account per 30-day window
  double mean_feasible_deduction = 0.0;   // units, mean of min(balance, bill) over account-days
  double positive_day_fraction = 0.0;     // account-days with balance >= 1 unit
  double consumption_balance_corr = 0.0;  // Pearson over positive account-days
  double mean_bill = 0.0;
  double mean_positive_balance = 0.0;
};

PopulationStats population_stats(const Dataset& ds, int lookback_days = 30);

/// Pearson correlation; 0 when either side is constant.
double pearson(std::span<const double> x, std::span<const double> y);

}  // namespace deduct::sim
