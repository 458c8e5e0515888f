#include "deduct/error.hpp"
#include "deduct/seed.hpp"
#include "deduct/sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace deduct::sim {

namespace {

struct ArchetypeShape {
  double income_scale;
  double period_scale;  // relative to payday_period; 0 means irregular credits
  std::array<double, 6> drain_lag;  // P(lag = 0..5 days)
  double payment_prob;  // small outflow on a funded day
};

constexpr ArchetypeShape shape_of(Archetype a) {
  switch (a) {
    case Archetype::frequent_spender:
      return {0.6, 0.7, {0.65, 0.35, 0.0, 0.0, 0.0, 0.0}, 0.45};
    case Archetype::payday_cycle:
      return {1.0, 1.0, {0.40, 0.35, 0.15, 0.10, 0.0, 0.0}, 0.30};
    case Archetype::dormant:
      return {0.5, 0.0, {0.30, 0.25, 0.20, 0.15, 0.10, 0.0}, 0.20};
  }
  return {1.0, 1.0, {1.0, 0, 0, 0, 0, 0}, 0.0};
}

template <std::size_t N>
int draw_categorical(Rng& rng, const std::array<double, N>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < N; ++i) {
    if (u < weights[i]) return static_cast<int>(i);
    u -= weights[i];
  }
  return static_cast<int>(N) - 1;
}

int clamp_code(double v, int cardinality) {
  return std::clamp(static_cast<int>(std::lround(v)), 0, cardinality - 1);
}

}  // namespace

bool AccountProfile::valid() const {
  return age_bucket >= 0 && age_bucket < kAgeBuckets && city_tier >= 0 &&
         city_tier < kCityTiers && income_band >= 0 && income_band < kIncomeBands &&
         gender >= 0 && gender < kGenderCodes && payments_per_day >= 0.0 &&
         transfers_per_day >= 0.0;
}

GenConfig GenConfig::from_ini(const IniConfig& ini) {
  GenConfig c;
  const std::string s = "simulation";
  c.accounts = static_cast<int>(ini.get_int(s, "accounts", c.accounts));
  c.horizon_days = static_cast<int>(ini.get_int(s, "horizon_days", c.horizon_days));
  c.history_days = static_cast<int>(ini.get_int(s, "history_days", c.history_days));
  c.seed = static_cast<std::uint64_t>(ini.get_int(s, "seed", static_cast<long long>(c.seed)));
  const auto mix = ini.get_doubles(s, "archetype_mix",
                                   {c.archetype_mix[0], c.archetype_mix[1], c.archetype_mix[2]});
  if (mix.size() != kArchetypeCount) {
    throw ConfigError("simulation.archetype_mix needs 3 weights (frequent,payday,dormant)");
  }
  std::copy(mix.begin(), mix.end(), c.archetype_mix.begin());
  c.cost_c = Money::from_units(ini.get_double(s, "cost_c", c.cost_c.units()));
  c.payday_period = static_cast<int>(ini.get_int(s, "payday_period", c.payday_period));
  c.income_median = ini.get_double(s, "income_median", c.income_median);
  c.income_sigma = ini.get_double(s, "income_sigma", c.income_sigma);
  c.income_noise = ini.get_double(s, "income_noise", c.income_noise);
  c.bill_ratio_median = ini.get_double(s, "bill_ratio_median", c.bill_ratio_median);
  c.bill_ratio_sigma = ini.get_double(s, "bill_ratio_sigma", c.bill_ratio_sigma);
  c.validate();
  return c;
}

void GenConfig::validate() const {
  if (accounts <= 0) throw ConfigError("simulation.accounts must be positive");
  if (horizon_days <= 0) throw ConfigError("simulation.horizon_days must be positive");
  if (history_days < 0) throw ConfigError("simulation.history_days must be >= 0");
  if (payday_period < 2) throw ConfigError("simulation.payday_period must be >= 2");
  if (cost_c < Money()) throw ConfigError("simulation.cost_c must be >= 0");
  double total = 0.0;
  for (double w : archetype_mix) {
    if (!(w >= 0.0)) throw ConfigError("simulation.archetype_mix weights must be >= 0");
    total += w;
  }
  if (total <= 0.0) throw ConfigError("simulation.archetype_mix must not be all zero");
  if (!(income_median > 0.0) || !(income_sigma >= 0.0) || !(income_noise >= 0.0) ||
      !(bill_ratio_median > 0.0) || !(bill_ratio_sigma >= 0.0)) {
    throw ConfigError("simulation income/bill parameters out of range");
  }
}

Account generate_account(const GenConfig& cfg, std::uint64_t id) {
  Rng rng = make_rng(cfg.seed, "gen", id);
  std::normal_distribution<double> normal(0.0, 1.0);

  const auto archetype = static_cast<Archetype>(draw_categorical(rng, cfg.archetype_mix));
  const ArchetypeShape shape = shape_of(archetype);
  const double income =
      cfg.income_median * shape.income_scale * std::exp(cfg.income_sigma * normal(rng));

  const int days = cfg.history_days + cfg.horizon_days;
  const int period =
      shape.period_scale > 0.0
          ? std::max(2, static_cast<int>(std::lround(cfg.payday_period * shape.period_scale)))
          : 0;
  const int phase = period > 0 ? uniform_int(rng, 0, period - 1) : 0;
  const double irregular_credit_prob = 1.0 / (3.0 * cfg.payday_period);

  Account acct;
  acct.id = id;
  acct.episode_start = cfg.history_days;
  acct.truth.daily_balance.resize(static_cast<std::size_t>(days));

  Money balance;
  int drain_day = -1;
  int credits_in_history = 0;
  int payments_in_history = 0;
  for (int d = 0; d < days; ++d) {
    const bool credit = period > 0 ? (d % period == phase) : uniform01(rng) < irregular_credit_prob;
    if (credit) {
      balance += Money::from_units(income * std::exp(cfg.income_noise * normal(rng)));
      const int lag = draw_categorical(rng, shape.drain_lag);
      if (drain_day < d) drain_day = d + lag;
      if (d < cfg.history_days) ++credits_in_history;
    }
    acct.truth.daily_balance[static_cast<std::size_t>(d)] = balance;

    if (balance.positive() && uniform01(rng) < shape.payment_prob) {
      const double frac = 0.04 + 0.11 * uniform01(rng);
      const Money amount = Money::from_units(balance.units() * frac);
      if (amount.positive() && amount < balance) {
        acct.truth.events.push_back({d, EventKind::payment, amount});
        balance -= amount;
        if (d < cfg.history_days) ++payments_in_history;
      }
    }
    if (d == drain_day) {
      if (balance.positive()) {
        acct.truth.events.push_back({d, EventKind::consumption, balance});
        balance = Money();
      }
      drain_day = -1;
    }
  }

  const double ratio = cfg.bill_ratio_median * std::exp(cfg.bill_ratio_sigma * normal(rng));
  acct.truth.bill = max(Money::from_units(10.0), Money::from_units(income * ratio));

  // Profile codes loosely track income; the remaining codes are weak or pure noise.
  AccountProfile& p = acct.profile;
  const double band = (std::log(income) + 0.2 * normal(rng) - std::log(80.0)) / 0.4;
  p.income_band = clamp_code(std::floor(band), AccountProfile::kIncomeBands);
  p.age_bucket = clamp_code(2.5 + 0.3 * (band - 4.0) + 1.2 * normal(rng), AccountProfile::kAgeBuckets);
  p.city_tier = clamp_code(1.5 - 0.3 * (band - 4.0) + 0.9 * normal(rng), AccountProfile::kCityTiers);
  p.gender = uniform_int(rng, 0, 1);
  const double hist = std::max(1, cfg.history_days);
  p.payments_per_day = std::max(0.0, payments_in_history / hist + 0.01 * normal(rng));
  p.transfers_per_day = std::max(0.0, credits_in_history / hist + 0.01 * normal(rng));
  return acct;
}

Dataset generate_accounts(const GenConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.accounts.reserve(static_cast<std::size_t>(cfg.accounts));
  for (int i = 0; i < cfg.accounts; ++i) {
    ds.accounts.push_back(generate_account(cfg, static_cast<std::uint64_t>(i)));
  }
  return ds;
}

}  // namespace deduct::sim
