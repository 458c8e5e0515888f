#include "deduct/sim.hpp"

#include <cmath>

namespace deduct::sim {

double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = std::min(x.size(), y.size());
  if (n < 2) return 0.0;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

PopulationStats population_stats(const Dataset& ds, int lookback_days) {
  PopulationStats s;
  double amount_sum = 0.0;
  std::size_t amount_n = 0;
  double events_per_window = 0.0;
  double feasible_sum = 0.0;
  std::size_t account_days = 0;
  std::size_t positive_days = 0;
  double positive_sum = 0.0;
  double bill_sum = 0.0;
  std::vector<double> recent, balance;

  for (const auto& a : ds.accounts) {
    const int start = a.episode_start;
    const int end = start + a.horizon();
    int window_events = 0;
    for (const auto& e : a.truth.events) {
      if (e.kind != EventKind::consumption) continue;
      amount_sum += e.amount.units();
      ++amount_n;
      if (e.day >= start && e.day < end) ++window_events;
    }
    events_per_window += window_events * 30.0 / a.horizon();
    bill_sum += a.truth.bill.units();

    for (int d = start; d < end; ++d) {
      const Money b = a.truth.daily_balance[static_cast<std::size_t>(d)];
      feasible_sum += min(b, a.truth.bill).units();
      ++account_days;
      if (b < Money::from_units(1.0)) continue;
      ++positive_days;
      positive_sum += b.units();
      double spent = 0.0;
      for (const auto& e : a.events_before(d)) {
        if (e.kind == EventKind::consumption && e.day >= d - lookback_days) {
          spent += e.amount.units();
        }
      }
      recent.push_back(spent);
      balance.push_back(b.units());
    }
  }
  const auto n_acc = static_cast<double>(ds.accounts.size());
  s.mean_consumption_amount = amount_n ? amount_sum / static_cast<double>(amount_n) : 0.0;
  s.mean_consumption_events = n_acc > 0 ? events_per_window / n_acc : 0.0;
  s.mean_feasible_deduction = account_days ? feasible_sum / static_cast<double>(account_days) : 0.0;
  s.positive_day_fraction =
      account_days ? static_cast<double>(positive_days) / static_cast<double>(account_days) : 0.0;
  s.consumption_balance_corr = pearson(recent, balance);
  s.mean_bill = n_acc > 0 ? bill_sum / n_acc : 0.0;
  s.mean_positive_balance = positive_days ? positive_sum / static_cast<double>(positive_days) : 0.0;
  return s;
}

}  // namespace deduct::sim
