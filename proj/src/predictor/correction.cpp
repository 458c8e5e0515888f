#include "deduct/error.hpp"
#include "deduct/predictor.hpp"

#include <cmath>

namespace deduct::predictor {

Alpha Alpha::from_double(double a) {
  if (!std::isfinite(a) || a < 0.0) throw DomainError("alpha must be a finite value >= 0");
  return Alpha{std::llround(a * 1e6)};
}

Money correct_day(Money y_deducted, Money y_pred, Alpha alpha) {
  if (y_deducted.minor() < 0 || y_pred.minor() < 0 || alpha.micro < 0) {
    throw DomainError("correct_day: inputs must be non-negative");
  }
  const auto extra = div_round_half_up(alpha.micro * y_pred.minor(), 1'000'000);
  return y_deducted + Money::from_minor(extra);
}

CorrectedEnv::CorrectedEnv(std::vector<CorrectedDay> days) : days_(std::move(days)) {}

void CorrectedEnv::begin_day(int day) {
  if (day < 0 || day >= horizon() || day <= day_) {
    throw std::logic_error("CorrectedEnv: days must be visited in increasing order");
  }
  day_ = day;
  remaining_ = days_[static_cast<std::size_t>(day)].y_corrected;
}

sim::Outcome CorrectedEnv::attempt(Money amount) {
  const auto r = sim::attempt_deduction(remaining_, amount);
  remaining_ = r.new_balance;
  return r.outcome;
}

void CorrectedEnv::end_day() {}

std::vector<Money> predict_episode(const BalancePredictor& model, const sim::Account& account) {
  std::vector<Money> out;
  out.reserve(static_cast<std::size_t>(account.horizon()));
  for (int d = 0; d < account.horizon(); ++d) {
    const double y = model.predict_for_day(account, account.absolute_day(d));
    out.push_back(Money::from_units(std::max(0.0, y)));
  }
  return out;
}

CorrectedEnv build_corrected_env(const sim::EpisodeLog& log, std::span<const Money> y_pred,
                                 Alpha alpha) {
  if (static_cast<int>(y_pred.size()) != log.horizon) {
    throw DimensionError("build_corrected_env: one prediction per day required");
  }
  std::vector<CorrectedDay> days;
  days.reserve(y_pred.size());
  for (int d = 0; d < log.horizon; ++d) {
    CorrectedDay cd;
    cd.day = d;
    cd.y_deducted = log.deducted_on(d);
    cd.y_pred = y_pred[static_cast<std::size_t>(d)];
    cd.alpha = alpha;
    cd.y_corrected = correct_day(cd.y_deducted, cd.y_pred, alpha);
    days.push_back(cd);
  }
  return CorrectedEnv(std::move(days));
}

CorrectedEnv build_corrected_env(const sim::EpisodeLog& log, const sim::Account& account,
                                 const BalancePredictor& model, Alpha alpha) {
  const auto preds = predict_episode(model, account);
  return build_corrected_env(log, preds, alpha);
}

}  // namespace deduct::predictor
