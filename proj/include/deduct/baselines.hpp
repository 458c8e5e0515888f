#pragma once

#include "deduct/nn.hpp"
#include "deduct/predictor.hpp"
#include "deduct/sim.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace deduct::baselines {

enum class PolicyKind { full_deduction, heuristic_search, predictive_dnn, flat_dqn };

/// Requests the whole remaining debt once a day (only on day 0 when
/// `retry_daily` is off).
class FullDeductionPolicy final : public sim::DeductionPolicy {
 public:
  explicit FullDeductionPolicy(bool retry_daily = true) : retry_daily_(retry_daily) {}
  void begin_episode(const sim::PolicyContext&) override {}
  std::optional<Money> next_amount(const sim::Observation& obs) override;

 private:
  bool retry_daily_;
};

/// Halving search: B/2 first, half the previous request after a failure,
/// half the remaining debt after a success. Amounts round half up to the
/// minor unit.
class HeuristicPolicy final : public sim::DeductionPolicy {
 public:
  void begin_episode(const sim::PolicyContext&) override {}
  std::optional<Money> next_amount(const sim::Observation& obs) override;
};

/// Features for the feed-forward regressor: profile codes plus aggregates of
/// the visible consumption stream in the lookback window.
std::vector<double> dnn_features(const sim::AccountProfile& profile,
                                 std::span<const sim::ConsumptionEvent> visible, int abs_day,
                                 int lookback_days);
std::size_t dnn_feature_dim();

struct DnnConfig {
  std::vector<std::size_t> hidden{64, 32, 16};
  double lr = 1e-3;
  std::size_t batch = 64;
  int max_epochs = 40;
  int patience = 4;
  int lookback_days = 30;
  double validation_fraction = 0.15;
  std::uint64_t seed = 23;
};

/// Feed-forward balance regressor trained on the same labeled days as the
/// attention predictor.
class DnnRegressor {
 public:
  explicit DnnRegressor(const DnnConfig& cfg);
  DnnRegressor(const DnnRegressor&) = delete;
  DnnRegressor& operator=(const DnnRegressor&) = delete;

  void train(const sim::Dataset& ds, std::span<const predictor::Sample> samples);
  bool trained() const { return trained_; }
  /// Units; requires a trained model.
  double predict(const sim::AccountProfile& profile, std::span<const sim::ConsumptionEvent> visible,
                 int abs_day) const;
  double predict_for_day(const sim::Account& account, int abs_day) const;

  void save(std::ostream& out);
  void load(std::istream& in);

  nn::Mlp net;

 private:
  DnnConfig cfg_;
  double scale_ = 1.0;
  bool trained_ = false;
};

/// One attempt per day of min(predicted balance, B).
class PredictiveDnnPolicy final : public sim::DeductionPolicy {
 public:
  /// Throws ConfigError when the model has not been trained.
  explicit PredictiveDnnPolicy(const DnnRegressor& model);
  void begin_episode(const sim::PolicyContext& ctx) override { ctx_ = ctx; }
  std::optional<Money> next_amount(const sim::Observation& obs) override;

 private:
  const DnnRegressor* model_;
  sim::PolicyContext ctx_;
};

}  // namespace deduct::baselines
