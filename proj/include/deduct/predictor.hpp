#pragma once

#include "deduct/config.hpp"
#include "deduct/money.hpp"
#include "deduct/nn.hpp"
#include "deduct/sim.hpp"

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace deduct::predictor {

/// What the regressor is trained to reproduce on a labeled day.
enum class Target {
  balance,   // privileged balance on the day
  headroom,  // privileged balance minus the logged successful total that day
};

struct PredictorConfig {
  std::size_t embed_dim = 8;
  std::size_t hidden_dim = 16;
  int lookback_days = 30;
  std::size_t max_events = 64;
  double lr = 3e-3;
  std::size_t batch = 32;
  int patience = 4;
  int max_epochs = 40;
  double alpha = 1.6;
  double validation_fraction = 0.15;
  Target target = Target::balance;
  std::uint64_t seed = 11;

  static PredictorConfig from_ini(const IniConfig& ini);
};

/// Number of log2 amount buckets: bucket k holds minor-unit amounts in
/// [2^k, 2^(k+1)), the last bucket is open-ended.
inline constexpr std::size_t kAmountBuckets = 32;
std::size_t amount_bucket(Money amount);

/// Events visible on absolute day `abs_day`: inside the lookback window,
/// strictly before the day, at most `max_events` (most recent kept).
std::vector<sim::ConsumptionEvent> history_window(const sim::Account& account, int abs_day,
                                                  int lookback_days, std::size_t max_events);

/// Attention-weighted balance regressor: event embeddings, bidirectional
/// LSTM encoder, softmax attention over the encoder states and a readout that
/// mixes the raw event amounts with those weights.
class BalancePredictor {
 public:
  struct Forward {
    std::vector<double> embeddings;   // [N, E]
    std::vector<double> forward_h;    // [N, H]
    std::vector<double> backward_h;   // [N, H], position i holds the state at event i
    std::vector<double> logits;       // [N]
    std::vector<double> weights;      // [N]
    std::vector<double> amounts;      // [N], units
    nn::LstmSequence::Cache fwd_cache;
    nn::LstmSequence::Cache bwd_cache;
    double y_pred = 0.0;              // units
  };

  explicit BalancePredictor(const PredictorConfig& cfg);
  BalancePredictor(const BalancePredictor&) = delete;
  BalancePredictor& operator=(const BalancePredictor&) = delete;

  const PredictorConfig& config() const { return cfg_; }

  void init(Rng& rng);
  nn::ParamList params();

  /// e_i: sum of amount-bucket, kind and day-offset embeddings.
  std::vector<double> embed_event(const sim::ConsumptionEvent& event, int reference_day) const;
  /// h_i = [forward state after event i, backward state after event i], flattened [N, 2H].
  std::vector<double> encode_sequence(std::span<const sim::ConsumptionEvent> events,
                                      int reference_day) const;
  /// Softmax of W h_i + b over the encoded sequence.
  std::vector<double> attention_weights(std::span<const double> hidden_states) const;
  /// y_pred in units; empty history returns the fallback.
  double predict_balance(std::span<const sim::ConsumptionEvent> events, int reference_day) const;

  Forward forward(std::span<const sim::ConsumptionEvent> events, int reference_day) const;
  /// Accumulates parameter gradients of a loss with dL/dy_pred = dloss.
  void backward(std::span<const sim::ConsumptionEvent> events, int reference_day,
                const Forward& fw, double dloss);

  /// Prediction for an account's absolute day using its own history window.
  double predict_for_day(const sim::Account& account, int abs_day) const;

  double fallback() const { return fallback_; }
  void set_fallback(double units) { fallback_ = units; }

  void save(std::ostream& out);
  void save(const std::string& path);
  static std::unique_ptr<BalancePredictor> load(std::istream& in);
  static std::unique_ptr<BalancePredictor> load(const std::string& path);

  // Exposed for tests and grad checks.
  nn::Embedding amount_table;
  nn::Embedding kind_table;
  nn::Embedding offset_table;
  nn::LstmCell forward_cell;
  nn::LstmCell backward_cell;
  nn::Dense attention;  // 2H -> 1

 private:
  std::size_t offset_row(int event_day, int reference_day) const;

  PredictorConfig cfg_;
  double fallback_ = 0.0;
};

/// Mean of |pred - real| / real. Throws DomainError if any label <= 0.
double mape(std::span<const double> predictions, std::span<const double> labels);

/// One labeled training example.
struct Sample {
  std::size_t account = 0;  // index into the dataset
  int abs_day = 0;
  double label = 0.0;       // units
};

/// Positive-label days in the episode window of the given accounts. For the
/// headroom target, `logs[i]` must be the historical log of account `i`.
std::vector<Sample> build_samples(const sim::Dataset& ds, std::span<const std::size_t> accounts,
                                  Target target, std::span<const sim::EpisodeLog> logs = {});

struct TrainReport {
  int epochs = 0;
  int best_epoch = 0;
  double best_validation_loss = 0.0;
  double validation_mape = 0.0;
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
};

/// Squared relative error regression with Adam, patience-based early stop and
/// the best-validation parameters restored at the end. Throws ConfigError on
/// an empty sample set.
std::unique_ptr<BalancePredictor> train_predictor(const sim::Dataset& ds,
                                                  std::span<const Sample> samples,
                                                  const PredictorConfig& cfg,
                                                  TrainReport* report = nullptr);

std::vector<double> predict_samples(const BalancePredictor& model, const sim::Dataset& ds,
                                    std::span<const Sample> samples);

/// `account_id, day, y_real, y_pred, abs_pct_err` rows.
void write_prediction_report(std::ostream& out, const sim::Dataset& ds,
                             std::span<const Sample> samples, std::span<const double> predictions);

// ---------------------------------------------------------------------------
// Environment correction

/// α held as an integer number of millionths so the correction is exact
/// fixed-point arithmetic.
struct Alpha {
  std::int64_t micro = 0;
  static Alpha from_double(double a);
  double value() const { return static_cast<double>(micro) / 1e6; }
};

/// y_corrected = y_deducted + α·y_pred, rounded half up to the minor unit.
/// Throws DomainError on negative inputs.
Money correct_day(Money y_deducted, Money y_pred, Alpha alpha);

struct CorrectedDay {
  int day = 0;
  Money y_deducted;
  Money y_pred;
  Alpha alpha;
  Money y_corrected;
};

/// Replay environment whose per-day available balance is y_corrected.
/// Within a day an attempt succeeds iff it fits the remaining corrected
/// balance; every day starts afresh from its own y_corrected.
class CorrectedEnv final : public sim::DeductionEnv {
 public:
  explicit CorrectedEnv(std::vector<CorrectedDay> days);

  int horizon() const override { return static_cast<int>(days_.size()); }
  void begin_day(int day) override;
  sim::Outcome attempt(Money amount) override;
  void end_day() override;

  const std::vector<CorrectedDay>& days() const { return days_; }
  Money remaining() const { return remaining_; }

 private:
  std::vector<CorrectedDay> days_;
  int day_ = -1;
  Money remaining_;
};

/// Per-episode-day predictions for an account, in minor units.
std::vector<Money> predict_episode(const BalancePredictor& model, const sim::Account& account);

CorrectedEnv build_corrected_env(const sim::EpisodeLog& log, std::span<const Money> y_pred,
                                 Alpha alpha);
CorrectedEnv build_corrected_env(const sim::EpisodeLog& log, const sim::Account& account,
                                 const BalancePredictor& model, Alpha alpha);

}  // namespace deduct::predictor
