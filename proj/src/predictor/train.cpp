#include "deduct/error.hpp"
#include "deduct/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace deduct::predictor {

double mape(std::span<const double> predictions, std::span<const double> labels) {
  if (predictions.size() != labels.size()) throw DimensionError("mape: size mismatch");
  if (labels.empty()) throw DomainError("mape: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!(labels[i] > 0.0)) throw DomainError("mape: label must be positive");
    sum += std::abs(predictions[i] - labels[i]) / labels[i];
  }
  return sum / static_cast<double>(labels.size());
}

std::vector<Sample> build_samples(const sim::Dataset& ds, std::span<const std::size_t> accounts,
                                  Target target, std::span<const sim::EpisodeLog> logs) {
  if (target == Target::headroom && logs.size() != accounts.size()) {
    throw DimensionError("build_samples: headroom target needs one log per account");
  }
  std::vector<Sample> out;
  for (std::size_t k = 0; k < accounts.size(); ++k) {
    const auto& acc = ds.accounts.at(accounts[k]);
    for (int d = 0; d < acc.horizon(); ++d) {
      const int abs = acc.absolute_day(d);
      Money label = sim::privileged_balance(acc, abs);
      if (target == Target::headroom) label = label - logs[k].deducted_on(d);
      if (label.minor() < Money::kMinorPerUnit) continue;
      out.push_back({accounts[k], abs, label.units()});
    }
  }
  return out;
}

namespace {

struct Snapshot {
  std::vector<nn::Tensor> values;
};

Snapshot snapshot(const nn::ParamList& params) {
  Snapshot s;
  for (const auto* p : params) s.values.push_back(p->value);
  return s;
}

void restore(const Snapshot& s, const nn::ParamList& params) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = s.values[i];
}

double relative_loss(const BalancePredictor& model, const sim::Dataset& ds,
                     std::span<const Sample> samples, std::span<const std::size_t> idx) {
  double sum = 0.0;
  for (auto i : idx) {
    const auto& s = samples[i];
    const double y = model.predict_for_day(ds.accounts[s.account], s.abs_day);
    const double r = (y - s.label) / s.label;
    sum += r * r;
  }
  return idx.empty() ? 0.0 : sum / static_cast<double>(idx.size());
}

}  // namespace

std::unique_ptr<BalancePredictor> train_predictor(const sim::Dataset& ds,
                                                  std::span<const Sample> samples,
                                                  const PredictorConfig& cfg,
                                                  TrainReport* report) {
  if (samples.empty()) throw ConfigError("train_predictor: no labeled samples");
  auto model = std::make_unique<BalancePredictor>(cfg);
  Rng rng = make_rng(cfg.seed, "predictor", 0);
  model->init(rng);

  std::vector<double> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  std::nth_element(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(labels.size() / 2),
                   labels.end());
  model->set_fallback(labels[labels.size() / 2]);

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(
      std::llround(cfg.validation_fraction * static_cast<double>(samples.size())));
  if (samples.size() > 1) n_val = std::clamp<std::size_t>(n_val, 1, samples.size() - 1);
  else n_val = 0;
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  if (val.empty()) val = train;

  const auto params = model->params();
  nn::Adam opt(params, {.lr = cfg.lr, .clip_norm = 5.0});

  TrainReport rep;
  double best = std::numeric_limits<double>::infinity();
  Snapshot best_params = snapshot(params);
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train.size(); start += cfg.batch) {
      const std::size_t end = std::min(train.size(), start + cfg.batch);
      const double scale = 1.0 / static_cast<double>(end - start);
      nn::zero_grads(params);
      for (std::size_t b = start; b < end; ++b) {
        const auto& s = samples[train[b]];
        const auto& acc = ds.accounts[s.account];
        const auto events = history_window(acc, s.abs_day, cfg.lookback_days, cfg.max_events);
        if (events.empty()) {
          const double r = (model->fallback() - s.label) / s.label;
          epoch_loss += r * r;
          continue;
        }
        const auto fw = model->forward(events, s.abs_day);
        const double r = (fw.y_pred - s.label) / s.label;
        epoch_loss += r * r;
        model->backward(events, s.abs_day, fw, scale * 2.0 * r / s.label);
      }
      opt.step();
    }
    rep.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
    const double vl = relative_loss(*model, ds, samples, val);
    if (!std::isfinite(vl)) throw TrainingError("predictor validation loss diverged");
    rep.validation_loss.push_back(vl);
    rep.epochs = epoch;
    if (vl < best) {
      best = vl;
      best_params = snapshot(params);
      rep.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  restore(best_params, params);
  rep.best_validation_loss = best;

  std::vector<double> vp, vy;
  for (auto i : val) {
    vp.push_back(model->predict_for_day(ds.accounts[samples[i].account], samples[i].abs_day));
    vy.push_back(samples[i].label);
  }
  rep.validation_mape = mape(vp, vy);
  if (report) *report = std::move(rep);
  return model;
}

std::vector<double> predict_samples(const BalancePredictor& model, const sim::Dataset& ds,
                                    std::span<const Sample> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model.predict_for_day(ds.accounts[s.account], s.abs_day));
  return out;
}

void write_prediction_report(std::ostream& out, const sim::Dataset& ds,
                             std::span<const Sample> samples, std::span<const double> predictions) {
  if (samples.size() != predictions.size()) throw DimensionError("prediction report: size mismatch");
  out << "account_id,day,y_real,y_pred,abs_pct_err\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& acc = ds.accounts[s.account];
    out << acc.id << ',' << (s.abs_day - acc.episode_start) << ',' << s.label << ','
        << predictions[i] << ',' << std::abs(predictions[i] - s.label) / s.label << '\n';
  }
}

}  // namespace deduct::predictor
