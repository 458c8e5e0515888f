#include "deduct/baselines.hpp"
#include "deduct/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace deduct::baselines {

std::optional<Money> FullDeductionPolicy::next_amount(const sim::Observation& obs) {
  if (obs.step != 1 || !obs.remaining_debt.positive()) return std::nullopt;
  if (!retry_daily_ && obs.day != 0) return std::nullopt;
  return obs.remaining_debt;
}

std::optional<Money> HeuristicPolicy::next_amount(const sim::Observation& obs) {
  const Money b = obs.remaining_debt;
  if (!b.positive() || obs.step > sim::kMaxStepsPerDay) return std::nullopt;
  Money basis = b;
  if (!obs.history.empty() && obs.history.back().day == obs.day &&
      obs.history.back().outcome == sim::Outcome::fail) {
    basis = obs.history.back().requested;
  }
  const Money amount = min(b, Money::from_minor(div_round_half_up(basis.minor(), 2)));
  if (!amount.positive()) return std::nullopt;
  return amount;
}

// --- predictive DNN --------------------------------------------------------

namespace {

constexpr std::size_t kAggregateDim = 9;

std::size_t profile_dim() {
  using P = sim::AccountProfile;
  return P::kAgeBuckets + P::kCityTiers + P::kIncomeBands + P::kGenderCodes + 2;
}

double log_units(Money m) { return std::log1p(std::max(0.0, m.units())) / 8.0; }

}  // namespace

std::size_t dnn_feature_dim() { return profile_dim() + kAggregateDim; }

std::vector<double> dnn_features(const sim::AccountProfile& p,
                                 std::span<const sim::ConsumptionEvent> visible, int abs_day,
                                 int lookback_days) {
  std::vector<double> f;
  f.reserve(dnn_feature_dim());
  auto one_hot = [&](int v, int n) {
    for (int i = 0; i < n; ++i) f.push_back(i == v ? 1.0 : 0.0);
  };
  one_hot(p.age_bucket, sim::AccountProfile::kAgeBuckets);
  one_hot(p.city_tier, sim::AccountProfile::kCityTiers);
  one_hot(p.income_band, sim::AccountProfile::kIncomeBands);
  one_hot(p.gender, sim::AccountProfile::kGenderCodes);
  f.push_back(std::min(p.payments_per_day, 2.0) / 2.0);
  f.push_back(std::min(p.transfers_per_day, 2.0) / 2.0);

  int n_cons = 0, n_pay = 0, last_cons = -1, last_pay = -1;
  Money sum_cons, sum_pay, last_cons_amount, max_cons;
  for (const auto& e : visible) {
    if (e.day < abs_day - lookback_days || e.day >= abs_day) continue;
    if (e.kind == sim::EventKind::consumption) {
      ++n_cons;
      sum_cons += e.amount;
      last_cons = e.day;
      last_cons_amount = e.amount;
      max_cons = max(max_cons, e.amount);
    } else {
      ++n_pay;
      sum_pay += e.amount;
      last_pay = e.day;
    }
  }
  const double window = static_cast<double>(lookback_days);
  f.push_back(n_cons / 10.0);
  f.push_back(n_pay / 10.0);
  f.push_back(log_units(sum_cons));
  f.push_back(n_cons ? std::log1p(sum_cons.units() / n_cons) / 8.0 : 0.0);
  f.push_back(log_units(last_cons_amount));
  f.push_back(last_cons < 0 ? 1.0 : (abs_day - last_cons) / window);
  f.push_back(log_units(max_cons));
  f.push_back(last_pay < 0 ? 1.0 : (abs_day - last_pay) / window);
  f.push_back(log_units(sum_pay));
  return f;
}

namespace {

std::vector<std::size_t> net_sizes(const DnnConfig& cfg) {
  std::vector<std::size_t> s{dnn_feature_dim()};
  s.insert(s.end(), cfg.hidden.begin(), cfg.hidden.end());
  s.push_back(1);
  return s;
}

}  // namespace

DnnRegressor::DnnRegressor(const DnnConfig& cfg) : net("dnn", net_sizes(cfg)), cfg_(cfg) {
  Rng rng = make_rng(cfg.seed, "dnn-init", 0);
  net.init(rng);
}

double DnnRegressor::predict(const sim::AccountProfile& profile,
                             std::span<const sim::ConsumptionEvent> visible, int abs_day) const {
  const auto x = dnn_features(profile, visible, abs_day, cfg_.lookback_days);
  return scale_ * net.forward(x)[0];
}

double DnnRegressor::predict_for_day(const sim::Account& account, int abs_day) const {
  return predict(account.profile, account.events_before(abs_day), abs_day);
}

void DnnRegressor::train(const sim::Dataset& ds, std::span<const predictor::Sample> samples) {
  if (samples.empty()) throw ConfigError("DNN baseline: no labeled samples");
  Rng rng = make_rng(cfg_.seed, "dnn-train", 0);

  std::vector<double> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  std::nth_element(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(labels.size() / 2), labels.end());
  scale_ = std::max(1.0, labels[labels.size() / 2]);

  std::vector<std::vector<double>> x;
  x.reserve(samples.size());
  for (const auto& s : samples) {
    const auto& acc = ds.accounts[s.account];
    x.push_back(dnn_features(acc.profile, acc.events_before(s.abs_day), s.abs_day, cfg_.lookback_days));
  }

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(cfg_.validation_fraction * static_cast<double>(samples.size()));
  n_val = std::min(n_val, samples.size() - 1);
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> tr(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  if (val.empty()) val = tr;

  auto params = net.params();
  nn::Adam opt(params, {.lr = cfg_.lr, .clip_norm = 5.0});
  auto val_loss = [&] {
    double sum = 0.0;
    for (auto i : val) {
      const double r = (scale_ * net.forward(x[i])[0] - samples[i].label) / samples[i].label;
      sum += r * r;
    }
    return sum / static_cast<double>(val.size());
  };

  double best = std::numeric_limits<double>::infinity();
  std::vector<nn::Tensor> best_values;
  int since = 0;
  nn::Mlp::Cache cache;
  for (int epoch = 0; epoch < cfg_.max_epochs; ++epoch) {
    std::shuffle(tr.begin(), tr.end(), rng);
    for (std::size_t start = 0; start < tr.size(); start += cfg_.batch) {
      const std::size_t end = std::min(tr.size(), start + cfg_.batch);
      nn::zero_grads(params);
      for (std::size_t b = start; b < end; ++b) {
        const auto i = tr[b];
        const double y = scale_ * net.forward(x[i], &cache)[0];
        const double label = samples[i].label;
        const double dy = 2.0 * (y - label) / (label * label) * scale_ / static_cast<double>(end - start);
        net.backward(cache, std::span<const double>(&dy, 1), {});
      }
      opt.step();
    }
    const double vl = val_loss();
    if (!std::isfinite(vl)) throw TrainingError("DNN baseline validation loss diverged");
    if (vl < best) {
      best = vl;
      best_values.clear();
      for (auto* p : params) best_values.push_back(p->value);
      since = 0;
    } else if (++since >= cfg_.patience) {
      break;
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best_values[k];
  trained_ = true;
}

void DnnRegressor::save(std::ostream& out) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), scale_, std::chars_format::hex);
  out << "deduct-dnn 1 " << std::string_view(buf, static_cast<std::size_t>(r.ptr - buf)) << '\n';
  nn::write_params(out, net.params());
}

void DnnRegressor::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty DNN checkpoint", 1);
  std::istringstream ss(line);
  std::string magic, scale;
  int version = 0;
  ss >> magic >> version >> scale;
  if (magic != "deduct-dnn" || version != 1) throw ParseError("not a DNN checkpoint", 1);
  double v = 0.0;
  const auto r = std::from_chars(scale.data(), scale.data() + scale.size(), v, std::chars_format::hex);
  if (r.ec != std::errc() || r.ptr != scale.data() + scale.size() || !(v > 0.0)) {
    throw ParseError("bad DNN scale", 1);
  }
  nn::read_params(in, net.params());
  scale_ = v;
  trained_ = true;
}

PredictiveDnnPolicy::PredictiveDnnPolicy(const DnnRegressor& model) : model_(&model) {
  if (!model.trained()) throw ConfigError("predictive DNN policy needs a trained regressor");
}

std::optional<Money> PredictiveDnnPolicy::next_amount(const sim::Observation& obs) {
  if (obs.step != 1 || !obs.remaining_debt.positive()) return std::nullopt;
  const int abs = ctx_.episode_start + obs.day;
  const double pred = model_->predict(*ctx_.profile, ctx_.visible_events(obs.day), abs);
  const Money amount = min(obs.remaining_debt, Money::from_units(std::max(0.0, pred)));
  if (!amount.positive()) return std::nullopt;
  return amount;
}

}  // namespace deduct::baselines
