#include "deduct/error.hpp"
#include "deduct/predictor.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace deduct::predictor {

namespace {

Target target_from_string(const std::string& s) {
  if (s == "balance") return Target::balance;
  if (s == "headroom") return Target::headroom;
  throw ConfigError("predictor.target must be 'balance' or 'headroom', got '" + s + "'");
}

const char* to_string(Target t) { return t == Target::balance ? "balance" : "headroom"; }

}  // namespace

PredictorConfig PredictorConfig::from_ini(const IniConfig& ini) {
  PredictorConfig c;
  const std::string s = "predictor";
  c.embed_dim = static_cast<std::size_t>(ini.get_int(s, "embed_dim", static_cast<long long>(c.embed_dim)));
  c.hidden_dim = static_cast<std::size_t>(ini.get_int(s, "hidden_dim", static_cast<long long>(c.hidden_dim)));
  c.lookback_days = static_cast<int>(ini.get_int(s, "lookback_days", c.lookback_days));
  c.max_events = static_cast<std::size_t>(ini.get_int(s, "max_events", static_cast<long long>(c.max_events)));
  c.lr = ini.get_double(s, "lr", c.lr);
  c.batch = static_cast<std::size_t>(ini.get_int(s, "batch", static_cast<long long>(c.batch)));
  c.patience = static_cast<int>(ini.get_int(s, "patience", c.patience));
  c.max_epochs = static_cast<int>(ini.get_int(s, "max_epochs", c.max_epochs));
  c.alpha = ini.get_double(s, "alpha", c.alpha);
  c.validation_fraction = ini.get_double(s, "validation_fraction", c.validation_fraction);
  c.target = target_from_string(ini.get_string(s, "target", to_string(c.target)));
  c.seed = static_cast<std::uint64_t>(ini.get_int(s, "seed", static_cast<long long>(c.seed)));
  if (c.embed_dim == 0 || c.hidden_dim == 0 || c.max_events == 0 || c.batch == 0) {
    throw ConfigError("predictor widths, max_events and batch must be positive");
  }
  if (c.lookback_days <= 0) throw ConfigError("predictor.lookback_days must be positive");
  if (!(c.lr > 0.0)) throw ConfigError("predictor.lr must be positive");
  if (!(c.alpha >= 0.0)) throw ConfigError("predictor.alpha must be >= 0");
  if (c.patience < 1 || c.max_epochs < 1) throw ConfigError("predictor.patience/max_epochs >= 1");
  if (!(c.validation_fraction > 0.0 && c.validation_fraction < 1.0)) {
    throw ConfigError("predictor.validation_fraction must be in (0, 1)");
  }
  return c;
}

std::size_t amount_bucket(Money amount) {
  if (amount.minor() <= 1) return 0;
  const auto bits = std::bit_width(static_cast<std::uint64_t>(amount.minor())) - 1;
  return std::min<std::size_t>(static_cast<std::size_t>(bits), kAmountBuckets - 1);
}

std::vector<sim::ConsumptionEvent> history_window(const sim::Account& account, int abs_day,
                                                  int lookback_days, std::size_t max_events) {
  const auto before = account.events_before(abs_day);
  std::vector<sim::ConsumptionEvent> out;
  for (const auto& e : before) {
    if (e.day >= abs_day - lookback_days) out.push_back(e);
  }
  if (out.size() > max_events) {
    out.erase(out.begin(), out.end() - static_cast<std::ptrdiff_t>(max_events));
  }
  return out;
}

BalancePredictor::BalancePredictor(const PredictorConfig& cfg)
    : amount_table("pred.amount", kAmountBuckets, cfg.embed_dim),
      kind_table("pred.kind", 2, cfg.embed_dim),
      offset_table("pred.offset", static_cast<std::size_t>(cfg.lookback_days) + 1, cfg.embed_dim),
      forward_cell("pred.lstm_fwd", cfg.embed_dim, cfg.hidden_dim),
      backward_cell("pred.lstm_bwd", cfg.embed_dim, cfg.hidden_dim),
      attention("pred.attn", 2 * cfg.hidden_dim, 1),
      cfg_(cfg) {}

void BalancePredictor::init(Rng& rng) {
  amount_table.init(rng);
  kind_table.init(rng);
  offset_table.init(rng);
  forward_cell.init(rng);
  backward_cell.init(rng);
  attention.init(rng);
}

nn::ParamList BalancePredictor::params() {
  nn::ParamList out;
  for (auto* p : amount_table.params()) out.push_back(p);
  for (auto* p : kind_table.params()) out.push_back(p);
  for (auto* p : offset_table.params()) out.push_back(p);
  for (auto* p : forward_cell.params()) out.push_back(p);
  for (auto* p : backward_cell.params()) out.push_back(p);
  for (auto* p : attention.params()) out.push_back(p);
  return out;
}

std::size_t BalancePredictor::offset_row(int event_day, int reference_day) const {
  return static_cast<std::size_t>(std::clamp(reference_day - event_day, 0, cfg_.lookback_days));
}

std::vector<double> BalancePredictor::embed_event(const sim::ConsumptionEvent& event,
                                                  int reference_day) const {
  const auto a = amount_table.lookup(amount_bucket(event.amount));
  const auto k = kind_table.lookup(static_cast<std::size_t>(event.kind));
  const auto t = offset_table.lookup(offset_row(event.day, reference_day));
  std::vector<double> e(cfg_.embed_dim);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = a[i] + k[i] + t[i];
  return e;
}

BalancePredictor::Forward BalancePredictor::forward(std::span<const sim::ConsumptionEvent> events,
                                                    int reference_day) const {
  Forward fw;
  const std::size_t n = events.size();
  const std::size_t E = cfg_.embed_dim;
  const std::size_t H = cfg_.hidden_dim;
  if (n == 0) {
    fw.y_pred = fallback_;
    return fw;
  }
  fw.embeddings.resize(n * E);
  fw.amounts.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = embed_event(events[i], reference_day);
    std::copy(e.begin(), e.end(), fw.embeddings.begin() + static_cast<std::ptrdiff_t>(i * E));
    fw.amounts[i] = events[i].amount.units();
  }
  fw.forward_h = nn::LstmSequence::run(forward_cell, fw.embeddings, n, &fw.fwd_cache);

  std::vector<double> reversed(n * E);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(fw.embeddings.begin() + static_cast<std::ptrdiff_t>((n - 1 - i) * E), E,
                reversed.begin() + static_cast<std::ptrdiff_t>(i * E));
  }
  const auto rev_h = nn::LstmSequence::run(backward_cell, reversed, n, &fw.bwd_cache);
  fw.backward_h.resize(n * H);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(rev_h.begin() + static_cast<std::ptrdiff_t>((n - 1 - i) * H), H,
                fw.backward_h.begin() + static_cast<std::ptrdiff_t>(i * H));
  }

  fw.logits.resize(n);
  std::vector<double> h(2 * H);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(fw.forward_h.begin() + static_cast<std::ptrdiff_t>(i * H), H, h.begin());
    std::copy_n(fw.backward_h.begin() + static_cast<std::ptrdiff_t>(i * H), H,
                h.begin() + static_cast<std::ptrdiff_t>(H));
    attention.forward(h, std::span<double>(&fw.logits[i], 1));
  }
  fw.weights = nn::softmax(fw.logits);
  fw.y_pred = 0.0;
  for (std::size_t i = 0; i < n; ++i) fw.y_pred += fw.weights[i] * fw.amounts[i];
  return fw;
}

void BalancePredictor::backward(std::span<const sim::ConsumptionEvent> events, int reference_day,
                                const Forward& fw, double dloss) {
  const std::size_t n = events.size();
  if (n == 0) return;
  const std::size_t E = cfg_.embed_dim;
  const std::size_t H = cfg_.hidden_dim;

  std::vector<double> dw(n);
  for (std::size_t i = 0; i < n; ++i) dw[i] = dloss * fw.amounts[i];
  const auto dlogits = nn::softmax_backward(fw.weights, dw);

  std::vector<double> dfwd(n * H), dbwd_rev(n * H);
  std::vector<double> h(2 * H), dh(2 * H);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(fw.forward_h.begin() + static_cast<std::ptrdiff_t>(i * H), H, h.begin());
    std::copy_n(fw.backward_h.begin() + static_cast<std::ptrdiff_t>(i * H), H,
                h.begin() + static_cast<std::ptrdiff_t>(H));
    attention.backward(h, std::span<const double>(&dlogits[i], 1), dh);
    std::copy_n(dh.begin(), H, dfwd.begin() + static_cast<std::ptrdiff_t>(i * H));
    std::copy_n(dh.begin() + static_cast<std::ptrdiff_t>(H), H,
                dbwd_rev.begin() + static_cast<std::ptrdiff_t>((n - 1 - i) * H));
  }
  std::vector<double> de_fwd(n * E), de_rev(n * E);
  nn::LstmSequence::backward(forward_cell, fw.fwd_cache, dfwd, de_fwd);
  nn::LstmSequence::backward(backward_cell, fw.bwd_cache, dbwd_rev, de_rev);

  std::vector<double> de(E);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < E; ++k) de[k] = de_fwd[i * E + k] + de_rev[(n - 1 - i) * E + k];
    amount_table.backward(amount_bucket(events[i].amount), de);
    kind_table.backward(static_cast<std::size_t>(events[i].kind), de);
    offset_table.backward(offset_row(events[i].day, reference_day), de);
  }
}

std::vector<double> BalancePredictor::encode_sequence(std::span<const sim::ConsumptionEvent> events,
                                                      int reference_day) const {
  const auto fw = forward(events, reference_day);
  const std::size_t H = cfg_.hidden_dim;
  std::vector<double> out(events.size() * 2 * H);
  for (std::size_t i = 0; i < events.size(); ++i) {
    std::copy_n(fw.forward_h.begin() + static_cast<std::ptrdiff_t>(i * H), H,
                out.begin() + static_cast<std::ptrdiff_t>(i * 2 * H));
    std::copy_n(fw.backward_h.begin() + static_cast<std::ptrdiff_t>(i * H), H,
                out.begin() + static_cast<std::ptrdiff_t>(i * 2 * H + H));
  }
  return out;
}

std::vector<double> BalancePredictor::attention_weights(std::span<const double> hidden_states) const {
  const std::size_t width = 2 * cfg_.hidden_dim;
  if (hidden_states.empty() || hidden_states.size() % width != 0) {
    throw DimensionError("attention_weights: hidden states must be [N >= 1, 2H]");
  }
  const std::size_t n = hidden_states.size() / width;
  std::vector<double> logits(n);
  for (std::size_t i = 0; i < n; ++i) {
    attention.forward(hidden_states.subspan(i * width, width), std::span<double>(&logits[i], 1));
  }
  return nn::softmax(logits);
}

double BalancePredictor::predict_balance(std::span<const sim::ConsumptionEvent> events,
                                         int reference_day) const {
  return forward(events, reference_day).y_pred;
}

double BalancePredictor::predict_for_day(const sim::Account& account, int abs_day) const {
  const auto events = history_window(account, abs_day, cfg_.lookback_days, cfg_.max_events);
  return predict_balance(events, abs_day);
}

void BalancePredictor::save(std::ostream& out) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), fallback_, std::chars_format::hex);
  out << "deduct-predictor 1\n"
      << "embed_dim " << cfg_.embed_dim << '\n'
      << "hidden_dim " << cfg_.hidden_dim << '\n'
      << "lookback_days " << cfg_.lookback_days << '\n'
      << "max_events " << cfg_.max_events << '\n'
      << "target " << to_string(cfg_.target) << '\n'
      << "fallback " << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf)) << '\n';
  nn::write_params(out, params());
}

void BalancePredictor::save(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  save(out);
  if (!out) throw IoError("write failed for " + path);
}

std::unique_ptr<BalancePredictor> BalancePredictor::load(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto field = [&](const std::string& key) {
    if (!std::getline(in, line)) throw ParseError("truncated predictor checkpoint", line_no + 1);
    ++line_no;
    std::istringstream ss(line);
    std::string k, v;
    ss >> k >> v;
    if (k != key) throw ParseError("expected '" + key + "' in predictor checkpoint", line_no);
    return v;
  };
  if (!std::getline(in, line) || line != "deduct-predictor 1") {
    throw ParseError("not a predictor checkpoint", 1);
  }
  ++line_no;
  PredictorConfig cfg;
  try {
    cfg.embed_dim = std::stoul(field("embed_dim"));
    cfg.hidden_dim = std::stoul(field("hidden_dim"));
    cfg.lookback_days = std::stoi(field("lookback_days"));
    cfg.max_events = std::stoul(field("max_events"));
    cfg.target = target_from_string(field("target"));
  } catch (const std::logic_error&) {
    throw ParseError("bad predictor checkpoint header", line_no);
  }
  const std::string fb = field("fallback");
  double fallback = 0.0;
  const bool neg = !fb.empty() && fb[0] == '-';
  const auto res = std::from_chars(fb.data() + (neg ? 1 : 0), fb.data() + fb.size(), fallback,
                                   std::chars_format::hex);
  if (res.ec != std::errc()) throw ParseError("bad fallback value", line_no);
  auto model = std::make_unique<BalancePredictor>(cfg);
  model->set_fallback(neg ? -fallback : fallback);
  nn::read_params(in, model->params());
  return model;
}

std::unique_ptr<BalancePredictor> BalancePredictor::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return load(in);
}

}  // namespace deduct::predictor
