#include "deduct/agent.hpp"
#include "deduct/error.hpp"

#include <algorithm>
#include <cmath>

namespace deduct::agent {

double EpsilonSchedule::at(long long step) const {
  if (step >= decay_steps || decay_steps <= 0) return end;
  const double f = static_cast<double>(step) / static_cast<double>(decay_steps);
  return start + (end - start) * f;
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw DimensionError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return static_cast<int>(best);
}

int epsilon_greedy(std::span<const double> values, double eps, Rng& rng) {
  const double u = uniform01(rng);
  if (u < eps) return static_cast<int>(uniform_int(rng, 0, static_cast<long long>(values.size()) - 1));
  return argmax(values);
}

std::span<const double> available(std::span<const double> values, const AgentState& s) {
  if (s.allowed == 0 || s.allowed >= values.size()) return values;
  return values.first(s.allowed);
}

// --- NeuralQ ---------------------------------------------------------------

namespace {

std::vector<std::size_t> head_sizes(const NeuralQConfig& cfg) {
  std::vector<std::size_t> sizes{cfg.feature_dim + (cfg.seq_dim ? cfg.seq_hidden : 0)};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(cfg.outputs);
  return sizes;
}

}  // namespace

NeuralQ::NeuralQ(std::string name, NeuralQConfig cfg, Rng& rng)
    : encoder(name + ".enc", cfg.seq_dim ? cfg.seq_dim : 1, cfg.seq_hidden),
      head(name + ".head", head_sizes(cfg)),
      name_(std::move(name)),
      cfg_(std::move(cfg)) {
  if (cfg_.outputs == 0 || cfg_.feature_dim + cfg_.seq_dim == 0) {
    throw ConfigError("NeuralQ needs inputs and outputs");
  }
  encoder.init(rng);
  head.init(rng);
  adam_ = nn::Adam(params(), cfg_.adam);
}

nn::ParamList NeuralQ::params() {
  nn::ParamList out;
  if (cfg_.seq_dim) {
    for (auto* p : encoder.params()) out.push_back(p);
  }
  for (auto* p : head.params()) out.push_back(p);
  return out;
}

std::vector<double> NeuralQ::head_input(const AgentState& s, nn::LstmSequence::Cache* cache) const {
  if (s.features.size() != cfg_.feature_dim) throw DimensionError(name_ + ": feature width mismatch");
  std::vector<double> x(s.features);
  if (cfg_.seq_dim) {
    if (s.sequence.size() != s.steps * cfg_.seq_dim) throw DimensionError(name_ + ": sequence width mismatch");
    if (s.steps == 0) {
      x.resize(x.size() + cfg_.seq_hidden, 0.0);
      if (cache) cache->steps.clear();
    } else {
      const auto h = nn::LstmSequence::run(encoder, s.sequence, s.steps, cache);
      x.insert(x.end(), h.end() - static_cast<std::ptrdiff_t>(cfg_.seq_hidden), h.end());
    }
  }
  return x;
}

std::vector<double> NeuralQ::values(const AgentState& s) const {
  return head.forward(head_input(s, nullptr));
}

double NeuralQ::loss(std::span<const AgentState* const> states, std::span<const int> actions,
                     std::span<const double> targets, bool accumulate) {
  const std::size_t n = states.size();
  if (n == 0 || actions.size() != n || targets.size() != n) throw DimensionError("NeuralQ::loss batch");
  double total = 0.0;
  nn::LstmSequence::Cache seq_cache;
  nn::Mlp::Cache head_cache;
  std::vector<double> dy(cfg_.outputs), dx(head.in());
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = *states[k];
    const auto x = head_input(s, accumulate ? &seq_cache : nullptr);
    const auto q = head.forward(x, accumulate ? &head_cache : nullptr);
    const auto a = static_cast<std::size_t>(actions[k]);
    const double err = q.at(a) - targets[k];
    total += err * err;
    if (!accumulate) continue;
    std::fill(dy.begin(), dy.end(), 0.0);
    dy[a] = 2.0 * err / static_cast<double>(n);
    const bool need_dx = cfg_.seq_dim && s.steps > 0;
    head.backward(head_cache, dy, need_dx ? std::span<double>(dx) : std::span<double>());
    if (need_dx) {
      std::vector<double> dh_all(s.steps * cfg_.seq_hidden, 0.0);
      std::copy(dx.end() - static_cast<std::ptrdiff_t>(cfg_.seq_hidden), dx.end(),
                dh_all.end() - static_cast<std::ptrdiff_t>(cfg_.seq_hidden));
      nn::LstmSequence::backward(encoder, seq_cache, dh_all, {});
    }
  }
  return total / static_cast<double>(n);
}

double NeuralQ::fit(std::span<const AgentState* const> states, std::span<const int> actions,
                    std::span<const double> targets) {
  const auto ps = params();
  nn::zero_grads(ps);
  const double l = loss(states, actions, targets, true);
  if (!std::isfinite(l)) throw TrainingError(name_ + ": TD loss is not finite");
  adam_.step();
  return l;
}

std::unique_ptr<QModel> NeuralQ::clone_structure() const {
  Rng rng(0);
  return std::make_unique<NeuralQ>(name_, cfg_, rng);
}

// --- TabularQ --------------------------------------------------------------

TabularQ::TabularQ(std::string name, std::size_t states, std::size_t actions, double lr)
    : table(name + ".q", nn::LayerKind::dense, {states, actions}),
      name_(std::move(name)),
      states_(states),
      actions_(actions),
      lr_(lr) {
  if (states == 0 || actions == 0) throw ConfigError("TabularQ needs states and actions");
  if (!(lr > 0.0 && lr <= 1.0)) throw ConfigError("tabular learning rate must be in (0, 1]");
}

std::size_t TabularQ::row(const AgentState& s) const {
  if (s.index < 0 || static_cast<std::size_t>(s.index) >= states_) {
    throw DimensionError(name_ + ": tabular mode needs an enumerable state index");
  }
  return static_cast<std::size_t>(s.index);
}

std::vector<double> TabularQ::values(const AgentState& s) const {
  const auto r = row(s);
  const auto* p = table.value.values.data() + r * actions_;
  return {p, p + actions_};
}

double TabularQ::loss(std::span<const AgentState* const> states, std::span<const int> actions,
                      std::span<const double> targets, bool accumulate) {
  double total = 0.0;
  for (std::size_t k = 0; k < states.size(); ++k) {
    const auto idx = row(*states[k]) * actions_ + static_cast<std::size_t>(actions[k]);
    const double err = table.value.values[idx] - targets[k];
    total += err * err;
    if (accumulate) table.grad.values[idx] += 2.0 * err / static_cast<double>(states.size());
  }
  return states.empty() ? 0.0 : total / static_cast<double>(states.size());
}

double TabularQ::fit(std::span<const AgentState* const> states, std::span<const int> actions,
                     std::span<const double> targets) {
  const double l = loss(states, actions, targets, false);
  for (std::size_t k = 0; k < states.size(); ++k) {
    auto& q = table.value.values[row(*states[k]) * actions_ + static_cast<std::size_t>(actions[k])];
    q += lr_ * (targets[k] - q);
  }
  if (!std::isfinite(l)) throw TrainingError(name_ + ": TD loss is not finite");
  return l;
}

std::unique_ptr<QModel> TabularQ::clone_structure() const {
  return std::make_unique<TabularQ>(name_, states_, actions_, lr_);
}

// --- DqnLearner ------------------------------------------------------------

DqnLearner::DqnLearner(std::unique_ptr<QModel> online, long long sync_every, bool double_dqn)
    : online_(std::move(online)), sync_every_(sync_every), double_dqn_(double_dqn) {
  if (!online_) throw ConfigError("DqnLearner needs a model");
  if (sync_every_ < 1) throw ConfigError("sync_every must be >= 1");
  target_ = online_->clone_structure();
  sync();
}

void DqnLearner::sync() { target_->copy_from(*online_); }

double DqnLearner::td_target(const Transition& t) const {
  if (t.discount == 0.0) return t.reward;
  const auto next_target = target_->values(t.next);
  if (double_dqn_) {
    const auto next_online = online_->values(t.next);
    return t.reward + t.discount * next_target[static_cast<std::size_t>(argmax(available(next_online, t.next)))];
  }
  const auto q = available(next_target, t.next);
  return t.reward + t.discount * *std::max_element(q.begin(), q.end());
}

double DqnLearner::update(std::span<const Transition* const> batch) {
  std::vector<const AgentState*> states;
  std::vector<int> actions;
  std::vector<double> targets;
  states.reserve(batch.size());
  actions.reserve(batch.size());
  targets.reserve(batch.size());
  for (const auto* t : batch) {
    states.push_back(&t->state);
    actions.push_back(t->action);
    targets.push_back(td_target(*t));
  }
  const double l = online_->fit(states, actions, targets);
  if (++updates_ % sync_every_ == 0) sync();
  return l;
}

}  // namespace deduct::agent
