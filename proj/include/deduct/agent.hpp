#pragma once

#include "deduct/config.hpp"
#include "deduct/nn.hpp"
#include "deduct/seed.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace deduct::agent {

/// Input to a Q model: a fixed-width feature vector plus an optional
/// sequence of per-attempt inputs for the recurrent history encoder.
/// Tabular models read only `index`.
struct AgentState {
  std::vector<double> features;
  std::vector<double> sequence;  // [steps, seq_dim]
  std::size_t steps = 0;
  int index = -1;
  /// Number of leading actions that may be taken; 0 means all of them.
  std::size_t allowed = 0;

  friend bool operator==(const AgentState&, const AgentState&) = default;
};

struct Transition {
  AgentState state;
  int action = 0;
  double reward = 0.0;
  AgentState next;
  /// Discount applied to the bootstrap term; 0 marks a terminal transition.
  double discount = 0.0;
};

/// Bounded FIFO with uniform sampling (with replacement) over the contents.
template <class T>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  void push(T item) {
    if (capacity_ == 0) return;
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(item));
  }

  /// Oldest first.
  const T& at(std::size_t i) const { return items_.at(i); }

  std::vector<const T*> sample(std::size_t n, Rng& rng) const {
    std::vector<const T*> out;
    if (items_.empty()) return out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      out.push_back(&items_[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long long>(items_.size()) - 1))]);
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
};

/// Linear decay from `start` to `end` over `decay_steps`, then constant.
struct EpsilonSchedule {
  double start = 1.0;
  double end = 0.05;
  long long decay_steps = 1;

  double at(long long step) const;
};

/// Index of the largest value, lowest index on ties.
int argmax(std::span<const double> values);
/// With probability eps a uniform index, otherwise argmax. Always draws one
/// uniform number first so the stream does not depend on eps.
int epsilon_greedy(std::span<const double> values, double eps, Rng& rng);
/// The leading values a state allows.
std::span<const double> available(std::span<const double> values, const AgentState& s);

// ---------------------------------------------------------------------------
// Q models

class QModel {
 public:
  virtual ~QModel() = default;
  virtual std::string kind() const = 0;
  virtual std::size_t num_outputs() const = 0;
  virtual std::vector<double> values(const AgentState& s) const = 0;
  /// Mean of (Q(s,a) - y)^2 over the batch; accumulates gradients when asked.
  virtual double loss(std::span<const AgentState* const> states, std::span<const int> actions,
                      std::span<const double> targets, bool accumulate) = 0;
  /// One optimisation step on the squared TD loss. Returns the pre-step loss.
  virtual double fit(std::span<const AgentState* const> states, std::span<const int> actions,
                     std::span<const double> targets) = 0;
  /// Fresh model with the same architecture (used for target copies).
  virtual std::unique_ptr<QModel> clone_structure() const = 0;
  virtual nn::ParamList params() = 0;

  void copy_from(QModel& other) { nn::copy_values(other.params(), params()); }
};

struct NeuralQConfig {
  std::size_t feature_dim = 0;
  std::size_t seq_dim = 0;      // 0 disables the recurrent encoder
  std::size_t seq_hidden = 8;
  std::vector<std::size_t> hidden{64, 32};
  std::size_t outputs = 0;
  nn::AdamConfig adam{.lr = 1e-3, .clip_norm = 10.0};
};

/// Recurrent history encoder (final LSTM state) concatenated with the
/// features and fed to a ReLU MLP with one output per action.
class NeuralQ final : public QModel {
 public:
  NeuralQ(std::string name, NeuralQConfig cfg, Rng& rng);
  NeuralQ(const NeuralQ&) = delete;
  NeuralQ& operator=(const NeuralQ&) = delete;

  std::string kind() const override { return "neural"; }
  std::size_t num_outputs() const override { return cfg_.outputs; }
  std::vector<double> values(const AgentState& s) const override;
  double loss(std::span<const AgentState* const> states, std::span<const int> actions,
              std::span<const double> targets, bool accumulate) override;
  double fit(std::span<const AgentState* const> states, std::span<const int> actions,
             std::span<const double> targets) override;
  std::unique_ptr<QModel> clone_structure() const override;
  nn::ParamList params() override;

  const NeuralQConfig& config() const { return cfg_; }

  nn::LstmCell encoder;
  nn::Mlp head;

 private:
  std::vector<double> head_input(const AgentState& s, nn::LstmSequence::Cache* cache) const;

  std::string name_;
  NeuralQConfig cfg_;
  nn::Adam adam_;
};

/// Lookup table over enumerable states.
class TabularQ final : public QModel {
 public:
  TabularQ(std::string name, std::size_t states, std::size_t actions, double lr);

  std::string kind() const override { return "tabular"; }
  std::size_t num_outputs() const override { return actions_; }
  std::vector<double> values(const AgentState& s) const override;
  double loss(std::span<const AgentState* const> states, std::span<const int> actions,
              std::span<const double> targets, bool accumulate) override;
  /// Moves each visited entry a fraction `lr` toward its target.
  double fit(std::span<const AgentState* const> states, std::span<const int> actions,
             std::span<const double> targets) override;
  std::unique_ptr<QModel> clone_structure() const override;
  nn::ParamList params() override { return {&table}; }

  double& at(std::size_t s, std::size_t a) { return table.value.values[s * actions_ + a]; }

  nn::Param table;

 private:
  std::size_t row(const AgentState& s) const;

  std::string name_;
  std::size_t states_, actions_;
  double lr_;
};

// ---------------------------------------------------------------------------
// Learner: online model, target copy, TD targets and hard sync.

class DqnLearner {
 public:
  DqnLearner(std::unique_ptr<QModel> online, long long sync_every, bool double_dqn);

  QModel& online() { return *online_; }
  const QModel& online() const { return *online_; }
  QModel& target() { return *target_; }

  /// reward + discount * max_a' Q_target(next, a'); with double-DQN the
  /// action is chosen by the online model. Terminal transitions return the
  /// reward.
  double td_target(const Transition& t) const;
  /// One gradient step on a sampled batch; syncs the target every
  /// `sync_every` updates. Throws TrainingError on a non-finite loss.
  double update(std::span<const Transition* const> batch);
  void sync();

  long long updates() const { return updates_; }
  void set_updates(long long n) { updates_ = n; }

 private:
  std::unique_ptr<QModel> online_;
  std::unique_ptr<QModel> target_;
  long long sync_every_;
  bool double_dqn_;
  long long updates_ = 0;
};

// ---------------------------------------------------------------------------
// Configuration

struct AgentConfig {
  double eta = 0.99;    // upper (daily) discount
  double gamma = 0.95;  // lower (intra-day) discount
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_decay_frac = 0.5;
  std::size_t buffer_d1 = 50'000;
  std::size_t buffer_d2 = 200'000;
  std::size_t batch = 64;
  long long sync_every = 500;
  std::vector<std::size_t> hidden_dims{64, 32};
  std::uint64_t seed = 17;
  bool tabular_mode = false;
  bool double_dqn = false;

  double lr = 1e-3;
  double tabular_lr = 0.5;
  std::size_t history_hidden = 8;
  std::size_t history_window = 12;  // most recent attempts fed to the encoder
  int history_days = 30;
  long long total_steps = 60'000;   // environment decisions (upper + lower)
  int train_every = 4;              // lower/flat decisions per gradient step
  int epochs = 10;                  // curve rows

  static AgentConfig from_ini(const IniConfig& ini);
  void validate() const;
  EpsilonSchedule schedule() const;
};

struct CurveRow {
  int epoch = 0;
  double td_loss_upper = 0.0;
  double td_loss_lower = 0.0;
  double eval_succ_rate = 0.0;
  double epsilon = 0.0;
};

void write_curve(std::ostream& out, std::span<const CurveRow> rows);

// ---------------------------------------------------------------------------
// Hierarchical agent

/// Episodic two-level task. Each "day" the upper agent picks a subgoal g,
/// then the lower agent acts until the task reports the day finished.
class HierTask {
 public:
  virtual ~HierTask() = default;
  virtual int num_subgoals() const = 0;
  virtual int num_actions() const = 0;
  virtual void reset(Rng& rng) = 0;
  virtual bool episode_done() const = 0;
  virtual AgentState upper_state() const = 0;
  virtual void begin_day(int subgoal) = 0;
  virtual bool day_done() const = 0;
  virtual AgentState lower_state() const = 0;
  /// Executes lower action index and returns its reward.
  virtual double step(int action) = 0;
  virtual void end_day() = 0;
};

class HierAgent {
 public:
  HierAgent(std::unique_ptr<QModel> q1, std::unique_ptr<QModel> q2, const AgentConfig& cfg);

  std::vector<double> q1_values(const AgentState& s) const { return upper.online().values(s); }
  std::vector<double> q2_values(const AgentState& s) const { return lower.online().values(s); }
  int select_subgoal(const AgentState& s, double eps, Rng& rng) const;
  int select_action(const AgentState& s, double eps, Rng& rng) const;

  const AgentConfig& config() const { return cfg_; }

  void save(std::ostream& out);
  void load(std::istream& in);

  DqnLearner upper;
  DqnLearner lower;
  long long env_steps = 0;

 private:
  AgentConfig cfg_;
};

using EvalFn = std::function<double()>;

/// Upper tuples go to D1, lower tuples to D2; the upper reward of a day is
/// the sum of that day's lower rewards. Deterministic for a given rng.
std::vector<CurveRow> train_hierarchical(HierAgent& agent, HierTask& task, Rng& rng,
                                         const EvalFn& evaluate = {});

// ---------------------------------------------------------------------------
// Flat agent

struct FlatStep {
  double reward = 0.0;
  double discount = 0.0;  // discount toward the next state; 0 when terminal
};

class FlatTask {
 public:
  virtual ~FlatTask() = default;
  virtual int num_actions() const = 0;
  virtual void reset(Rng& rng) = 0;
  virtual bool done() const = 0;
  virtual AgentState state() const = 0;
  virtual FlatStep step(int action) = 0;
};

class FlatAgent {
 public:
  FlatAgent(std::unique_ptr<QModel> q, const AgentConfig& cfg);

  std::vector<double> values(const AgentState& s) const { return learner.online().values(s); }
  int select_action(const AgentState& s, double eps, Rng& rng) const;
  const AgentConfig& config() const { return cfg_; }

  void save(std::ostream& out);
  void load(std::istream& in);

  DqnLearner learner;
  long long env_steps = 0;

 private:
  AgentConfig cfg_;
};

std::vector<CurveRow> train_flat(FlatAgent& agent, FlatTask& task, Rng& rng,
                                 const EvalFn& evaluate = {});

}  // namespace deduct::agent
