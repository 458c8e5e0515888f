#pragma once

#include "deduct/agent.hpp"
#include "deduct/sim.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace deduct::agent {

inline constexpr int kSubgoals = 6;       // g in {0..5}
inline constexpr int kAmountActions = 50; // a in {1..50}
inline constexpr int kFlatActions = kAmountActions + 1;  // index 0 skips the day

/// Amount for lower action a in {1..50}: (a/50)·B rounded up to the minor
/// unit, so it lies in (0, B] whenever B > 0.
Money action_amount(int a, Money remaining);

/// Builds agent inputs from what a policy may observe.
class DeductionFeatures {
 public:
  static constexpr std::size_t kSeqDim = 4;

  DeductionFeatures(std::size_t history_window, int history_days)
      : window_(history_window), days_(history_days) {}
  explicit DeductionFeatures(const AgentConfig& cfg)
      : DeductionFeatures(cfg.history_window, cfg.history_days) {}

  std::size_t upper_dim() const;
  std::size_t lower_dim() const;
  std::size_t flat_dim() const;

  AgentState upper(const sim::PolicyContext& ctx, int day,
                   std::span<const sim::DeductionAttempt> history, Money remaining) const;
  /// Throws std::invalid_argument for g == 0: the lower agent is never
  /// consulted on a day without attempts.
  AgentState lower(const sim::PolicyContext& ctx, int day, int step,
                   std::span<const sim::DeductionAttempt> history, Money remaining, int g) const;
  AgentState flat(const sim::PolicyContext& ctx, int day, int step,
                  std::span<const sim::DeductionAttempt> history, Money remaining) const;

 private:
  void base(std::vector<double>& f, const sim::PolicyContext& ctx, int day,
            std::span<const sim::DeductionAttempt> history, Money remaining) const;
  void today(std::vector<double>& f, const sim::PolicyContext& ctx, int day, int step,
             std::span<const sim::DeductionAttempt> history, Money remaining) const;
  void sequence(AgentState& s, const sim::PolicyContext& ctx, int day,
                std::span<const sim::DeductionAttempt> history) const;

  std::size_t window_;
  int days_;
};

NeuralQConfig upper_network(const AgentConfig& cfg, const DeductionFeatures& f);
NeuralQConfig lower_network(const AgentConfig& cfg, const DeductionFeatures& f);
NeuralQConfig flat_network(const AgentConfig& cfg, const DeductionFeatures& f);

/// Freshly initialised agents for the deduction task. Tabular mode is not
/// available here (states are continuous) and raises ConfigError.
std::unique_ptr<HierAgent> make_deduction_hier_agent(const AgentConfig& cfg);
std::unique_ptr<FlatAgent> make_deduction_flat_agent(const AgentConfig& cfg);

/// A training account: public context plus the environment it is replayed in.
struct TrainingEpisode {
  const sim::Account* account = nullptr;
  std::function<std::unique_ptr<sim::DeductionEnv>()> make_env;
};

/// Bookkeeping of one episode against an environment, shared by the tasks.
class EpisodeRunner {
 public:
  void start(const sim::Account& account, std::unique_ptr<sim::DeductionEnv> env, Money cost_c);

  bool finished() const;
  void open_day();
  void close_day();
  /// Executes one attempt; returns the bill-normalised reward (realized - c) / bill.
  double attempt(Money amount);

  const sim::PolicyContext& context() const { return ctx_; }
  const sim::EpisodeLog& log() const { return log_; }
  int day() const { return day_; }
  int step() const { return step_; }
  Money remaining() const { return remaining_; }
  double reward_scale() const { return ctx_.bill.units(); }

 private:
  sim::PolicyContext ctx_;
  std::unique_ptr<sim::DeductionEnv> env_;
  sim::EpisodeLog log_;
  Money cost_;
  Money remaining_;
  int day_ = 0;
  int step_ = 1;
};

class DeductionHierTask final : public HierTask {
 public:
  DeductionHierTask(std::vector<TrainingEpisode> episodes, Money cost_c, DeductionFeatures features);

  int num_subgoals() const override { return kSubgoals; }
  int num_actions() const override { return kAmountActions; }
  void reset(Rng& rng) override;
  bool episode_done() const override { return runner_.finished(); }
  AgentState upper_state() const override;
  void begin_day(int subgoal) override;
  bool day_done() const override;
  AgentState lower_state() const override;
  double step(int action) override;
  void end_day() override;

  const EpisodeRunner& runner() const { return runner_; }

 private:
  std::vector<TrainingEpisode> episodes_;
  Money cost_;
  DeductionFeatures features_;
  EpisodeRunner runner_;
  int subgoal_ = 0;
};

class DeductionFlatTask final : public FlatTask {
 public:
  DeductionFlatTask(std::vector<TrainingEpisode> episodes, Money cost_c, DeductionFeatures features,
                    double eta, double gamma);

  int num_actions() const override { return kFlatActions; }
  void reset(Rng& rng) override;
  bool done() const override { return runner_.finished(); }
  AgentState state() const override;
  FlatStep step(int action) override;

  const EpisodeRunner& runner() const { return runner_; }

 private:
  std::vector<TrainingEpisode> episodes_;
  Money cost_;
  DeductionFeatures features_;
  double eta_, gamma_;
  EpisodeRunner runner_;
};

/// Greedy hierarchical policy: the subgoal is fixed at the first step of a
/// day, the lower agent proposes amounts until g attempts were made.
class HierPolicy final : public sim::DeductionPolicy {
 public:
  HierPolicy(const HierAgent& agent, DeductionFeatures features);
  void begin_episode(const sim::PolicyContext& ctx) override;
  std::optional<Money> next_amount(const sim::Observation& obs) override;

 private:
  const HierAgent* agent_;
  DeductionFeatures features_;
  sim::PolicyContext ctx_;
  int subgoal_ = 0;
};

class FlatPolicy final : public sim::DeductionPolicy {
 public:
  FlatPolicy(const FlatAgent& agent, DeductionFeatures features);
  void begin_episode(const sim::PolicyContext& ctx) override;
  std::optional<Money> next_amount(const sim::Observation& obs) override;

 private:
  const FlatAgent* agent_;
  DeductionFeatures features_;
  sim::PolicyContext ctx_;
};

/// Outcome assumed for a planned attempt when building a path offline.
using AssumedOutcome = std::function<sim::Outcome(int day, int step, Money amount)>;

/// Greedy plan for every day of the horizon, computed ahead of execution.
/// Each day holds g amounts (empty for g = 0); the remaining debt and the
/// history evolve with the assumed outcomes (all failures by default).
std::vector<std::vector<Money>> plan_path(const HierAgent& agent, const DeductionFeatures& features,
                                          const sim::PolicyContext& ctx,
                                          const AssumedOutcome& assume = {});

}  // namespace deduct::agent
