#pragma once

#include "deduct/agent.hpp"
#include "deduct/baselines.hpp"
#include "deduct/config.hpp"
#include "deduct/deduction_agent.hpp"
#include "deduct/predictor.hpp"
#include "deduct/sim.hpp"

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace deduct::bench {

/// (Σ deducted - c·attempts) / Σ bill over a population of episodes.
/// Throws DomainError on an empty population or a zero total bill.
double succ_rate(std::span<const sim::EpisodeLog> logs);

/// Policy names as used on the command line.
inline const std::vector<std::string> kAllPolicies{"full", "heuristic", "dnn", "dqn",
                                                   "dqn-ce", "dqn-a2", "dqn-a2ce"};
void validate_policy_name(const std::string& name);

struct BenchConfig {
  int train_accounts = 2000;
  int eval_accounts = 500;
  int seeds = 3;
  std::uint64_t master_seed = 2024;
  /// Policy that produced the historical deduction logs: "heuristic" or "full".
  std::string log_policy = "heuristic";
  bool retry_daily = true;
  std::vector<double> alpha_grid{0, 0.5, 0.8, 1.0, 1.1, 1.3, 1.6, 2.0, 2.5};
  /// Training accounts replayed for the per-epoch curve evaluation.
  int curve_accounts = 100;
  std::vector<std::string> policies = kAllPolicies;

  static BenchConfig from_ini(const IniConfig& ini);
};

struct ExperimentConfig {
  sim::GenConfig gen;
  predictor::PredictorConfig predictor;
  agent::AgentConfig agent;
  baselines::DnnConfig dnn;
  BenchConfig bench;

  /// Reads every section; `DEDUCT_SEED`, when set, replaces the master seed
  /// (and the generator seed used by `deduct gen`).
  static ExperimentConfig from_ini(const IniConfig& ini);
  static ExperimentConfig load(const std::string& path);
};

/// Reads DEDUCT_SEED; throws ConfigError when it is not an unsigned integer.
std::optional<std::uint64_t> seed_override();

/// Seed of run k: every stage of that run derives its own stream from it.
std::uint64_t run_seed(const ExperimentConfig& cfg, int run);

/// Disjoint train/eval account indices, a deterministic function of the seed.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};
Split split_accounts(std::size_t n_accounts, int n_train, int n_eval, std::uint64_t seed);

/// Historical logs: the configured log policy run against the true simulator.
std::vector<sim::EpisodeLog> historical_logs(const sim::Dataset& ds, const std::string& log_policy,
                                             Money cost_c, bool retry_daily);

/// Everything one run shares across policies and α values.
struct RunContext {
  std::uint64_t seed = 0;
  sim::Dataset data;
  Split split;
  std::vector<sim::EpisodeLog> logs;  // indexed like data.accounts
  std::unique_ptr<predictor::BalancePredictor> predictor;
  predictor::TrainReport predictor_report;
  double eval_mape = 0.0;
  std::vector<std::vector<Money>> train_predictions;  // per training account, per day
  std::unique_ptr<baselines::DnnRegressor> dnn;
};

/// Split and historical logs only.
RunContext make_context(const ExperimentConfig& cfg, sim::Dataset data, std::uint64_t seed);
void train_run_predictor(const ExperimentConfig& cfg, RunContext& ctx);
/// Installs a predictor: held-out MAPE and per-day training predictions.
void attach_predictor(const ExperimentConfig& cfg, RunContext& ctx,
                      std::unique_ptr<predictor::BalancePredictor> model);
void train_run_dnn(const ExperimentConfig& cfg, RunContext& ctx);

/// Generates the population, splits it, logs history, trains the predictor
/// and the DNN baseline.
RunContext prepare_run(const ExperimentConfig& cfg, int run);
/// Same from an existing dataset (CLI path).
RunContext prepare_run(const ExperimentConfig& cfg, sim::Dataset data, std::uint64_t seed,
                       bool train_dnn = true);

/// Training episodes for the corrected environment with the given α.
std::vector<agent::TrainingEpisode> corrected_episodes(const RunContext& ctx, double alpha);

struct TrainedHier {
  std::unique_ptr<agent::HierAgent> agent;
  std::vector<agent::CurveRow> curve;
};
struct TrainedFlat {
  std::unique_ptr<agent::FlatAgent> agent;
  std::vector<agent::CurveRow> curve;
};

TrainedHier train_hier(const ExperimentConfig& cfg, const RunContext& ctx, double alpha);
TrainedFlat train_flat(const ExperimentConfig& cfg, const RunContext& ctx, double alpha);

/// Runs a policy on every evaluation account against the true simulator.
std::vector<sim::EpisodeLog> evaluate(const RunContext& ctx, sim::DeductionPolicy& policy,
                                      Money cost_c);

struct PolicyRow {
  std::string policy;
  std::vector<double> succ_rates;  // per seed
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over seeds
  Money deducted;
  Money cost;
  long long attempts = 0;
  std::vector<std::uint64_t> seeds;
};

struct RawLogs {
  struct Entry {
    std::uint64_t seed = 0;
    std::string policy;
    sim::EpisodeLog log;
  };
  std::vector<Entry> entries;
};

struct BenchReport {
  std::vector<PolicyRow> rows;
  RawLogs raw;

  const PolicyRow& row(const std::string& policy) const;
};

/// Adds one seed's evaluation logs for a policy to the report.
void add_result(BenchReport& report, const std::string& policy, std::uint64_t seed,
                std::vector<sim::EpisodeLog> logs);
/// Recomputes means and standard deviations.
void finalize(BenchReport& report);

/// Trains and evaluates one policy of a prepared run.
std::vector<sim::EpisodeLog> run_policy(const ExperimentConfig& cfg, const RunContext& ctx,
                                        const std::string& policy);

/// Full pipeline over all configured seeds and policies.
BenchReport run_experiment(const ExperimentConfig& cfg, std::ostream* progress = nullptr);

struct AlphaPoint {
  double alpha = 0.0;
  std::vector<double> succ_rates;
  double mean = 0.0;
  double std = 0.0;
};

/// Trains the hierarchical agent on the corrected environment for every α
/// and evaluates it on the true simulator.
std::vector<AlphaPoint> alpha_sweep(const ExperimentConfig& cfg, std::span<const double> grid,
                                    std::ostream* progress = nullptr);

void write_report_csv(std::ostream& out, const BenchReport& report);
void print_table(std::ostream& out, const BenchReport& report);
/// One row per attempt plus one row per episode, enough to recompute every
/// reported SuccRate.
void write_attempts_csv(std::ostream& out, const RawLogs& raw);
void write_episodes_csv(std::ostream& out, const RawLogs& raw);
/// Reads an episodes CSV back (seed, policy, account_id, bill, deducted, cost,
/// attempts) and recomputes the per-policy mean SuccRate.
std::vector<std::pair<std::string, double>> recompute_from_episodes(std::istream& in);
void write_alpha_curve(std::ostream& out, std::span<const AlphaPoint> points);

double mean(std::span<const double> v);
double sample_std(std::span<const double> v);

}  // namespace deduct::bench
