#include "deduct/bench.hpp"
#include "deduct/error.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace deduct;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

bool is_flat(const std::string& p) { return p == "dqn" || p == "dqn-ce"; }
bool is_hier(const std::string& p) { return p == "dqn-a2" || p == "dqn-a2ce"; }
double policy_alpha(const bench::ExperimentConfig& cfg, const std::string& p) {
  return (p == "dqn-ce" || p == "dqn-a2ce") ? cfg.predictor.alpha : 0.0;
}

bench::RunContext cli_context(const bench::ExperimentConfig& cfg, const std::string& data) {
  return bench::make_context(cfg, sim::load_dataset(data), bench::run_seed(cfg, 0));
}

void write_report_files(const bench::BenchReport& report, const fs::path& out) {
  auto csv = open_out(out);
  bench::write_report_csv(csv, report);
  auto stem = out;
  stem.replace_extension();
  auto episodes = open_out(stem.string() + ".episodes.csv");
  bench::write_episodes_csv(episodes, report.raw);
  auto attempts = open_out(stem.string() + ".attempts.csv");
  bench::write_attempts_csv(attempts, report.raw);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deduction path learning: simulator, predictor, agents and benchmark"};
  app.require_subcommand(1);

  std::string config, out, data, predictor_path, policy, agents_dir, grid, report_path;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic account population");
  gen->add_option("--config", config, "INI configuration")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output dataset (JSON lines)")->required();

  auto* tp = app.add_subcommand("train-predictor", "Train the balance predictor");
  tp->add_option("--config", config)->required()->check(CLI::ExistingFile);
  tp->add_option("--data", data)->required()->check(CLI::ExistingFile);
  tp->add_option("--out", out, "Model checkpoint")->required();
  tp->add_option("--report", report_path, "Held-out prediction CSV");

  auto* ta = app.add_subcommand("train-agent", "Train a learned policy");
  ta->add_option("--config", config)->required()->check(CLI::ExistingFile);
  ta->add_option("--data", data)->required()->check(CLI::ExistingFile);
  ta->add_option("--predictor", predictor_path, "Predictor checkpoint")->check(CLI::ExistingFile);
  ta->add_option("--policy", policy)->required()->check(
      CLI::IsMember({"dnn", "dqn", "dqn-ce", "dqn-a2", "dqn-a2ce"}));
  ta->add_option("--out", out, "Agent checkpoint")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate policies on the held-out split");
  ev->add_option("--config", config)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data)->required()->check(CLI::ExistingFile);
  ev->add_option("--agents", agents_dir, "Directory with <policy>.ckpt files")->check(CLI::ExistingDirectory);
  ev->add_option("--out", out, "Report CSV")->required();

  auto* sw = app.add_subcommand("sweep-alpha", "SuccRate of DQN-A2CE over a grid of alpha");
  sw->add_option("--config", config)->required()->check(CLI::ExistingFile);
  sw->add_option("--grid", grid, "Comma-separated alpha values");
  sw->add_option("--out", out, "Curve CSV");

  auto* bn = app.add_subcommand("bench", "Full experiment: every policy over every seed");
  bn->add_option("--config", config)->required()->check(CLI::ExistingFile);
  bn->add_option("--out", out, "Report CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    const auto cfg = bench::ExperimentConfig::load(config);

    if (*gen) {
      const auto ds = sim::generate_accounts(cfg.gen);
      sim::export_dataset(ds, out);
      const auto st = sim::population_stats(ds);
      std::cout << "accounts " << ds.accounts.size() << ", mean bill " << st.mean_bill
                << ", positive-balance days " << st.positive_day_fraction << '\n'
                << "mean consumption " << st.mean_consumption_amount << ", events per window "
                << st.mean_consumption_events << ", mean feasible deduction "
                << st.mean_feasible_deduction << ", consumption/balance corr "
                << st.consumption_balance_corr << '\n';
    } else if (*tp) {
      auto ctx = cli_context(cfg, data);
      bench::train_run_predictor(cfg, ctx);
      ctx.predictor->save(out);
      std::cout << "epochs " << ctx.predictor_report.epochs << ", best " << ctx.predictor_report.best_epoch
                << ", held-out MAPE " << ctx.eval_mape << '\n';
      if (!report_path.empty()) {
        std::vector<sim::EpisodeLog> logs;
        for (auto i : ctx.split.eval) logs.push_back(ctx.logs[i]);
        const auto samples = predictor::build_samples(ctx.data, ctx.split.eval, cfg.predictor.target, logs);
        const auto preds = predictor::predict_samples(*ctx.predictor, ctx.data, samples);
        auto f = open_out(report_path);
        predictor::write_prediction_report(f, ctx.data, samples, preds);
      }
    } else if (*ta) {
      auto ctx = cli_context(cfg, data);
      if (policy == "dnn") {
        bench::train_run_dnn(cfg, ctx);
        auto f = open_out(out);
        ctx.dnn->save(f);
      } else {
        if (predictor_path.empty()) throw ConfigError("--predictor is required for " + policy);
        bench::attach_predictor(cfg, ctx, predictor::BalancePredictor::load(predictor_path));
        const double alpha = policy_alpha(cfg, policy);
        std::vector<agent::CurveRow> curve;
        auto f = open_out(out);
        if (is_flat(policy)) {
          auto t = bench::train_flat(cfg, ctx, alpha);
          t.agent->save(f);
          curve = std::move(t.curve);
        } else {
          auto t = bench::train_hier(cfg, ctx, alpha);
          t.agent->save(f);
          curve = std::move(t.curve);
        }
        auto c = open_out(out + ".curve.csv");
        agent::write_curve(c, curve);
        std::cout << policy << " trained, final curve SuccRate "
                  << (curve.empty() ? 0.0 : curve.back().eval_succ_rate) << '\n';
      }
    } else if (*ev) {
      auto ctx = cli_context(cfg, data);
      bench::BenchReport report;
      const agent::DeductionFeatures features(cfg.agent);
      for (const auto& p : bench::kAllPolicies) {
        std::vector<sim::EpisodeLog> logs;
        if (p == "full") {
          baselines::FullDeductionPolicy pol(cfg.bench.retry_daily);
          logs = bench::evaluate(ctx, pol, cfg.gen.cost_c);
        } else if (p == "heuristic") {
          baselines::HeuristicPolicy pol;
          logs = bench::evaluate(ctx, pol, cfg.gen.cost_c);
        } else {
          const fs::path ckpt = fs::path(agents_dir) / (p + ".ckpt");
          if (agents_dir.empty() || !fs::exists(ckpt)) continue;
          auto in = open_in(ckpt);
          if (p == "dnn") {
            baselines::DnnRegressor model(cfg.dnn);
            model.load(in);
            baselines::PredictiveDnnPolicy pol(model);
            logs = bench::evaluate(ctx, pol, cfg.gen.cost_c);
          } else if (is_flat(p)) {
            auto a = agent::make_deduction_flat_agent(cfg.agent);
            a->load(in);
            agent::FlatPolicy pol(*a, features);
            logs = bench::evaluate(ctx, pol, cfg.gen.cost_c);
          } else if (is_hier(p)) {
            auto a = agent::make_deduction_hier_agent(cfg.agent);
            a->load(in);
            agent::HierPolicy pol(*a, features);
            logs = bench::evaluate(ctx, pol, cfg.gen.cost_c);
          }
        }
        bench::add_result(report, p, ctx.seed, std::move(logs));
      }
      bench::finalize(report);
      write_report_files(report, out);
      bench::print_table(std::cout, report);
    } else if (*sw) {
      const auto values = grid.empty() ? cfg.bench.alpha_grid : parse_double_list(grid);
      const auto points = bench::alpha_sweep(cfg, values, &std::cerr);
      if (!out.empty()) {
        auto f = open_out(out);
        bench::write_alpha_curve(f, points);
      }
      bench::write_alpha_curve(std::cout, points);
    } else if (*bn) {
      const auto report = bench::run_experiment(cfg, &std::cerr);
      write_report_files(report, out);
      bench::print_table(std::cout, report);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const TrainingError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ParseError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
