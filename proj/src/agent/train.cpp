#include "deduct/agent.hpp"
#include "deduct/error.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace deduct::agent {

AgentConfig AgentConfig::from_ini(const IniConfig& ini) {
  AgentConfig c;
  const std::string s = "agent";
  c.eta = ini.get_double(s, "eta", c.eta);
  c.gamma = ini.get_double(s, "gamma", c.gamma);
  c.eps_start = ini.get_double(s, "eps_start", c.eps_start);
  c.eps_end = ini.get_double(s, "eps_end", c.eps_end);
  c.eps_decay_frac = ini.get_double(s, "eps_decay_frac", c.eps_decay_frac);
  c.buffer_d1 = static_cast<std::size_t>(ini.get_int(s, "buffer_d1", static_cast<long long>(c.buffer_d1)));
  c.buffer_d2 = static_cast<std::size_t>(ini.get_int(s, "buffer_d2", static_cast<long long>(c.buffer_d2)));
  c.batch = static_cast<std::size_t>(ini.get_int(s, "batch", static_cast<long long>(c.batch)));
  c.sync_every = ini.get_int(s, "sync_every", c.sync_every);
  if (ini.has(s, "hidden_dims")) {
    c.hidden_dims.clear();
    for (double d : ini.get_doubles(s, "hidden_dims", {})) {
      if (d < 1.0 || d != std::floor(d)) throw ConfigError("agent.hidden_dims must be positive integers");
      c.hidden_dims.push_back(static_cast<std::size_t>(d));
    }
  }
  c.seed = static_cast<std::uint64_t>(ini.get_int(s, "seed", static_cast<long long>(c.seed)));
  c.tabular_mode = ini.get_bool(s, "tabular_mode", c.tabular_mode);
  c.double_dqn = ini.get_bool(s, "double_dqn", c.double_dqn);
  c.lr = ini.get_double(s, "lr", c.lr);
  c.tabular_lr = ini.get_double(s, "tabular_lr", c.tabular_lr);
  c.history_hidden = static_cast<std::size_t>(ini.get_int(s, "history_hidden", static_cast<long long>(c.history_hidden)));
  c.history_window = static_cast<std::size_t>(ini.get_int(s, "history_window", static_cast<long long>(c.history_window)));
  c.history_days = static_cast<int>(ini.get_int(s, "history_days", c.history_days));
  c.total_steps = ini.get_int(s, "total_steps", c.total_steps);
  c.train_every = static_cast<int>(ini.get_int(s, "train_every", c.train_every));
  c.epochs = static_cast<int>(ini.get_int(s, "epochs", c.epochs));
  c.validate();
  return c;
}

void AgentConfig::validate() const {
  auto unit = [](double v) { return v > 0.0 && v <= 1.0; };
  if (!unit(eta) || !unit(gamma)) throw ConfigError("agent.eta and agent.gamma must be in (0, 1]");
  if (!(eps_start >= 0.0 && eps_start <= 1.0 && eps_end >= 0.0 && eps_end <= 1.0)) {
    throw ConfigError("agent epsilon bounds must be in [0, 1]");
  }
  if (!(eps_decay_frac > 0.0 && eps_decay_frac <= 1.0)) throw ConfigError("agent.eps_decay_frac must be in (0, 1]");
  if (batch == 0 || buffer_d1 < batch || buffer_d2 < batch) {
    throw ConfigError("agent buffers must hold at least one batch");
  }
  if (sync_every < 1) throw ConfigError("agent.sync_every must be >= 1");
  if (hidden_dims.empty()) throw ConfigError("agent.hidden_dims must not be empty");
  if (!(lr > 0.0)) throw ConfigError("agent.lr must be positive");
  if (!(tabular_lr > 0.0 && tabular_lr <= 1.0)) throw ConfigError("agent.tabular_lr must be in (0, 1]");
  if (history_hidden == 0 || history_window == 0 || history_days < 1) {
    throw ConfigError("agent history settings must be positive");
  }
  if (total_steps < 1 || train_every < 1 || epochs < 1) {
    throw ConfigError("agent.total_steps, train_every and epochs must be positive");
  }
}

EpsilonSchedule AgentConfig::schedule() const {
  return {eps_start, eps_end,
          std::max<long long>(1, std::llround(eps_decay_frac * static_cast<double>(total_steps)))};
}

void write_curve(std::ostream& out, std::span<const CurveRow> rows) {
  out << "epoch,td_loss_upper,td_loss_lower,eval_succ_rate,epsilon\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.td_loss_upper << ',' << r.td_loss_lower << ',' << r.eval_succ_rate
        << ',' << r.epsilon << '\n';
  }
}

namespace {

/// Per-epoch accumulator of TD losses and curve emission.
class CurveRecorder {
 public:
  CurveRecorder(const AgentConfig& cfg, const EvalFn& evaluate)
      : cfg_(cfg), evaluate_(evaluate), schedule_(cfg.schedule()) {}

  void add_upper(double l) { upper_ += l, ++n_upper_; }
  void add_lower(double l) { lower_ += l, ++n_lower_; }

  void maybe_emit(long long steps) {
    while (static_cast<int>(rows_.size()) < cfg_.epochs && steps >= boundary(rows_.size() + 1)) emit(steps);
  }
  std::vector<CurveRow> finish(long long steps) {
    while (static_cast<int>(rows_.size()) < cfg_.epochs) emit(steps);
    return std::move(rows_);
  }

 private:
  long long boundary(std::size_t epoch) const {
    return static_cast<long long>(epoch) * cfg_.total_steps / cfg_.epochs;
  }
  void emit(long long steps) {
    CurveRow r;
    r.epoch = static_cast<int>(rows_.size()) + 1;
    r.td_loss_upper = n_upper_ ? upper_ / static_cast<double>(n_upper_) : 0.0;
    r.td_loss_lower = n_lower_ ? lower_ / static_cast<double>(n_lower_) : 0.0;
    r.eval_succ_rate = evaluate_ ? evaluate_() : 0.0;
    r.epsilon = schedule_.at(steps);
    rows_.push_back(r);
    upper_ = lower_ = 0.0;
    n_upper_ = n_lower_ = 0;
  }

  const AgentConfig& cfg_;
  const EvalFn& evaluate_;
  EpsilonSchedule schedule_;
  std::vector<CurveRow> rows_;
  double upper_ = 0.0, lower_ = 0.0;
  long long n_upper_ = 0, n_lower_ = 0;
};

void write_header(std::ostream& out, const char* kind, const AgentConfig& cfg, long long env_steps,
                  std::initializer_list<long long> updates) {
  char buf[64];
  auto hex = [&](double v) {
    const auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
    return std::string(buf, r.ptr);
  };
  out << "deduct-agent 1 " << kind << '\n'
      << "schedule " << hex(cfg.eps_start) << ' ' << hex(cfg.eps_end) << ' '
      << hex(cfg.eps_decay_frac) << ' ' << cfg.total_steps << '\n'
      << "discounts " << hex(cfg.eta) << ' ' << hex(cfg.gamma) << '\n'
      << "env_steps " << env_steps << '\n'
      << "updates";
  for (auto u : updates) out << ' ' << u;
  out << '\n';
}

struct Header {
  long long env_steps = 0;
  std::vector<long long> updates;
};

Header read_header(std::istream& in, const std::string& kind, std::size_t n_updates) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() {
    if (!std::getline(in, line)) throw ParseError("truncated agent checkpoint", line_no + 1);
    ++line_no;
    return std::istringstream(line);
  };
  {
    auto ss = next();
    std::string magic, k;
    int version = 0;
    ss >> magic >> version >> k;
    if (magic != "deduct-agent" || version != 1) throw ParseError("not an agent checkpoint", line_no);
    if (k != kind) throw ParseError("agent checkpoint holds a '" + k + "' agent, expected '" + kind + "'", line_no);
  }
  std::string key;
  if (auto ss = next(); !(ss >> key) || key != "schedule") throw ParseError("expected schedule", line_no);
  if (auto ss = next(); !(ss >> key) || key != "discounts") throw ParseError("expected discounts", line_no);
  Header h;
  if (auto ss = next(); !(ss >> key >> h.env_steps) || key != "env_steps") {
    throw ParseError("expected env_steps", line_no);
  }
  auto ss = next();
  if (!(ss >> key) || key != "updates") throw ParseError("expected updates", line_no);
  long long u = 0;
  while (ss >> u) h.updates.push_back(u);
  if (h.updates.size() != n_updates) throw ParseError("wrong number of update counters", line_no);
  return h;
}

}  // namespace

// --- HierAgent -------------------------------------------------------------

HierAgent::HierAgent(std::unique_ptr<QModel> q1, std::unique_ptr<QModel> q2, const AgentConfig& cfg)
    : upper(std::move(q1), cfg.sync_every, cfg.double_dqn),
      lower(std::move(q2), cfg.sync_every, cfg.double_dqn),
      cfg_(cfg) {}

int HierAgent::select_subgoal(const AgentState& s, double eps, Rng& rng) const {
  const auto q = q1_values(s);
  return epsilon_greedy(available(q, s), eps, rng);
}

int HierAgent::select_action(const AgentState& s, double eps, Rng& rng) const {
  const auto q = q2_values(s);
  return epsilon_greedy(available(q, s), eps, rng);
}

void HierAgent::save(std::ostream& out) {
  write_header(out, "hier", cfg_, env_steps, {upper.updates(), lower.updates()});
  nn::write_params(out, upper.online().params());
  nn::write_params(out, upper.target().params());
  nn::write_params(out, lower.online().params());
  nn::write_params(out, lower.target().params());
}

void HierAgent::load(std::istream& in) {
  const auto h = read_header(in, "hier", 2);
  nn::read_params(in, upper.online().params());
  nn::read_params(in, upper.target().params());
  nn::read_params(in, lower.online().params());
  nn::read_params(in, lower.target().params());
  env_steps = h.env_steps;
  upper.set_updates(h.updates[0]);
  lower.set_updates(h.updates[1]);
}

std::vector<CurveRow> train_hierarchical(HierAgent& agent, HierTask& task, Rng& rng,
                                         const EvalFn& evaluate) {
  const auto& cfg = agent.config();
  const auto schedule = cfg.schedule();
  ReplayBuffer<Transition> d1(cfg.buffer_d1), d2(cfg.buffer_d2);
  CurveRecorder curve(cfg, evaluate);
  long long lower_decisions = 0;

  while (agent.env_steps < cfg.total_steps) {
    task.reset(rng);
    AgentState s = task.upper_state();
    while (!task.episode_done() && agent.env_steps < cfg.total_steps) {
      const int g = agent.select_subgoal(s, schedule.at(agent.env_steps), rng);
      ++agent.env_steps;
      task.begin_day(g);
      double day_reward = 0.0;
      while (!task.day_done()) {
        AgentState ls = task.lower_state();
        const int a = agent.select_action(ls, schedule.at(agent.env_steps), rng);
        ++agent.env_steps;
        const double r = task.step(a);
        day_reward += r;
        const bool terminal = task.day_done();
        d2.push({std::move(ls), a, r, terminal ? AgentState{} : task.lower_state(),
                 terminal ? 0.0 : cfg.gamma});
        if (++lower_decisions % cfg.train_every == 0 && d2.size() >= cfg.batch) {
          const auto batch = d2.sample(cfg.batch, rng);
          curve.add_lower(agent.lower.update(batch));
        }
      }
      task.end_day();
      const bool done = task.episode_done();
      AgentState next = done ? AgentState{} : task.upper_state();
      d1.push({std::move(s), g, day_reward, next, done ? 0.0 : cfg.eta});
      if (d1.size() >= cfg.batch) {
        const auto batch = d1.sample(cfg.batch, rng);
        curve.add_upper(agent.upper.update(batch));
      }
      s = std::move(next);
      curve.maybe_emit(agent.env_steps);
    }
  }
  return curve.finish(agent.env_steps);
}

// --- FlatAgent -------------------------------------------------------------

FlatAgent::FlatAgent(std::unique_ptr<QModel> q, const AgentConfig& cfg)
    : learner(std::move(q), cfg.sync_every, cfg.double_dqn), cfg_(cfg) {}

int FlatAgent::select_action(const AgentState& s, double eps, Rng& rng) const {
  const auto q = values(s);
  return epsilon_greedy(available(q, s), eps, rng);
}

void FlatAgent::save(std::ostream& out) {
  write_header(out, "flat", cfg_, env_steps, {learner.updates()});
  nn::write_params(out, learner.online().params());
  nn::write_params(out, learner.target().params());
}

void FlatAgent::load(std::istream& in) {
  const auto h = read_header(in, "flat", 1);
  nn::read_params(in, learner.online().params());
  nn::read_params(in, learner.target().params());
  env_steps = h.env_steps;
  learner.set_updates(h.updates[0]);
}

std::vector<CurveRow> train_flat(FlatAgent& agent, FlatTask& task, Rng& rng, const EvalFn& evaluate) {
  const auto& cfg = agent.config();
  const auto schedule = cfg.schedule();
  ReplayBuffer<Transition> buffer(cfg.buffer_d2);
  CurveRecorder curve(cfg, evaluate);

  while (agent.env_steps < cfg.total_steps) {
    task.reset(rng);
    while (!task.done() && agent.env_steps < cfg.total_steps) {
      AgentState s = task.state();
      const int a = agent.select_action(s, schedule.at(agent.env_steps), rng);
      ++agent.env_steps;
      const auto st = task.step(a);
      const bool terminal = task.done() || st.discount == 0.0;
      buffer.push({std::move(s), a, st.reward, terminal ? AgentState{} : task.state(),
                   terminal ? 0.0 : st.discount});
      if (agent.env_steps % cfg.train_every == 0 && buffer.size() >= cfg.batch) {
        const auto batch = buffer.sample(cfg.batch, rng);
        curve.add_lower(agent.learner.update(batch));
      }
      curve.maybe_emit(agent.env_steps);
    }
  }
  return curve.finish(agent.env_steps);
}

}  // namespace deduct::agent
