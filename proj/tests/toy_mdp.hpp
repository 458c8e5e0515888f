#pragma once

// Small deterministic MDPs with closed-form value iteration, used to check
// the tabular training loops.

#include "deduct/agent.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace toy {

using deduct::Rng;
using deduct::agent::AgentState;

inline constexpr int kStates = 5;  // state 4 is terminal
inline constexpr int kLive = 4;

// --- hierarchical ----------------------------------------------------------
// Upper state s in 0..3 picks g in {0,1,2} lower steps for the day; the day
// ends in s' = next(s, g). Lower states are (s, g, step).

inline constexpr int kSubgoals = 3;
inline constexpr int kLowerActions = 2;
inline constexpr int kLowerStates = kLive * 3;

inline int hier_next(int s, int g) { return std::min(kLive, s + 1 + (g == 2 ? 1 : 0)); }

inline double lower_reward(int s, int g, int step, int a) {
  return std::sin(1.0 + 7.0 * s + 3.0 * g + 5.0 * step + 11.0 * a) - (g == 2 ? 0.15 : 0.0);
}

inline int lower_index(int s, int g, int step) { return s * 3 + (g == 1 ? 0 : step); }

struct HierValues {
  std::array<std::array<double, kSubgoals>, kLive> q1{};
  std::array<std::array<double, kLowerActions>, kLowerStates> q2{};
};

/// Lower values are within-day (terminal at the end of the day, discount
/// gamma); the upper value of a subgoal is the undiscounted day total under
/// the greedy lower policy plus eta times the next state's value.
inline HierValues hier_value_iteration(double eta, double gamma) {
  HierValues v;
  for (int s = 0; s < kLive; ++s) {
    for (int a = 0; a < kLowerActions; ++a) {
      v.q2[lower_index(s, 1, 1)][a] = lower_reward(s, 1, 1, a);
      v.q2[lower_index(s, 2, 2)][a] = lower_reward(s, 2, 2, a);
    }
    const auto& last = v.q2[lower_index(s, 2, 2)];
    for (int a = 0; a < kLowerActions; ++a) {
      v.q2[lower_index(s, 2, 1)][a] = lower_reward(s, 2, 1, a) + gamma * std::max(last[0], last[1]);
    }
  }
  auto greedy = [&](int idx) { return v.q2[idx][1] > v.q2[idx][0] ? 1 : 0; };
  auto day_total = [&](int s, int g) {
    double total = 0.0;
    for (int step = 1; step <= g; ++step) total += lower_reward(s, g, step, greedy(lower_index(s, g, step)));
    return total;
  };
  std::array<double, kStates> value{};
  for (int sweep = 0; sweep < 200; ++sweep) {
    for (int s = kLive - 1; s >= 0; --s) {
      for (int g = 0; g < kSubgoals; ++g) {
        const int n = hier_next(s, g);
        v.q1[s][g] = day_total(s, g) + (n == kLive ? 0.0 : eta * value[n]);
      }
      value[s] = *std::max_element(v.q1[s].begin(), v.q1[s].end());
    }
  }
  return v;
}

class HierToy final : public deduct::agent::HierTask {
 public:
  int num_subgoals() const override { return kSubgoals; }
  int num_actions() const override { return kLowerActions; }
  void reset(Rng& rng) override {
    s_ = deduct::uniform_int(rng, 0, kLive - 1);
    g_ = 0;
    step_ = 1;
  }
  bool episode_done() const override { return s_ == kLive; }
  AgentState upper_state() const override { return indexed(s_); }
  void begin_day(int g) override {
    g_ = g;
    step_ = 1;
  }
  bool day_done() const override { return step_ > g_; }
  AgentState lower_state() const override { return indexed(lower_index(s_, g_, step_)); }
  double step(int a) override { return lower_reward(s_, g_, step_++, a); }
  void end_day() override { s_ = hier_next(s_, g_); }

 private:
  static AgentState indexed(int i) {
    AgentState st;
    st.index = i;
    return st;
  }
  int s_ = 0, g_ = 0, step_ = 1;
};

// --- flat ------------------------------------------------------------------

inline constexpr int kFlatActions = 3;

inline int flat_next(int s, int a) { return std::min(kLive, s + 1 + (a == 2 ? 1 : 0)); }
inline double flat_reward(int s, int a) { return std::cos(2.0 + 5.0 * s + 13.0 * a); }

inline std::array<std::array<double, kFlatActions>, kLive> flat_value_iteration(double discount) {
  std::array<std::array<double, kFlatActions>, kLive> q{};
  std::array<double, kStates> value{};
  for (int sweep = 0; sweep < 200; ++sweep) {
    for (int s = kLive - 1; s >= 0; --s) {
      for (int a = 0; a < kFlatActions; ++a) {
        const int n = flat_next(s, a);
        q[s][a] = flat_reward(s, a) + (n == kLive ? 0.0 : discount * value[n]);
      }
      value[s] = *std::max_element(q[s].begin(), q[s].end());
    }
  }
  return q;
}

class FlatToy final : public deduct::agent::FlatTask {
 public:
  explicit FlatToy(double discount) : discount_(discount) {}
  int num_actions() const override { return kFlatActions; }
  void reset(Rng& rng) override { s_ = deduct::uniform_int(rng, 0, kLive - 1); }
  bool done() const override { return s_ == kLive; }
  AgentState state() const override {
    AgentState st;
    st.index = s_;
    return st;
  }
  deduct::agent::FlatStep step(int a) override {
    const double r = flat_reward(s_, a);
    s_ = flat_next(s_, a);
    return {r, s_ == kLive ? 0.0 : discount_};
  }

 private:
  double discount_;
  int s_ = 0;
};

/// Tabular agent settings for the toys: greedy at the end, small buffers so
/// exploratory transitions are flushed before the last updates.
inline deduct::agent::AgentConfig tabular_config() {
  deduct::agent::AgentConfig c;
  c.tabular_mode = true;
  c.eta = 0.9;
  c.gamma = 0.8;
  c.eps_start = 1.0;
  c.eps_end = 0.0;
  c.eps_decay_frac = 0.5;
  c.buffer_d1 = 40;
  c.buffer_d2 = 40;
  c.batch = 8;
  c.sync_every = 1;
  c.tabular_lr = 0.5;
  c.total_steps = 20000;
  c.train_every = 1;
  c.epochs = 4;
  c.seed = 5;
  return c;
}

}  // namespace toy
