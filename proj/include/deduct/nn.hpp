#pragma once

#include "deduct/seed.hpp"

#include <cmath>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace deduct::nn {

/// Dense row-major array of doubles.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims);

  std::size_t size() const { return values.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape.front(); }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  double* row(std::size_t r) { return values.data() + r * cols(); }
  const double* row(std::size_t r) const { return values.data() + r * cols(); }
  bool all_finite() const;
  void fill(double v);

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

enum class LayerKind { dense, recurrent_cell, embedding, attention_head };

/// A named trainable tensor with its gradient accumulator.
struct Param {
  std::string name;
  LayerKind kind = LayerKind::dense;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, LayerKind k, std::vector<std::size_t> dims);
  /// Uniform in [-bound, bound].
  void init_uniform(Rng& rng, double bound);
};

using ParamList = std::vector<Param*>;

void zero_grads(const ParamList& params);
/// Copies values between two lists with identical names and shapes.
void copy_values(const ParamList& from, const ParamList& to);

// ---------------------------------------------------------------------------
// Elementwise helpers

double dot(const double* a, const double* b, std::size_t n);
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Numerically stable softmax. Throws std::invalid_argument on empty input.
std::vector<double> softmax(std::span<const double> logits);
/// Given weights w = softmax(z) and dL/dw, returns dL/dz.
std::vector<double> softmax_backward(std::span<const double> weights,
                                     std::span<const double> upstream);

enum class Activation { identity, relu, tanh };

// ---------------------------------------------------------------------------
// Layers. Forward passes are const and keep no state; callers own caches, so
// inference on a shared layer is safe from several threads.

/// y = W x + b with W of shape [out, in].
class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, std::size_t in, std::size_t out);

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

  void init(Rng& rng);
  void forward(std::span<const double> x, std::span<double> y) const;
  /// Accumulates dW, db and writes dx (if non-empty).
  void backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx);

  ParamList params() { return {&weight, &bias}; }

  Param weight;
  Param bias;

 private:
  std::size_t in_ = 0, out_ = 0;
};

/// Multi-layer perceptron; hidden layers share one activation, the last
/// layer is linear.
class Mlp {
 public:
  struct Cache {
    std::vector<std::vector<double>> pre;   // pre-activation per layer
    std::vector<std::vector<double>> post;  // layer inputs; post[0] = x
  };

  Mlp() = default;
  Mlp(const std::string& name, const std::vector<std::size_t>& sizes,
      Activation hidden = Activation::relu);

  std::size_t in() const { return layers_.front().in(); }
  std::size_t out() const { return layers_.back().out(); }

  void init(Rng& rng);
  std::vector<double> forward(std::span<const double> x, Cache* cache = nullptr) const;
  /// dx is written when non-empty.
  void backward(const Cache& cache, std::span<const double> dy, std::span<double> dx);
  ParamList params();

 private:
  std::vector<Dense> layers_;
  Activation act_ = Activation::relu;
};

/// Standard four-gate LSTM step. Packed weights [4H, I + H] act on [x; h],
/// gate order (input, forget, cell, output).
class LstmCell {
 public:
  struct Cache {
    std::vector<double> xh;  // [x; h_prev]
    std::vector<double> c_prev;
    std::vector<double> i, f, g, o, c, tanh_c;
  };

  LstmCell() = default;
  LstmCell(const std::string& name, std::size_t input, std::size_t hidden);

  std::size_t input() const { return input_; }
  std::size_t hidden() const { return hidden_; }

  void init(Rng& rng);
  void forward(std::span<const double> x, std::span<const double> h_prev,
               std::span<const double> c_prev, std::span<double> h, std::span<double> c,
               Cache* cache) const;
  /// Given dL/dh and dL/dc of this step's outputs, accumulates parameter
  /// gradients and writes dx, dh_prev, dc_prev.
  void backward(const Cache& cache, std::span<const double> dh, std::span<const double> dc,
                std::span<double> dx, std::span<double> dh_prev, std::span<double> dc_prev);

  ParamList params() { return {&weight, &bias}; }

  Param weight;
  Param bias;

 private:
  std::size_t input_ = 0, hidden_ = 0;
};

/// Runs an LSTM cell over a sequence from zero state.
class LstmSequence {
 public:
  struct Cache {
    std::vector<LstmCell::Cache> steps;
  };

  /// Hidden state after each step, flattened [N, H].
  static std::vector<double> run(const LstmCell& cell, std::span<const double> inputs,
                                 std::size_t steps, Cache* cache);
  /// dh_all holds dL/dh_t for every step ([N, H]); writes dL/dx ([N, I]) when
  /// non-empty.
  static void backward(LstmCell& cell, const Cache& cache, std::span<const double> dh_all,
                       std::span<double> dx_all);
};

/// Lookup table of `rows` vectors of width `dim`.
class Embedding {
 public:
  Embedding() = default;
  Embedding(const std::string& name, std::size_t rows, std::size_t dim);

  std::size_t rows() const { return table.value.rows(); }
  std::size_t dim() const { return table.value.cols(); }

  void init(Rng& rng);
  std::span<const double> lookup(std::size_t row) const;
  void backward(std::size_t row, std::span<const double> upstream);
  ParamList params() { return {&table}; }

  Param table;
};

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; <= 0 disables.
  double clip_norm = 0.0;
};

struct OptimizerState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  long long step = 0;
};

class Adam {
 public:
  Adam() = default;
  Adam(ParamList params, AdamConfig cfg);

  /// Applies one update from the accumulated gradients. Throws TrainingError
  /// naming the parameter when a gradient is not finite.
  void step();
  const OptimizerState& state() const { return state_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  ParamList params_;
  AdamConfig cfg_;
  OptimizerState state_;
};

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckEntry {
  std::string param;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  bool passed = true;
  double worst() const;
};

/// `loss_fn` must zero nothing itself: grad_check zeroes gradients, calls
/// loss_fn(true) to get analytic gradients, then compares each sampled entry
/// against a central difference of loss_fn(false).
GradCheckReport grad_check(const std::function<double(bool)>& loss_fn, const ParamList& params,
                           double tolerance, std::size_t samples_per_param, Rng& rng,
                           double step = 1e-5);

// ---------------------------------------------------------------------------
// Checkpoints: shapes plus hex-float values, bit-exact round trip.

void write_params(std::ostream& out, const ParamList& params);
/// Reads into params with matching names and shapes; throws ParseError.
void read_params(std::istream& in, const ParamList& params);

}  // namespace deduct::nn
