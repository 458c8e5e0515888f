#include "deduct/error.hpp"
#include "deduct/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace deduct::nn {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw DimensionError(what);
}

/// Builds the message only on failure.
template <class Message>
void require(bool ok, Message&& what) {
  if (!ok) throw DimensionError(what());
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::identity: break;
  }
  return x;
}

double activate_grad(Activation a, double pre, double post) {
  switch (a) {
    case Activation::relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - post * post;
    case Activation::identity: break;
  }
  return 1.0;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims) : shape(std::move(dims)) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  values.assign(n, 0.0);
}

bool Tensor::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(values.begin(), values.end(), v); }

Param::Param(std::string n, LayerKind k, std::vector<std::size_t> dims)
    : name(std::move(n)), kind(k), value(dims), grad(dims) {}

void Param::init_uniform(Rng& rng, double bound) {
  for (auto& v : value.values) v = (2.0 * uniform01(rng) - 1.0) * bound;
}

void zero_grads(const ParamList& params) {
  for (auto* p : params) p->grad.fill(0.0);
}

void copy_values(const ParamList& from, const ParamList& to) {
  require(from.size() == to.size(), "copy_values: parameter count mismatch");
  for (std::size_t i = 0; i < from.size(); ++i) {
    require(from[i]->value.shape == to[i]->value.shape,
            [&] { return "copy_values: shape mismatch for " + from[i]->name; });
    to[i]->value.values = from[i]->value.values;
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax of an empty vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(logits[i] - m);
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

std::vector<double> softmax_backward(std::span<const double> weights,
                                     std::span<const double> upstream) {
  require(weights.size() == upstream.size(), "softmax_backward: size mismatch");
  double inner = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) inner += weights[i] * upstream[i];
  std::vector<double> dz(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) dz[i] = weights[i] * (upstream[i] - inner);
  return dz;
}

// --- Dense -----------------------------------------------------------------

Dense::Dense(const std::string& name, std::size_t in, std::size_t out)
    : weight(name + ".W", LayerKind::dense, {out, in}),
      bias(name + ".b", LayerKind::dense, {out}),
      in_(in),
      out_(out) {}

void Dense::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  weight.init_uniform(rng, bound);
  bias.init_uniform(rng, bound);
}

void Dense::forward(std::span<const double> x, std::span<double> y) const {
  require(x.size() == in_, [&] {
    return "Dense " + weight.name + ": input width " + std::to_string(x.size()) + " != " +
           std::to_string(in_);
  });
  require(y.size() == out_, [&] { return "Dense " + weight.name + ": output width mismatch"; });
  for (std::size_t r = 0; r < out_; ++r) {
    y[r] = dot(weight.value.row(r), x.data(), in_) + bias.value.values[r];
  }
}

void Dense::backward(std::span<const double> x, std::span<const double> dy,
                     std::span<double> dx) {
  require(x.size() == in_ && dy.size() == out_, [&] { return "Dense " + weight.name + ": backward shapes"; });
  require(dx.empty() || dx.size() == in_, [&] { return "Dense " + weight.name + ": dx width"; });
  if (!dx.empty()) std::fill(dx.begin(), dx.end(), 0.0);
  for (std::size_t r = 0; r < out_; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    double* gw = weight.grad.row(r);
    for (std::size_t c = 0; c < in_; ++c) gw[c] += g * x[c];
    bias.grad.values[r] += g;
    if (!dx.empty()) {
      const double* w = weight.value.row(r);
      for (std::size_t c = 0; c < in_; ++c) dx[c] += g * w[c];
    }
  }
}

// --- Mlp -------------------------------------------------------------------

Mlp::Mlp(const std::string& name, const std::vector<std::size_t>& sizes, Activation hidden)
    : act_(hidden) {
  require(sizes.size() >= 2, "Mlp needs at least input and output sizes");
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    layers_.emplace_back(name + ".l" + std::to_string(i), sizes[i], sizes[i + 1]);
  }
}

void Mlp::init(Rng& rng) {
  for (auto& l : layers_) l.init(rng);
}

std::vector<double> Mlp::forward(std::span<const double> x, Cache* cache) const {
  std::vector<double> cur(x.begin(), x.end());
  if (cache) {
    cache->pre.resize(layers_.size());
    cache->post.resize(layers_.size());
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    std::vector<double> pre(layers_[l].out());
    layers_[l].forward(cur, pre);
    const bool last = l + 1 == layers_.size();
    std::vector<double> post(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) {
      post[i] = last ? pre[i] : activate(act_, pre[i]);
    }
    if (cache) {
      cache->post[l] = std::move(cur);
      cache->pre[l] = std::move(pre);
    }
    cur = std::move(post);
  }
  return cur;
}

void Mlp::backward(const Cache& cache, std::span<const double> dy, std::span<double> dx) {
  std::vector<double> grad(dy.begin(), dy.end());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const bool last = l + 1 == layers_.size();
    if (!last) {
      const auto& pre = cache.pre[l];
      for (std::size_t i = 0; i < grad.size(); ++i) {
        grad[i] *= activate_grad(act_, pre[i], activate(act_, pre[i]));
      }
    }
    const bool need_dx = l > 0 || !dx.empty();
    std::vector<double> down(need_dx ? layers_[l].in() : 0);
    layers_[l].backward(cache.post[l], grad, down);
    if (l == 0) {
      if (!dx.empty()) std::copy(down.begin(), down.end(), dx.begin());
    } else {
      grad = std::move(down);
    }
  }
}

ParamList Mlp::params() {
  ParamList out;
  for (auto& l : layers_) {
    for (auto* p : l.params()) out.push_back(p);
  }
  return out;
}

// --- LstmCell --------------------------------------------------------------

LstmCell::LstmCell(const std::string& name, std::size_t input, std::size_t hidden)
    : weight(name + ".W", LayerKind::recurrent_cell, {4 * hidden, input + hidden}),
      bias(name + ".b", LayerKind::recurrent_cell, {4 * hidden}),
      input_(input),
      hidden_(hidden) {}

void LstmCell::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(input_ + hidden_));
  weight.init_uniform(rng, bound);
  bias.init_uniform(rng, bound);
}

void LstmCell::forward(std::span<const double> x, std::span<const double> h_prev,
                       std::span<const double> c_prev, std::span<double> h,
                       std::span<double> c, Cache* cache) const {
  require(x.size() == input_, [&] { return "LstmCell " + weight.name + ": input width"; });
  require(h_prev.size() == hidden_ && c_prev.size() == hidden_ && h.size() == hidden_ &&
              c.size() == hidden_,
          [&] { return "LstmCell " + weight.name + ": hidden width"; });
  const std::size_t H = hidden_;
  const std::size_t width = input_ + H;
  std::vector<double> xh(width);
  std::copy(x.begin(), x.end(), xh.begin());
  std::copy(h_prev.begin(), h_prev.end(), xh.begin() + static_cast<std::ptrdiff_t>(input_));

  std::vector<double> gi(H), gf(H), gg(H), go(H), tc(H);
  for (std::size_t k = 0; k < H; ++k) {
    const auto& b = bias.value.values;
    gi[k] = sigmoid(dot(weight.value.row(k), xh.data(), width) + b[k]);
    gf[k] = sigmoid(dot(weight.value.row(H + k), xh.data(), width) + b[H + k]);
    gg[k] = std::tanh(dot(weight.value.row(2 * H + k), xh.data(), width) + b[2 * H + k]);
    go[k] = sigmoid(dot(weight.value.row(3 * H + k), xh.data(), width) + b[3 * H + k]);
    c[k] = gf[k] * c_prev[k] + gi[k] * gg[k];
    tc[k] = std::tanh(c[k]);
    h[k] = go[k] * tc[k];
  }
  if (cache) {
    cache->xh = std::move(xh);
    cache->c_prev.assign(c_prev.begin(), c_prev.end());
    cache->i = std::move(gi);
    cache->f = std::move(gf);
    cache->g = std::move(gg);
    cache->o = std::move(go);
    cache->c.assign(c.begin(), c.end());
    cache->tanh_c = std::move(tc);
  }
}

void LstmCell::backward(const Cache& cache, std::span<const double> dh,
                        std::span<const double> dc, std::span<double> dx,
                        std::span<double> dh_prev, std::span<double> dc_prev) {
  const std::size_t H = hidden_;
  const std::size_t width = input_ + H;
  std::vector<double> dgates(4 * H);
  for (std::size_t k = 0; k < H; ++k) {
    const double dck = dc[k] + dh[k] * cache.o[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
    const double d_o = dh[k] * cache.tanh_c[k];
    const double d_i = dck * cache.g[k];
    const double d_f = dck * cache.c_prev[k];
    const double d_g = dck * cache.i[k];
    dgates[k] = d_i * cache.i[k] * (1.0 - cache.i[k]);
    dgates[H + k] = d_f * cache.f[k] * (1.0 - cache.f[k]);
    dgates[2 * H + k] = d_g * (1.0 - cache.g[k] * cache.g[k]);
    dgates[3 * H + k] = d_o * cache.o[k] * (1.0 - cache.o[k]);
    if (!dc_prev.empty()) dc_prev[k] = dck * cache.f[k];
  }
  std::vector<double> dxh(width, 0.0);
  for (std::size_t r = 0; r < 4 * H; ++r) {
    const double g = dgates[r];
    if (g == 0.0) continue;
    double* gw = weight.grad.row(r);
    const double* w = weight.value.row(r);
    for (std::size_t col = 0; col < width; ++col) {
      gw[col] += g * cache.xh[col];
      dxh[col] += g * w[col];
    }
    bias.grad.values[r] += g;
  }
  if (!dx.empty()) std::copy(dxh.begin(), dxh.begin() + static_cast<std::ptrdiff_t>(input_), dx.begin());
  if (!dh_prev.empty()) {
    std::copy(dxh.begin() + static_cast<std::ptrdiff_t>(input_), dxh.end(), dh_prev.begin());
  }
}

// --- LstmSequence ----------------------------------------------------------

std::vector<double> LstmSequence::run(const LstmCell& cell, std::span<const double> inputs,
                                      std::size_t steps, Cache* cache) {
  const std::size_t I = cell.input();
  const std::size_t H = cell.hidden();
  require(inputs.size() == steps * I, "LstmSequence: inputs must be [steps, input]");
  std::vector<double> out(steps * H);
  std::vector<double> h(H, 0.0), c(H, 0.0), h_next(H), c_next(H);
  if (cache) cache->steps.resize(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    cell.forward(inputs.subspan(t * I, I), h, c, h_next, c_next,
                 cache ? &cache->steps[t] : nullptr);
    std::swap(h, h_next);
    std::swap(c, c_next);
    std::copy(h.begin(), h.end(), out.begin() + static_cast<std::ptrdiff_t>(t * H));
  }
  return out;
}

void LstmSequence::backward(LstmCell& cell, const Cache& cache, std::span<const double> dh_all,
                            std::span<double> dx_all) {
  const std::size_t I = cell.input();
  const std::size_t H = cell.hidden();
  const std::size_t steps = cache.steps.size();
  require(dh_all.size() == steps * H, "LstmSequence::backward: dh must be [steps, hidden]");
  std::vector<double> dh(H, 0.0), dc(H, 0.0), dh_prev(H), dc_prev(H);
  for (std::size_t t = steps; t-- > 0;) {
    for (std::size_t k = 0; k < H; ++k) dh[k] += dh_all[t * H + k];
    std::span<double> dx = dx_all.empty() ? std::span<double>() : dx_all.subspan(t * I, I);
    cell.backward(cache.steps[t], dh, dc, dx, dh_prev, dc_prev);
    std::swap(dh, dh_prev);
    std::swap(dc, dc_prev);
  }
}

// --- Embedding -------------------------------------------------------------

Embedding::Embedding(const std::string& name, std::size_t rows, std::size_t dim)
    : table(name + ".E", LayerKind::embedding, {rows, dim}) {}

void Embedding::init(Rng& rng) {
  table.init_uniform(rng, 1.0 / std::sqrt(static_cast<double>(dim())));
}

std::span<const double> Embedding::lookup(std::size_t row) const {
  require(row < rows(), [&] {
    return "Embedding " + table.name + ": row " + std::to_string(row) + " out of range";
  });
  return {table.value.row(row), dim()};
}

void Embedding::backward(std::size_t row, std::span<const double> upstream) {
  require(row < rows() && upstream.size() == dim(), "Embedding backward shape");
  double* g = table.grad.row(row);
  for (std::size_t k = 0; k < upstream.size(); ++k) g[k] += upstream[k];
}

}  // namespace deduct::nn
