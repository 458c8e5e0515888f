#include "deduct/error.hpp"
#include "deduct/nn.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace deduct::nn {

Adam::Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (auto* p : params_) {
    state_.first_moment.emplace_back(p->value.shape);
    state_.second_moment.emplace_back(p->value.shape);
  }
}

void Adam::step() {
  double norm2 = 0.0;
  for (auto* p : params_) {
    for (double g : p->grad.values) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter " + p->name);
      norm2 += g * g;
    }
  }
  double scale = 1.0;
  if (cfg_.clip_norm > 0.0 && norm2 > cfg_.clip_norm * cfg_.clip_norm) {
    scale = cfg_.clip_norm / std::sqrt(norm2);
  }
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& value = params_[k]->value.values;
    const auto& grad = params_[k]->grad.values;
    auto& m = state_.first_moment[k].values;
    auto& v = state_.second_moment[k].values;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i] * scale;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      value[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
    }
  }
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

GradCheckReport grad_check(const std::function<double(bool)>& loss_fn, const ParamList& params,
                           double tolerance, std::size_t samples_per_param, Rng& rng,
                           double step) {
  zero_grads(params);
  loss_fn(true);
  std::vector<std::vector<double>> analytic;
  for (auto* p : params) analytic.push_back(p->grad.values);

  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    GradCheckEntry entry{p.name, 0.0, 0};
    const std::size_t n = p.value.size();
    const std::size_t count = std::min(n, samples_per_param);
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t idx = count == n ? s : static_cast<std::size_t>(rng() % n);
      const double saved = p.value.values[idx];
      p.value.values[idx] = saved + step;
      const double up = loss_fn(false);
      p.value.values[idx] = saved - step;
      const double down = loss_fn(false);
      p.value.values[idx] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[k][idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-7});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(a - numeric) / denom);
      ++entry.checked;
    }
    if (!(entry.max_rel_error < tolerance)) report.passed = false;
    report.entries.push_back(entry);
  }
  return report;
}

void write_params(std::ostream& out, const ParamList& params) {
  out << "deduct-params 1 " << params.size() << '\n';
  char buf[64];
  for (const auto* p : params) {
    out << p->name << ' ' << p->value.shape.size();
    for (auto d : p->value.shape) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), p->value.values[i],
                                     std::chars_format::hex);
      out << (i ? " " : "") << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
}

void read_params(std::istream& in, const ParamList& params) {
  std::size_t line_no = 0;
  std::string line;
  auto next_line = [&]() -> std::string& {
    if (!std::getline(in, line)) throw ParseError("unexpected end of checkpoint", line_no + 1);
    ++line_no;
    return line;
  };
  {
    std::istringstream head(next_line());
    std::string magic;
    int version = 0;
    std::size_t count = 0;
    head >> magic >> version >> count;
    if (magic != "deduct-params" || version != 1) {
      throw ParseError("not a deduct checkpoint", line_no);
    }
    if (count != params.size()) {
      throw ParseError("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                           std::to_string(params.size()),
                       line_no);
    }
  }
  for (auto* p : params) {
    std::istringstream head(next_line());
    std::string name;
    std::size_t ndims = 0;
    head >> name >> ndims;
    std::vector<std::size_t> shape(ndims);
    for (auto& d : shape) head >> d;
    if (!head || name != p->name || shape != p->value.shape) {
      throw ParseError("checkpoint tensor '" + name + "' does not match " + p->name, line_no);
    }
    const std::string& body = next_line();
    const char* cur = body.data();
    const char* end = body.data() + body.size();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      while (cur < end && *cur == ' ') ++cur;
      bool neg = cur < end && *cur == '-';
      double v = 0.0;
      const auto res = std::from_chars(cur + (neg ? 1 : 0), end, v, std::chars_format::hex);
      if (res.ec != std::errc()) throw ParseError("bad value in tensor " + name, line_no);
      p->value.values[i] = neg ? -v : v;
      cur = res.ptr;
    }
  }
}

}  // namespace deduct::nn
