#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpnet {

inline void check_arg(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Dense 2-D real array, row-major. The substrate every differentiable
// computation runs on; rank > 2 data is flattened before it gets here.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;
  std::optional<std::vector<double>> grad;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c) {
    check_arg(r >= 0 && c >= 0, "Tensor: negative shape " + shape_str(r, c));
    data.assign(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0);
  }

  static Tensor zeros(int r, int c) { return Tensor(r, c); }

  static Tensor full(int r, int c, double v) {
    Tensor t(r, c);
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(double v) { return full(1, 1, v); }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rs) {
    int r = static_cast<int>(rs.size());
    int c = r > 0 ? static_cast<int>(rs.begin()->size()) : 0;
    Tensor t(r, c);
    int i = 0;
    for (const auto& row : rs) {
      check_arg(static_cast<int>(row.size()) == c, "Tensor::from_rows: ragged rows");
      int j = 0;
      for (double v : row) t.at(i, j++) = v;
      ++i;
    }
    return t;
  }

  static std::string shape_str(int r, int c) {
    return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
  }
  std::string shape_str() const { return shape_str(rows, cols); }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }

  void ensure_grad() {
    if (!grad) grad.emplace(data.size(), 0.0);
    check_arg(grad->size() == data.size(), "Tensor: grad shape does not match data");
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// Learnable tensor plus per-element Adam moment accumulators.
struct Parameter {
  std::string name;
  Tensor tensor;
  std::vector<double> m1, m2;  // first/second moment estimates
  std::int64_t step_count = 0;

  Parameter() = default;
  Parameter(std::string n, Tensor t)
      : name(std::move(n)), tensor(std::move(t)),
        m1(tensor.size(), 0.0), m2(tensor.size(), 0.0) {}

  void zero_grad() { tensor.grad.reset(); }
};

struct OptimizerConfig {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t decay_every = 300000;  // iterations between halvings
  double decay_factor = 0.5;

  void validate() const {
    check_arg(learning_rate > 0.0, "OptimizerConfig: learning_rate must be > 0");
    check_arg(beta1 > 0.0 && beta1 < 1.0, "OptimizerConfig: beta1 must be in (0,1)");
    check_arg(beta2 > 0.0 && beta2 < 1.0, "OptimizerConfig: beta2 must be in (0,1)");
    check_arg(epsilon > 0.0, "OptimizerConfig: epsilon must be > 0");
    check_arg(decay_every > 0, "OptimizerConfig: decay_every must be > 0");
  }

  double effective_rate(std::int64_t step) const {
    return learning_rate * std::pow(decay_factor, static_cast<double>(step / decay_every));
  }
};

// Bias-corrected adaptive-moment update, applied in place. Clears the
// gradient and advances step_count by exactly one.
inline void adam_step(Parameter& p, const OptimizerConfig& cfg) {
  cfg.validate();
  check_arg(p.tensor.grad.has_value(),
            "adam_step: parameter '" + p.name + "' has no gradient");
  check_arg(p.tensor.grad->size() == p.tensor.size(),
            "adam_step: gradient shape mismatch for '" + p.name + "'");
  if (p.m1.size() != p.tensor.size()) p.m1.assign(p.tensor.size(), 0.0);
  if (p.m2.size() != p.tensor.size()) p.m2.assign(p.tensor.size(), 0.0);

  const double lr = cfg.effective_rate(p.step_count);
  const std::int64_t t = p.step_count + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const std::vector<double>& g = *p.tensor.grad;
  for (std::size_t i = 0; i < g.size(); ++i) {
    p.m1[i] = cfg.beta1 * p.m1[i] + (1.0 - cfg.beta1) * g[i];
    p.m2[i] = cfg.beta2 * p.m2[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = p.m1[i] / bc1;
    const double vhat = p.m2[i] / bc2;
    p.tensor.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
  p.tensor.grad.reset();
  ++p.step_count;
}

// Glorot/Xavier uniform init: +-sqrt(6/(fan_in+fan_out)).
inline Tensor glorot_uniform(int rows, int cols, std::mt19937_64& rng) {
  Tensor t(rows, cols);
  const double bound = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data) v = dist(rng);
  return t;
}

inline Tensor uniform_tensor(int rows, int cols, double lo, double hi, std::mt19937_64& rng) {
  Tensor t(rows, cols);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data) v = dist(rng);
  return t;
}

}  // namespace mpnet
