#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mpnet/tensor.hpp"

namespace mpnet {

// Central finite differences against analytic gradients. The closure must
// rebuild the forward pass from the parameters' current values and return
// the scalar loss; the checker perturbs one coordinate at a time.
struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::string worst_param;
  int worst_row = -1;
  int worst_col = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::int64_t coords_checked = 0;
  bool passed(double tol) const { return max_rel_err < tol; }
};

struct GradCheckOptions {
  double step = 1e-5;
  // <= 0 checks every coordinate; otherwise a random subset per parameter.
  int max_coords_per_param = 0;
  std::uint64_t sample_seed = 0x9e3779b97f4a7c15ull;
};

// rel = |a - n| / max(1, |a|, |n|): absolute near zero, relative when large.
inline double gradcheck_rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

inline GradCheckReport finite_diff_check(
    std::vector<Parameter*> params,
    const std::function<double(bool accumulate_grads)>& loss_fn,
    const GradCheckOptions& opts = {}) {
  check_arg(opts.step > 0.0, "finite_diff_check: step must be positive");
  GradCheckReport report;

  for (Parameter* p : params) p->zero_grad();
  loss_fn(/*accumulate_grads=*/true);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) {
    check_arg(p->tensor.grad.has_value(),
              "finite_diff_check: no gradient on " + p->name);
    analytic.push_back(*p->tensor.grad);
    p->zero_grad();
  }

  std::mt19937_64 rng(opts.sample_seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    const std::size_t n = p.tensor.size();
    std::vector<std::size_t> coords;
    if (opts.max_coords_per_param > 0 &&
        n > static_cast<std::size_t>(opts.max_coords_per_param)) {
      std::vector<std::size_t> all(n);
      for (std::size_t i = 0; i < n; ++i) all[i] = i;
      std::shuffle(all.begin(), all.end(), rng);
      coords.assign(all.begin(), all.begin() + opts.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    } else {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    }

    for (std::size_t k : coords) {
      const double saved = p.tensor.data[k];
      p.tensor.data[k] = saved + opts.step;
      const double up = loss_fn(false);
      p.tensor.data[k] = saved - opts.step;
      const double dn = loss_fn(false);
      p.tensor.data[k] = saved;
      const double numeric = (up - dn) / (2.0 * opts.step);
      const double a = analytic[pi][k];
      const double rel = gradcheck_rel_err(a, numeric);
      const double abs = std::abs(a - numeric);
      ++report.coords_checked;
      if (abs > report.max_abs_err) report.max_abs_err = abs;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p.name;
        report.worst_row = static_cast<int>(k) / p.tensor.cols;
        report.worst_col = static_cast<int>(k) % p.tensor.cols;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace mpnet
