#pragma once

#include <cmath>
#include <functional>

#include "g2/tensor.hpp"

// Finite-difference gradient checking shared by the unit and acceptance
// suites. `build` must construct a fresh graph from the current parameter
// values and return a scalar loss.
//
// Richardson-extrapolated central differences kill the O(h^2) truncation
// term; what remains is float32 forward noise (~eps*L/h per entry). The
// headline metric is therefore the vector-norm relative error, where that
// noise averages out; a per-entry check with a gradient-scaled floor
// guards against localized errors (wrong stride, swapped index).

namespace g2::testing {

struct GradCheckResult {
  double rel_err = 0.0;        // ||fd - analytic|| / ||analytic||
  double max_entry_err = 0.0;  // per-entry, floored at 1e-2 * max|g|
  int checked = 0;

  // entry guard is a coarse tripwire for localized bugs (a wrong stride or
  // swapped index shows up near 1.0); float32 FD noise sits well below it
  bool ok(double tol = 1e-3) const {
    return rel_err < tol && max_entry_err < 5e-2;
  }
};

inline GradCheckResult grad_check(
    const std::vector<nn::Ten>& params,
    const std::function<nn::Ten()>& build, double h = 2e-2) {
  auto loss = build();
  nn::backward(loss);

  double gmax = 0.0;
  for (const auto& p : params) {
    p->ensure_grad();
    for (float g : p->grad) gmax = std::max(gmax, std::fabs(double(g)));
  }
  const double floor = std::max(1e-8, 1e-2 * gmax);

  auto eval_at = [&](const nn::Ten& p, size_t i, double x) {
    const float saved = p->val[i];
    p->val[i] = float(x);
    double l = nn::item(build());
    p->val[i] = saved;
    return l;
  };

  GradCheckResult r;
  double diff_sq = 0.0, an_sq = 0.0;
  for (const auto& p : params) {
    for (size_t i = 0; i < p->val.size(); ++i) {
      const double w = p->val[i];
      const double step = h * std::max(1.0, std::fabs(w));
      auto central = [&](double hh) {
        return (eval_at(p, i, w + hh) - eval_at(p, i, w - hh)) / (2.0 * hh);
      };
      const double d1 = central(step);
      const double d2 = central(step / 2.0);
      const double fd = (4.0 * d2 - d1) / 3.0;
      const double an = p->grad[i];
      diff_sq += (fd - an) * (fd - an);
      an_sq += an * an;
      const double denom = std::max({std::fabs(fd), std::fabs(an), floor});
      r.max_entry_err = std::max(r.max_entry_err, std::fabs(fd - an) / denom);
      ++r.checked;
    }
  }
  r.rel_err = std::sqrt(diff_sq) / std::max(std::sqrt(an_sq), 1e-12);
  for (const auto& p : params)
    if (!p->grad.empty()) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
  return r;
}

/// FD-check only the first `count` entries of one parameter (for big nets
/// where a full sweep is unaffordable).
inline GradCheckResult grad_check_slice(const nn::Ten& param, size_t count,
                                        const std::function<nn::Ten()>& build,
                                        double h = 2e-2) {
  auto loss = build();
  nn::backward(loss);
  param->ensure_grad();
  count = std::min(count, param->val.size());

  double gmax = 0.0;
  for (size_t i = 0; i < count; ++i)
    gmax = std::max(gmax, std::fabs(double(param->grad[i])));
  const double floor = std::max(1e-8, 1e-2 * gmax);

  GradCheckResult r;
  double diff_sq = 0.0, an_sq = 0.0;
  for (size_t i = 0; i < count; ++i) {
    const double w = param->val[i];
    const double step = h * std::max(1.0, std::fabs(w));
    auto eval_at = [&](double x) {
      const float saved = param->val[i];
      param->val[i] = float(x);
      double l = nn::item(build());
      param->val[i] = saved;
      return l;
    };
    auto central = [&](double hh) {
      return (eval_at(w + hh) - eval_at(w - hh)) / (2.0 * hh);
    };
    const double fd = (4.0 * central(step / 2.0) - central(step)) / 3.0;
    const double an = param->grad[i];
    diff_sq += (fd - an) * (fd - an);
    an_sq += an * an;
    const double denom = std::max({std::fabs(fd), std::fabs(an), floor});
    r.max_entry_err = std::max(r.max_entry_err, std::fabs(fd - an) / denom);
    ++r.checked;
  }
  r.rel_err = std::sqrt(diff_sq) / std::max(std::sqrt(an_sq), 1e-12);
  std::fill(param->grad.begin(), param->grad.end(), 0.0f);
  return r;
}

}  // namespace g2::testing
