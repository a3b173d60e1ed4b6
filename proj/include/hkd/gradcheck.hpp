#pragma once

// Central-difference gradient oracle. Always runs in double precision.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hkd/tensor.hpp"

namespace hkd {

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Compares reverse-mode gradients of `f` with central differences for every
// element of every tensor in `params`. Values are perturbed in place and
// restored. The relative error per element is
// |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-8).
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> params,
                                  double h = 1e-6, double tol = 1e-4) {
  GradCheckReport report;
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  const Tensor<double> loss = f();
  backward(loss);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::vector<double> analytic = params[k].grad();
    auto values = params[k].value();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard guard;
        values[i] = saved + h;
        plus = f().item();
        values[i] = saved - h;
        minus = f().item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double rel = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-8);
      ++report.checked;
      if (report.checked == 1 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_tensor = k;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

// Single-input form: f maps x to a scalar.
inline GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                  const Tensor<double>& x, double h = 1e-6, double tol = 1e-4) {
  Tensor<double> leaf = x.detach();
  return grad_check([&] { return f(leaf); }, {leaf}, h, tol);
}

inline std::string describe(const GradCheckReport& r) {
  return std::string(r.passed ? "pass" : "FAIL") + " max_rel_err=" + std::to_string(r.max_rel_error) +
         " at tensor " + std::to_string(r.worst_tensor) + "[" + std::to_string(r.worst_index) +
         "] ad=" + std::to_string(r.worst_analytic) + " fd=" + std::to_string(r.worst_numeric) + " (" +
         std::to_string(r.checked) + " elements)";
}

}  // namespace hkd
