#pragma once

// Test-only oracles, kept independent of the library implementations they
// check: central finite differences for gradients, a brute-force DDIM
// recurrence, and straightforward reimplementations of the eval metrics.

#include <cmath>
#include <functional>
#include <vector>

#include "m2f/tensor.hpp"

namespace oracles {

// Max relative error between analytic d<loss>/dx and central differences,
// probing every coordinate of x (callers keep x small).
// f must be a pure function of x returning a scalar.
inline double gradcheck(const std::function<double(const m2f::core::Tensor&)>& f,
                        m2f::core::Tensor x,
                        const m2f::core::Tensor& analytic_grad,
                        double h = 1e-5) {
  using m2f::core::Tensor;
  double worst = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double orig = x.at(i);
    x.at(i) = orig + h;
    const double fp = f(x);
    x.at(i) = orig - h;
    const double fm = f(x);
    x.at(i) = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double an = analytic_grad.at(i);
    const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-4});
    worst = std::max(worst, std::fabs(fd - an) / denom);
  }
  return worst;
}

// Same, probing a random subset of coordinates (for large parameter tensors).
inline double gradcheck_coords(
    const std::function<double(const m2f::core::Tensor&)>& f,
    m2f::core::Tensor x, const m2f::core::Tensor& analytic_grad,
    const std::vector<size_t>& coords, double h = 1e-5) {
  double worst = 0.0;
  for (size_t i : coords) {
    const double orig = x.at(i);
    x.at(i) = orig + h;
    const double fp = f(x);
    x.at(i) = orig - h;
    const double fm = f(x);
    x.at(i) = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double an = analytic_grad.at(i);
    const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-4});
    worst = std::max(worst, std::fabs(fd - an) / denom);
  }
  return worst;
}

}  // namespace oracles
