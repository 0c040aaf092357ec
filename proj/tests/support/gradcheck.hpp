#pragma once

// Doctest-backed finite-difference gradient checker for the unit suites.

#include <doctest.h>

#include <cmath>
#include <vector>

#include "sciflow/tensor.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

struct GradCheck {
  double eps = 1e-3;
  double rtol = 1e-3;
  double atol = 1e-5;  // absorbs the O(eps^2) truncation of central differences
};

// `fn` must rebuild the graph from the given leaves and return the scalar
// loss. Verifies d loss / d leaf element against central differences.
template <typename Fn>
void expect_gradients_match(Fn&& fn, std::vector<sciflow::Tensor<double>*> leaves,
                            GradCheck opt = {}) {
  for (auto* t : leaves) t->zero_grad();
  sciflow::Tensor<double> loss = fn();
  sciflow::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto* t : leaves) {
    REQUIRE(t->has_grad());
    analytic.emplace_back(t->grad().begin(), t->grad().end());
    for (double g : analytic.back()) REQUIRE(std::isfinite(g));
  }
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto data = leaves[li]->mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + opt.eps;
      const double up = fn().item();
      data[i] = orig - opt.eps;
      const double dn = fn().item();
      data[i] = orig;
      const double fd = (up - dn) / (2.0 * opt.eps);
      const double a = analytic[li][i];
      const double tol = opt.atol + opt.rtol * std::max(std::abs(a), std::abs(fd));
      CHECK_MESSAGE(std::abs(a - fd) <= tol,
                    "leaf ", li, " element ", i, ": analytic ", a,
                    " vs finite-difference ", fd);
    }
  }
  for (auto* t : leaves) t->zero_grad();
}

}  // namespace oracle
