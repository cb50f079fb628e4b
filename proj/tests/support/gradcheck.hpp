#pragma once

// Central finite-difference gradient checking shared by the unit tests and
// the acceptance suite.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gupdm/tensor.hpp"

namespace testsupport {

struct GradCheckResult {
  bool ok = true;
  double worst_err = 0.0;
  std::string detail;
};

// Compares reverse-mode gradients of loss_fn against central differences for
// every element of every leaf. loss_fn must be a pure function of the leaves'
// current values.
inline GradCheckResult check_gradients(const std::function<gupdm::Tensor()>& loss_fn,
                                       std::vector<gupdm::Tensor> leaves,
                                       double eps = 1e-5, double tol = 1e-4) {
  using gupdm::Tape;
  using gupdm::Tensor;
  GradCheckResult res;
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& l : leaves) analytic.push_back(l.grad_vec());

  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor& l = leaves[li];
    for (std::int64_t i = 0; i < l.numel(); ++i) {
      const double keep = l.data()[i];
      l.data()[i] = keep + eps;
      const double up = loss_fn().value();
      l.data()[i] = keep - eps;
      const double dn = loss_fn().value();
      l.data()[i] = keep;
      const double numeric = (up - dn) / (2.0 * eps);
      const double a = analytic[li][i];
      const double err =
          std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
      if (err > res.worst_err) res.worst_err = err;
      if (err > tol && res.ok) {
        res.ok = false;
        res.detail = "leaf " + std::to_string(li) + " elem " + std::to_string(i) +
                     ": analytic " + std::to_string(a) + " vs numeric " +
                     std::to_string(numeric);
      }
    }
  }
  return res;
}

}  // namespace testsupport
