#pragma once

#include <cmath>
#include <vector>

#include "gupdm/errors.hpp"
#include "gupdm/tensor.hpp"

namespace gupdm {

// One Adam update on a flat parameter array. Exposed separately so it can be
// checked against the textbook formula.
inline void adam_update(double* param, const double* grad, double* m, double* v,
                        std::int64_t n, long long t, double lr, double beta1 = 0.9,
                        double beta2 = 0.999, double eps = 1e-8) {
  if (lr <= 0.0) throw ConfigError("adam: learning rate must be positive");
  if (t < 1) throw ConfigError("adam: step count must be >= 1");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::int64_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

// Adam over a fixed list of parameter tensors. Gradients accumulate on the
// tensors themselves; the caller zeroes them between steps.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor> params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr_ <= 0.0) throw ConfigError("adam: learning rate must be positive");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
      v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    }
  }

  void step() {
    ++t_;
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      adam_update(p.data(), p.grad(), m_[i].data(), v_[i].data(), p.numel(), t_, lr_,
                  beta1_, beta2_, eps_);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  long long step_count() const { return t_; }
  void set_step_count(long long t) { t_ = t; }

  const std::vector<Tensor>& params() const { return params_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }

  struct Snapshot {
    std::vector<std::vector<double>> m, v;
    long long t;
  };
  Snapshot snapshot() const { return {m_, v_, t_}; }
  void restore(const Snapshot& s) {
    m_ = s.m;
    v_ = s.v;
    t_ = s.t;
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  long long t_ = 0;
  double lr_, beta1_, beta2_, eps_;
};

}  // namespace gupdm
