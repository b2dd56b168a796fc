#pragma once

#include <cmath>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tsbn/errors.hpp"
#include "tsbn/graph.hpp"
#include "tsbn/tensor.hpp"

namespace tsbn {

// Adam with L2-style weight decay folded into the gradient. Each
// optimizer owns a fixed set of parameters; step() silently ignores
// gradients for parameters it does not own, which is what enforces the
// alternating parameter partition.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Param*> params, double lr, double weight_decay,
       double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
    states_.reserve(params.size());
    for (Param* p : params) {
      index_[p] = states_.size();
      State s;
      s.param = p;
      s.m = Tensor(p->value.shape);
      s.v = Tensor(p->value.shape);
      states_.push_back(std::move(s));
    }
  }

  void step(const std::vector<std::pair<Param*, const Tensor*>>& grads) {
    for (const auto& [param, grad] : grads) {
      auto it = index_.find(param);
      if (it == index_.end()) continue;  // not owned by this optimizer
      State& s = states_[it->second];
      if (!grad->same_shape(param->value))
        throw InvalidInput("adam: gradient shape mismatch for " + param->name);
      s.t += 1;
      const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
      const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
      double* pv = param->value.ptr();
      double* m = s.m.ptr();
      double* v = s.v.ptr();
      const double* gr = grad->ptr();
      const long n = param->value.numel();
      for (long i = 0; i < n; ++i) {
        double g = gr[i] + wd_ * pv[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        pv[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
      }
    }
  }

  double learning_rate() const { return lr_; }

 private:
  struct State {
    Param* param = nullptr;
    Tensor m, v;
    long t = 0;
  };
  double lr_ = 1e-4, wd_ = 0.0, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::vector<State> states_;
  std::unordered_map<const Param*, std::size_t> index_;
};

}  // namespace tsbn
