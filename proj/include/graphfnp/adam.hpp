#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "graphfnp/errors.hpp"
#include "graphfnp/nn.hpp"

namespace graphfnp {

// Adam with bias-corrected moments. One state covers the whole ParameterSet;
// each step names the groups it updates so alternating phases can share the
// accumulators of the groups they own.
template <typename S>
class AdamOptimizer {
 public:
  using M = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

  explicit AdamOptimizer(S learning_rate, S beta1 = S(0.9), S beta2 = S(0.999),
                         S epsilon = S(1e-8))
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
    if (!(learning_rate > S(0))) throw ArgumentError("adam: learning_rate must be > 0");
  }

  S learning_rate() const { return lr_; }
  void set_learning_rate(S lr) {
    if (!(lr > S(0))) throw ArgumentError("adam: learning_rate must be > 0");
    lr_ = lr;
  }
  long step_count() const { return step_; }

  // Applies one update to the entries of `groups` for which `grads` holds a
  // buffer. Entries without gradients are left untouched.
  void step(ParameterSet<S>& params, const GradBuffer<S>& grads,
            std::initializer_list<Group> groups) {
    ++step_;
    const S bc1 = S(1) - std::pow(beta1_, static_cast<S>(step_));
    const S bc2 = S(1) - std::pow(beta2_, static_cast<S>(step_));
    for (Group g : groups) {
      auto& entries = params.group(g);
      for (int i = 0; i < static_cast<int>(entries.size()); ++i) {
        const M* grad = grads.find(g, i);
        if (grad == nullptr) continue;
        if (!grad->allFinite())
          throw NumericError(std::string("non-finite gradient for ") + group_name(g) + "/" +
                             entries[i].name);
        M& m1 = moment1_.slot(g, i, grad->rows(), grad->cols());
        M& m2 = moment2_.slot(g, i, grad->rows(), grad->cols());
        m1 = beta1_ * m1 + (S(1) - beta1_) * (*grad);
        m2 = beta2_ * m2 + (S(1) - beta2_) * grad->cwiseProduct(*grad);
        entries[i].value.array() -=
            lr_ * (m1.array() / bc1) / ((m2.array() / bc2).sqrt() + eps_);
      }
    }
  }

 private:
  S lr_, beta1_, beta2_, eps_;
  long step_ = 0;
  GradBuffer<S> moment1_, moment2_;
};

}  // namespace graphfnp
