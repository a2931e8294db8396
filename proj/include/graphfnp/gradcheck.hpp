#pragma once

#include <cmath>
#include <functional>
#include <utility>

#include "graphfnp/errors.hpp"
#include "graphfnp/nn.hpp"

namespace graphfnp {

// Central finite-difference verification of analytic gradients.
//
// `loss_fn` evaluates the loss at the current parameter values (all sampling
// noise must be frozen so repeated calls agree), `grad_fn` returns the
// analytic gradients at the same point. Every entry of every listed group is
// perturbed by +/- eps (scaled by the entry magnitude) and the relative error
//
//   |analytic - fd| / max(|analytic|, |fd|, floor)
//
// is maximized over coordinates. The floor keeps finite-difference roundoff
// on near-zero coordinates from dominating the report.
template <typename S>
struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_entry;
  int worst_row = 0, worst_col = 0;
};

template <typename S, typename LossFn, typename GradFn>
GradCheckResult<S> gradient_check(LossFn&& loss_fn, GradFn&& grad_fn,
                                  ParameterSet<S>& params,
                                  std::initializer_list<Group> groups, S epsilon,
                                  S floor = S(1e-2)) {
  const S l0 = loss_fn();
  const S l1 = loss_fn();
  if (l0 != l1)
    throw ContractError("gradient_check: loss is not deterministic under frozen noise");

  const GradBuffer<S> analytic = grad_fn();

  GradCheckResult<S> result;
  for (Group g : groups) {
    auto& entries = params.group(g);
    for (int e = 0; e < static_cast<int>(entries.size()); ++e) {
      auto& value = entries[e].value;
      const auto* ga = analytic.find(g, e);
      for (Eigen::Index r = 0; r < value.rows(); ++r) {
        for (Eigen::Index c = 0; c < value.cols(); ++c) {
          const S saved = value(r, c);
          const S h = epsilon * std::max(S(1), std::abs(saved));
          value(r, c) = saved + h;
          const S lp = loss_fn();
          value(r, c) = saved - h;
          const S lm = loss_fn();
          value(r, c) = saved;
          const S fd = (lp - lm) / (2 * h);
          const S an = ga ? (*ga)(r, c) : S(0);
          const double rel = std::abs(static_cast<double>(an - fd)) /
                             std::max({std::abs(static_cast<double>(an)),
                                       std::abs(static_cast<double>(fd)),
                                       static_cast<double>(floor)});
          if (rel > result.max_relative_error) {
            result.max_relative_error = rel;
            result.worst_entry = std::string(group_name(g)) + "/" + entries[e].name;
            result.worst_row = static_cast<int>(r);
            result.worst_col = static_cast<int>(c);
          }
        }
      }
    }
  }
  return result;
}

}  // namespace graphfnp
