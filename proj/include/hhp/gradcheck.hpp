#pragma once

#include <functional>
#include <vector>

#include "hhp/tape.hpp"

namespace hhp::ad {

struct GradCheckResult {
  double max_rel_err = 0.0;
  bool valid = false;  // false when eps is outside (1e-8, 1e-2)
  size_t worst_param = 0;
  size_t worst_coord = 0;
  double worst_ad = 0.0;
  double worst_fd = 0.0;
};

// Compares reverse-mode gradients of builder(tape, leaves) against central
// finite differences, coordinate by coordinate. The builder must bind the
// given arrays as leaves in order and return a scalar root. Error metric per
// coordinate: |ad - fd| / max(1e-8, |ad| + |fd|).
inline GradCheckResult check_gradient(
    const std::function<Var(Tape&, const std::vector<Var>&)>& builder,
    std::vector<Array> params, double eps) {
  GradCheckResult res;
  if (!(eps > 1e-8 && eps < 1e-2)) {
    res.valid = false;
    return res;
  }
  res.valid = true;

  const auto eval = [&](const std::vector<Array>& p) -> double {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(p.size());
    for (const Array& a : p) leaves.push_back(tape.leaf(a));
    return builder(tape, leaves).value()[0];
  };

  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Array& a : params) leaves.push_back(tape.leaf(a));
  Var root = builder(tape, leaves);
  GradientMap grads = tape.backward(root);

  for (size_t pi = 0; pi < params.size(); ++pi) {
    for (size_t ci = 0; ci < params[pi].size(); ++ci) {
      const double orig = params[pi][ci];
      params[pi][ci] = orig + eps;
      const double fp = eval(params);
      params[pi][ci] = orig - eps;
      const double fm = eval(params);
      params[pi][ci] = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      const double ad = grads.leaf_grads[pi].empty() ? 0.0 : grads.leaf_grads[pi][ci];
      const double rel = std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = pi;
        res.worst_coord = ci;
        res.worst_ad = ad;
        res.worst_fd = fd;
      }
    }
  }
  return res;
}

}  // namespace hhp::ad
