#pragma once

#include <cmath>
#include <vector>

#include "hhp/params.hpp"

namespace hhp {

// Adam with bias correction. A zero gradient leaves parameters untouched.
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& params, const std::vector<ad::Array>& grads) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(params[i].value.size(), 0.0);
        v_[i].assign(params[i].value.size(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params.size(); ++i) {
      if (i >= grads.size() || grads[i].empty()) continue;
      ad::Array& value = params[i].value;
      for (size_t j = 0; j < value.size(); ++j) {
        const double g = grads[i][j];
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        value[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void reset() {
    m_.clear();
    v_.clear();
    t_ = 0;
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<ad::Array> m_, v_;
};

// Global-norm gradient clipping; rescaling preserves direction. Returns the
// applied scale (1 when no clipping happened).
inline double clip_gradients(std::vector<ad::Array>& grads, double max_norm) {
  double sq = 0.0;
  for (const ad::Array& g : grads) {
    for (double x : g) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return 1.0;
  const double scale = max_norm / norm;
  for (ad::Array& g : grads) {
    for (double& x : g) x *= scale;
  }
  return scale;
}

}  // namespace hhp
