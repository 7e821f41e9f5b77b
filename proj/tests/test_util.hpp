#pragma once

// Shared statistical helpers for the test suites: summary moments and a
// one-sample Kolmogorov-Smirnov test against Uniform(0,1).

#include <algorithm>
#include <cmath>
#include <vector>

namespace testutil {

struct Moments {
  size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;
};

inline Moments moments(const std::vector<double>& xs) {
  Moments m;
  m.n = xs.size();
  if (xs.empty()) return m;
  double acc = 0.0;
  for (double x : xs) acc += x;
  m.mean = acc / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - m.mean) * (x - m.mean);
  m.variance = xs.size() > 1 ? sq / static_cast<double>(xs.size() - 1) : 0.0;
  return m;
}

// KS statistic against Uniform(0,1).
inline double ks_statistic_uniform(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double d = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    d = std::max(d, (static_cast<double>(i) + 1.0) / n - u[i]);
    d = std::max(d, u[i] - static_cast<double>(i) / n);
  }
  return d;
}

// Asymptotic KS p-value with Stephens' small-sample correction.
inline double ks_pvalue(double d, size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double x = d * (sn + 0.12 + 0.11 / sn);
  double p = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = 2.0 * std::pow(-1.0, j - 1) * std::exp(-2.0 * j * j * x * x);
    p += term;
    if (std::abs(term) < 1e-12) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

inline double ks_uniform_pvalue(const std::vector<double>& u) {
  return ks_pvalue(ks_statistic_uniform(u), u.size());
}

}  // namespace testutil
