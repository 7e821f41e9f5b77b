#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hhp {

inline double softplus(double z) {
  // Overflow-safe: max(z, 0) + log1p(exp(-|z|)).
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

inline double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double inverse_softplus(double y) {
  // Solves softplus(x) = y for y > 0; stable for large y where x ~ y.
  if (y <= 0.0) throw std::domain_error("inverse_softplus: y must be > 0");
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic random stream. Streams are derived from a root seed plus an
// arbitrary list of ids, so independent substreams (per sequence, per epoch,
// ...) never depend on scheduling order.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(mix(seed)) {}
  Rng(uint64_t seed, std::initializer_list<uint64_t> ids) : state_(mix(seed)) {
    for (uint64_t id : ids) state_ = mix(state_ ^ (id + 0x9e3779b97f4a7c15ULL));
  }

  uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in the open interval (0, 1).
  double uniform_open01() {
    double u;
    do {
      u = uniform01();
    } while (u == 0.0);
    return u;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double exponential(double rate) {
    double g;
    do {
      g = -std::log1p(-uniform01()) / rate;
    } while (g <= 0.0);
    return g;
  }

  double normal(double mean, double stddev) {
    if (!have_spare_) {
      const double u1 = 1.0 - uniform01();  // (0, 1]
      const double u2 = uniform01();
      const double m = std::sqrt(-2.0 * std::log(u1));
      spare_ = m * std::sin(2.0 * M_PI * u2);
      have_spare_ = true;
      return mean + stddev * m * std::cos(2.0 * M_PI * u2);
    }
    have_spare_ = false;
    return mean + stddev * spare_;
  }

  // Uniform integer in [0, n).
  uint64_t uniform_index(uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  int categorical(std::span<const double> probs) {
    double u = uniform01();
    double acc = 0.0;
    for (size_t k = 0; k < probs.size(); ++k) {
      acc += probs[k];
      if (u < acc) return static_cast<int>(k);
    }
    return static_cast<int>(probs.size()) - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates with our own index draws, pinned independent of the
    // standard library's std::shuffle implementation.
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

 private:
  static uint64_t mix(uint64_t x) {
    uint64_t s = x;
    return splitmix64(s);
  }

  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Worker count for batch-parallel work; HHP_THREADS caps it.
inline unsigned worker_count() {
  unsigned n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  if (const char* env = std::getenv("HHP_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap > 0 && static_cast<unsigned>(cap) < n) n = static_cast<unsigned>(cap);
  }
  return n;
}

// Runs fn(i) for i in [0, n) on worker threads. Callers that need
// deterministic aggregation write into preallocated slots and reduce in
// index order afterwards.
template <typename Fn>
void parallel_for(size_t n, Fn&& fn) {
  const unsigned workers = std::min<size_t>(worker_count(), n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr error;
  std::mutex error_mu;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace hhp
