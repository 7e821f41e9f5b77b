#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "hhp/core.hpp"
#include "hhp/model.hpp"
#include "hhp/optim.hpp"
#include "hhp/tape.hpp"

namespace hhp {

// Classical linear Hawkes process with exponential kernels and per-output
// (diagonal) decay: lambda^k_t = mu_k + sum_i alpha[k][k_i] e^{-beta_k (t - t_i)}.
// All parameters strictly positive.
struct LhpParams {
  int num_marks = 1;
  ad::Array mu;     // K
  ad::Array beta;   // K
  ad::Array alpha;  // K x K row-major; alpha[k*K + m] = jump of lambda^k at a mark-m event
};

inline void validate(const LhpParams& p) {
  if (p.num_marks <= 0) throw std::invalid_argument("lhp: num_marks must be positive");
  const size_t K = static_cast<size_t>(p.num_marks);
  if (p.mu.size() != K || p.beta.size() != K || p.alpha.size() != K * K) {
    throw std::invalid_argument("lhp: parameter shapes inconsistent");
  }
  for (double v : p.mu) {
    if (!(v > 0.0)) throw std::invalid_argument("lhp: mu must be > 0");
  }
  for (double v : p.beta) {
    if (!(v > 0.0)) throw std::invalid_argument("lhp: beta must be > 0");
  }
  // alpha = 0 is allowed (plain Poisson); strict positivity is enforced by
  // the log-parameterization when fitting.
  for (double v : p.alpha) {
    if (v < 0.0) throw std::invalid_argument("lhp: alpha must be >= 0");
  }
}

// Direct O(N) sum over the history; the oracle form.
inline ad::Array lhp_intensity(const LhpParams& p, std::span<const Event> history, double t) {
  const int K = p.num_marks;
  ad::Array lam = p.mu;
  for (const Event& e : history) {
    if (e.t >= t) break;
    for (int k = 0; k < K; ++k) {
      lam[k] += p.alpha[static_cast<size_t>(k) * K + e.mark] * std::exp(-p.beta[k] * (t - e.t));
    }
  }
  return lam;
}

// Markovian carried state: s_k(t) = sum_i alpha[k][k_i] e^{-beta_k (t - t_i)}.
class LhpState {
 public:
  explicit LhpState(const LhpParams& p) : p_(&p), s_(p.num_marks, 0.0), t_(0.0) {}

  double time() const { return t_; }
  const ad::Array& excitation() const { return s_; }

  void advance(double t) {
    if (t < t_) throw std::invalid_argument("LhpState: time must not decrease");
    for (int k = 0; k < p_->num_marks; ++k) s_[k] *= std::exp(-p_->beta[k] * (t - t_));
    t_ = t;
  }

  void add_event(int mark) {
    const int K = p_->num_marks;
    for (int k = 0; k < K; ++k) s_[k] += p_->alpha[static_cast<size_t>(k) * K + mark];
  }

  ad::Array intensity() const {
    ad::Array lam = p_->mu;
    for (int k = 0; k < p_->num_marks; ++k) lam[k] += s_[k];
    return lam;
  }

  double total_intensity() const {
    double tot = 0.0;
    for (double v : intensity()) tot += v;
    return tot;
  }

  // Exact integral of the total intensity from the current time to t.
  double compensator_to(double t) const {
    double acc = 0.0;
    const double dt = t - t_;
    for (int k = 0; k < p_->num_marks; ++k) {
      acc += p_->mu[k] * dt + s_[k] / p_->beta[k] * (1.0 - std::exp(-p_->beta[k] * dt));
    }
    return acc;
  }

 private:
  const LhpParams* p_;
  ad::Array s_;
  double t_;
};

// Exact per-event log-likelihood: event terms at left limits plus the closed
// form compensator (zero-event sequences contribute -compensator, weight 1).
inline double lhp_log_likelihood(const LhpParams& p, const Sequence& seq) {
  const int K = p.num_marks;
  LhpState state(p);
  double sum_log = 0.0;
  for (const Event& e : seq.events) {
    state.advance(e.t);
    const ad::Array lam = state.intensity();
    sum_log += std::log(lam[e.mark]);
    state.add_event(e.mark);
  }
  double comp = 0.0;
  for (int k = 0; k < K; ++k) comp += p.mu[k] * seq.t_end;
  for (const Event& e : seq.events) {
    for (int k = 0; k < K; ++k) {
      comp += p.alpha[static_cast<size_t>(k) * K + e.mark] / p.beta[k] *
              (1.0 - std::exp(-p.beta[k] * (seq.t_end - e.t)));
    }
  }
  const double n = seq.events.empty() ? 1.0 : static_cast<double>(seq.events.size());
  return (sum_log - comp) / n;
}

// Same event terms, Monte-Carlo compensator (uniform samples per interval).
// Mirrors the HHP estimator; var_out receives the estimator's variance.
inline double lhp_log_likelihood_mc(const LhpParams& p, const Sequence& seq,
                                    int samples_per_interval, Rng& rng,
                                    double* var_out = nullptr) {
  LhpState state(p);
  double sum_log = 0.0;
  double comp = 0.0, comp_var = 0.0;
  double t_prev = 0.0;
  const size_t n = seq.events.size();
  for (size_t i = 0; i <= n; ++i) {
    const double t_next = i < n ? seq.events[i].t : seq.t_end;
    const double len = t_next - t_prev;
    if (len > 0.0 && samples_per_interval > 0) {
      double mean = 0.0, m2 = 0.0;
      for (int s = 0; s < samples_per_interval; ++s) {
        LhpState probe = state;
        probe.advance(t_prev + rng.uniform_open01() * len);
        const double tot = probe.total_intensity();
        const double delta = tot - mean;
        mean += delta / static_cast<double>(s + 1);
        m2 += delta * (tot - mean);
      }
      comp += len * mean;
      if (samples_per_interval > 1) {
        comp_var += len * len * (m2 / (samples_per_interval - 1)) / samples_per_interval;
      }
    }
    if (i < n) {
      state.advance(t_next);
      sum_log += std::log(state.intensity()[seq.events[i].mark]);
      state.add_event(seq.events[i].mark);
      t_prev = t_next;
    }
  }
  const double norm = seq.events.empty() ? 1.0 : static_cast<double>(n);
  if (var_out) *var_out = comp_var / (norm * norm);
  return (sum_log - comp) / norm;
}

// Compensator-PIT values u_i = 1 - exp(-Lambda(t_{i-1}, t_i)), exact.
inline std::vector<double> lhp_pit_values(const LhpParams& p, const Sequence& seq) {
  LhpState state(p);
  std::vector<double> pit;
  pit.reserve(seq.events.size());
  for (const Event& e : seq.events) {
    pit.push_back(1.0 - std::exp(-state.compensator_to(e.t)));
    state.advance(e.t);
    state.add_event(e.mark);
  }
  return pit;
}

// Ogata thinning with the exact bound B = total intensity at the window
// start plus the background sum; between events the intensity only decays,
// so the bound can never be violated.
inline Sequence lhp_simulate(const LhpParams& p, double t_end, Rng& rng) {
  validate(p);
  Sequence seq;
  seq.t_end = t_end;
  LhpState state(p);
  double mu_sum = 0.0;
  for (double v : p.mu) mu_sum += v;
  double t = 0.0;
  for (;;) {
    const double bound = state.total_intensity() + mu_sum;
    t += rng.exponential(bound);
    if (t > t_end) break;
    state.advance(t);
    const ad::Array lam = state.intensity();
    double tot = 0.0;
    for (double v : lam) tot += v;
    if (tot > bound * (1.0 + 1e-12)) {
      throw std::runtime_error("lhp_simulate: intensity exceeded thinning bound");
    }
    if (rng.uniform01() * bound < tot) {
      ad::Array probs(lam);
      for (double& v : probs) v /= tot;
      const int mark = rng.categorical(probs);
      seq.events.push_back({t, mark});
      state.add_event(mark);
    }
  }
  return seq;
}

struct LhpFitOptions {
  double lr = 0.05;
  int max_iters = 400;
  double tol = 1e-7;  // stop when the relative loss improvement falls below
  uint64_t seed = 0;
};

namespace detail {

// Tape version of the exact LHP log-likelihood under log-parameterization;
// returns the total (unnormalized) log-likelihood node for one sequence.
inline ad::Var lhp_loglik_tape(ad::Tape& tape, ad::Var log_mu, ad::Var log_beta,
                               ad::Var log_alpha_cols, const Sequence& seq, int K) {
  ad::Var mu = tape.exp(log_mu);
  ad::Var beta = tape.exp(log_beta);
  ad::Var ones = tape.constant(ad::Array(K, 1.0));
  ad::Var s = tape.constant(ad::Array(K, 0.0));
  ad::Var sum_log = tape.constant(0.0);
  ad::Var comp = tape.scale(tape.sum(mu), seq.t_end);
  double t_prev = 0.0;
  for (const Event& e : seq.events) {
    const double dt = e.t - t_prev;
    s = tape.mul(s, tape.exp(tape.scale(beta, -dt)));
    ad::Var lam = tape.add(mu, s);
    sum_log = tape.add(sum_log, tape.log(tape.slice(lam, e.mark, 1)));
    ad::Var col = tape.slice(log_alpha_cols, e.mark * K, K);
    s = tape.add(s, tape.exp(col));
    // Closed-form compensator contribution of this event up to t_end.
    ad::Var ratio = tape.exp(tape.sub(col, log_beta));
    ad::Var tail = tape.sub(ones, tape.exp(tape.scale(beta, -(seq.t_end - e.t))));
    comp = tape.add(comp, tape.sum(tape.mul(ratio, tail)));
    t_prev = e.t;
  }
  return tape.sub(sum_log, comp);
}

}  // namespace detail

// Maximum-likelihood fit by Adam on log-parameters (positivity by
// construction). Deterministic for a fixed option set.
inline LhpParams fit_lhp(const Dataset& ds, const LhpFitOptions& opts = {}) {
  const int K = ds.num_marks;
  size_t total_events = 0;
  for (const Sequence& s : ds.sequences) total_events += s.events.size();
  if (total_events == 0) throw std::invalid_argument("fit_lhp: no events to fit");

  // Moment-flavored start: mu at half the empirical rate, mild excitation.
  double total_time = 0.0;
  for (const Sequence& s : ds.sequences) total_time += s.t_end;
  const double base = std::max(1e-6, 0.5 * static_cast<double>(total_events) /
                                         (total_time * static_cast<double>(K)));
  ParamStore store;
  const int id_mu = store.add("log_mu", {K}, ad::Array(K, std::log(base)));
  const int id_beta = store.add("log_beta", {K}, ad::Array(K, 0.0));
  const int id_alpha =
      store.add("log_alpha", {K, K}, ad::Array(static_cast<size_t>(K) * K, std::log(0.1)));

  Adam adam(opts.lr);
  const double norm = 1.0 / static_cast<double>(total_events);
  double prev_loss = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    std::vector<std::vector<ad::Array>> partial(ds.sequences.size());
    std::vector<double> lls(ds.sequences.size(), 0.0);
    parallel_for(ds.sequences.size(), [&](size_t i) {
      ad::Tape tape;
      std::vector<ad::Var> leaves = store.bind(tape);
      ad::Var ll =
          detail::lhp_loglik_tape(tape, leaves[id_mu], leaves[id_beta], leaves[id_alpha],
                                  ds.sequences[i], K);
      lls[i] = ll.value()[0];
      ad::GradientMap g = tape.backward(ll);
      partial[i].resize(store.size());
      accumulate(partial[i], g, -norm);
    });
    std::vector<ad::Array> grads(store.size());
    double loss = 0.0;
    for (size_t i = 0; i < ds.sequences.size(); ++i) {
      loss -= lls[i] * norm;
      for (size_t p = 0; p < store.size(); ++p) {
        if (partial[i][p].empty()) continue;
        if (grads[p].empty()) grads[p].assign(partial[i][p].size(), 0.0);
        for (size_t j = 0; j < partial[i][p].size(); ++j) grads[p][j] += partial[i][p][j];
      }
    }
    clip_gradients(grads, 100.0);
    adam.step(store, grads);
    if (std::abs(prev_loss - loss) < opts.tol * std::max(1.0, std::abs(loss))) break;
    prev_loss = loss;
  }

  LhpParams out;
  out.num_marks = K;
  out.mu.resize(K);
  out.beta.resize(K);
  out.alpha.resize(static_cast<size_t>(K) * K);
  for (int k = 0; k < K; ++k) {
    out.mu[k] = std::exp(store[id_mu].value[k]);
    out.beta[k] = std::exp(store[id_beta].value[k]);
  }
  // The tape layout keeps source-mark columns contiguous; transpose back.
  for (int m = 0; m < K; ++m) {
    for (int k = 0; k < K; ++k) {
      out.alpha[static_cast<size_t>(k) * K + m] = std::exp(store[id_alpha].value[static_cast<size_t>(m) * K + k]);
    }
  }
  return out;
}

}  // namespace hhp
