#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "hhp/model.hpp"
#include "hhp/train.hpp"

namespace hhp {

// Shares one interval's V* x across many propagation targets.
class IntervalProbe {
 public:
  IntervalProbe(const HhpModel& model, const IntervalDynamics& dyn, std::span<const double> x)
      : model_(&model), dyn_(&dyn), y_(x.begin(), x.end()) {
    apply_unitary_inplace(y_, dyn.cos_a, dyn.sin_a, model.dims().d, model.dims().r,
                          /*adjoint=*/true);
  }

  ad::Array state(double dt) const {
    ad::Array out = y_;
    ad::detail::diag_exp_forward(out, dyn_->decay, dt);
    apply_unitary_inplace(out, dyn_->cos_a, dyn_->sin_a, model_->dims().d, model_->dims().r,
                          /*adjoint=*/false);
    return out;
  }

  ad::Array intensity(double dt) const { return hhp::intensity(*model_, state(dt)); }

  double total_intensity(double dt) const {
    double tot = 0.0;
    for (double v : intensity(dt)) tot += v;
    return tot;
  }

 private:
  const HhpModel* model_;
  const IntervalDynamics* dyn_;
  ad::Array y_;
};

struct TimePrediction {
  double dt = 0.0;
  bool truncated = false;
};

namespace detail {

inline constexpr double kSurvivalTarget = 1e-4;  // stop once S(s_max) < this
inline constexpr double kHorizonCap = 1e6;

// Trapezoid accumulation of the total intensity over a geometric grid on
// (0, s_max]; returns the compensator at s_max.
inline double compensator_on_grid(const IntervalProbe& probe, double lambda0, double s_max,
                                  int n) {
  const double s_min = s_max * 1e-6;
  const double ratio = std::pow(s_max / s_min, 1.0 / static_cast<double>(n - 1));
  double lambda_prev = lambda0;
  double s_prev = 0.0;
  double acc = 0.0;
  double s = s_min;
  for (int j = 0; j < n; ++j) {
    const double lam = probe.total_intensity(s);
    acc += 0.5 * (lambda_prev + lam) * (s - s_prev);
    lambda_prev = lam;
    s_prev = s;
    s *= ratio;
  }
  return acc;
}

}  // namespace detail

// Expected time to the next event after event_index events, via the survival
// function: E[dt] = integral of s * lambda(s) * S(s) ds on a geometric grid,
// with S from trapezoid-accumulated total intensity. The horizon grows by
// doubling until S < 1e-4 (capped at 1e6 time units, which sets `truncated`).
inline TimePrediction predict_next_time(const HhpModel& model, const SequenceTrace& trace,
                                        const Sequence& seq, size_t event_index,
                                        int grid_points = 512) {
  const double t_i = event_index == 0 ? 0.0 : seq.events[event_index - 1].t;
  (void)t_i;
  IntervalProbe probe(model, trace.dyn[event_index], trace.right_state[event_index]);
  const double lambda0 = probe.total_intensity(0.0);
  const double log_target = -std::log(detail::kSurvivalTarget);

  double s_max = std::min(detail::kHorizonCap, std::max(1e-6, log_target / std::max(lambda0, 1e-12)));
  bool truncated = false;
  for (;;) {
    const double comp = detail::compensator_on_grid(probe, lambda0, s_max, 128);
    if (comp >= log_target) break;
    if (s_max >= detail::kHorizonCap) {
      truncated = true;
      break;
    }
    s_max = std::min(detail::kHorizonCap, 2.0 * s_max);
  }
  if (truncated) return {s_max, true};

  // Final pass on the fine grid: survival and expectation together.
  const int n = grid_points;
  const double s_min = s_max * 1e-6;
  const double ratio = std::pow(s_max / s_min, 1.0 / static_cast<double>(n - 1));
  double comp = 0.0;
  double s_prev = 0.0;
  double lambda_prev = lambda0;
  double f_prev = 0.0;  // s * lambda(s) * S(s) at s_prev
  double expectation = 0.0;
  double survival = 1.0;
  double lam = lambda0;
  double s = s_min;
  for (int j = 0; j < n; ++j) {
    lam = probe.total_intensity(s);
    comp += 0.5 * (lambda_prev + lam) * (s - s_prev);
    survival = std::exp(-comp);
    const double f = s * lam * survival;
    expectation += 0.5 * (f_prev + f) * (s - s_prev);
    s_prev = s;
    lambda_prev = lam;
    f_prev = f;
    s *= ratio;
  }
  // Tail beyond s_max, treating the intensity as constant there.
  expectation += survival * (s_prev + 1.0 / std::max(lam, 1e-12));
  return {expectation, false};
}

// Intensity argmax at the true next-event time (teacher forcing); ties break
// toward the lowest mark index.
inline int predict_next_mark(const HhpModel& model, const SequenceTrace& trace,
                             const Sequence& seq, size_t event_index, double t_next) {
  const double t_i = event_index == 0 ? 0.0 : seq.events[event_index - 1].t;
  if (!(t_next > t_i)) throw std::invalid_argument("predict_next_mark: t_next must follow t_i");
  IntervalProbe probe(model, trace.dyn[event_index], trace.right_state[event_index]);
  const ad::Array lam = probe.intensity(t_next - t_i);
  int best = 0;
  for (int k = 1; k < model.dims().num_marks; ++k) {
    if (lam[k] > lam[best]) best = k;
  }
  return best;
}

inline ad::Array mark_probabilities(const HhpModel& model, const SequenceTrace& trace,
                                    const Sequence& seq, size_t event_index, double t_next) {
  const double t_i = event_index == 0 ? 0.0 : seq.events[event_index - 1].t;
  IntervalProbe probe(model, trace.dyn[event_index], trace.right_state[event_index]);
  ad::Array lam = probe.intensity(t_next - t_i);
  double tot = 0.0;
  for (double v : lam) tot += v;
  for (double& v : lam) v /= tot;
  return lam;
}

struct SimOptions {
  double margin = 0.2;       // bound head-room over the grid maximum
  int bound_grid = 64;       // intensity probes per lookahead window
  double window_target = 10; // expected candidates per window; window = target / B
  size_t max_events = 1u << 20;
};

// Ogata thinning for the HHP. The bound is (1 + margin) times the maximum of
// the total intensity sampled on a grid over the current lookahead window;
// the window length is re-derived as target/B after every accepted or
// rejected pass. A candidate whose intensity exceeds the bound aborts: the
// sampler never silently accepts.
inline Sequence simulate(const HhpModel& model, double t_end, Rng& rng,
                         const SimOptions& opts = {}) {
  Sequence seq;
  seq.t_end = t_end;
  const int d = model.dims().d;

  std::vector<ad::Array> gru_state;
  if (model.has_gru()) gru_state = gru_init_state_eager(model.params(), model.hyper());
  ad::Array x(2 * d, 0.0);
  IntervalDynamics dyn = emit_dynamics(model, model.has_gru() ? &gru_state : nullptr);
  IntervalProbe probe(model, dyn, x);

  double t_last = 0.0;
  double t = 0.0;
  double window = t_end;
  {
    const double lam0 = probe.total_intensity(0.0);
    window = std::min(t_end, opts.window_target / std::max(lam0 * (1.0 + opts.margin), 1e-12));
  }
  while (t < t_end) {
    const double t_w = std::min(t + window, t_end);
    double peak = 0.0;
    for (int j = 0; j < opts.bound_grid; ++j) {
      const double tj =
          t + (t_w - t) * static_cast<double>(j) / static_cast<double>(opts.bound_grid - 1);
      peak = std::max(peak, probe.total_intensity(tj - t_last));
    }
    const double bound = (1.0 + opts.margin) * std::max(peak, 1e-12);
    const double gap = rng.exponential(bound);
    window = opts.window_target / bound;
    if (t + gap > t_w) {
      t = t_w;
      continue;
    }
    t += gap;
    const ad::Array lam = probe.intensity(t - t_last);
    double tot = 0.0;
    for (double v : lam) tot += v;
    if (tot > bound) {
      throw std::runtime_error("simulate: intensity " + std::to_string(tot) +
                               " exceeded thinning bound " + std::to_string(bound) + " at t=" +
                               std::to_string(t));
    }
    if (rng.uniform01() * bound < tot) {
      ad::Array probs = lam;
      for (double& v : probs) v /= tot;
      const int mark = rng.categorical(probs);
      seq.events.push_back({t, mark});
      if (seq.events.size() > opts.max_events) {
        throw std::runtime_error("simulate: event budget exceeded (explosive intensity?)");
      }
      ad::Array x_left = probe.state(t - t_last);
      apply_impulse_inplace(model, x_left, mark);
      x = std::move(x_left);
      if (model.has_gru()) {
        const ad::Array in =
            embed_event_eager(model.params(), model.hyper(), mark, t - t_last, model.dims().h);
        gru_step_eager(model.params(), model.hyper(), gru_state, in, model.dims().h);
      }
      dyn = emit_dynamics(model, model.has_gru() ? &gru_state : nullptr);
      probe = IntervalProbe(model, dyn, x);
      t_last = t;
    }
  }
  return seq;
}

// Compensator-PIT values u_i = 1 - exp(-Lambda(t_{i-1}, t_i)) with the same
// per-interval Monte-Carlo estimator the likelihood uses.
inline std::vector<double> pit_values(const HhpModel& model, const Dataset& ds,
                                      int mc_per_interval, uint64_t seed) {
  std::vector<std::vector<double>> per_seq(ds.sequences.size());
  parallel_for(ds.sequences.size(), [&](size_t si) {
    const Sequence& seq = ds.sequences[si];
    Rng rng(seed, {uint64_t{0xb17}, static_cast<uint64_t>(si)});
    SequenceTrace trace = trace_sequence(model, seq);
    std::vector<double>& out = per_seq[si];
    out.reserve(seq.events.size());
    double t_prev = 0.0;
    for (size_t i = 0; i < seq.events.size(); ++i) {
      const double len = seq.events[i].t - t_prev;
      IntervalProbe probe(model, trace.dyn[i], trace.right_state[i]);
      double mean = 0.0;
      for (int s = 0; s < mc_per_interval; ++s) {
        mean += probe.total_intensity(rng.uniform_open01() * len);
      }
      mean /= static_cast<double>(mc_per_interval);
      out.push_back(1.0 - std::exp(-len * mean));
      t_prev = seq.events[i].t;
    }
  });
  std::vector<double> pit;
  for (auto& v : per_seq) pit.insert(pit.end(), v.begin(), v.end());
  return pit;
}

struct MetricsReport {
  double ll_total = 0.0;
  double ll_time = 0.0;
  double ll_mark = 0.0;
  double rmse = 0.0;
  double accuracy = 0.0;
  double pce = 0.0;
  double ece = 0.0;
  size_t n_events = 0;
};

// Probabilistic calibration error: mean over 50 equally spaced quantile
// levels of |empirical CDF of the PIT values - level|.
inline double pce_from_pit(std::vector<double> pit, int levels = 50) {
  if (pit.empty()) return 0.0;
  std::sort(pit.begin(), pit.end());
  double acc = 0.0;
  for (int j = 1; j <= levels; ++j) {
    const double q = static_cast<double>(j) / static_cast<double>(levels);
    const auto it = std::upper_bound(pit.begin(), pit.end(), q);
    const double ecdf =
        static_cast<double>(it - pit.begin()) / static_cast<double>(pit.size());
    acc += std::abs(ecdf - q);
  }
  return acc / static_cast<double>(levels);
}

// Expected calibration error over 10 equal-width confidence bins of the
// max-probability mark prediction.
inline double ece_from_predictions(const std::vector<double>& confidence,
                                   const std::vector<int>& correct, int bins = 10) {
  if (confidence.empty()) return 0.0;
  std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
  std::vector<size_t> count(bins, 0);
  for (size_t i = 0; i < confidence.size(); ++i) {
    int b = std::min(bins - 1, static_cast<int>(confidence[i] * bins));
    conf_sum[b] += confidence[i];
    acc_sum[b] += correct[i];
    ++count[b];
  }
  double ece = 0.0;
  for (int b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double w = static_cast<double>(count[b]) / static_cast<double>(confidence.size());
    ece += w * std::abs(acc_sum[b] / count[b] - conf_sum[b] / count[b]);
  }
  return ece;
}

struct EvalConfig {
  int mc_per_interval = 20;
  uint64_t seed = 0;
};

inline MetricsReport evaluate(const HhpModel& model, const Dataset& ds, const EvalConfig& cfg) {
  MetricsReport report;
  const size_t n_seq = ds.sequences.size();

  struct SeqResult {
    double ll_total = 0, ll_time = 0, ll_mark = 0;
    double sq_err_sum = 0;
    size_t n_pred = 0;
    size_t n_correct = 0;
    std::vector<double> confidence;
    std::vector<int> correct_flags;
  };
  std::vector<SeqResult> results(n_seq);

  parallel_for(n_seq, [&](size_t si) {
    const Sequence& seq = ds.sequences[si];
    SeqResult& r = results[si];
    Rng rng(cfg.seed, {detail::kEvalStream, static_cast<uint64_t>(si)});
    const LogLikValues ll = log_likelihood(model, seq, cfg.mc_per_interval, rng);
    r.ll_total = ll.total;
    r.ll_time = ll.time_part;
    r.ll_mark = ll.mark_part;
    if (seq.events.empty()) return;
    const SequenceTrace trace = trace_sequence(model, seq);
    double t_prev = 0.0;
    for (size_t i = 0; i < seq.events.size(); ++i) {
      const double actual = seq.events[i].t - t_prev;
      const TimePrediction pred = predict_next_time(model, trace, seq, i);
      r.sq_err_sum += (pred.dt - actual) * (pred.dt - actual);
      ++r.n_pred;
      const ad::Array probs = mark_probabilities(model, trace, seq, i, seq.events[i].t);
      int best = 0;
      for (int k = 1; k < model.dims().num_marks; ++k) {
        if (probs[k] > probs[best]) best = k;
      }
      const int ok = best == seq.events[i].mark ? 1 : 0;
      r.n_correct += ok;
      r.confidence.push_back(probs[best]);
      r.correct_flags.push_back(ok);
      t_prev = seq.events[i].t;
    }
  });

  double sq_sum = 0.0;
  size_t n_pred = 0, n_correct = 0;
  std::vector<double> confidence;
  std::vector<int> correct;
  for (const SeqResult& r : results) {
    report.ll_total += r.ll_total / static_cast<double>(n_seq);
    report.ll_time += r.ll_time / static_cast<double>(n_seq);
    report.ll_mark += r.ll_mark / static_cast<double>(n_seq);
    sq_sum += r.sq_err_sum;
    n_pred += r.n_pred;
    n_correct += r.n_correct;
    confidence.insert(confidence.end(), r.confidence.begin(), r.confidence.end());
    correct.insert(correct.end(), r.correct_flags.begin(), r.correct_flags.end());
  }
  report.n_events = n_pred;
  report.rmse = n_pred ? std::sqrt(sq_sum / static_cast<double>(n_pred)) : 0.0;
  report.accuracy = n_pred ? static_cast<double>(n_correct) / static_cast<double>(n_pred) : 0.0;
  report.pce = pce_from_pit(pit_values(model, ds, cfg.mc_per_interval, cfg.seed));
  report.ece = ece_from_predictions(confidence, correct);
  return report;
}

}  // namespace hhp
