#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "hhp/core.hpp"

namespace hhp {

// Mark ids shared by both synthetic scenarios.
inline constexpr int kMarkBlue = 0;
inline constexpr int kMarkOrange = 1;
inline constexpr int kMarkGreen = 2;

// Scenario 1: homogeneous Poisson stream whose green "trigger" events force
// the previous mark to repeat a predictable time later.
struct TriggerMemoryConfig {
  double rate = 1.0 / 3.0;
  std::array<double, 3> mark_probs{0.4, 0.4, 0.2};  // blue, orange, green
  double delay_mean = 10.0;
  double delay_var = 0.01;  // variance, i.e. std 0.1
  double horizon = 100.0;
  int n_sequences = 0;
  uint64_t seed = 0;
};

// Scenario 2: superposition of a green Poisson background and an alternating
// call/response chain.
struct CallResponseConfig {
  double green_rate = 0.5;
  double call_rate = 1.0 / 15.0;
  double delay_mean = 10.0;
  double delay_var = 0.01;
  double horizon = 100.0;
  int n_sequences = 0;
  uint64_t seed = 0;
};

// Exp(rate) gaps accumulated from 0 and truncated at t_end; sorted ascending.
inline std::vector<double> sample_homogeneous_poisson(double rate, double t_end, Rng& rng) {
  if (!(rate > 0.0)) throw std::invalid_argument("poisson rate must be > 0");
  if (!(t_end > 0.0)) throw std::invalid_argument("poisson horizon must be > 0");
  std::vector<double> times;
  double t = 0.0;
  for (;;) {
    t += rng.exponential(rate);
    if (t > t_end) break;
    times.push_back(t);
  }
  return times;
}

namespace detail {

inline double positive_normal(Rng& rng, double mean, double stddev) {
  double x;
  do {
    x = rng.normal(mean, stddev);
  } while (x <= 0.0);
  return x;
}

inline void validate_trigger_config(const TriggerMemoryConfig& cfg) {
  double sum = 0.0;
  for (double p : cfg.mark_probs) sum += p;
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("mark_probs must sum to 1");
  if (!(cfg.rate > 0.0)) throw std::invalid_argument("rate must be > 0");
  if (cfg.delay_var < 0.0) throw std::invalid_argument("delay_var must be >= 0");
  if (!(cfg.horizon > 0.0)) throw std::invalid_argument("horizon must be > 0");
  if (cfg.n_sequences <= 0) throw std::invalid_argument("n_sequences must be > 0");
}

}  // namespace detail

inline Dataset gen_trigger_memory(const TriggerMemoryConfig& cfg) {
  detail::validate_trigger_config(cfg);
  const double delay_std = std::sqrt(cfg.delay_var);

  Dataset ds;
  ds.num_marks = 3;
  ds.sequences.resize(cfg.n_sequences);
  for (int s = 0; s < cfg.n_sequences; ++s) {
    Rng rng(cfg.seed, {uint64_t{1}, static_cast<uint64_t>(s)});
    Sequence& seq = ds.sequences[s];
    seq.t_end = cfg.horizon;
    double t = 0.0;
    for (;;) {
      t += rng.exponential(cfg.rate);
      if (t > cfg.horizon) break;
      const int mark = rng.categorical(cfg.mark_probs);
      seq.events.push_back({t, mark});
      if (mark == kMarkGreen) {
        // Forced follow-up: repeat the mark preceding the trigger. A trigger
        // opening the sequence has no predecessor; the follow-up mark is then
        // uniform over {blue, orange}. The follow-up never acts as a trigger.
        int repeat;
        if (seq.events.size() >= 2) {
          repeat = seq.events[seq.events.size() - 2].mark;
        } else {
          repeat = rng.uniform01() < 0.5 ? kMarkBlue : kMarkOrange;
        }
        const double follow = t + detail::positive_normal(rng, cfg.delay_mean, delay_std);
        if (follow > cfg.horizon) break;  // dropped; the sequence ends
        seq.events.push_back({follow, repeat});
        t = follow;  // the follow-up replaces the next Poisson draw
      }
    }
  }
  return ds;
}

inline Dataset gen_call_response(const CallResponseConfig& cfg) {
  if (!(cfg.green_rate > 0.0) || !(cfg.call_rate > 0.0)) {
    throw std::invalid_argument("rates must be > 0");
  }
  if (!(cfg.horizon > 0.0)) throw std::invalid_argument("horizon must be > 0");
  if (cfg.n_sequences <= 0) throw std::invalid_argument("n_sequences must be > 0");
  const double delay_std = std::sqrt(cfg.delay_var);

  Dataset ds;
  ds.num_marks = 3;
  ds.sequences.resize(cfg.n_sequences);
  for (int s = 0; s < cfg.n_sequences; ++s) {
    Rng rng(cfg.seed, {uint64_t{2}, static_cast<uint64_t>(s)});
    Sequence& seq = ds.sequences[s];
    seq.t_end = cfg.horizon;

    std::vector<Event> merged;
    for (double tg : sample_homogeneous_poisson(cfg.green_rate, cfg.horizon, rng)) {
      merged.push_back({tg, kMarkGreen});
    }
    double t = 0.0;
    bool is_call = true;
    for (;;) {
      t += is_call ? rng.exponential(cfg.call_rate)
                   : detail::positive_normal(rng, cfg.delay_mean, delay_std);
      if (t > cfg.horizon) break;  // overshooting events are dropped; chain ends
      merged.push_back({t, is_call ? kMarkBlue : kMarkOrange});
      is_call = !is_call;
    }
    std::sort(merged.begin(), merged.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
    // Exact time collisions across the two processes have probability zero;
    // nudge if one ever occurs so strict ordering holds.
    for (size_t i = 1; i < merged.size(); ++i) {
      if (merged[i].t <= merged[i - 1].t) {
        merged[i].t = std::nextafter(merged[i - 1].t, std::numeric_limits<double>::infinity());
      }
    }
    seq.events = std::move(merged);
  }
  return ds;
}

}  // namespace hhp
