#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hhp/common.hpp"

namespace hhp {

// A single timestamped, categorically marked event. Times are 64-bit reals
// in whatever unit the dataset defines.
struct Event {
  double t = 0.0;
  int mark = 0;
};

// An event sequence observed on [0, t_end]. Times are strictly increasing
// and positive; all times lie within the horizon.
struct Sequence {
  std::vector<Event> events;
  double t_end = 0.0;
};

struct Dataset {
  std::vector<Sequence> sequences;
  int num_marks = 0;
};

// Checks every Sequence invariant against a mark cardinality. Returns the
// list of violations (empty when the sequence is valid); never throws.
inline std::vector<std::string> validate_sequence(const Sequence& seq, int num_marks) {
  std::vector<std::string> violations;
  if (!(seq.t_end > 0.0) || !std::isfinite(seq.t_end)) {
    violations.push_back("t_end must be finite and > 0");
  }
  double prev = 0.0;
  for (size_t i = 0; i < seq.events.size(); ++i) {
    const Event& e = seq.events[i];
    if (!std::isfinite(e.t)) {
      violations.push_back("event " + std::to_string(i) + ": non-finite time");
      continue;
    }
    if (i == 0 && e.t <= 0.0) {
      violations.push_back("event 0: time must be > 0");
    }
    if (i > 0 && !(prev < e.t)) {
      violations.push_back("event " + std::to_string(i) +
                           ": non-increasing times, t_{i-1} < t_i required"
                           " (inter-arrival time must be strictly positive)");
    }
    if (e.t > seq.t_end) {
      violations.push_back("event " + std::to_string(i) + ": time exceeds t_end");
    }
    if (e.mark < 0 || e.mark >= num_marks) {
      violations.push_back("event " + std::to_string(i) + ": mark " + std::to_string(e.mark) +
                           " outside [0, " + std::to_string(num_marks) + ")");
    }
    prev = e.t;
  }
  return violations;
}

inline void validate_dataset(const Dataset& ds) {
  if (ds.sequences.empty()) throw std::runtime_error("empty dataset");
  if (ds.num_marks <= 0) throw std::runtime_error("dataset must declare at least one mark");
  for (size_t s = 0; s < ds.sequences.size(); ++s) {
    const auto violations = validate_sequence(ds.sequences[s], ds.num_marks);
    if (!violations.empty()) {
      throw std::runtime_error("sequence " + std::to_string(s) + ": " + violations.front());
    }
  }
}

struct SplitFractions {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

// Seeded random partition. Sizes are floor(n*train), floor(n*val), remainder.
inline std::array<Dataset, 3> split_dataset(const Dataset& ds, SplitFractions f, uint64_t seed) {
  if (f.train < 0.0 || f.val < 0.0 || f.test < 0.0 ||
      std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must be non-negative and sum to 1");
  }
  const size_t n = ds.sequences.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed, {uint64_t{0x5911}});  // dedicated split stream
  rng.shuffle(order);

  const size_t n_train = static_cast<size_t>(std::floor(static_cast<double>(n) * f.train));
  const size_t n_val = static_cast<size_t>(std::floor(static_cast<double>(n) * f.val));

  std::array<Dataset, 3> out;
  for (auto& d : out) d.num_marks = ds.num_marks;
  for (size_t i = 0; i < n; ++i) {
    const size_t which = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
    out[which].sequences.push_back(ds.sequences[order[i]]);
  }
  return out;
}

}  // namespace hhp
