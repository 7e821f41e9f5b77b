#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "hhp/model.hpp"
#include "hhp/optim.hpp"

namespace hhp {

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 32;
  int max_epochs = 100;
  int patience = 10;  // epochs without validation improvement
  int mc_per_interval = 20;
  double clip_norm = 10.0;
  uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  double train_ll = 0.0;
  double val_ll = 0.0;
  double wallclock_s = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_val_ll = -std::numeric_limits<double>::infinity();
};

namespace detail {
inline constexpr uint64_t kEvalStream = 0xE7A1;
inline constexpr uint64_t kShuffleStream = 0x54AF;
inline constexpr uint64_t kBatchStream = 0x4C;
}  // namespace detail

// Mean per-event log-likelihood over a dataset; Monte-Carlo sample points are
// keyed by (seed, sequence index) so the value is deterministic and
// independent of thread scheduling.
inline double mean_log_likelihood(const HhpModel& model, const Dataset& ds, int mc_per_interval,
                                  uint64_t seed) {
  if (ds.sequences.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> lls(ds.sequences.size());
  parallel_for(ds.sequences.size(), [&](size_t i) {
    Rng rng(seed, {detail::kEvalStream, static_cast<uint64_t>(i)});
    lls[i] = log_likelihood(model, ds.sequences[i], mc_per_interval, rng).total;
  });
  double acc = 0.0;
  for (double v : lls) acc += v;
  return acc / static_cast<double>(lls.size());
}

// Adam training on the negative mean per-event log-likelihood with shuffled
// mini-batches and early stopping on validation LL. Returns the best
// validation parameters in the model; deterministic for a fixed seed.
inline void validate(const TrainConfig& cfg) {
  if (!(cfg.lr > 0.0) || cfg.batch_size < 1 || cfg.max_epochs < 1 || cfg.patience < 1 ||
      cfg.mc_per_interval < 1 || !(cfg.clip_norm > 0.0)) {
    throw std::invalid_argument("train: config fields must be positive (patience >= 1)");
  }
}

inline TrainResult train(HhpModel& model, const Dataset& train_ds, const Dataset& val_ds,
                         const TrainConfig& cfg) {
  validate(cfg);
  if (train_ds.num_marks != model.dims().num_marks) {
    throw std::invalid_argument("train: dataset num_marks does not match the model");
  }
  validate_dataset(train_ds);
  Adam adam(cfg.lr);
  TrainResult result;
  std::vector<ad::Array> best_params = model.params().values();
  int epochs_since_best = 0;
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<size_t> order(train_ds.sequences.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng shuffle_rng(cfg.seed, {detail::kShuffleStream, static_cast<uint64_t>(epoch)});
    shuffle_rng.shuffle(order);

    double epoch_ll = 0.0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      const size_t bs = end - start;
      std::vector<std::vector<ad::Array>> partial(bs);
      std::vector<double> lls(bs, 0.0);
      parallel_for(bs, [&](size_t b) {
        const size_t si = order[start + b];
        Rng rng(cfg.seed,
                {detail::kBatchStream, static_cast<uint64_t>(epoch), static_cast<uint64_t>(si)});
        McPlan plan =
            make_mc_plan(train_ds.sequences[si].events.size(), cfg.mc_per_interval, rng);
        ad::Tape tape;
        std::vector<ad::Var> leaves = model.params().bind(tape);
        SequenceLogLik ll = build_log_likelihood(model, tape, leaves, train_ds.sequences[si], plan);
        lls[b] = ll.total_value;
        ad::GradientMap g = tape.backward(ll.total);
        partial[b].resize(model.params().size());
        accumulate(partial[b], g, -1.0 / static_cast<double>(bs));
      });

      double batch_loss = 0.0;
      std::vector<ad::Array> grads(model.params().size());
      for (size_t b = 0; b < bs; ++b) {
        batch_loss -= lls[b] / static_cast<double>(bs);
        epoch_ll += lls[b];
        for (size_t p = 0; p < grads.size(); ++p) {
          if (partial[b][p].empty()) continue;
          if (grads[p].empty()) grads[p].assign(partial[b][p].size(), 0.0);
          for (size_t j = 0; j < partial[b][p].size(); ++j) grads[p][j] += partial[b][p][j];
        }
      }
      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "train: non-finite loss at epoch " << epoch << ", batch " << (start / cfg.batch_size)
            << "; parameter norms:";
        for (size_t p = 0; p < model.params().size(); ++p) {
          double sq = 0.0;
          for (double x : model.params()[p].value) sq += x * x;
          msg << " " << model.params()[p].name << "=" << std::sqrt(sq);
        }
        throw std::runtime_error(msg.str());
      }
      clip_gradients(grads, cfg.clip_norm);
      adam.step(model.params(), grads);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_ll = epoch_ll / static_cast<double>(order.size());
    stats.val_ll = mean_log_likelihood(model, val_ds, cfg.mc_per_interval, cfg.seed);
    stats.wallclock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(stats);

    if (!val_ds.sequences.empty()) {
      if (stats.val_ll > result.best_val_ll) {
        result.best_val_ll = stats.val_ll;
        result.best_epoch = epoch;
        best_params = model.params().values();
        epochs_since_best = 0;
      } else if (++epochs_since_best >= cfg.patience) {
        break;
      }
    } else {
      result.best_epoch = epoch;
      best_params = model.params().values();
    }
  }
  model.params().set_values(best_params);
  return result;
}

}  // namespace hhp
