#include <catch_amalgamated.hpp>

#include <cstring>

#include "hhp/predict.hpp"
#include "hhp/synthgen.hpp"
#include "hhp/train.hpp"
#include "test_util.hpp"

using namespace hhp;
using ad::Array;

namespace {

// Zeroing alpha and W pins the latent path: both then receive exactly zero
// gradient, so training fits mu alone (a homogeneous Poisson model).
HhpModel mu_only_model(int num_marks, double rate_per_mark, uint64_t seed = 1) {
  HhpModel m = HhpModel::create({4, 4, 1, 2, num_marks}, Ablation::kFull, seed);
  std::fill(m.params()[m.alpha_id()].value.begin(), m.params()[m.alpha_id()].value.end(), 0.0);
  std::fill(m.params()[m.w_id()].value.begin(), m.params()[m.w_id()].value.end(), 0.0);
  m.init_mu_for_rate(rate_per_mark);
  return m;
}

Dataset poisson_dataset(double rate, double t_end, int n_seqs, int num_marks, uint64_t seed) {
  Dataset ds;
  ds.num_marks = num_marks;
  for (int s = 0; s < n_seqs; ++s) {
    Rng rng(seed, {static_cast<uint64_t>(s)});
    Sequence seq;
    seq.t_end = t_end;
    for (double t : sample_homogeneous_poisson(rate, t_end, rng)) {
      seq.events.push_back({t, static_cast<int>(rng.uniform_index(num_marks))});
    }
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParamStore store;
  store.add("a", {3}, Array{1.0, 2.0, 3.0});
  store.add("b", {2}, Array{-1.0, 4.0});
  const auto before = store.values();
  Adam adam(0.1);
  std::vector<Array> zero_grads{Array{0.0, 0.0, 0.0}, Array{0.0, 0.0}};
  adam.step(store, zero_grads);
  adam.step(store, {});  // missing entries also mean zero
  const auto after = store.values();
  CHECK(after[0] == before[0]);
  CHECK(after[1] == before[1]);
}

TEST_CASE("gradient clipping preserves direction") {
  Rng rng(5);
  std::vector<Array> grads(2);
  grads[0].resize(7);
  grads[1].resize(3);
  for (auto& g : grads) {
    for (double& x : g) x = rng.normal(0.0, 5.0);
  }
  const auto before = grads;
  const double scale = clip_gradients(grads, 1.0);
  REQUIRE(scale < 1.0);
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double x : g) sq += x * x;
  }
  CHECK(std::sqrt(sq) == Catch::Approx(1.0).epsilon(1e-12));
  for (size_t p = 0; p < grads.size(); ++p) {
    for (size_t i = 0; i < grads[p].size(); ++i) {
      CHECK(grads[p][i] == Catch::Approx(before[p][i] * scale).epsilon(1e-12));
    }
  }
  // Under the norm: untouched.
  std::vector<Array> small{Array{0.1, -0.2}};
  CHECK(clip_gradients(small, 10.0) == 1.0);
}

TEST_CASE("training a mu-only model recovers the empirical Poisson rate") {
  const double rate = 0.9;
  const int K = 3;
  const Dataset ds = poisson_dataset(rate, 50.0, 60, K, 11);
  const auto splits = split_dataset(ds, {0.8, 0.2, 0.0}, 0);

  size_t events = 0;
  double total_time = 0.0;
  std::vector<size_t> per_mark(K, 0);
  for (const auto& s : splits[0].sequences) {
    events += s.events.size();
    total_time += s.t_end;
    for (const auto& e : s.events) ++per_mark[e.mark];
  }

  HhpModel m = mu_only_model(K, 0.5 * rate / K);  // deliberately off
  TrainConfig cfg;
  cfg.lr = 0.02;
  cfg.max_epochs = 60;
  cfg.patience = 60;
  cfg.mc_per_interval = 5;  // constant intensity: MC is exact anyway
  cfg.seed = 3;
  train(m, splits[0], splits[1], cfg);

  for (int k = 0; k < K; ++k) {
    const double fitted = softplus(m.params()[m.mu_id()].value[k]);
    const double empirical = static_cast<double>(per_mark[k]) / total_time;
    INFO("mark " << k << ": fitted " << fitted << " empirical " << empirical);
    CHECK(std::abs(fitted - empirical) / empirical <= 0.05);
  }
  // alpha and W stayed pinned at zero.
  for (double v : m.params()[m.alpha_id()].value) CHECK(v == 0.0);
  for (double v : m.params()[m.w_id()].value) CHECK(v == 0.0);
}

TEST_CASE("training loss is non-increasing over the first epochs (scenario 1, small)") {
  TriggerMemoryConfig gen_cfg;
  gen_cfg.n_sequences = 64;
  gen_cfg.seed = 5;
  const Dataset ds = gen_trigger_memory(gen_cfg);
  HhpModel m = HhpModel::create({8, 4, 1, 2, 3}, Ablation::kFull, 7);
  m.init_mu_for_rate(0.13);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.max_epochs = 5;
  cfg.patience = 5;
  cfg.mc_per_interval = 10;
  cfg.seed = 7;
  Dataset empty_val;
  empty_val.num_marks = 3;
  const TrainResult res = train(m, ds, empty_val, cfg);
  REQUIRE(res.history.size() == 5);
  for (size_t e = 1; e < res.history.size(); ++e) {
    INFO("epoch " << e << ": " << res.history[e - 1].train_ll << " -> "
                  << res.history[e].train_ll);
    CHECK(res.history[e].train_ll >= res.history[e - 1].train_ll);
  }
}

TEST_CASE("training is deterministic for a fixed seed") {
  const Dataset ds = poisson_dataset(0.8, 20.0, 24, 2, 17);
  const auto splits = split_dataset(ds, {0.75, 0.25, 0.0}, 1);
  TrainConfig cfg;
  cfg.lr = 5e-3;
  cfg.max_epochs = 4;
  cfg.mc_per_interval = 7;
  cfg.seed = 9;

  const auto run = [&] {
    HhpModel m = HhpModel::create({4, 4, 1, 2, 2}, Ablation::kFull, 21);
    train(m, splits[0], splits[1], cfg);
    return m.params().values();
  };
  const auto a = run();
  const auto b = run();
  for (size_t p = 0; p < a.size(); ++p) {
    REQUIRE(a[p].size() == b[p].size());
    CHECK(std::memcmp(a[p].data(), b[p].data(), a[p].size() * sizeof(double)) == 0);
  }
}

TEST_CASE("predict_next_time: constant intensity gives 1/c") {
  for (double c : {0.25, 1.0, 4.0}) {
    HhpModel m = mu_only_model(1, c);
    Sequence seq;
    seq.t_end = 10.0;
    seq.events = {{2.0, 0}};
    const SequenceTrace trace = trace_sequence(m, seq);
    const TimePrediction pred = predict_next_time(m, trace, seq, 1);
    REQUIRE_FALSE(pred.truncated);
    CHECK(std::abs(pred.dt - 1.0 / c) / (1.0 / c) <= 1e-3);
  }
}

TEST_CASE("predict_next_time matches a thinning Monte-Carlo oracle") {
  HhpModel m = HhpModel::create({4, 4, 1, 2, 2}, Ablation::kFull, 31);
  m.init_mu_for_rate(0.4);
  Sequence seq;
  seq.t_end = 8.0;
  seq.events = {{1.0, 1}, {2.2, 0}};
  const SequenceTrace trace = trace_sequence(m, seq);
  const TimePrediction pred = predict_next_time(m, trace, seq, 2);
  REQUIRE_FALSE(pred.truncated);

  // Thinning from the post-event-2 state with frozen dynamics.
  const IntervalProbe probe(m, trace.dyn[2], trace.right_state[2]);
  const int n_samples = 1000000;
  double sum = 0.0, sq = 0.0;
  Rng rng(77);
  for (int s = 0; s < n_samples; ++s) {
    double t = 0.0;
    for (;;) {
      const double window = 4.0;
      double peak = 0.0;
      for (int g = 0; g <= 32; ++g) {
        peak = std::max(peak, probe.total_intensity(t + window * g / 32.0));
      }
      const double bound = 1.3 * peak;
      const double gap = rng.exponential(bound);
      if (gap > window) {
        t += window;
        continue;
      }
      t += gap;
      if (rng.uniform01() * bound < probe.total_intensity(t)) break;
    }
    sum += t;
    sq += t * t;
  }
  const double mc_mean = sum / n_samples;
  const double mc_se = std::sqrt((sq / n_samples - mc_mean * mc_mean) / n_samples);
  INFO("quadrature " << pred.dt << " MC " << mc_mean << " +- " << mc_se);
  CHECK(std::abs(pred.dt - mc_mean) <= 3.0 * mc_se);
}

TEST_CASE("predict_next_time flags truncation when the intensity is ~0") {
  HhpModel m = mu_only_model(1, 1.0);
  std::fill(m.params()[m.mu_id()].value.begin(), m.params()[m.mu_id()].value.end(), -40.0);
  Sequence seq;
  seq.t_end = 1.0;
  Sequence empty = seq;
  const SequenceTrace trace = trace_sequence(m, empty);
  const TimePrediction pred = predict_next_time(m, trace, empty, 0);
  CHECK(pred.truncated);
}

TEST_CASE("predict_next_mark: K = 1 and exact-tie rules") {
  HhpModel m1 = mu_only_model(1, 0.5);
  Sequence seq;
  seq.t_end = 5.0;
  seq.events = {{1.0, 0}};
  const SequenceTrace t1 = trace_sequence(m1, seq);
  CHECK(predict_next_mark(m1, t1, seq, 0, 1.0) == 0);

  // Symmetric two-mark model: exact tie resolves to the lowest index.
  HhpModel m2 = mu_only_model(2, 0.5);
  const SequenceTrace t2 = trace_sequence(m2, seq);
  CHECK(predict_next_mark(m2, t2, seq, 0, 1.0) == 0);
  CHECK_THROWS_AS(predict_next_mark(m2, t2, seq, 1, 0.5), std::invalid_argument);
}

TEST_CASE("simulate: constant-rate event count matches rate * T") {
  HhpModel m = mu_only_model(1, 0.5, 41);
  const double t_end = 20.0;
  const int runs = 10000;
  double count = 0.0;
  for (int s = 0; s < runs; ++s) {
    Rng rng(43, {static_cast<uint64_t>(s)});
    count += static_cast<double>(simulate(m, t_end, rng).events.size());
  }
  const double mean = count / runs;
  const double expect = 0.5 * t_end;
  CHECK(std::abs(mean - expect) <= 3.0 * std::sqrt(expect / runs));
}

TEST_CASE("simulate: vanishing intensity yields an empty sequence") {
  HhpModel m = mu_only_model(2, 1.0);
  std::fill(m.params()[m.mu_id()].value.begin(), m.params()[m.mu_id()].value.end(), -45.0);
  Rng rng(3);
  CHECK(simulate(m, 50.0, rng).events.empty());
}

TEST_CASE("simulate aborts rather than silently accept on a violated bound") {
  HhpModel m = mu_only_model(1, 1.0);
  SimOptions opts;
  opts.margin = -0.5;  // deliberately invalid head-room
  Rng rng(7);
  CHECK_THROWS_WITH(simulate(m, 50.0, rng, opts),
                    Catch::Matchers::ContainsSubstring("thinning bound"));
}

TEST_CASE("pit values: uniform for the true model, skewed for a x2 model") {
  const double rate = 0.5;
  const Dataset ds = poisson_dataset(rate, 200.0, 100, 1, 51);  // ~1e4 events
  HhpModel truth = mu_only_model(1, rate);
  const auto pit = pit_values(truth, ds, 20, 0);
  REQUIRE(pit.size() >= 9000);
  for (double u : pit) {
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
  CHECK(testutil::ks_uniform_pvalue(pit) > 0.01);

  HhpModel doubled = mu_only_model(1, 2.0 * rate);
  const auto pit2 = pit_values(doubled, ds, 20, 0);
  CHECK(testutil::moments(pit2).mean > 0.55);  // mass pushed toward 1
  CHECK(testutil::ks_uniform_pvalue(pit2) < 1e-6);

  Dataset empty;
  empty.num_marks = 1;
  Sequence s;
  s.t_end = 5.0;
  empty.sequences.push_back(s);
  CHECK(pit_values(truth, empty, 20, 0).empty());
}

TEST_CASE("evaluate: calibrated constant-rate model") {
  const double rate = 0.5;
  const Dataset ds = poisson_dataset(rate, 100.0, 200, 2, 61);  // ~1e4 events
  HhpModel truth = mu_only_model(2, rate / 2.0, 61);
  EvalConfig cfg;
  cfg.mc_per_interval = 20;
  const MetricsReport rep = evaluate(truth, ds, cfg);

  CHECK(rep.n_events >= 9000);
  CHECK(rep.pce <= 0.02);
  CHECK(rep.ll_total == Catch::Approx(rep.ll_time + rep.ll_mark).margin(1e-9));

  // Balanced two-mark data, uniform predictor: chance accuracy, calibrated.
  CHECK(rep.accuracy == Catch::Approx(0.5).margin(0.02));
  CHECK(rep.ece <= 0.02);

  // Constant intensity c: prediction is exactly 1/c, so RMSE approaches the
  // std of Exp(c) gaps, 1/c.
  CHECK(rep.rmse == Catch::Approx(1.0 / rate).epsilon(0.05));
}
