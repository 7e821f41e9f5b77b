#include <catch_amalgamated.hpp>

#include "hhp/attribution.hpp"
#include "hhp/synthgen.hpp"

using namespace hhp;
using ad::Array;

namespace {

Sequence random_sequence(Rng& rng, double rate, double t_end, int num_marks, size_t max_events) {
  Sequence seq;
  seq.t_end = t_end;
  double t = 0.0;
  while (seq.events.size() < max_events) {
    t += rng.exponential(rate);
    if (t > t_end) break;
    seq.events.push_back({t, static_cast<int>(rng.uniform_index(num_marks))});
  }
  return seq;
}

HhpModel random_model(Rng& rng, int d, Ablation ab = Ablation::kFull) {
  HhpModel m = HhpModel::create({d, 4, 1, 2, 3}, ab, rng.next_u64());
  m.init_mu_for_rate(0.2);
  return m;
}

double rel_diff(const Array& a, const Array& b) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(1e-12, std::sqrt(den));
}

}  // namespace

TEST_CASE("a lone particle right after its event is the impulse") {
  Rng rng(1);
  HhpModel m = random_model(rng, 4);
  Sequence seq;
  seq.t_end = 10.0;
  seq.events = {{3.0, 1}};
  const SequenceTrace trace = trace_sequence(m, seq);
  const auto parts = particles(m, trace, seq, 3.0 + 1e-12);
  REQUIRE(parts.size() == 1);
  const Array& alpha = m.params()[m.alpha_id()].value;
  for (int j = 0; j < 4; ++j) {
    CHECK(parts[0].latent[j] == Catch::Approx(alpha[4 + j]).margin(1e-9));  // mark 1 row
    CHECK(parts[0].latent[4 + j] == Catch::Approx(0.0).margin(1e-9));
  }
}

TEST_CASE("particle-sum identity: particles reconstruct the latent state") {
  Rng rng(2);
  for (int rep = 0; rep < 30; ++rep) {
    const int d = rep % 3 == 0 ? 4 : (rep % 3 == 1 ? 8 : 32);
    HhpModel m = random_model(rng, d);
    const Sequence seq = random_sequence(rng, 0.8, 30.0, 3, 50);
    if (seq.events.empty()) continue;
    const SequenceTrace trace = trace_sequence(m, seq);
    for (int q = 0; q < 10; ++q) {
      const double t = rng.uniform(1e-6, seq.t_end);
      const auto parts = particles(m, trace, seq, t);
      Array sum(2 * d, 0.0);
      for (const auto& p : parts) {
        for (int j = 0; j < 2 * d; ++j) sum[j] += p.latent[j];
      }
      const Array x = state_at(m, trace, seq, t);
      CHECK(rel_diff(sum, x) <= 1e-8);
    }
  }
}

TEST_CASE("constant diagonal dynamics: particles follow the closed form") {
  Rng rng(3);
  HhpModel m = random_model(rng, 4, Ablation::kNotHyper);
  std::fill(m.params()[m.const_angles_id()].value.begin(),
            m.params()[m.const_angles_id()].value.end(), 0.0);  // V = I
  Sequence seq;
  seq.t_end = 12.0;
  seq.events = {{2.0, 0}, {5.0, 2}};
  const SequenceTrace trace = trace_sequence(m, seq);
  const double t = 9.5;
  const auto parts = particles(m, trace, seq, t);
  REQUIRE(parts.size() == 2);
  const Array& alpha = m.params()[m.alpha_id()].value;
  const Array& decay = trace.dyn[0].decay;
  for (size_t i = 0; i < 2; ++i) {
    const double dt = t - seq.events[i].t;
    const int mark = seq.events[i].mark;
    for (int j = 0; j < 4; ++j) {
      const double mag = std::exp(decay[j] * dt);
      const double re = mag * std::cos(decay[4 + j] * dt) * alpha[static_cast<size_t>(mark) * 4 + j];
      const double im = mag * std::sin(decay[4 + j] * dt) * alpha[static_cast<size_t>(mark) * 4 + j];
      CHECK(parts[i].latent[j] == Catch::Approx(re).margin(1e-12));
      CHECK(parts[i].latent[4 + j] == Catch::Approx(im).margin(1e-12));
    }
  }
}

TEST_CASE("df_lambda identities: empty set, full removal, pre-activation additivity") {
  Rng rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    HhpModel m = random_model(rng, 8);
    const Sequence seq = random_sequence(rng, 0.6, 25.0, 3, 40);
    if (seq.events.size() < 3) continue;
    const SequenceTrace trace = trace_sequence(m, seq);
    const double t = rng.uniform(seq.events[2].t + 1e-9, seq.t_end);

    // Empty removal set: exactly zero.
    const Array none = df_lambda(m, trace, seq, t, {});
    for (double v : none) CHECK(v == 0.0);

    // Full removal: exactly lambda_t - softplus(mu).
    const auto parts = particles(m, trace, seq, t);
    std::vector<int> all;
    for (const auto& p : parts) all.push_back(p.source);
    const Array full = df_lambda(m, trace, seq, t, all);
    const Array& mu = m.params()[m.mu_id()].value;
    Array base(3, 0.0);
    for (const auto& p : parts) {
      for (int k = 0; k < 3; ++k) base[k] += p.projected[k];
    }
    for (int k = 0; k < 3; ++k) {
      CHECK(full[k] == softplus(mu[k] + base[k]) - softplus(mu[k]));
    }

    // Identity readout: removal effects are additive (linear control).
    const Array d0 = df_lambda(m, trace, seq, t, std::vector<int>{all[0]}, Rectifier::kIdentity);
    const Array d1 = df_lambda(m, trace, seq, t, std::vector<int>{all[1]}, Rectifier::kIdentity);
    const Array d01 =
        df_lambda(m, trace, seq, t, std::vector<int>{all[0], all[1]}, Rectifier::kIdentity);
    for (int k = 0; k < 3; ++k) {
      CHECK(d01[k] == Catch::Approx(d0[k] + d1[k]).margin(1e-12));
    }
  }
}

TEST_CASE("softplus curvature breaks additivity (expected non-identity)") {
  Rng rng(5);
  HhpModel m = random_model(rng, 8);
  // Large impulses so the curvature is visible.
  for (double& v : m.params()[m.alpha_id()].value) v *= 10.0;
  const Sequence seq = random_sequence(rng, 0.7, 20.0, 3, 30);
  REQUIRE(seq.events.size() >= 2);
  const SequenceTrace trace = trace_sequence(m, seq);
  const double t = seq.t_end * 0.9;
  const Array d0 = df_lambda(m, trace, seq, t, std::vector<int>{0});
  const Array d1 = df_lambda(m, trace, seq, t, std::vector<int>{1});
  const Array d01 = df_lambda(m, trace, seq, t, std::vector<int>{0, 1});
  double gap = 0.0;
  for (int k = 0; k < 3; ++k) gap = std::max(gap, std::abs(d01[k] - d0[k] - d1[k]));
  CHECK(gap > 1e-12);
}

TEST_CASE("df_Lambda: zeros for the empty set, |signed| <= absolute, grid convergence") {
  Rng rng(6);
  HhpModel m = random_model(rng, 8);
  const Sequence seq = random_sequence(rng, 0.5, 20.0, 3, 30);
  REQUIRE(seq.events.size() >= 3);
  const SequenceTrace trace = trace_sequence(m, seq);

  AttributionEngine coarse(m, trace, seq, 50);
  const auto zero = coarse.df_Lambda({});
  for (double v : zero.signed_v) CHECK(v == 0.0);
  for (double v : zero.absolute_v) CHECK(v == 0.0);

  const size_t removed[1] = {0};
  const auto at50 = coarse.df_Lambda(removed);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(at50.signed_v[k]) <= at50.absolute_v[k] + 1e-15);

  AttributionEngine fine(m, trace, seq, 100);
  const auto at100 = fine.df_Lambda(removed);
  double scale = 0.0;
  for (int k = 0; k < 3; ++k) scale = std::max(scale, std::abs(at100.absolute_v[k]));
  for (int k = 0; k < 3; ++k) {
    CHECK(std::abs(at50.signed_v[k] - at100.signed_v[k]) <= 0.01 * std::max(scale, 1e-9));
    CHECK(std::abs(at50.absolute_v[k] - at100.absolute_v[k]) <= 0.01 * std::max(scale, 1e-9));
  }
}

TEST_CASE("engine grid agrees with the direct df_lambda path") {
  Rng rng(7);
  HhpModel m = random_model(rng, 8);
  const Sequence seq = random_sequence(rng, 0.5, 15.0, 3, 20);
  REQUIRE(seq.events.size() >= 2);
  const SequenceTrace trace = trace_sequence(m, seq);
  AttributionEngine engine(m, trace, seq, 10);
  Array df(3);
  for (size_t pt = 0; pt < engine.n_points(); ++pt) {
    const double t = engine.point_time(pt);
    // Interval-interior points only: boundary points are one-sided limits.
    // Interval 0 has no particles yet.
    const int i = engine.point_interval(pt);
    if (i == 0) continue;
    const double lo = seq.events[i - 1].t;
    const double hi = i < static_cast<int>(seq.events.size()) ? seq.events[i].t : seq.t_end;
    if (t <= lo + 1e-9 || t >= hi - 1e-9) continue;
    const size_t removed[1] = {0};
    engine.df_at_point(pt, removed, Rectifier::kSoftplus, df);
    const Array direct = df_lambda(m, trace, seq, t, std::vector<int>{0});
    for (int k = 0; k < 3; ++k) CHECK(df[k] == Catch::Approx(direct[k]).margin(1e-10));
  }
}

TEST_CASE("lifetime influence: non-negative, ~0 for an event at the horizon") {
  Rng rng(8);
  HhpModel m = random_model(rng, 8);
  Sequence seq = random_sequence(rng, 0.5, 20.0, 3, 20);
  REQUIRE(seq.events.size() >= 2);
  seq.events.push_back({seq.t_end, 1});  // event exactly at T: no future to influence
  const SequenceTrace trace = trace_sequence(m, seq);
  AttributionEngine engine(m, trace, seq, 50);
  for (size_t i = 0; i < seq.events.size(); ++i) {
    CHECK(engine.lifetime_influence(i) >= 0.0);
  }
  CHECK(engine.lifetime_influence(seq.events.size() - 1) <= 1e-12);
}

TEST_CASE("coupling matrix: symmetry, zero diagonal, N = 1, linear control") {
  Rng rng(9);
  HhpModel m = random_model(rng, 8);
  const Sequence seq = random_sequence(rng, 0.6, 12.0, 3, 12);
  REQUIRE(seq.events.size() >= 3);
  const SequenceTrace trace = trace_sequence(m, seq);
  AttributionEngine engine(m, trace, seq, 20);
  const size_t n = seq.events.size();

  const auto coupling = engine.coupling_matrix();
  for (size_t i = 0; i < n; ++i) {
    CHECK(coupling[i * n + i] == 0.0);
    for (size_t j = 0; j < n; ++j) {
      CHECK(coupling[i * n + j] == coupling[j * n + i]);
      CHECK(coupling[i * n + j] >= 0.0);
    }
  }

  // Identity readout + signed integrals: interactions vanish to roundoff.
  const auto linear = engine.coupling_matrix(Rectifier::kIdentity, /*use_absolute=*/false);
  double scale = 0.0;
  for (size_t i = 0; i < n; ++i) scale = std::max(scale, engine.lifetime_influence(i));
  for (size_t i = 0; i < n * n; ++i) CHECK(std::abs(linear[i]) <= 1e-10 * std::max(1.0, scale));

  // Single-event sequence: 1x1 zero matrix.
  Sequence one;
  one.t_end = 5.0;
  one.events = {{1.0, 0}};
  const SequenceTrace tr1 = trace_sequence(m, one);
  AttributionEngine e1(m, tr1, one, 10);
  const auto c1 = e1.coupling_matrix();
  REQUIRE(c1.size() == 1);
  CHECK(c1[0] == 0.0);
}

TEST_CASE("retrospective attribution: first event empty, definitional consistency") {
  Rng rng(10);
  HhpModel m = random_model(rng, 8);
  const Sequence seq = random_sequence(rng, 0.6, 15.0, 3, 15);
  REQUIRE(seq.events.size() >= 3);
  const SequenceTrace trace = trace_sequence(m, seq);
  AttributionEngine engine(m, trace, seq, 30);

  CHECK(engine.retrospective(0).empty());
  CHECK_THROWS_AS(engine.retrospective(seq.events.size()), std::invalid_argument);

  // Entry j equals DF-lambda^{(j)} at the target's left limit in the target's
  // mark coordinate (computed via the direct path).
  const size_t target = 2;
  const auto scores = engine.retrospective(target);
  REQUIRE(scores.size() == target);
  const double t = seq.events[target].t;
  for (size_t j = 0; j < target; ++j) {
    const Array direct = df_lambda(m, trace, seq, t, std::vector<int>{static_cast<int>(j)});
    CHECK(scores[j] == Catch::Approx(direct[seq.events[target].mark]).margin(1e-10));
  }
}

TEST_CASE("attribution report shapes and CSV emitters") {
  Rng rng(11);
  HhpModel m = random_model(rng, 4);
  const Sequence seq = random_sequence(rng, 0.8, 8.0, 3, 10);
  REQUIRE(seq.events.size() >= 2);
  const SequenceTrace trace = trace_sequence(m, seq);
  const AttributionReport report = make_attribution_report(m, trace, seq, 10);

  const size_t n = seq.events.size();
  CHECK(report.dflambda.size() == n);
  CHECK(report.lifetime.size() == n);
  CHECK(report.coupling.size() == n * n);
  CHECK(report.retrospective.size() == n);
  CHECK(report.grid_times.size() == (n + 1) * 11);
  for (size_t i = 0; i < n; ++i) {
    double total_abs = 0.0;
    for (double v : report.df_Lambda_absolute[i]) total_abs += v;
    CHECK(report.lifetime[i] == Catch::Approx(total_abs).margin(1e-12));
  }

  std::ostringstream os;
  write_dflambda_csv(os, report, 3);
  CHECK(os.str().rfind("t,source_event,mark,value\n", 0) == 0);
  std::ostringstream os2;
  write_retrospective_csv(os2, report);
  CHECK(os2.str().rfind("target_event,source_event,value\n", 0) == 0);
}
