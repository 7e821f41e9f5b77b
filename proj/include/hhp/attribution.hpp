#pragma once

#include <cmath>
#include <ostream>
#include <vector>

#include "hhp/model.hpp"

namespace hhp {

// Readout used when turning particle sums into intensities. kIdentity is a
// test hook: with a linear readout the leave-one-out estimators become
// exactly additive, which the linearity controls assert.
enum class Rectifier { kSoftplus, kIdentity };

namespace detail {

inline double rectify(Rectifier r, double z) {
  return r == Rectifier::kSoftplus ? softplus(z) : z;
}

}  // namespace detail

// The isolated, propagated contribution of one past event to the latent
// state: particles sum to x_{t-}.
struct Particle {
  int source = 0;          // event index
  ad::Array latent;        // [re | im], length 2d
  ad::Array projected;     // W Re(latent), length K (pre-activation, no mu)
};

// W Re(x) without mu: the particle's pre-activation contribution.
inline ad::Array project_particle(const HhpModel& model, std::span<const double> latent) {
  const int d = model.dims().d;
  const int K = model.dims().num_marks;
  ad::Array out(K, 0.0);
  if (model.learned_w()) {
    const ad::Array& w = model.params()[model.w_id()].value;
    for (int k = 0; k < K; ++k) {
      double acc = 0.0;
      const double* row = w.data() + static_cast<size_t>(k) * d;
      for (int j = 0; j < d; ++j) acc += row[j] * latent[j];
      out[k] = acc;
    }
  } else {
    for (int k = 0; k < K; ++k) out[k] = latent[k];
  }
  return out;
}

// Particle decomposition at time t: each event with t_i < t contributes the
// chain of interval propagations applied to its impulse, taken right to left
// in chronological order. Uses the cached dynamics trace, so the attribution
// sees exactly the intensities the model produced.
inline std::vector<Particle> particles(const HhpModel& model, const SequenceTrace& trace,
                                       const Sequence& seq, double t) {
  if (!(t > 0.0)) throw std::invalid_argument("particles: t must be > 0");
  const int d = model.dims().d;
  const ad::Array& alpha = model.params()[model.alpha_id()].value;

  std::vector<Particle> parts;
  double b_i = 0.0;  // interval start
  for (size_t i = 0; i < trace.dyn.size(); ++i) {
    if (i > 0) {
      const Event& e = seq.events[i - 1];
      if (!(e.t < t)) break;
      b_i = e.t;
      Particle p;
      p.source = static_cast<int>(i - 1);
      p.latent.assign(2 * d, 0.0);
      for (int j = 0; j < d; ++j) p.latent[j] = alpha[static_cast<size_t>(e.mark) * d + j];
      parts.push_back(std::move(p));
    }
    const double b_next = i < trace.dyn.size() - 1 ? seq.events[i].t : seq.t_end;
    const double dt = std::min(t, b_next) - b_i;
    if (dt > 0.0) {
      for (Particle& p : parts) p.latent = propagate(model, trace.dyn[i], p.latent, dt);
    }
    if (t <= b_next) break;
    b_i = b_next;
  }
  for (Particle& p : parts) p.projected = project_particle(model, p.latent);
  return parts;
}

// DF-lambda for a removal set A at time t (left limits throughout): the
// intensity minus the intensity recomputed without A's particles. Both terms
// are decoded from the particle sum, so the empty set gives exactly zero and
// full removal gives exactly lambda_t - rect(mu).
inline ad::Array df_lambda(const HhpModel& model, const SequenceTrace& trace, const Sequence& seq,
                           double t, std::span<const int> removed,
                           Rectifier rect = Rectifier::kSoftplus) {
  const int K = model.dims().num_marks;
  const auto parts = particles(model, trace, seq, t);
  for (int idx : removed) {
    if (idx < 0 || static_cast<size_t>(idx) >= parts.size()) {
      throw std::invalid_argument("df_lambda: removed index out of range");
    }
  }
  const ad::Array& mu = model.params()[model.mu_id()].value;
  ad::Array base(K, 0.0), removed_sum(K, 0.0);
  for (const Particle& p : parts) {
    for (int k = 0; k < K; ++k) base[k] += p.projected[k];
  }
  for (const Particle& p : parts) {
    bool in = false;
    for (int idx : removed) in = in || idx == p.source;
    if (!in) continue;
    for (int k = 0; k < K; ++k) removed_sum[k] += p.projected[k];
  }
  ad::Array out(K);
  for (int k = 0; k < K; ++k) {
    const double full = detail::rectify(rect, mu[k] + base[k]);
    const double reduced = detail::rectify(rect, mu[k] + (base[k] - removed_sum[k]));
    out[k] = full - reduced;
  }
  return out;
}

// Precomputed per-grid-point particle projections; every integral-based
// estimator (DF-Lambda, lifetime influence, coupling, retrospective scores)
// reads from this table.
class AttributionEngine {
 public:
  AttributionEngine(const HhpModel& model, const SequenceTrace& trace, const Sequence& seq,
                    int grid_per_interval = 50)
      : model_(&model), seq_(&seq), grid_(grid_per_interval), K_(model.dims().num_marks) {
    if (grid_per_interval < 2) throw std::invalid_argument("grid_per_interval must be >= 2");
    const int d = model.dims().d;
    const size_t n = seq.events.size();
    n_particles_ = n;
    const ad::Array& alpha = model.params()[model.alpha_id()].value;

    std::vector<ad::Array> latent;  // carried right-limit particle states
    latent.reserve(n);
    double b_i = 0.0;
    for (size_t i = 0; i < trace.dyn.size(); ++i) {
      if (i > 0) {
        const Event& e = seq.events[i - 1];
        b_i = e.t;
        ad::Array a0(2 * d, 0.0);
        for (int j = 0; j < d; ++j) a0[j] = alpha[static_cast<size_t>(e.mark) * d + j];
        latent.push_back(std::move(a0));
      }
      const double b_next = i < trace.dyn.size() - 1 ? seq.events[i].t : seq.t_end;
      const double len = b_next - b_i;
      // V* s once per (interval, particle); grid points share it.
      std::vector<ad::Array> y(latent.size());
      for (size_t p = 0; p < latent.size(); ++p) {
        y[p] = latent[p];
        apply_unitary_inplace(y[p], trace.dyn[i].cos_a, trace.dyn[i].sin_a, d, model.dims().r,
                              /*adjoint=*/true);
      }
      for (int g = 0; g <= grid_; ++g) {
        const double delta = len * static_cast<double>(g) / static_cast<double>(grid_);
        times_.push_back(b_i + delta);
        interval_.push_back(static_cast<int>(i));
        weights_.push_back((g == 0 || g == grid_) ? 0.5 * len / grid_ : len / grid_);
        const size_t row = proj_.size();
        proj_.resize(row + n_particles_ * K_, 0.0);
        for (size_t p = 0; p < latent.size(); ++p) {
          ad::Array xs = y[p];
          ad::detail::diag_exp_forward(xs, trace.dyn[i].decay, delta);
          apply_unitary_inplace(xs, trace.dyn[i].cos_a, trace.dyn[i].sin_a, d, model.dims().r,
                                /*adjoint=*/false);
          if (g == grid_) {
            if (i + 1 < trace.dyn.size()) latent[p] = xs;  // becomes next interval's start
          }
          const ad::Array pk = project_particle(model, xs);
          for (int k = 0; k < K_; ++k) proj_[row + p * K_ + k] = pk[k];
        }
      }
      b_i = b_next;
    }
    // Base pre-activation sums, folded in ascending particle order so that
    // removal of the full set cancels bitwise.
    base_.assign(times_.size() * K_, 0.0);
    for (size_t pt = 0; pt < times_.size(); ++pt) {
      for (size_t p = 0; p < n_particles_; ++p) {
        for (int k = 0; k < K_; ++k) base_[pt * K_ + k] += proj(pt, p, k);
      }
    }
  }

  size_t n_points() const { return times_.size(); }
  size_t n_particles() const { return n_particles_; }
  double point_time(size_t pt) const { return times_[pt]; }
  int point_interval(size_t pt) const { return interval_[pt]; }
  double proj(size_t pt, size_t particle, int k) const {
    return proj_[(pt * n_particles_ + particle) * K_ + k];
  }

  // DF-lambda of a removal set at grid point pt (particles not yet alive
  // contribute zero rows, so no liveness bookkeeping is needed).
  void df_at_point(size_t pt, std::span<const size_t> removed, Rectifier rect,
                   std::span<double> out) const {
    const ad::Array& mu = model_->params()[model_->mu_id()].value;
    for (int k = 0; k < K_; ++k) {
      double removed_sum = 0.0;
      for (size_t j : removed) removed_sum += proj(pt, j, k);
      const double full = detail::rectify(rect, mu[k] + base_[pt * K_ + k]);
      const double reduced = detail::rectify(rect, mu[k] + (base_[pt * K_ + k] - removed_sum));
      out[k] = full - reduced;
    }
  }

  struct Integral {
    ad::Array signed_v;
    ad::Array absolute_v;
  };

  // Trapezoid integral of DF-lambda (and its coordinatewise absolute value)
  // over [0, t_end].
  Integral df_Lambda(std::span<const size_t> removed, Rectifier rect = Rectifier::kSoftplus) const {
    Integral out;
    out.signed_v.assign(K_, 0.0);
    out.absolute_v.assign(K_, 0.0);
    ad::Array df(K_);
    for (size_t pt = 0; pt < times_.size(); ++pt) {
      df_at_point(pt, removed, rect, df);
      const double w = weights_[pt];
      for (int k = 0; k < K_; ++k) {
        out.signed_v[k] += w * df[k];
        out.absolute_v[k] += w * std::abs(df[k]);
      }
    }
    return out;
  }

  // Sum over marks of the integrated absolute DF-lambda of one event.
  double lifetime_influence(size_t particle, Rectifier rect = Rectifier::kSoftplus) const {
    const size_t removed[1] = {particle};
    const Integral integral = df_Lambda(removed, rect);
    double acc = 0.0;
    for (double v : integral.absolute_v) acc += v;
    return acc;
  }

  // |joint lifetime influence - sum of individual influences| per pair.
  // use_absolute selects the paper's |DF lambda| integrals; the linearity
  // control uses signed integrals, which are exactly additive under the
  // identity readout.
  std::vector<double> coupling_matrix(Rectifier rect = Rectifier::kSoftplus,
                                      bool use_absolute = true) const {
    const size_t n = n_particles_;
    std::vector<double> single(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
      const size_t removed[1] = {i};
      single[i] = total_influence(df_Lambda(removed, rect), use_absolute);
    }
    std::vector<double> m(n * n, 0.0);
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = i + 1; j < n; ++j) {
        const size_t removed[2] = {i, j};
        const double joint = total_influence(df_Lambda(removed, rect), use_absolute);
        const double v = std::abs(joint - (single[i] + single[j]));
        m[i * n + j] = v;
        m[j * n + i] = v;
      }
    }
    return m;
  }

  // DF-lambda of each prior event at the target's left limit, in the
  // target's mark coordinate.
  std::vector<double> retrospective(size_t target, Rectifier rect = Rectifier::kSoftplus) const {
    if (target >= seq_->events.size()) {
      throw std::invalid_argument("retrospective: target out of range");
    }
    // The left limit of event `target` is the last grid point of interval
    // `target` (delta = len, computed exactly).
    const size_t pt = target * (grid_ + 1) + grid_;
    const int mark = seq_->events[target].mark;
    std::vector<double> out(target, 0.0);
    ad::Array df(K_);
    for (size_t j = 0; j < target; ++j) {
      const size_t removed[1] = {j};
      df_at_point(pt, removed, rect, df);
      out[j] = df[mark];
    }
    return out;
  }

 private:
  static double total_influence(const Integral& integral, bool use_absolute) {
    double acc = 0.0;
    for (double v : use_absolute ? integral.absolute_v : integral.signed_v) acc += v;
    return acc;
  }

  const HhpModel* model_;
  const Sequence* seq_;
  int grid_;
  int K_;
  size_t n_particles_ = 0;
  std::vector<double> times_;
  std::vector<int> interval_;
  std::vector<double> weights_;
  std::vector<double> proj_;
  std::vector<double> base_;
};

struct AttributionReport {
  int grid_per_interval = 50;
  std::vector<double> grid_times;
  // dflambda[i] holds particle i's DF-lambda trace, n_points x K row-major.
  std::vector<ad::Array> dflambda;
  std::vector<ad::Array> df_Lambda_signed;    // per particle, K
  std::vector<ad::Array> df_Lambda_absolute;  // per particle, K
  std::vector<double> lifetime;               // per particle
  std::vector<double> coupling;               // N x N, zero diagonal
  std::vector<std::vector<double>> retrospective;  // per target event
};

inline AttributionReport make_attribution_report(const HhpModel& model, const SequenceTrace& trace,
                                                 const Sequence& seq, int grid_per_interval = 50,
                                                 Rectifier rect = Rectifier::kSoftplus) {
  AttributionEngine engine(model, trace, seq, grid_per_interval);
  AttributionReport report;
  report.grid_per_interval = grid_per_interval;
  report.grid_times.resize(engine.n_points());
  for (size_t pt = 0; pt < engine.n_points(); ++pt) report.grid_times[pt] = engine.point_time(pt);

  const size_t n = engine.n_particles();
  const int K = model.dims().num_marks;
  report.dflambda.resize(n);
  report.df_Lambda_signed.resize(n);
  report.df_Lambda_absolute.resize(n);
  report.lifetime.resize(n);
  ad::Array df(K);
  for (size_t i = 0; i < n; ++i) {
    const size_t removed[1] = {i};
    report.dflambda[i].resize(engine.n_points() * K);
    for (size_t pt = 0; pt < engine.n_points(); ++pt) {
      engine.df_at_point(pt, removed, rect, df);
      for (int k = 0; k < K; ++k) report.dflambda[i][pt * K + k] = df[k];
    }
    AttributionEngine::Integral integral = engine.df_Lambda(removed, rect);
    double life = 0.0;
    for (double v : integral.absolute_v) life += v;
    report.df_Lambda_signed[i] = std::move(integral.signed_v);
    report.df_Lambda_absolute[i] = std::move(integral.absolute_v);
    report.lifetime[i] = life;
  }
  report.coupling = engine.coupling_matrix(rect, /*use_absolute=*/true);
  report.retrospective.resize(n);
  for (size_t i = 0; i < n; ++i) report.retrospective[i] = engine.retrospective(i, rect);
  return report;
}

// ---- CSV emitters (plot-ready numeric data; no plotting here) ----

inline void write_dflambda_csv(std::ostream& os, const AttributionReport& r, int num_marks) {
  os.precision(17);
  os << "t,source_event,mark,value\n";
  for (size_t i = 0; i < r.dflambda.size(); ++i) {
    for (size_t pt = 0; pt < r.grid_times.size(); ++pt) {
      for (int k = 0; k < num_marks; ++k) {
        os << r.grid_times[pt] << "," << i << "," << k << "," << r.dflambda[i][pt * num_marks + k]
           << "\n";
      }
    }
  }
}

inline void write_lifetime_csv(std::ostream& os, const AttributionReport& r, const Sequence& seq) {
  os.precision(17);
  os << "event,mark_of_event,influence\n";
  for (size_t i = 0; i < r.lifetime.size(); ++i) {
    os << i << "," << seq.events[i].mark << "," << r.lifetime[i] << "\n";
  }
}

inline void write_coupling_csv(std::ostream& os, const AttributionReport& r) {
  const size_t n = r.lifetime.size();
  os.precision(17);
  os << "i,j,value\n";
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) {
      os << i << "," << j << "," << r.coupling[i * n + j] << "\n";
    }
  }
}

inline void write_retrospective_csv(std::ostream& os, const AttributionReport& r) {
  os.precision(17);
  os << "target_event,source_event,value\n";
  for (size_t tgt = 0; tgt < r.retrospective.size(); ++tgt) {
    for (size_t j = 0; j < r.retrospective[tgt].size(); ++j) {
      os << tgt << "," << j << "," << r.retrospective[tgt][j] << "\n";
    }
  }
}

}  // namespace hhp
