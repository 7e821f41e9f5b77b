#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hhp/core.hpp"
#include "hhp/hypernet.hpp"
#include "hhp/params.hpp"
#include "hhp/tape.hpp"
#include "hhp/unitary.hpp"

namespace hhp {

enum class Ablation { kFull, kNotStateful, kNotHyper, kNotLatent };

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kNotStateful: return "not-stateful";
    case Ablation::kNotHyper: return "not-hyper";
    case Ablation::kNotLatent: return "not-latent";
  }
  return "full";
}

inline Ablation ablation_from_string(const std::string& s) {
  if (s == "full") return Ablation::kFull;
  if (s == "not-stateful") return Ablation::kNotStateful;
  if (s == "not-hyper") return Ablation::kNotHyper;
  if (s == "not-latent") return Ablation::kNotLatent;
  throw std::invalid_argument("unknown ablation: " + s);
}

struct HhpDims {
  int d = 8;          // latent dimension (even, except for not-latent with odd K)
  int h = 8;          // GRU width
  int l = 1;          // GRU layers
  int r = 2;          // rotation blocks in V
  int num_marks = 1;  // K
};

// The hyper Hawkes process: a complex latent linear recurrence whose
// per-interval dynamics (unitary eigenvectors V_i, diagonal decay D_i) are
// emitted by a GRU hypernetwork from the event history. Ablations swap the
// emitted dynamics for learned constants.
class HhpModel {
 public:
  static HhpModel create(HhpDims dims, Ablation ablation, uint64_t seed) {
    HhpModel m;
    m.dims_ = dims;
    m.ablation_ = ablation;
    if (dims.num_marks <= 0) throw std::invalid_argument("num_marks must be positive");
    if (ablation == Ablation::kNotLatent) {
      if (m.dims_.d != 0 && m.dims_.d != dims.num_marks) {
        throw std::invalid_argument("not-latent requires d == num_marks");
      }
      m.dims_.d = dims.num_marks;  // W is the (fixed) identity
    } else {
      if (m.dims_.d <= 0 || m.dims_.d % 2 != 0) {
        throw std::invalid_argument("latent dimension d must be even and positive");
      }
    }
    if (m.has_gru() && (m.dims_.h < 2 || m.dims_.l < 1)) {
      throw std::invalid_argument("GRU needs h >= 2 and l >= 1");
    }
    if (m.dims_.r < 1) throw std::invalid_argument("r must be >= 1");

    Rng rng(seed, {uint64_t{0x1417}});
    const int d = m.dims_.d;
    const int K = m.dims_.num_marks;
    const int angles = unitary_angle_count(d, m.dims_.r);

    if (m.has_gru()) {
      m.hyper_ = make_hypernet(m.store_, m.dims_.l, m.dims_.h, K, d,
                               m.has_vhead() ? angles : 0, rng);
    } else {
      ad::Array d0(d);
      for (double& x : d0) x = rng.uniform(-0.5, 0.5);
      m.const_d_ = m.store_.add("const_d", {d}, std::move(d0));
    }
    if (!m.has_vhead()) {
      ad::Array a0(angles);
      for (double& x : a0) x = rng.uniform(-0.5, 0.5);
      m.const_angles_ = m.store_.add("const_angles", {angles}, std::move(a0));
    }

    ad::Array log_re_u(d), im_u(d);
    for (double& x : log_re_u) x = rng.uniform(-2.0, 0.0);
    for (double& x : im_u) x = rng.uniform(-0.5, 0.5);
    m.log_re_u_ = m.store_.add("log_re_u", {d}, std::move(log_re_u));
    m.im_u_ = m.store_.add("im_u", {d}, std::move(im_u));

    ad::Array alpha(static_cast<size_t>(K) * d);
    for (double& x : alpha) x = rng.normal(0.0, 1.0) * 0.1;
    m.alpha_ = m.store_.add("alpha", {K, d}, std::move(alpha));  // row k = impulse of mark k

    if (m.learned_w()) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(d));
      ad::Array w(static_cast<size_t>(K) * d);
      for (double& x : w) x = rng.uniform(-bound, bound);
      m.w_ = m.store_.add("w", {K, d}, std::move(w));
    }
    m.mu_ = m.store_.add("mu", {K}, ad::Array(K, 0.0));
    return m;
  }

  const HhpDims& dims() const { return dims_; }
  Ablation ablation() const { return ablation_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  bool has_gru() const {
    return ablation_ == Ablation::kFull || ablation_ == Ablation::kNotStateful;
  }
  bool has_vhead() const { return ablation_ == Ablation::kFull; }
  bool learned_w() const { return ablation_ != Ablation::kNotLatent; }
  int angle_count() const { return unitary_angle_count(dims_.d, dims_.r); }

  const HypernetIds& hyper() const { return hyper_; }
  int alpha_id() const { return alpha_; }
  int w_id() const { return w_; }
  int mu_id() const { return mu_; }
  int log_re_u_id() const { return log_re_u_; }
  int im_u_id() const { return im_u_; }
  int const_d_id() const { return const_d_; }
  int const_angles_id() const { return const_angles_; }

  // Sets mu so that softplus(mu_k) matches an empirical per-mark base rate.
  void init_mu_for_rate(double per_mark_rate) {
    const double v = inverse_softplus(std::max(per_mark_rate, 1e-8));
    for (double& x : store_[mu_].value) x = v;
  }

 private:
  HhpDims dims_;
  Ablation ablation_ = Ablation::kFull;
  ParamStore store_;
  HypernetIds hyper_;
  int const_d_ = -1;
  int const_angles_ = -1;
  int log_re_u_ = -1;
  int im_u_ = -1;
  int alpha_ = -1;
  int w_ = -1;
  int mu_ = -1;
};

// Configure-and-construct helper matching the ablation catalogue.
inline HhpModel configure_ablation(HhpDims dims, Ablation kind, uint64_t seed) {
  return HhpModel::create(dims, kind, seed);
}

// ---- eager evaluation ----

// Dynamics for one inter-event interval, with cos/sin of the angles cached
// so repeated propagation reuses them.
struct IntervalDynamics {
  ad::Array angles;
  ad::Array cos_a, sin_a;
  ad::Array decay;  // [re | im], length 2d, Re < 0
};

struct SequenceTrace {
  // dyn[i] governs (t_i, t_{i+1}] with t_0 = 0 and t_{N+1} = t_end.
  std::vector<IntervalDynamics> dyn;
  // right_state[i] = latent state just after event i (right_state[0] = 0).
  std::vector<ad::Array> right_state;
  // left_intensity[i] = lambda(t_{i+1}^-), one K-vector per event.
  std::vector<ad::Array> left_intensity;
  double compensator = 0.0;   // MC estimate when a plan was supplied
  double comp_variance = 0.0; // estimated variance of the MC compensator
};

// Uniform Monte-Carlo sample offsets (as fractions of each interval length).
struct McPlan {
  std::vector<std::vector<double>> fractions;  // one entry per interval, N+1 total
};

inline McPlan make_mc_plan(size_t n_events, int samples_per_interval, Rng& rng) {
  McPlan plan;
  plan.fractions.resize(n_events + 1);
  for (auto& f : plan.fractions) {
    f.resize(samples_per_interval);
    for (double& x : f) x = rng.uniform_open01();
  }
  return plan;
}

namespace detail {

inline void check_positive_dt(double dt, const char* what) {
  if (dt < 0.0) throw std::invalid_argument(std::string(what) + ": negative dt");
}

}  // namespace detail

// x(t_i + dt) = V e^{D dt} V* x, the closed-form inter-event propagation.
inline ad::Array propagate(const HhpModel& model, const IntervalDynamics& dyn,
                           std::span<const double> x, double dt) {
  detail::check_positive_dt(dt, "propagate");
  const int d = model.dims().d;
  ad::Array out(x.begin(), x.end());
  if (dt == 0.0) return out;
  apply_unitary_inplace(out, dyn.cos_a, dyn.sin_a, d, model.dims().r, /*adjoint=*/true);
  ad::detail::diag_exp_forward(out, dyn.decay, dt);
  apply_unitary_inplace(out, dyn.cos_a, dyn.sin_a, d, model.dims().r, /*adjoint=*/false);
  return out;
}

// Strong-typed variant used by tests and oracles.
inline ad::Array propagate(const UnitaryAngles& v, const EigenDecay& decay,
                           std::span<const double> x, double dt) {
  detail::check_positive_dt(dt, "propagate");
  if (dt == 0.0) return ad::Array(x.begin(), x.end());
  ad::Array cos_a, sin_a;
  cos_sin_of(v.angles, cos_a, sin_a);
  ad::Array out(x.begin(), x.end());
  apply_unitary_inplace(out, cos_a, sin_a, v.d, v.r, /*adjoint=*/true);
  ad::detail::diag_exp_forward(out, decay.decay, dt);
  apply_unitary_inplace(out, cos_a, sin_a, v.d, v.r, /*adjoint=*/false);
  return out;
}

// Right limit: adds the mark's impulse to the real part.
inline void apply_impulse_inplace(const HhpModel& model, ad::Array& x, int mark) {
  const int d = model.dims().d;
  if (mark < 0 || mark >= model.dims().num_marks) {
    throw std::invalid_argument("apply_impulse: mark out of range");
  }
  const ad::Array& alpha = model.params()[model.alpha_id()].value;
  for (int j = 0; j < d; ++j) x[j] += alpha[static_cast<size_t>(mark) * d + j];
}

inline ad::Array apply_impulse(const HhpModel& model, std::span<const double> x, int mark) {
  ad::Array out(x.begin(), x.end());
  apply_impulse_inplace(model, out, mark);
  return out;
}

// mu + W Re(x) (identity W for the not-latent variant).
inline ad::Array pre_activation(const HhpModel& model, std::span<const double> x) {
  const int d = model.dims().d;
  const int K = model.dims().num_marks;
  const ad::Array& mu = model.params()[model.mu_id()].value;
  ad::Array pre(K);
  if (model.learned_w()) {
    const ad::Array& w = model.params()[model.w_id()].value;
    for (int k = 0; k < K; ++k) {
      double acc = 0.0;
      const double* row = w.data() + static_cast<size_t>(k) * d;
      for (int j = 0; j < d; ++j) acc += row[j] * x[j];
      pre[k] = acc + mu[k];
    }
  } else {
    for (int k = 0; k < K; ++k) pre[k] = x[k] + mu[k];
  }
  return pre;
}

// lambda = softplus(mu + W Re(x)); strictly positive by construction.
inline ad::Array intensity(const HhpModel& model, std::span<const double> x) {
  ad::Array lam = pre_activation(model, x);
  for (double& v : lam) v = softplus(v);
  return lam;
}

// Emits the dynamics for the upcoming interval from the current hypernetwork
// state (or the learned constants, depending on the ablation).
inline IntervalDynamics emit_dynamics(const HhpModel& model,
                                      const std::vector<ad::Array>* gru_state) {
  const ParamStore& store = model.params();
  const int d = model.dims().d;
  const int h = model.dims().h;
  IntervalDynamics dyn;

  ad::Array d_raw;
  if (model.has_gru()) {
    const ad::Array& top = gru_state->back();
    const HypernetIds& ids = model.hyper();
    hhp::detail::matvec_eager(store[ids.d_head_w].value, d, h, top, d_raw);
    const ad::Array& b = store[ids.d_head_b].value;
    for (int j = 0; j < d; ++j) d_raw[j] += b[j];
    if (model.has_vhead()) {
      hhp::detail::matvec_eager(store[ids.v_head_w].value, model.angle_count(), h, top, dyn.angles);
      const ad::Array& vb = store[ids.v_head_b].value;
      for (size_t j = 0; j < dyn.angles.size(); ++j) dyn.angles[j] += vb[j];
    } else {
      dyn.angles = store[model.const_angles_id()].value;
    }
  } else {
    d_raw = store[model.const_d_id()].value;
    dyn.angles = store[model.const_angles_id()].value;
  }

  const ad::Array& log_re_u = store[model.log_re_u_id()].value;
  const ad::Array& im_u = store[model.im_u_id()].value;
  dyn.decay.resize(2 * d);
  for (int j = 0; j < d; ++j) {
    const double sp = softplus(d_raw[j]);
    dyn.decay[j] = -(sp * std::exp(log_re_u[j]));
    dyn.decay[d + j] = -(sp * im_u[j]);
  }
  cos_sin_of(dyn.angles, dyn.cos_a, dyn.sin_a);
  return dyn;
}

// Runs the recurrence over a sequence: emit dynamics, propagate to each left
// limit (and to Monte-Carlo points when a plan is given), decode intensities,
// apply the impulse, roll the GRU. The hypernetwork runs once per event.
inline SequenceTrace trace_sequence(const HhpModel& model, const Sequence& seq,
                                    const McPlan* plan = nullptr) {
  const int d = model.dims().d;
  const size_t n = seq.events.size();
  if (plan && plan->fractions.size() != n + 1) {
    throw std::invalid_argument("trace_sequence: plan does not match sequence");
  }

  SequenceTrace trace;
  trace.dyn.reserve(n + 1);
  trace.right_state.reserve(n + 1);
  trace.left_intensity.reserve(n);

  std::vector<ad::Array> gru_state;
  if (model.has_gru()) gru_state = gru_init_state_eager(model.params(), model.hyper());

  ad::Array x(2 * d, 0.0);
  trace.right_state.push_back(x);
  double t_prev = 0.0;
  for (size_t i = 0; i <= n; ++i) {
    IntervalDynamics dyn = emit_dynamics(model, model.has_gru() ? &gru_state : nullptr);
    const double t_next = i < n ? seq.events[i].t : seq.t_end;
    const double len = t_next - t_prev;
    detail::check_positive_dt(len, "trace_sequence");

    // V* x once per interval; every propagation target shares it.
    ad::Array y = x;
    apply_unitary_inplace(y, dyn.cos_a, dyn.sin_a, d, model.dims().r, /*adjoint=*/true);

    const auto propagate_from_y = [&](double dt) {
      ad::Array out = y;
      ad::detail::diag_exp_forward(out, dyn.decay, dt);
      apply_unitary_inplace(out, dyn.cos_a, dyn.sin_a, d, model.dims().r, /*adjoint=*/false);
      return out;
    };

    if (plan && len > 0.0 && !plan->fractions[i].empty()) {
      const auto& fr = plan->fractions[i];
      double mean = 0.0, m2 = 0.0;
      for (size_t s = 0; s < fr.size(); ++s) {
        ad::Array xs = propagate_from_y(fr[s] * len);
        const ad::Array lam = intensity(model, xs);
        double tot = 0.0;
        for (double v : lam) tot += v;
        const double delta = tot - mean;
        mean += delta / static_cast<double>(s + 1);
        m2 += delta * (tot - mean);
      }
      trace.compensator += len * mean;
      if (fr.size() > 1) {
        const double var = m2 / static_cast<double>(fr.size() - 1);
        trace.comp_variance += len * len * var / static_cast<double>(fr.size());
      }
    }

    if (i < n) {
      ad::Array x_left = propagate_from_y(len);
      trace.left_intensity.push_back(intensity(model, x_left));
      apply_impulse_inplace(model, x_left, seq.events[i].mark);
      x = std::move(x_left);
      trace.right_state.push_back(x);
      if (model.has_gru()) {
        const ad::Array in =
            embed_event_eager(model.params(), model.hyper(), seq.events[i].mark, len, model.dims().h);
        gru_step_eager(model.params(), model.hyper(), gru_state, in, model.dims().h);
      }
      t_prev = t_next;
    }
    trace.dyn.push_back(std::move(dyn));
  }
  return trace;
}

// Left-limit latent state at an arbitrary time t in (0, t_end].
inline ad::Array state_at(const HhpModel& model, const SequenceTrace& trace, const Sequence& seq,
                          double t) {
  if (!(t > 0.0)) throw std::invalid_argument("state_at: t must be > 0");
  size_t i = 0;
  while (i < seq.events.size() && seq.events[i].t < t) ++i;
  const double t_i = i == 0 ? 0.0 : seq.events[i - 1].t;
  return propagate(model, trace.dyn[i], trace.right_state[i], t - t_i);
}

// ---- tape evaluation (training path) ----

struct SequenceLogLik {
  ad::Var total;  // scalar node, per-event normalized total log-likelihood
  double total_value = 0.0;
  double time_value = 0.0;
  double mark_value = 0.0;
  size_t n_events = 0;
};

namespace detail {

struct TapeDynamics {
  ad::Var cos_a, sin_a, decay;
};

inline TapeDynamics emit_dynamics_tape(const HhpModel& model, ad::Tape& tape,
                                       const std::vector<ad::Var>& leaves,
                                       const std::vector<ad::Var>* gru_state) {
  const int d = model.dims().d;
  const int h = model.dims().h;
  TapeDynamics dyn;
  ad::Var d_raw;
  ad::Var angles;
  if (model.has_gru()) {
    const HypernetIds& ids = model.hyper();
    ad::Var top = gru_state->back();
    d_raw = tape.add(tape.matvec(leaves[ids.d_head_w], d, h, top), leaves[ids.d_head_b]);
    if (model.has_vhead()) {
      angles = tape.add(tape.matvec(leaves[ids.v_head_w], model.angle_count(), h, top),
                        leaves[ids.v_head_b]);
    } else {
      angles = leaves[model.const_angles_id()];
    }
  } else {
    d_raw = leaves[model.const_d_id()];
    angles = leaves[model.const_angles_id()];
  }
  ad::Var sp = tape.softplus(d_raw);
  ad::Var u_re = tape.exp(leaves[model.log_re_u_id()]);
  ad::Var dec_re = tape.neg(tape.mul(sp, u_re));
  ad::Var dec_im = tape.neg(tape.mul(sp, leaves[model.im_u_id()]));
  dyn.decay = tape.concat(dec_re, dec_im);
  dyn.cos_a = tape.cos(angles);
  dyn.sin_a = tape.sin(angles);
  return dyn;
}

inline ad::Var intensity_tape(const HhpModel& model, ad::Tape& tape,
                              const std::vector<ad::Var>& leaves, ad::Var x) {
  const int d = model.dims().d;
  const int K = model.dims().num_marks;
  ad::Var re = tape.slice(x, 0, d);
  ad::Var pre = model.learned_w()
                    ? tape.add(tape.matvec(leaves[model.w_id()], K, d, re), leaves[model.mu_id()])
                    : tape.add(re, leaves[model.mu_id()]);
  return tape.softplus(pre);
}

}  // namespace detail

// Builds the Monte-Carlo per-event log-likelihood of one sequence on a tape.
// The estimator follows the evaluation loop exactly: dynamics are emitted
// once per interval and Monte-Carlo points reuse the interval's V* x.
inline SequenceLogLik build_log_likelihood(const HhpModel& model, ad::Tape& tape,
                                           const std::vector<ad::Var>& leaves, const Sequence& seq,
                                           const McPlan& plan) {
  const int d = model.dims().d;
  const int r = model.dims().r;
  const size_t n = seq.events.size();
  if (plan.fractions.size() != n + 1) {
    throw std::invalid_argument("build_log_likelihood: plan does not match sequence");
  }

  std::vector<ad::Var> gru_state;
  if (model.has_gru()) gru_state = gru_init_state(leaves, model.hyper());

  ad::Var x = tape.constant(ad::Array(2 * d, 0.0));
  ad::Var sum_log_marked = tape.constant(0.0);
  ad::Var sum_log_total = tape.constant(0.0);
  ad::Var comp = tape.constant(0.0);

  double t_prev = 0.0;
  for (size_t i = 0; i <= n; ++i) {
    detail::TapeDynamics dyn =
        detail::emit_dynamics_tape(model, tape, leaves, model.has_gru() ? &gru_state : nullptr);
    const double t_next = i < n ? seq.events[i].t : seq.t_end;
    const double len = t_next - t_prev;
    detail::check_positive_dt(len, "build_log_likelihood");

    ad::Var y = apply_unitary(tape, x, dyn.cos_a, dyn.sin_a, d, r, /*adjoint=*/true);
    const auto propagate_from_y = [&](double dt) {
      return apply_unitary(tape, tape.diag_exp_mul(dyn.decay, y, dt), dyn.cos_a, dyn.sin_a, d, r,
                           /*adjoint=*/false);
    };

    if (len > 0.0 && !plan.fractions[i].empty()) {
      const auto& fr = plan.fractions[i];
      ad::Var acc;
      for (size_t s = 0; s < fr.size(); ++s) {
        ad::Var tot = tape.sum(detail::intensity_tape(model, tape, leaves, propagate_from_y(fr[s] * len)));
        acc = s == 0 ? tot : tape.add(acc, tot);
      }
      comp = tape.add(comp, tape.scale(acc, len / static_cast<double>(fr.size())));
    }

    if (i < n) {
      const int mark = seq.events[i].mark;
      ad::Var x_left = propagate_from_y(len);
      ad::Var lam = detail::intensity_tape(model, tape, leaves, x_left);
      sum_log_marked = tape.add(sum_log_marked, tape.log(tape.slice(lam, mark, 1)));
      sum_log_total = tape.add(sum_log_total, tape.log(tape.sum(lam)));
      // Impulse: right limit adds the mark's row of alpha to the real part.
      ad::Var re = tape.add(tape.slice(x_left, 0, d), tape.slice(leaves[model.alpha_id()], mark * d, d));
      x = tape.concat(re, tape.slice(x_left, d, d));
      if (model.has_gru()) {
        ad::Var in = embed_event(tape, leaves, model.hyper(), mark, len, model.dims().h);
        gru_state = gru_step(tape, leaves, model.hyper(), gru_state, in, model.dims().h);
      }
      t_prev = t_next;
    }
  }

  SequenceLogLik out;
  out.n_events = n;
  const double norm = n > 0 ? 1.0 / static_cast<double>(n) : 1.0;
  out.total = tape.scale(tape.sub(sum_log_marked, comp), norm);
  out.total_value = out.total.value()[0];
  out.time_value = (sum_log_total.value()[0] - comp.value()[0]) * norm;
  out.mark_value = (sum_log_marked.value()[0] - sum_log_total.value()[0]) * norm;
  return out;
}

struct LogLikValues {
  double total = 0.0;
  double time_part = 0.0;
  double mark_part = 0.0;
  size_t n_events = 0;
};

// Monte-Carlo log-likelihood of one sequence, (total, time, mark) per event.
inline LogLikValues log_likelihood(const HhpModel& model, const Sequence& seq,
                                   int mc_per_interval, Rng& rng) {
  McPlan plan = make_mc_plan(seq.events.size(), mc_per_interval, rng);
  ad::Tape tape;
  std::vector<ad::Var> leaves = model.params().bind(tape);
  SequenceLogLik ll = build_log_likelihood(model, tape, leaves, seq, plan);
  return LogLikValues{ll.total_value, ll.time_value, ll.mark_value, ll.n_events};
}

}  // namespace hhp
