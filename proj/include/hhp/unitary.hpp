#pragma once

#include <complex>
#include <span>
#include <vector>

#include "hhp/tape.hpp"

namespace hhp {

// Rotation-block parameterization of a unitary operator on C^d. Each of the
// r blocks applies an "even" layer pairing coordinates (0,1)(2,3)... and then
// an "odd" layer pairing (1,2)(3,4)...; for even d the odd layer closes with
// the wrap-around pair (d-1, 0). Every pair gets its own (theta, phi) and is
// rotated by [[cos t, -e^{i p} sin t], [e^{-i p} sin t, cos t]], so the
// operator is unitary by construction and applies in O(d r).
//
// Angle layout, per block: [theta_even | phi_even | theta_odd | phi_odd],
// each segment of length pairs_per_layer(d) = floor(d / 2). For even d the
// total is the usual 2 d r.
inline int pairs_per_layer(int d) { return d / 2; }

inline int unitary_angle_count(int d, int r) { return 4 * pairs_per_layer(d) * r; }

struct UnitaryAngles {
  int d = 0;
  int r = 0;
  ad::Array angles;  // length unitary_angle_count(d, r)
};

// Diagonal of the per-interval dynamics, [re | im] of length 2d with every
// real part strictly negative.
struct EigenDecay {
  ad::Array decay;
};

inline UnitaryAngles make_unitary_angles(int d, int r, ad::Array angles) {
  if (d <= 0 || r <= 0) throw std::invalid_argument("unitary: d and r must be positive");
  if (angles.size() != static_cast<size_t>(unitary_angle_count(d, r))) {
    throw std::invalid_argument("unitary: wrong angle count");
  }
  return UnitaryAngles{d, r, std::move(angles)};
}

namespace detail {

// Shared layer schedule: forward applies blocks 0..r-1 (even then odd layer);
// the adjoint applies conjugate-transposed layers in exactly reverse order.
template <typename Fn>
void for_each_layer(int d, int r, bool adjoint, Fn&& apply) {
  const int p = pairs_per_layer(d);
  if (!adjoint) {
    for (int b = 0; b < r; ++b) {
      for (int parity = 0; parity < 2; ++parity) {
        apply(/*theta_off=*/b * 4 * p + parity * 2 * p, parity);
      }
    }
  } else {
    for (int b = r - 1; b >= 0; --b) {
      for (int parity = 1; parity >= 0; --parity) {
        apply(b * 4 * p + parity * 2 * p, parity);
      }
    }
  }
}

}  // namespace detail

// Eager application on a [re | im] state of length 2d; cos_a/sin_a are the
// elementwise cos/sin of the angle vector.
inline void apply_unitary_inplace(std::span<double> x, std::span<const double> cos_a,
                                  std::span<const double> sin_a, int d, int r, bool adjoint) {
  const int p = pairs_per_layer(d);
  const double wsign = adjoint ? -1.0 : 1.0;
  detail::for_each_layer(d, r, adjoint, [&](int theta_off, int parity) {
    ad::detail::rotation_layer_forward(x, cos_a, sin_a, theta_off, p, parity, wsign);
  });
}

inline void cos_sin_of(std::span<const double> angles, ad::Array& cos_a, ad::Array& sin_a) {
  cos_a.resize(angles.size());
  sin_a.resize(angles.size());
  for (size_t i = 0; i < angles.size(); ++i) {
    cos_a[i] = std::cos(angles[i]);
    sin_a[i] = std::sin(angles[i]);
  }
}

// V v (or V* v with adjoint set), eagerly, on a complex vector packed as
// [re | im].
inline ad::Array apply_unitary(const UnitaryAngles& u, std::span<const double> v, bool adjoint) {
  if (v.size() != static_cast<size_t>(2 * u.d)) {
    throw std::invalid_argument("apply_unitary: state must have length 2d");
  }
  ad::Array cos_a, sin_a;
  cos_sin_of(u.angles, cos_a, sin_a);
  ad::Array out(v.begin(), v.end());
  apply_unitary_inplace(out, cos_a, sin_a, u.d, u.r, adjoint);
  return out;
}

// exp(decay * dt) elementwise-complex-times v.
inline ad::Array apply_diag_exp(const EigenDecay& decay, double dt, std::span<const double> v) {
  if (dt < 0.0) throw std::invalid_argument("apply_diag_exp: dt must be >= 0");
  if (decay.decay.size() != v.size() || v.size() % 2 != 0) {
    throw std::invalid_argument("apply_diag_exp: shape mismatch");
  }
  ad::Array out(v.begin(), v.end());
  ad::detail::diag_exp_forward(out, decay.decay, dt);
  return out;
}

// Tape-side application: cos_a/sin_a are cos/sin nodes over the angle node,
// computed once per interval and shared by every state they transform.
inline ad::Var apply_unitary(ad::Tape& tape, ad::Var x, ad::Var cos_a, ad::Var sin_a, int d,
                             int r, bool adjoint) {
  const int p = pairs_per_layer(d);
  ad::Var cur = x;
  detail::for_each_layer(d, r, adjoint, [&](int theta_off, int parity) {
    cur = tape.rotation_layer(cur, cos_a, sin_a, theta_off, p, parity, adjoint);
  });
  return cur;
}

// Dense d x d matrix of the realized operator, row-major, built by applying
// the rotations to basis vectors.
inline std::vector<std::complex<double>> materialize_unitary(const UnitaryAngles& u) {
  const int d = u.d;
  std::vector<std::complex<double>> m(static_cast<size_t>(d) * d);
  ad::Array cos_a, sin_a;
  cos_sin_of(u.angles, cos_a, sin_a);
  ad::Array col(2 * d);
  for (int j = 0; j < d; ++j) {
    std::fill(col.begin(), col.end(), 0.0);
    col[j] = 1.0;
    apply_unitary_inplace(col, cos_a, sin_a, d, u.r, /*adjoint=*/false);
    for (int i = 0; i < d; ++i) m[static_cast<size_t>(i) * d + j] = {col[i], col[d + i]};
  }
  return m;
}

// max |(U U* - I)_{ij}| over all entries.
inline double unitarity_residual(const UnitaryAngles& u) {
  const int d = u.d;
  const auto m = materialize_unitary(u);
  double worst = 0.0;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      std::complex<double> acc = 0.0;
      for (int k = 0; k < d; ++k) {
        acc += m[static_cast<size_t>(i) * d + k] * std::conj(m[static_cast<size_t>(j) * d + k]);
      }
      if (i == j) acc -= 1.0;
      worst = std::max(worst, std::abs(acc));
    }
  }
  return worst;
}

}  // namespace hhp
