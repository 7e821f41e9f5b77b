#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hhp/common.hpp"

namespace hhp::ad {

using Array = std::vector<double>;

class Tape;

// Handle to a tape node. Cheap to copy; valid as long as its tape lives.
class Var {
 public:
  Var() = default;
  Tape* tape() const { return tape_; }
  int32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Array& value() const;
  size_t size() const { return value().size(); }

 private:
  friend class Tape;
  Var(Tape* tape, int32_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int32_t id_ = -1;
};

// Gradients of a scalar root with respect to the tape's parameter leaves, in
// leaf creation order. An empty entry means the leaf did not influence the
// root (zero gradient).
struct GradientMap {
  std::vector<Array> leaf_grads;

  const Array* find(size_t leaf_index) const {
    if (leaf_index >= leaf_grads.size() || leaf_grads[leaf_index].empty()) return nullptr;
    return &leaf_grads[leaf_index];
  }
};

namespace detail {

enum class Op : uint8_t {
  kLeaf,
  kConst,
  kAdd,
  kSub,
  kMul,
  kNeg,
  kScale,         // x * c0
  kBroadcastMul,  // scalar node a broadcast over vector node b
  kMatVec,        // a: row-major (i0 x i1) matrix, b: vector of length i1
  kExp,
  kLog,
  kTanh,
  kSigmoid,
  kSoftplus,
  kCos,
  kSin,
  kSum,     // sum-reduce to a length-1 node
  kConcat,  // [a, b]
  kSlice,   // a[i0 .. i0+i1)
  // Fused complex ops on [re | im] arrays (length 2d):
  kRotationLayer,  // one even/odd layer of paired Givens rotations
  kDiagExpMul,     // elementwise exp(decay * dt) * x, dt = c0
};

struct Node {
  Op op;
  int32_t a = -1, b = -1, c = -1;
  int32_t i0 = 0, i1 = 0, i2 = 0;
  double c0 = 0.0;
  Array val;
  Array grad;
};

// One layer of paired 2x2 complex rotations on x = [re | im] (length 2d).
// Pair j couples coordinates (2j + parity, (2j + 1 + parity) mod d); with
// parity 1 and even d the last pair wraps around. wsign -1 applies the
// conjugate transpose of each rotation. cos_a/sin_a hold cos/sin of the raw
// angles; theta values live at [theta_off, theta_off + pairs) and phi values
// right after them.
inline void rotation_layer_forward(std::span<double> x, std::span<const double> cos_a,
                                   std::span<const double> sin_a, int theta_off, int pairs,
                                   int parity, double wsign) {
  const int d = static_cast<int>(x.size()) / 2;
  const int phi_off = theta_off + pairs;
  for (int j = 0; j < pairs; ++j) {
    const int p = 2 * j + parity;
    const int q = (2 * j + 1 + parity) % d;
    const double u = cos_a[theta_off + j];
    const double w = wsign * sin_a[theta_off + j];
    const double e = cos_a[phi_off + j];
    const double f = sin_a[phi_off + j];
    const double ar = x[p], ai = x[d + p];
    const double br = x[q], bi = x[d + q];
    x[p] = u * ar - w * (e * br - f * bi);
    x[d + p] = u * ai - w * (e * bi + f * br);
    x[q] = w * (e * ar + f * ai) + u * br;
    x[d + q] = w * (e * ai - f * ar) + u * bi;
  }
}

// y = exp(decay * dt) elementwise-complex-times x, for x, decay = [re | im].
inline void diag_exp_forward(std::span<double> x, std::span<const double> decay, double dt) {
  const int d = static_cast<int>(x.size()) / 2;
  for (int j = 0; j < d; ++j) {
    const double mag = std::exp(decay[j] * dt);
    const double fr = mag * std::cos(decay[d + j] * dt);
    const double fi = mag * std::sin(decay[d + j] * dt);
    const double xr = x[j], xi = x[d + j];
    x[j] = fr * xr - fi * xi;
    x[d + j] = fr * xi + fi * xr;
  }
}

}  // namespace detail

// Append-only reverse-mode differentiation tape over dense real arrays.
// Inputs always precede outputs, so the graph is acyclic by construction.
class Tape {
 public:
  Var leaf(Array v) {
    leaf_ids_.push_back(next_id());
    return push(detail::Op::kLeaf, std::move(v));
  }
  Var constant(Array v) { return push(detail::Op::kConst, std::move(v)); }
  Var constant(double v) { return push(detail::Op::kConst, Array{v}); }

  size_t num_leaves() const { return leaf_ids_.size(); }
  size_t num_nodes() const { return nodes_.size(); }

  const Array& value(int32_t id) const { return nodes_[id].val; }

  // Exact reverse-mode gradients of a scalar root w.r.t. every leaf.
  // Gradient state is re-seeded on every call, so one tape supports multiple
  // backward passes.
  GradientMap backward(Var root) {
    check_tape(root);
    if (nodes_[root.id()].val.size() != 1) {
      throw std::invalid_argument("backward: root must be scalar");
    }
    for (auto& n : nodes_) n.grad.clear();
    nodes_[root.id()].grad.assign(1, 1.0);
    for (int32_t id = root.id(); id >= 0; --id) {
      if (!nodes_[id].grad.empty()) backprop_node(id);
    }
    GradientMap out;
    out.leaf_grads.resize(leaf_ids_.size());
    for (size_t i = 0; i < leaf_ids_.size(); ++i) {
      out.leaf_grads[i] = nodes_[leaf_ids_[i]].grad;
    }
    return out;
  }

  // ---- primitives ----

  Var add(Var a, Var b) {
    binary_same_shape(a, b, "add");
    Array v = val(a);
    const Array& bv = val(b);
    for (size_t i = 0; i < v.size(); ++i) v[i] += bv[i];
    return push(detail::Op::kAdd, std::move(v), a, b);
  }

  Var sub(Var a, Var b) {
    binary_same_shape(a, b, "sub");
    Array v = val(a);
    const Array& bv = val(b);
    for (size_t i = 0; i < v.size(); ++i) v[i] -= bv[i];
    return push(detail::Op::kSub, std::move(v), a, b);
  }

  Var mul(Var a, Var b) {
    binary_same_shape(a, b, "mul");
    Array v = val(a);
    const Array& bv = val(b);
    for (size_t i = 0; i < v.size(); ++i) v[i] *= bv[i];
    return push(detail::Op::kMul, std::move(v), a, b);
  }

  Var neg(Var a) {
    Array v = val(a);
    for (double& x : v) x = -x;
    return push(detail::Op::kNeg, std::move(v), a);
  }

  Var scale(Var a, double c) {
    Array v = val(a);
    for (double& x : v) x *= c;
    Var out = push(detail::Op::kScale, std::move(v), a);
    nodes_[out.id()].c0 = c;
    return out;
  }

  // Scalar node broadcast-multiplied over a vector node.
  Var broadcast_mul(Var s, Var x) {
    check_tape(s);
    check_tape(x);
    if (val(s).size() != 1) throw std::invalid_argument("broadcast_mul: first operand must be scalar");
    const double sv = val(s)[0];
    Array v = val(x);
    for (double& e : v) e *= sv;
    return push(detail::Op::kBroadcastMul, std::move(v), s, x);
  }

  // m is a row-major (rows x cols) matrix node, x a length-cols vector node.
  Var matvec(Var m, int rows, int cols, Var x) {
    check_tape(m);
    check_tape(x);
    if (val(m).size() != static_cast<size_t>(rows) * cols || val(x).size() != static_cast<size_t>(cols)) {
      throw std::invalid_argument("matvec: shape mismatch");
    }
    const Array& mv = val(m);
    const Array& xv = val(x);
    Array v(rows, 0.0);
    for (int i = 0; i < rows; ++i) {
      double acc = 0.0;
      const double* row = mv.data() + static_cast<size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) acc += row[j] * xv[j];
      v[i] = acc;
    }
    Var out = push(detail::Op::kMatVec, std::move(v), m, x);
    nodes_[out.id()].i0 = rows;
    nodes_[out.id()].i1 = cols;
    return out;
  }

  Var exp(Var a) { return unary(detail::Op::kExp, a, [](double x) { return std::exp(x); }); }

  Var log(Var a) {
    for (double x : val(a)) {
      if (!(x > 0.0)) throw std::domain_error("log: non-positive input");
    }
    return unary(detail::Op::kLog, a, [](double x) { return std::log(x); });
  }

  Var tanh(Var a) { return unary(detail::Op::kTanh, a, [](double x) { return std::tanh(x); }); }

  Var sigmoid(Var a) { return unary(detail::Op::kSigmoid, a, [](double x) { return hhp::sigmoid(x); }); }

  Var softplus(Var a) { return unary(detail::Op::kSoftplus, a, [](double x) { return hhp::softplus(x); }); }

  Var cos(Var a) { return unary(detail::Op::kCos, a, [](double x) { return std::cos(x); }); }

  Var sin(Var a) { return unary(detail::Op::kSin, a, [](double x) { return std::sin(x); }); }

  Var sum(Var a) {
    check_tape(a);
    double acc = 0.0;
    for (double x : val(a)) acc += x;
    return push(detail::Op::kSum, Array{acc}, a);
  }

  Var concat(Var a, Var b) {
    check_tape(a);
    check_tape(b);
    Array v = val(a);
    v.insert(v.end(), val(b).begin(), val(b).end());
    return push(detail::Op::kConcat, std::move(v), a, b);
  }

  Var slice(Var a, int start, int len) {
    check_tape(a);
    if (start < 0 || len < 0 || static_cast<size_t>(start) + len > val(a).size()) {
      throw std::invalid_argument("slice: out of range");
    }
    Array v(val(a).begin() + start, val(a).begin() + start + len);
    Var out = push(detail::Op::kSlice, std::move(v), a);
    nodes_[out.id()].i0 = start;
    nodes_[out.id()].i1 = len;
    return out;
  }

  // One rotation layer; see detail::rotation_layer_forward. cos_a/sin_a are
  // cos/sin nodes over the full angle vector.
  Var rotation_layer(Var x, Var cos_a, Var sin_a, int theta_off, int pairs, int parity,
                     bool adjoint) {
    check_tape(x);
    check_tape(cos_a);
    check_tape(sin_a);
    if (val(x).size() % 2 != 0) throw std::invalid_argument("rotation_layer: state must be [re|im]");
    if (val(cos_a).size() != val(sin_a).size() ||
        static_cast<size_t>(theta_off) + 2 * pairs > val(cos_a).size()) {
      throw std::invalid_argument("rotation_layer: angle range out of bounds");
    }
    Array v = val(x);
    detail::rotation_layer_forward(v, val(cos_a), val(sin_a), theta_off, pairs, parity,
                                   adjoint ? -1.0 : 1.0);
    Var out = push(detail::Op::kRotationLayer, std::move(v), x, cos_a, sin_a);
    nodes_[out.id()].i0 = theta_off;
    nodes_[out.id()].i1 = pairs;
    nodes_[out.id()].i2 = parity | (adjoint ? 2 : 0);
    return out;
  }

  // Elementwise complex product with exp(decay * dt); decay and x are
  // [re | im] arrays of equal length.
  Var diag_exp_mul(Var decay, Var x, double dt) {
    check_tape(decay);
    check_tape(x);
    if (dt < 0.0) throw std::invalid_argument("diag_exp_mul: dt must be >= 0");
    if (val(decay).size() != val(x).size() || val(x).size() % 2 != 0) {
      throw std::invalid_argument("diag_exp_mul: shape mismatch");
    }
    Array v = val(x);
    detail::diag_exp_forward(v, val(decay), dt);
    Var out = push(detail::Op::kDiagExpMul, std::move(v), decay, x);
    nodes_[out.id()].c0 = dt;
    return out;
  }

 private:
  friend class Var;

  int32_t next_id() const { return static_cast<int32_t>(nodes_.size()); }

  Var push(detail::Op op, Array v, Var a = {}, Var b = {}, Var c = {}) {
    detail::Node n;
    n.op = op;
    n.a = a.valid() ? a.id() : -1;
    n.b = b.valid() ? b.id() : -1;
    n.c = c.valid() ? c.id() : -1;
    n.val = std::move(v);
    nodes_.push_back(std::move(n));
    return Var(this, next_id() - 1);
  }

  template <typename F>
  Var unary(detail::Op op, Var a, F&& f) {
    check_tape(a);
    Array v = val(a);
    for (double& x : v) x = f(x);
    return push(op, std::move(v), a);
  }

  const Array& val(Var v) const {
    check_tape(v);
    return nodes_[v.id()].val;
  }

  void check_tape(Var v) const {
    if (v.tape() != this || v.id() < 0 || v.id() >= next_id()) {
      throw std::invalid_argument("tape: operand from a different or empty tape");
    }
  }

  void binary_same_shape(Var a, Var b, const char* what) {
    check_tape(a);
    check_tape(b);
    if (val(a).size() != val(b).size()) {
      throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }
  }

  Array& grad_of(int32_t id) {
    detail::Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
    return n.grad;
  }

  void backprop_node(int32_t id);

  std::vector<detail::Node> nodes_;
  std::vector<int32_t> leaf_ids_;
};

inline const Array& Var::value() const {
  if (!valid()) throw std::logic_error("Var::value on empty handle");
  return tape_->value(id_);
}

inline void Tape::backprop_node(int32_t id) {
  using detail::Op;
  detail::Node& n = nodes_[id];
  const Array& g = n.grad;
  switch (n.op) {
    case Op::kLeaf:
    case Op::kConst:
      break;
    case Op::kAdd: {
      Array& ga = grad_of(n.a);
      Array& gb = grad_of(n.b);
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
      break;
    }
    case Op::kSub: {
      Array& ga = grad_of(n.a);
      Array& gb = grad_of(n.b);
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] -= g[i];
      }
      break;
    }
    case Op::kMul: {
      const Array& av = nodes_[n.a].val;
      const Array& bv = nodes_[n.b].val;
      Array& ga = grad_of(n.a);
      Array& gb = grad_of(n.b);
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * bv[i];
        gb[i] += g[i] * av[i];
      }
      break;
    }
    case Op::kNeg: {
      Array& ga = grad_of(n.a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
      break;
    }
    case Op::kScale: {
      Array& ga = grad_of(n.a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += n.c0 * g[i];
      break;
    }
    case Op::kBroadcastMul: {
      const double sv = nodes_[n.a].val[0];
      const Array& xv = nodes_[n.b].val;
      Array& gs = grad_of(n.a);
      Array& gx = grad_of(n.b);
      double acc = 0.0;
      for (size_t i = 0; i < g.size(); ++i) {
        acc += g[i] * xv[i];
        gx[i] += sv * g[i];
      }
      gs[0] += acc;
      break;
    }
    case Op::kMatVec: {
      const int rows = n.i0, cols = n.i1;
      const Array& mv = nodes_[n.a].val;
      const Array& xv = nodes_[n.b].val;
      Array& gm = grad_of(n.a);
      Array& gx = grad_of(n.b);
      for (int i = 0; i < rows; ++i) {
        const double gi = g[i];
        const double* row = mv.data() + static_cast<size_t>(i) * cols;
        double* grow = gm.data() + static_cast<size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) {
          grow[j] += gi * xv[j];
          gx[j] += gi * row[j];
        }
      }
      break;
    }
    case Op::kExp: {
      Array& ga = grad_of(n.a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.val[i];
      break;
    }
    case Op::kLog: {
      const Array& av = nodes_[n.a].val;
      Array& ga = grad_of(n.a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av[i];
      break;
    }
    case Op::kTanh: {
      Array& ga = grad_of(n.a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - n.val[i] * n.val[i]);
      break;
    }
    case Op::kSigmoid: {
      Array& ga = grad_of(n.a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.val[i] * (1.0 - n.val[i]);
      break;
    }
    case Op::kSoftplus: {
      const Array& av = nodes_[n.a].val;
      Array& ga = grad_of(n.a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * hhp::sigmoid(av[i]);
      break;
    }
    case Op::kCos: {
      const Array& av = nodes_[n.a].val;
      Array& ga = grad_of(n.a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] -= g[i] * std::sin(av[i]);
      break;
    }
    case Op::kSin: {
      const Array& av = nodes_[n.a].val;
      Array& ga = grad_of(n.a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * std::cos(av[i]);
      break;
    }
    case Op::kSum: {
      Array& ga = grad_of(n.a);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
      break;
    }
    case Op::kConcat: {
      Array& ga = grad_of(n.a);
      Array& gb = grad_of(n.b);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[ga.size() + i];
      break;
    }
    case Op::kSlice: {
      Array& ga = grad_of(n.a);
      for (int i = 0; i < n.i1; ++i) ga[n.i0 + i] += g[i];
      break;
    }
    case Op::kRotationLayer: {
      const int theta_off = n.i0, pairs = n.i1;
      const int parity = n.i2 & 1;
      const double wsign = (n.i2 & 2) ? -1.0 : 1.0;
      const int phi_off = theta_off + pairs;
      const Array& xv = nodes_[n.a].val;
      const Array& cv = nodes_[n.b].val;
      const Array& sv = nodes_[n.c].val;
      Array& gx = grad_of(n.a);
      Array& gc = grad_of(n.b);
      Array& gs = grad_of(n.c);
      const int d = static_cast<int>(xv.size()) / 2;
      for (int j = 0; j < pairs; ++j) {
        const int p = 2 * j + parity;
        const int q = (2 * j + 1 + parity) % d;
        const double u = cv[theta_off + j];
        const double w = wsign * sv[theta_off + j];
        const double e = cv[phi_off + j];
        const double f = sv[phi_off + j];
        const double ar = xv[p], ai = xv[d + p];
        const double br = xv[q], bi = xv[d + q];
        const double gar = g[p], gai = g[d + p];
        const double gbr = g[q], gbi = g[d + q];
        // State grads: adjoint rotation applied to the upstream gradient.
        gx[p] += u * gar + w * (e * gbr - f * gbi);
        gx[d + p] += u * gai + w * (f * gbr + e * gbi);
        gx[q] += -w * (e * gar + f * gai) + u * gbr;
        gx[d + q] += w * (f * gar - e * gai) + u * gbi;
        // Angle grads, via the cos/sin inputs (u, w, e, f independent here).
        gc[theta_off + j] += ar * gar + ai * gai + br * gbr + bi * gbi;
        gs[theta_off + j] += wsign * ((-e * br + f * bi) * gar + (-e * bi - f * br) * gai +
                                      (e * ar + f * ai) * gbr + (e * ai - f * ar) * gbi);
        gc[phi_off + j] += w * (-br * gar - bi * gai + ar * gbr + ai * gbi);
        gs[phi_off + j] += w * (bi * gar - br * gai + ai * gbr - ar * gbi);
      }
      break;
    }
    case Op::kDiagExpMul: {
      const double dt = n.c0;
      const Array& dv = nodes_[n.a].val;
      const Array& xv = nodes_[n.b].val;
      Array& gd = grad_of(n.a);
      Array& gx = grad_of(n.b);
      const int d = static_cast<int>(xv.size()) / 2;
      for (int j = 0; j < d; ++j) {
        const double mag = std::exp(dv[j] * dt);
        const double fr = mag * std::cos(dv[d + j] * dt);
        const double fi = mag * std::sin(dv[d + j] * dt);
        const double yr = n.val[j], yi = n.val[d + j];
        const double gr = g[j], gi = g[d + j];
        gx[j] += fr * gr + fi * gi;
        gx[d + j] += -fi * gr + fr * gi;
        gd[j] += dt * (yr * gr + yi * gi);
        gd[d + j] += dt * (-yi * gr + yr * gi);
      }
      break;
    }
  }
}

}  // namespace hhp::ad
