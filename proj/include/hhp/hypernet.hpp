#pragma once

#include <cmath>
#include <vector>

#include "hhp/params.hpp"
#include "hhp/tape.hpp"

namespace hhp {

// Parameter ids (ParamStore indices) for the GRU hypernetwork and emission
// heads. Every GRU layer is h-wide; layer 1 consumes [log dt | mark
// embedding] which is also h-wide, so all gate matrices are h x h.
struct GruLayerIds {
  int wz, uz, bz;  // update gate
  int wr, ur, br;  // reset gate
  int wc, uc, bc;  // candidate
  int z0;          // learned initial state
};

struct HypernetIds {
  std::vector<GruLayerIds> layers;
  int embedding = -1;  // K x (h-1), row-major
  int d_head_w = -1;   // d x h
  int d_head_b = -1;   // d
  int v_head_w = -1;   // angle_count x h
  int v_head_b = -1;   // angle_count
};

namespace detail {

inline ad::Array uniform_fan_in(Rng& rng, int rows, int cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  ad::Array v(static_cast<size_t>(rows) * cols);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return v;
}

inline ad::Array uniform_bias(Rng& rng, int n, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  ad::Array v(n);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return v;
}

}  // namespace detail

inline HypernetIds make_hypernet(ParamStore& store, int layers, int h, int num_marks, int d,
                                 int angle_count, Rng& rng) {
  HypernetIds ids;
  for (int l = 0; l < layers; ++l) {
    const std::string p = "gru" + std::to_string(l) + ".";
    GruLayerIds layer;
    layer.wz = store.add(p + "wz", {h, h}, detail::uniform_fan_in(rng, h, h));
    layer.uz = store.add(p + "uz", {h, h}, detail::uniform_fan_in(rng, h, h));
    layer.bz = store.add(p + "bz", {h}, detail::uniform_bias(rng, h, h));
    layer.wr = store.add(p + "wr", {h, h}, detail::uniform_fan_in(rng, h, h));
    layer.ur = store.add(p + "ur", {h, h}, detail::uniform_fan_in(rng, h, h));
    layer.br = store.add(p + "br", {h}, detail::uniform_bias(rng, h, h));
    layer.wc = store.add(p + "wc", {h, h}, detail::uniform_fan_in(rng, h, h));
    layer.uc = store.add(p + "uc", {h, h}, detail::uniform_fan_in(rng, h, h));
    layer.bc = store.add(p + "bc", {h}, detail::uniform_bias(rng, h, h));
    layer.z0 = store.add(p + "z0", {h}, ad::Array(h, 0.0));
    ids.layers.push_back(layer);
  }
  ad::Array emb(static_cast<size_t>(num_marks) * (h - 1));
  for (double& x : emb) x = rng.normal(0.0, 1.0) * 0.1;
  ids.embedding = store.add("embedding", {num_marks, h - 1}, std::move(emb));
  ids.d_head_w = store.add("d_head.w", {d, h}, detail::uniform_fan_in(rng, d, h));
  ids.d_head_b = store.add("d_head.b", {d}, detail::uniform_bias(rng, d, h));
  if (angle_count > 0) {  // the not_stateful variant has no V head
    ids.v_head_w =
        store.add("v_head.w", {angle_count, h}, detail::uniform_fan_in(rng, angle_count, h));
    ids.v_head_b = store.add("v_head.b", {angle_count}, detail::uniform_bias(rng, angle_count, h));
  }
  return ids;
}

// ---- tape path ----

inline std::vector<ad::Var> gru_init_state(const std::vector<ad::Var>& leaves,
                                           const HypernetIds& ids) {
  std::vector<ad::Var> state;
  state.reserve(ids.layers.size());
  for (const GruLayerIds& l : ids.layers) state.push_back(leaves[l.z0]);
  return state;
}

// [log dt | embedding row of mark]; dt must be > 0.
inline ad::Var embed_event(ad::Tape& tape, const std::vector<ad::Var>& leaves,
                           const HypernetIds& ids, int mark, double dt, int h) {
  if (!(dt > 0.0)) throw std::invalid_argument("embed_event: dt must be > 0");
  ad::Var log_dt = tape.constant(ad::Array{std::log(dt)});
  ad::Var row = tape.slice(leaves[ids.embedding], mark * (h - 1), h - 1);
  return tape.concat(log_dt, row);
}

// Standard GRU cell per layer, layer l's output feeding layer l+1.
inline std::vector<ad::Var> gru_step(ad::Tape& tape, const std::vector<ad::Var>& leaves,
                                     const HypernetIds& ids, const std::vector<ad::Var>& state,
                                     ad::Var input, int h) {
  std::vector<ad::Var> next;
  next.reserve(state.size());
  ad::Var in = input;
  ad::Var ones = tape.constant(ad::Array(h, 1.0));
  for (size_t l = 0; l < ids.layers.size(); ++l) {
    const GruLayerIds& ly = ids.layers[l];
    ad::Var st = state[l];
    ad::Var u = tape.sigmoid(tape.add(
        tape.add(tape.matvec(leaves[ly.wz], h, h, in), tape.matvec(leaves[ly.uz], h, h, st)),
        leaves[ly.bz]));
    ad::Var r = tape.sigmoid(tape.add(
        tape.add(tape.matvec(leaves[ly.wr], h, h, in), tape.matvec(leaves[ly.ur], h, h, st)),
        leaves[ly.br]));
    ad::Var cand = tape.tanh(tape.add(
        tape.add(tape.matvec(leaves[ly.wc], h, h, in),
                 tape.matvec(leaves[ly.uc], h, h, tape.mul(r, st))),
        leaves[ly.bc]));
    ad::Var out = tape.add(tape.mul(tape.sub(ones, u), cand), tape.mul(u, st));
    next.push_back(out);
    in = out;
  }
  return next;
}

// ---- eager path (mirrors the tape arithmetic order) ----

namespace detail {

inline void matvec_eager(const ad::Array& m, int rows, int cols, const ad::Array& x,
                         ad::Array& out) {
  out.assign(rows, 0.0);
  for (int i = 0; i < rows; ++i) {
    double acc = 0.0;
    const double* row = m.data() + static_cast<size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) acc += row[j] * x[j];
    out[i] = acc;
  }
}

}  // namespace detail

inline std::vector<ad::Array> gru_init_state_eager(const ParamStore& store,
                                                   const HypernetIds& ids) {
  std::vector<ad::Array> state;
  state.reserve(ids.layers.size());
  for (const GruLayerIds& l : ids.layers) state.push_back(store[l.z0].value);
  return state;
}

inline ad::Array embed_event_eager(const ParamStore& store, const HypernetIds& ids, int mark,
                                   double dt, int h) {
  if (!(dt > 0.0)) throw std::invalid_argument("embed_event: dt must be > 0");
  ad::Array in(h);
  in[0] = std::log(dt);
  const ad::Array& emb = store[ids.embedding].value;
  for (int j = 0; j < h - 1; ++j) in[1 + j] = emb[static_cast<size_t>(mark) * (h - 1) + j];
  return in;
}

inline void gru_step_eager(const ParamStore& store, const HypernetIds& ids,
                           std::vector<ad::Array>& state, const ad::Array& input, int h) {
  ad::Array in = input;
  ad::Array t1, t2, u(h), r(h), cand(h);
  for (size_t l = 0; l < ids.layers.size(); ++l) {
    const GruLayerIds& ly = ids.layers[l];
    ad::Array& st = state[l];
    detail::matvec_eager(store[ly.wz].value, h, h, in, t1);
    detail::matvec_eager(store[ly.uz].value, h, h, st, t2);
    const ad::Array& bz = store[ly.bz].value;
    for (int i = 0; i < h; ++i) u[i] = sigmoid(t1[i] + t2[i] + bz[i]);
    detail::matvec_eager(store[ly.wr].value, h, h, in, t1);
    detail::matvec_eager(store[ly.ur].value, h, h, st, t2);
    const ad::Array& br = store[ly.br].value;
    for (int i = 0; i < h; ++i) r[i] = sigmoid(t1[i] + t2[i] + br[i]);
    ad::Array rst(h);
    for (int i = 0; i < h; ++i) rst[i] = r[i] * st[i];
    detail::matvec_eager(store[ly.wc].value, h, h, in, t1);
    detail::matvec_eager(store[ly.uc].value, h, h, rst, t2);
    const ad::Array& bc = store[ly.bc].value;
    for (int i = 0; i < h; ++i) cand[i] = std::tanh(t1[i] + t2[i] + bc[i]);
    for (int i = 0; i < h; ++i) st[i] = (1.0 - u[i]) * cand[i] + u[i] * st[i];
    in = st;
  }
}

}  // namespace hhp
