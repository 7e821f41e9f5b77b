#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "hhp/tape.hpp"

namespace hhp {

struct ParamInfo {
  std::string name;
  std::vector<int> shape;
  ad::Array value;
};

// Named, ordered collection of flat parameter arrays. The index assigned by
// add() is stable and doubles as the leaf index when a store is bound to a
// tape, so GradientMap entries line up with parameters.
class ParamStore {
 public:
  int add(std::string name, std::vector<int> shape, ad::Array value) {
    size_t expected = 1;
    for (int s : shape) expected *= static_cast<size_t>(s);
    if (expected != value.size()) throw std::invalid_argument("param " + name + ": shape mismatch");
    for (const ParamInfo& p : params_) {
      if (p.name == name) throw std::invalid_argument("duplicate param name: " + name);
    }
    params_.push_back(ParamInfo{std::move(name), std::move(shape), std::move(value)});
    return static_cast<int>(params_.size()) - 1;
  }

  size_t size() const { return params_.size(); }
  ParamInfo& operator[](size_t i) { return params_[i]; }
  const ParamInfo& operator[](size_t i) const { return params_[i]; }

  size_t scalar_count() const {
    size_t n = 0;
    for (const ParamInfo& p : params_) n += p.value.size();
    return n;
  }

  int index_of(const std::string& name) const {
    for (size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  // Binds every parameter as a tape leaf, in index order.
  std::vector<ad::Var> bind(ad::Tape& tape) const {
    std::vector<ad::Var> leaves;
    leaves.reserve(params_.size());
    for (const ParamInfo& p : params_) leaves.push_back(tape.leaf(p.value));
    return leaves;
  }

  std::vector<ad::Array> values() const {
    std::vector<ad::Array> out;
    out.reserve(params_.size());
    for (const ParamInfo& p : params_) out.push_back(p.value);
    return out;
  }

  void set_values(const std::vector<ad::Array>& values) {
    if (values.size() != params_.size()) throw std::invalid_argument("set_values: size mismatch");
    for (size_t i = 0; i < values.size(); ++i) {
      if (values[i].size() != params_[i].value.size()) {
        throw std::invalid_argument("set_values: shape mismatch for " + params_[i].name);
      }
      params_[i].value = values[i];
    }
  }

 private:
  std::vector<ParamInfo> params_;
};

// Accumulates per-sequence gradient maps; summation order is the caller's.
inline void accumulate(std::vector<ad::Array>& into, const ad::GradientMap& grads, double scale) {
  if (into.size() < grads.leaf_grads.size()) into.resize(grads.leaf_grads.size());
  for (size_t i = 0; i < grads.leaf_grads.size(); ++i) {
    const ad::Array& g = grads.leaf_grads[i];
    if (g.empty()) continue;
    if (into[i].empty()) into[i].assign(g.size(), 0.0);
    for (size_t j = 0; j < g.size(); ++j) into[i][j] += scale * g[j];
  }
}

}  // namespace hhp
