#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "modcomp/param_tree.hpp"

namespace modcomp {

// Adam with decoupled weight decay: the decay term scales the parameter
// directly and never enters the moment estimates.
struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.01;
};

template <class R>
struct AdamStateT {
  std::map<std::string, std::vector<R>> m, v;

  static AdamStateT init(const ParamTreeT<R>& params) {
    AdamStateT s;
    for (const auto& [name, t] : params.entries) {
      s.m.emplace(name, std::vector<R>(t.data->size(), R(0)));
      s.v.emplace(name, std::vector<R>(t.data->size(), R(0)));
    }
    return s;
  }
};

using AdamState = AdamStateT<float>;

// One bias-corrected update; t is the 1-based step count.
template <class R>
void adam_step(ParamTreeT<R>& params, const ParamTreeT<R>& grads, AdamStateT<R>& state,
               const AdamHyper& h, std::int64_t t) {
  if (t < 1) throw ArgumentError("adam_step: step count must be >= 1");
  check_same_structure(params, grads);
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (auto& [name, p] : params.entries) {
    const TensorT<R>& g = grads.at(name);
    auto mi = state.m.find(name);
    auto vi = state.v.find(name);
    if (mi == state.m.end() || vi == state.v.end() || mi->second.size() != p.data->size())
      throw StructureError("adam_step: state does not match entry '" + name + "'");
    R* pd = p.ptr();
    const R* gd = g.ptr();
    R* m = mi->second.data();
    R* v = vi->second.data();
    const std::int64_t n = p.numel();
    for (std::int64_t i = 0; i < n; ++i) {
      const double gi = static_cast<double>(gd[i]);
      const double mn = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
      const double vn = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
      m[i] = static_cast<R>(mn);
      v[i] = static_cast<R>(vn);
      const double mhat = mn / bc1;
      const double vhat = vn / bc2;
      double pd_i = static_cast<double>(pd[i]);
      pd_i -= h.lr * h.weight_decay * pd_i;
      pd_i -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
      pd[i] = static_cast<R>(pd_i);
    }
  }
}

}  // namespace modcomp
