#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "modcomp/ops.hpp"
#include "modcomp/rng.hpp"
#include "modcomp/tensor.hpp"

namespace testutil {

using modcomp::Rng;
using modcomp::TapeT;
using modcomp::TensorT;

template <class R>
TensorT<R> random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = false,
                         double scale = 1.0) {
  TensorT<R> t = TensorT<R>::zeros(std::move(shape), requires_grad);
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.ptr()[i] = static_cast<R>(rng.next_normal() * scale);
  return t;
}

// Reduces a rank-2 tensor to a scalar through two matmuls so the reduction
// itself is differentiated by the ops under test.
inline TensorT<double> scalarize(TapeT<double>* tape, const TensorT<double>& x,
                                 const std::vector<double>& left,
                                 const std::vector<double>& right) {
  const int m = x.shape[0], n = x.shape[1];
  auto l = TensorT<double>::from_values({1, m}, std::vector<double>(left.begin(), left.begin() + m));
  auto r =
      TensorT<double>::from_values({n, 1}, std::vector<double>(right.begin(), right.begin() + n));
  return modcomp::matmul(tape, modcomp::matmul(tape, l, x), r);
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::int64_t checked = 0;
};

// Central finite differences against the analytic gradient of `param` under
// the scalar-valued graph built by loss_fn. loss_fn must rebuild the full
// graph on every call (the tape argument is null for the probe evaluations).
inline GradCheckResult check_gradient(
    TensorT<double>& param, const std::function<TensorT<double>(TapeT<double>*)>& loss_fn,
    std::int64_t max_probes = 64) {
  TapeT<double> tape;
  param.zero_grad();
  TensorT<double> loss = loss_fn(&tape);
  modcomp::backward(tape, loss);
  std::vector<double> analytic = *param.grad;

  GradCheckResult res;
  const std::int64_t n = param.numel();
  const std::int64_t stride = n <= max_probes ? 1 : n / max_probes;
  for (std::int64_t i = 0; i < n; i += stride) {
    const double x0 = param.ptr()[i];
    const double h = 1e-5 * std::max(1.0, std::fabs(x0));
    param.ptr()[i] = x0 + h;
    const double lp = loss_fn(nullptr).at(0);
    param.ptr()[i] = x0 - h;
    const double lm = loss_fn(nullptr).at(0);
    param.ptr()[i] = x0;
    const double fd = (lp - lm) / (2.0 * h);
    const double denom = std::max({1e-6, std::fabs(fd), std::fabs(analytic[i])});
    res.max_rel_err = std::max(res.max_rel_err, std::fabs(fd - analytic[i]) / denom);
    ++res.checked;
  }
  return res;
}

}  // namespace testutil
