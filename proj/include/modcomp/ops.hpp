#pragma once

#include <span>
#include <vector>

#include "modcomp/kernels.hpp"
#include "modcomp/tensor.hpp"

// Differentiable operations over TensorT. Each op runs its forward kernel and,
// when a tape is supplied and an input carries a gradient buffer, records a
// closure with the matching backward kernels. Passing tape == nullptr gives a
// plain inference path.

namespace modcomp {

namespace detail {
template <class R>
inline bool wants_grad(const TapeT<R>* tape, std::initializer_list<const TensorT<R>*> inputs) {
  if (!tape) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}
}  // namespace detail

template <class R>
TensorT<R> matmul(TapeT<R>* tape, const TensorT<R>& a, const TensorT<R>& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2)
    throw DimensionError("matmul: expected rank-2 tensors");
  if (a.shape[1] != b.shape[0]) throw DimensionError("matmul: inner dimensions do not match");
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  const bool rg = detail::wants_grad(tape, {&a, &b});
  TensorT<R> out = TensorT<R>::zeros({m, n}, rg);
  kern::matmul(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  if (rg) {
    tape->record([a, b, out, m, k, n]() {
      if (a.requires_grad()) kern::matmul_nt_acc(out.gptr(), b.ptr(), a.gptr(), m, k, n);
      if (b.requires_grad()) kern::matmul_tn_acc(a.ptr(), out.gptr(), b.gptr(), k, n, m);
    });
  }
  return out;
}

// a [m x k] times b^T with b stored [n x k].
template <class R>
TensorT<R> matmul_nt(TapeT<R>* tape, const TensorT<R>& a, const TensorT<R>& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2)
    throw DimensionError("matmul_nt: expected rank-2 tensors");
  if (a.shape[1] != b.shape[1]) throw DimensionError("matmul_nt: inner dimensions do not match");
  const int m = a.shape[0], k = a.shape[1], n = b.shape[0];
  const bool rg = detail::wants_grad(tape, {&a, &b});
  TensorT<R> out = TensorT<R>::zeros({m, n}, rg);
  // out = a * b^T  ==  acc variant over zeroed buffer
  kern::matmul_nt_acc(a.ptr(), b.ptr(), out.ptr(), m, n, k);
  if (rg) {
    tape->record([a, b, out, m, k, n]() {
      // dA += dOut * B ; dB += dOut^T * A
      if (a.requires_grad()) {
        std::vector<R> tmp(static_cast<std::size_t>(m) * k, R(0));
        kern::matmul(out.gptr(), b.ptr(), tmp.data(), m, n, k);
        kern::acc(a.gptr(), tmp.data(), static_cast<std::int64_t>(tmp.size()));
      }
      if (b.requires_grad()) kern::matmul_tn_acc(out.gptr(), a.ptr(), b.gptr(), n, k, m);
    });
  }
  return out;
}

template <class R>
TensorT<R> add(TapeT<R>* tape, const TensorT<R>& a, const TensorT<R>& b) {
  if (a.shape != b.shape) throw DimensionError("add: shape mismatch");
  const bool rg = detail::wants_grad(tape, {&a, &b});
  TensorT<R> out = TensorT<R>::zeros(a.shape, rg);
  kern::add(a.ptr(), b.ptr(), out.ptr(), out.numel());
  if (rg) {
    tape->record([a, b, out]() {
      if (a.requires_grad()) kern::acc(a.gptr(), out.gptr(), out.numel());
      if (b.requires_grad()) kern::acc(b.gptr(), out.gptr(), out.numel());
    });
  }
  return out;
}

// x [rows x cols] plus bias v [cols] broadcast over rows.
template <class R>
TensorT<R> add_bias(TapeT<R>* tape, const TensorT<R>& x, const TensorT<R>& v) {
  if (x.shape.size() != 2 || v.shape.size() != 1 || x.shape[1] != v.shape[0])
    throw DimensionError("add_bias: expected [r x c] plus [c]");
  const int rows = x.shape[0], cols = x.shape[1];
  const bool rg = detail::wants_grad(tape, {&x, &v});
  TensorT<R> out = TensorT<R>::zeros(x.shape, rg);
  kern::add_rows(x.ptr(), v.ptr(), out.ptr(), rows, cols);
  if (rg) {
    tape->record([x, v, out, rows, cols]() {
      if (x.requires_grad()) kern::acc(x.gptr(), out.gptr(), out.numel());
      if (v.requires_grad()) {
        R* dv = v.gptr();
        const R* g = out.gptr();
        for (int j = 0; j < cols; ++j) {
          R s = R(0);
          for (int i = 0; i < rows; ++i) s += g[static_cast<std::size_t>(i) * cols + j];
          dv[j] += s;
        }
      }
    });
  }
  return out;
}

template <class R>
TensorT<R> linear(TapeT<R>* tape, const TensorT<R>& x, const TensorT<R>& w, const TensorT<R>& b) {
  return add_bias(tape, matmul(tape, x, w), b);
}

template <class R>
TensorT<R> embedding(TapeT<R>* tape, const TensorT<R>& table, std::span<const int> ids) {
  if (table.shape.size() != 2) throw DimensionError("embedding: table must be rank-2");
  const int v = table.shape[0], cols = table.shape[1];
  for (int id : ids)
    if (id < 0 || id >= v) throw IndexError("embedding: token id out of range");
  const int n = static_cast<int>(ids.size());
  const bool rg = detail::wants_grad(tape, {&table});
  TensorT<R> out = TensorT<R>::zeros({n, cols}, rg);
  std::vector<int> idv(ids.begin(), ids.end());
  kern::gather_rows(table.ptr(), idv.data(), out.ptr(), n, cols);
  if (rg) {
    tape->record([table, out, idv, n, cols]() {
      kern::scatter_rows_acc(out.gptr(), idv.data(), table.gptr(), n, cols);
    });
  }
  return out;
}

template <class R>
TensorT<R> layer_norm(TapeT<R>* tape, const TensorT<R>& x, const TensorT<R>& gamma,
                      const TensorT<R>& beta, R eps = R(1e-5)) {
  if (x.shape.size() != 2 || gamma.shape.size() != 1 || beta.shape.size() != 1 ||
      gamma.shape[0] != x.shape[1] || beta.shape[0] != x.shape[1])
    throw DimensionError("layer_norm: shape mismatch");
  const int rows = x.shape[0], cols = x.shape[1];
  const bool rg = detail::wants_grad(tape, {&x, &gamma, &beta});
  TensorT<R> out = TensorT<R>::zeros(x.shape, rg);
  auto mean = std::make_shared<std::vector<R>>(rows);
  auto rstd = std::make_shared<std::vector<R>>(rows);
  kern::layernorm_rows(x.ptr(), gamma.ptr(), beta.ptr(), out.ptr(), mean->data(), rstd->data(), rows,
                       cols, eps);
  if (rg) {
    tape->record([x, gamma, beta, out, mean, rstd, rows, cols]() {
      if (x.requires_grad())
        kern::layernorm_rows_bwd_x(x.ptr(), gamma.ptr(), mean->data(), rstd->data(), out.gptr(),
                                   x.gptr(), rows, cols);
      if (gamma.requires_grad() || beta.requires_grad()) {
        std::vector<R> dg(cols, R(0)), db(cols, R(0));
        kern::layernorm_rows_bwd_params(x.ptr(), mean->data(), rstd->data(), out.gptr(), dg.data(),
                                        db.data(), rows, cols);
        if (gamma.requires_grad()) kern::acc(gamma.gptr(), dg.data(), cols);
        if (beta.requires_grad()) kern::acc(beta.gptr(), db.data(), cols);
      }
    });
  }
  return out;
}

template <class R>
TensorT<R> gelu(TapeT<R>* tape, const TensorT<R>& x) {
  const bool rg = detail::wants_grad(tape, {&x});
  TensorT<R> out = TensorT<R>::zeros(x.shape, rg);
  kern::gelu(x.ptr(), out.ptr(), x.numel());
  if (rg) {
    tape->record([x, out]() { kern::gelu_bwd(x.ptr(), out.gptr(), x.gptr(), x.numel()); });
  }
  return out;
}

template <class R>
TensorT<R> relu(TapeT<R>* tape, const TensorT<R>& x) {
  const bool rg = detail::wants_grad(tape, {&x});
  TensorT<R> out = TensorT<R>::zeros(x.shape, rg);
  kern::relu(x.ptr(), out.ptr(), x.numel());
  if (rg) {
    tape->record([x, out]() { kern::relu_bwd(x.ptr(), out.gptr(), x.gptr(), x.numel()); });
  }
  return out;
}

// Scaled dot-product causal attention over projected q,k,v of shape [T x d].
template <class R>
TensorT<R> causal_attention(TapeT<R>* tape, const TensorT<R>& q, const TensorT<R>& k,
                            const TensorT<R>& v, int n_heads) {
  if (q.shape.size() != 2 || q.shape != k.shape || q.shape != v.shape)
    throw DimensionError("attention: q,k,v must share shape [T x d]");
  const int T = q.shape[0], d = q.shape[1];
  if (n_heads <= 0 || d % n_heads != 0) throw DimensionError("attention: heads must divide d");
  const bool rg = detail::wants_grad(tape, {&q, &k, &v});
  TensorT<R> out = TensorT<R>::zeros(q.shape, rg);
  auto w = std::make_shared<std::vector<R>>(static_cast<std::size_t>(n_heads) * T * T);
  kern::attention(q.ptr(), k.ptr(), v.ptr(), w->data(), out.ptr(), T, d, n_heads);
  if (rg) {
    tape->record([q, k, v, out, w, T, d, n_heads]() {
      std::vector<R> ds(w->size());
      kern::attention_bwd_scores(v.ptr(), w->data(), out.gptr(), ds.data(), T, d, n_heads);
      if (q.requires_grad()) kern::attention_bwd_q(k.ptr(), ds.data(), q.gptr(), T, d, n_heads);
      if (k.requires_grad() || v.requires_grad()) {
        std::vector<R> dk(q.numel(), R(0)), dv(q.numel(), R(0));
        kern::attention_bwd_kv(q.ptr(), w->data(), ds.data(), out.gptr(), dk.data(), dv.data(),
                               T, d, n_heads);
        if (k.requires_grad()) kern::acc(k.gptr(), dk.data(), k.numel());
        if (v.requires_grad()) kern::acc(v.gptr(), dv.data(), v.numel());
      }
    });
  }
  return out;
}

// Row-wise softmax over the last dimension of a rank-2 tensor.
template <class R>
TensorT<R> softmax(TapeT<R>* tape, const TensorT<R>& x) {
  if (x.shape.empty()) throw DimensionError("softmax: scalar input");
  const int cols = x.shape.back();
  const int rows = static_cast<int>(x.numel() / cols);
  const bool rg = detail::wants_grad(tape, {&x});
  TensorT<R> out = TensorT<R>::zeros(x.shape, rg);
  kern::softmax_rows(x.ptr(), out.ptr(), rows, cols);
  if (rg) {
    tape->record([x, out, rows, cols]() {
      kern::softmax_rows_bwd(out.ptr(), out.gptr(), x.gptr(), rows, cols);
    });
  }
  return out;
}

// Mean over positions of -log softmax(logits)[target]; returns a scalar tensor.
template <class R>
TensorT<R> cross_entropy_mean(TapeT<R>* tape, const TensorT<R>& logits, std::span<const int> targets) {
  if (logits.shape.size() != 2) throw DimensionError("cross_entropy: logits must be [T x V]");
  const int rows = logits.shape[0], cols = logits.shape[1];
  if (static_cast<int>(targets.size()) != rows)
    throw DimensionError("cross_entropy: target count does not match rows");
  for (int t : targets)
    if (t < 0 || t >= cols) throw IndexError("cross_entropy: target id out of range");
  const bool rg = detail::wants_grad(tape, {&logits});
  auto probs = std::make_shared<std::vector<R>>(logits.numel());
  std::vector<R> nll(rows);
  std::vector<int> tv(targets.begin(), targets.end());
  kern::cross_entropy_rows(logits.ptr(), tv.data(), probs->data(), nll.data(), rows, cols);
  double sum = 0.0;
  for (R x : nll) sum += static_cast<double>(x);
  TensorT<R> out = TensorT<R>::from_values({1}, {static_cast<R>(sum / rows)}, rg);
  if (rg) {
    tape->record([logits, out, probs, tv, rows, cols]() {
      const R g = out.gptr()[0] / static_cast<R>(rows);
      kern::cross_entropy_bwd(probs->data(), tv.data(), g, logits.gptr(), rows, cols);
    });
  }
  return out;
}

// Seeds the scalar loss with gradient 1 and replays the tape.
template <class R>
void backward(TapeT<R>& tape, TensorT<R>& loss) {
  if (!loss.requires_grad()) throw ArgumentError("backward: loss does not carry a gradient buffer");
  loss.gptr()[0] = R(1);
  tape.backward();
}

}  // namespace modcomp
