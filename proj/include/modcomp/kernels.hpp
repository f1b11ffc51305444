#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

// Raw dense kernels. Every kernel comes in two flavours with identical
// semantics: kern::serial::* is the plain reference implementation, kern::*
// adds OpenMP across the outer loop. Each output element is owned by exactly
// one thread and is computed by the same serial inner loop, so the parallel
// kernels produce bit-identical results to the reference ones. Tests assert
// that; tools/bench_kernels compares their throughput.

namespace modcomp::kern {

// Work threshold below which the OpenMP versions stay single-threaded.
inline constexpr std::int64_t kOmpMinWork = 1 << 15;

namespace serial {

template <class R>
void matmul(const R* a, const R* b, R* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    R* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = R(0);
    for (int t = 0; t < k; ++t) {
      const R ait = a[static_cast<std::size_t>(i) * k + t];
      const R* bt = b + static_cast<std::size_t>(t) * n;
      for (int j = 0; j < n; ++j) ci[j] += ait * bt[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
template <class R>
void matmul_nt_acc(const R* a, const R* b, R* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const R* ai = a + static_cast<std::size_t>(i) * k;
    R* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const R* bj = b + static_cast<std::size_t>(j) * k;
      R acc = R(0);
      for (int t = 0; t < k; ++t) acc += ai[t] * bj[t];
      ci[j] += acc;
    }
  }
}

// c[m x n] += a[k x m]^T * b[k x n]
template <class R>
void matmul_tn_acc(const R* a, const R* b, R* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    R* ci = c + static_cast<std::size_t>(i) * n;
    for (int t = 0; t < k; ++t) {
      const R ati = a[static_cast<std::size_t>(t) * m + i];
      const R* bt = b + static_cast<std::size_t>(t) * n;
      for (int j = 0; j < n; ++j) ci[j] += ati * bt[j];
    }
  }
}

template <class R>
void add(const R* a, const R* b, R* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <class R>
void acc(R* dst, const R* src, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

template <class R>
void acc_scaled(R* dst, const R* src, R s, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) dst[i] += s * src[i];
}

template <class R>
void add_rows(const R* x, const R* v, R* y, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    const R* xi = x + static_cast<std::size_t>(i) * cols;
    R* yi = y + static_cast<std::size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) yi[j] = xi[j] + v[j];
  }
}

template <class R>
void softmax_row(const R* x, R* y, int n) {
  R mx = x[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  R sum = R(0);
  for (int j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const R inv = R(1) / sum;
  for (int j = 0; j < n; ++j) y[j] *= inv;
}

template <class R>
void softmax_rows(const R* x, R* y, int rows, int cols) {
  for (int i = 0; i < rows; ++i)
    softmax_row(x + static_cast<std::size_t>(i) * cols, y + static_cast<std::size_t>(i) * cols, cols);
}

// dx += y * (dy - sum_j dy_j * y_j), rowwise
template <class R>
void softmax_rows_bwd(const R* y, const R* dy, R* dx, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    const R* yi = y + static_cast<std::size_t>(i) * cols;
    const R* di = dy + static_cast<std::size_t>(i) * cols;
    R* oi = dx + static_cast<std::size_t>(i) * cols;
    R dot = R(0);
    for (int j = 0; j < cols; ++j) dot += di[j] * yi[j];
    for (int j = 0; j < cols; ++j) oi[j] += yi[j] * (di[j] - dot);
  }
}

template <class R>
void layernorm_rows(const R* x, const R* gamma, const R* beta, R* y, R* mean, R* rstd, int rows,
                    int cols, R eps) {
  for (int i = 0; i < rows; ++i) {
    const R* xi = x + static_cast<std::size_t>(i) * cols;
    R* yi = y + static_cast<std::size_t>(i) * cols;
    R mu = R(0);
    for (int j = 0; j < cols; ++j) mu += xi[j];
    mu /= static_cast<R>(cols);
    R var = R(0);
    for (int j = 0; j < cols; ++j) {
      const R d = xi[j] - mu;
      var += d * d;
    }
    var /= static_cast<R>(cols);
    const R rs = R(1) / std::sqrt(var + eps);
    mean[i] = mu;
    rstd[i] = rs;
    for (int j = 0; j < cols; ++j) yi[j] = (xi[j] - mu) * rs * gamma[j] + beta[j];
  }
}

template <class R>
void layernorm_rows_bwd_x(const R* x, const R* gamma, const R* mean, const R* rstd, const R* dy,
                          R* dx, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    const R* xi = x + static_cast<std::size_t>(i) * cols;
    const R* di = dy + static_cast<std::size_t>(i) * cols;
    R* oi = dx + static_cast<std::size_t>(i) * cols;
    const R mu = mean[i], rs = rstd[i];
    R m1 = R(0), m2 = R(0);
    for (int j = 0; j < cols; ++j) {
      const R xhat = (xi[j] - mu) * rs;
      const R dxhat = di[j] * gamma[j];
      m1 += dxhat;
      m2 += dxhat * xhat;
    }
    m1 /= static_cast<R>(cols);
    m2 /= static_cast<R>(cols);
    for (int j = 0; j < cols; ++j) {
      const R xhat = (xi[j] - mu) * rs;
      const R dxhat = di[j] * gamma[j];
      oi[j] += rs * (dxhat - m1 - xhat * m2);
    }
  }
}

// dgamma[j] += sum_i dy[i,j]*xhat[i,j]; dbeta[j] += sum_i dy[i,j]
template <class R>
void layernorm_rows_bwd_params(const R* x, const R* mean, const R* rstd, const R* dy, R* dgamma,
                               R* dbeta, int rows, int cols) {
  for (int j = 0; j < cols; ++j) {
    R dg = R(0), db = R(0);
    for (int i = 0; i < rows; ++i) {
      const std::size_t idx = static_cast<std::size_t>(i) * cols + j;
      const R xhat = (x[idx] - mean[i]) * rstd[i];
      dg += dy[idx] * xhat;
      db += dy[idx];
    }
    dgamma[j] += dg;
    dbeta[j] += db;
  }
}

template <class R>
inline R gelu_one(R x) {
  const R c = R(0.7978845608028654);  // sqrt(2/pi)
  const R a = R(0.044715);
  return R(0.5) * x * (R(1) + std::tanh(c * (x + a * x * x * x)));
}

template <class R>
inline R gelu_grad_one(R x) {
  const R c = R(0.7978845608028654);
  const R a = R(0.044715);
  const R u = c * (x + a * x * x * x);
  const R t = std::tanh(u);
  return R(0.5) * (R(1) + t) + R(0.5) * x * (R(1) - t * t) * c * (R(1) + R(3) * a * x * x);
}

template <class R>
void gelu(const R* x, R* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = gelu_one(x[i]);
}

template <class R>
void gelu_bwd(const R* x, const R* dy, R* dx, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) dx[i] += dy[i] * gelu_grad_one(x[i]);
}

template <class R>
void relu(const R* x, R* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > R(0) ? x[i] : R(0);
}

template <class R>
void relu_bwd(const R* x, const R* dy, R* dx, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) dx[i] += x[i] > R(0) ? dy[i] : R(0);
}

// Causal multi-head attention over already-projected q,k,v of shape [T x d].
// Attention weights are written to w [heads x T x T] (zero above the diagonal)
// for reuse in the backward pass.
template <class R>
void attention(const R* q, const R* k, const R* v, R* w, R* out, int T, int d, int heads) {
  const int hs = d / heads;
  const R scale = R(1) / std::sqrt(static_cast<R>(hs));
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < T; ++i) {
      R* wrow = w + (static_cast<std::size_t>(h) * T + i) * T;
      const R* qi = q + static_cast<std::size_t>(i) * d + h * hs;
      R mx = R(0);
      for (int j = 0; j <= i; ++j) {
        const R* kj = k + static_cast<std::size_t>(j) * d + h * hs;
        R s = R(0);
        for (int t = 0; t < hs; ++t) s += qi[t] * kj[t];
        s *= scale;
        wrow[j] = s;
        mx = j == 0 ? s : std::max(mx, s);
      }
      R sum = R(0);
      for (int j = 0; j <= i; ++j) {
        wrow[j] = std::exp(wrow[j] - mx);
        sum += wrow[j];
      }
      const R inv = R(1) / sum;
      for (int j = 0; j <= i; ++j) wrow[j] *= inv;
      for (int j = i + 1; j < T; ++j) wrow[j] = R(0);
      R* oi = out + static_cast<std::size_t>(i) * d + h * hs;
      for (int t = 0; t < hs; ++t) oi[t] = R(0);
      for (int j = 0; j <= i; ++j) {
        const R* vj = v + static_cast<std::size_t>(j) * d + h * hs;
        const R wij = wrow[j];
        for (int t = 0; t < hs; ++t) oi[t] += wij * vj[t];
      }
    }
  }
}

// ds[h,i,j] = w[h,i,j] * (dot(dOut_i, v_j) - sum_j' w[h,i,j'] dot(dOut_i, v_j'))
template <class R>
void attention_bwd_scores(const R* v, const R* w, const R* dout, R* ds, int T, int d, int heads) {
  const int hs = d / heads;
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < T; ++i) {
      const R* wrow = w + (static_cast<std::size_t>(h) * T + i) * T;
      R* dsrow = ds + (static_cast<std::size_t>(h) * T + i) * T;
      const R* doi = dout + static_cast<std::size_t>(i) * d + h * hs;
      R mix = R(0);
      for (int j = 0; j <= i; ++j) {
        const R* vj = v + static_cast<std::size_t>(j) * d + h * hs;
        R dw = R(0);
        for (int t = 0; t < hs; ++t) dw += doi[t] * vj[t];
        dsrow[j] = dw;
        mix += wrow[j] * dw;
      }
      for (int j = 0; j <= i; ++j) dsrow[j] = wrow[j] * (dsrow[j] - mix);
      for (int j = i + 1; j < T; ++j) dsrow[j] = R(0);
    }
  }
}

template <class R>
void attention_bwd_q(const R* k, const R* ds, R* dq, int T, int d, int heads) {
  const int hs = d / heads;
  const R scale = R(1) / std::sqrt(static_cast<R>(hs));
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < T; ++i) {
      const R* dsrow = ds + (static_cast<std::size_t>(h) * T + i) * T;
      R* dqi = dq + static_cast<std::size_t>(i) * d + h * hs;
      for (int j = 0; j <= i; ++j) {
        const R* kj = k + static_cast<std::size_t>(j) * d + h * hs;
        const R g = dsrow[j] * scale;
        for (int t = 0; t < hs; ++t) dqi[t] += g * kj[t];
      }
    }
  }
}

template <class R>
void attention_bwd_kv(const R* q, const R* w, const R* ds, const R* dout, R* dk, R* dv,
                      int T, int d, int heads) {
  const int hs = d / heads;
  const R scale = R(1) / std::sqrt(static_cast<R>(hs));
  for (int h = 0; h < heads; ++h) {
    for (int j = 0; j < T; ++j) {
      R* dkj = dk + static_cast<std::size_t>(j) * d + h * hs;
      R* dvj = dv + static_cast<std::size_t>(j) * d + h * hs;
      for (int i = j; i < T; ++i) {
        const R* qi = q + static_cast<std::size_t>(i) * d + h * hs;
        const R* doi = dout + static_cast<std::size_t>(i) * d + h * hs;
        const R dsij = ds[(static_cast<std::size_t>(h) * T + i) * T + j] * scale;
        const R wij = w[(static_cast<std::size_t>(h) * T + i) * T + j];
        for (int t = 0; t < hs; ++t) {
          dkj[t] += dsij * qi[t];
          dvj[t] += wij * doi[t];
        }
      }
    }
  }
}

template <class R>
void gather_rows(const R* table, const int* ids, R* out, int n, int cols) {
  for (int i = 0; i < n; ++i) {
    const R* src = table + static_cast<std::size_t>(ids[i]) * cols;
    R* dst = out + static_cast<std::size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) dst[j] = src[j];
  }
}

// dtable[ids[i]] += dout[i]; iterates columns in the outer loop so rows that
// share an id never race in the parallel variant.
template <class R>
void scatter_rows_acc(const R* dout, const int* ids, R* dtable, int n, int cols) {
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < n; ++i) {
      dtable[static_cast<std::size_t>(ids[i]) * cols + j] +=
          dout[static_cast<std::size_t>(i) * cols + j];
    }
  }
}

// Per-row negative log-likelihood of the target column; probs gets the full
// softmax rows for reuse in the backward pass.
template <class R>
void cross_entropy_rows(const R* logits, const int* targets, R* probs, R* nll, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    const R* xi = logits + static_cast<std::size_t>(i) * cols;
    R* pi = probs + static_cast<std::size_t>(i) * cols;
    softmax_row(xi, pi, cols);
    nll[i] = -std::log(pi[targets[i]]);
  }
}

// dlogits[i] += g * (probs[i] - onehot(target_i))
template <class R>
void cross_entropy_bwd(const R* probs, const int* targets, R g, R* dlogits, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    const R* pi = probs + static_cast<std::size_t>(i) * cols;
    R* di = dlogits + static_cast<std::size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) di[j] += g * pi[j];
    di[targets[i]] -= g;
  }
}

}  // namespace serial

template <class R>
void matmul(const R* a, const R* b, R* c, int m, int k, int n) {
  const std::int64_t work = static_cast<std::int64_t>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int i = 0; i < m; ++i) {
    R* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = R(0);
    for (int t = 0; t < k; ++t) {
      const R ait = a[static_cast<std::size_t>(i) * k + t];
      const R* bt = b + static_cast<std::size_t>(t) * n;
      for (int j = 0; j < n; ++j) ci[j] += ait * bt[j];
    }
  }
}

template <class R>
void matmul_nt_acc(const R* a, const R* b, R* c, int m, int n, int k) {
  const std::int64_t work = static_cast<std::int64_t>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int i = 0; i < m; ++i) {
    const R* ai = a + static_cast<std::size_t>(i) * k;
    R* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const R* bj = b + static_cast<std::size_t>(j) * k;
      R acc = R(0);
      for (int t = 0; t < k; ++t) acc += ai[t] * bj[t];
      ci[j] += acc;
    }
  }
}

template <class R>
void matmul_tn_acc(const R* a, const R* b, R* c, int m, int n, int k) {
  const std::int64_t work = static_cast<std::int64_t>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int i = 0; i < m; ++i) {
    R* ci = c + static_cast<std::size_t>(i) * n;
    for (int t = 0; t < k; ++t) {
      const R ati = a[static_cast<std::size_t>(t) * m + i];
      const R* bt = b + static_cast<std::size_t>(t) * n;
      for (int j = 0; j < n; ++j) ci[j] += ati * bt[j];
    }
  }
}

template <class R>
void add(const R* a, const R* b, R* y, std::int64_t n) {
#pragma omp parallel for schedule(static) if (n > kOmpMinWork)
  for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <class R>
void acc(R* dst, const R* src, std::int64_t n) {
#pragma omp parallel for schedule(static) if (n > kOmpMinWork)
  for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

template <class R>
void acc_scaled(R* dst, const R* src, R s, std::int64_t n) {
#pragma omp parallel for schedule(static) if (n > kOmpMinWork)
  for (std::int64_t i = 0; i < n; ++i) dst[i] += s * src[i];
}

template <class R>
void add_rows(const R* x, const R* v, R* y, int rows, int cols) {
  const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int i = 0; i < rows; ++i) {
    const R* xi = x + static_cast<std::size_t>(i) * cols;
    R* yi = y + static_cast<std::size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) yi[j] = xi[j] + v[j];
  }
}

template <class R>
void softmax_rows(const R* x, R* y, int rows, int cols) {
  const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int i = 0; i < rows; ++i)
    serial::softmax_row(x + static_cast<std::size_t>(i) * cols, y + static_cast<std::size_t>(i) * cols,
                        cols);
}

template <class R>
void softmax_rows_bwd(const R* y, const R* dy, R* dx, int rows, int cols) {
  const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int i = 0; i < rows; ++i)
    serial::softmax_rows_bwd(y + static_cast<std::size_t>(i) * cols,
                             dy + static_cast<std::size_t>(i) * cols,
                             dx + static_cast<std::size_t>(i) * cols, 1, cols);
}

template <class R>
void layernorm_rows(const R* x, const R* gamma, const R* beta, R* y, R* mean, R* rstd, int rows,
                    int cols, R eps) {
  const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int i = 0; i < rows; ++i)
    serial::layernorm_rows(x + static_cast<std::size_t>(i) * cols, gamma, beta,
                           y + static_cast<std::size_t>(i) * cols, mean + i, rstd + i, 1, cols, eps);
}

template <class R>
void layernorm_rows_bwd_x(const R* x, const R* gamma, const R* mean, const R* rstd, const R* dy,
                          R* dx, int rows, int cols) {
  const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int i = 0; i < rows; ++i)
    serial::layernorm_rows_bwd_x(x + static_cast<std::size_t>(i) * cols, gamma, mean + i, rstd + i,
                                 dy + static_cast<std::size_t>(i) * cols,
                                 dx + static_cast<std::size_t>(i) * cols, 1, cols);
}

template <class R>
void layernorm_rows_bwd_params(const R* x, const R* mean, const R* rstd, const R* dy, R* dgamma,
                               R* dbeta, int rows, int cols) {
  const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int j = 0; j < cols; ++j) {
    R dg = R(0), db = R(0);
    for (int i = 0; i < rows; ++i) {
      const std::size_t idx = static_cast<std::size_t>(i) * cols + j;
      const R xhat = (x[idx] - mean[i]) * rstd[i];
      dg += dy[idx] * xhat;
      db += dy[idx];
    }
    dgamma[j] += dg;
    dbeta[j] += db;
  }
}

template <class R>
void gelu(const R* x, R* y, std::int64_t n) {
#pragma omp parallel for schedule(static) if (n > kOmpMinWork)
  for (std::int64_t i = 0; i < n; ++i) y[i] = serial::gelu_one(x[i]);
}

template <class R>
void gelu_bwd(const R* x, const R* dy, R* dx, std::int64_t n) {
#pragma omp parallel for schedule(static) if (n > kOmpMinWork)
  for (std::int64_t i = 0; i < n; ++i) dx[i] += dy[i] * serial::gelu_grad_one(x[i]);
}

template <class R>
void relu(const R* x, R* y, std::int64_t n) {
#pragma omp parallel for schedule(static) if (n > kOmpMinWork)
  for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > R(0) ? x[i] : R(0);
}

template <class R>
void relu_bwd(const R* x, const R* dy, R* dx, std::int64_t n) {
#pragma omp parallel for schedule(static) if (n > kOmpMinWork)
  for (std::int64_t i = 0; i < n; ++i) dx[i] += x[i] > R(0) ? dy[i] : R(0);
}

template <class R>
void attention(const R* q, const R* k, const R* v, R* w, R* out, int T, int d, int heads) {
  const int hs = d / heads;
  const R scale = R(1) / std::sqrt(static_cast<R>(hs));
  const std::int64_t work = static_cast<std::int64_t>(heads) * T * T * hs;
  const int cells = heads * T;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int cell = 0; cell < cells; ++cell) {
    const int h = cell / T;
    const int i = cell % T;
    R* wrow = w + (static_cast<std::size_t>(h) * T + i) * T;
    const R* qi = q + static_cast<std::size_t>(i) * d + h * hs;
    R mx = R(0);
    for (int j = 0; j <= i; ++j) {
      const R* kj = k + static_cast<std::size_t>(j) * d + h * hs;
      R s = R(0);
      for (int t = 0; t < hs; ++t) s += qi[t] * kj[t];
      s *= scale;
      wrow[j] = s;
      mx = j == 0 ? s : std::max(mx, s);
    }
    R sum = R(0);
    for (int j = 0; j <= i; ++j) {
      wrow[j] = std::exp(wrow[j] - mx);
      sum += wrow[j];
    }
    const R inv = R(1) / sum;
    for (int j = 0; j <= i; ++j) wrow[j] *= inv;
    for (int j = i + 1; j < T; ++j) wrow[j] = R(0);
    R* oi = out + static_cast<std::size_t>(i) * d + h * hs;
    for (int t = 0; t < hs; ++t) oi[t] = R(0);
    for (int j = 0; j <= i; ++j) {
      const R* vj = v + static_cast<std::size_t>(j) * d + h * hs;
      const R wij = wrow[j];
      for (int t = 0; t < hs; ++t) oi[t] += wij * vj[t];
    }
  }
}

template <class R>
void attention_bwd_scores(const R* v, const R* w, const R* dout, R* ds, int T, int d, int heads) {
  const int hs = d / heads;
  const std::int64_t work = static_cast<std::int64_t>(heads) * T * T * hs;
  const int cells = heads * T;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int cell = 0; cell < cells; ++cell) {
    const int h = cell / T;
    const int i = cell % T;
    const R* wrow = w + (static_cast<std::size_t>(h) * T + i) * T;
    R* dsrow = ds + (static_cast<std::size_t>(h) * T + i) * T;
    const R* doi = dout + static_cast<std::size_t>(i) * d + h * hs;
    R mix = R(0);
    for (int j = 0; j <= i; ++j) {
      const R* vj = v + static_cast<std::size_t>(j) * d + h * hs;
      R dw = R(0);
      for (int t = 0; t < hs; ++t) dw += doi[t] * vj[t];
      dsrow[j] = dw;
      mix += wrow[j] * dw;
    }
    for (int j = 0; j <= i; ++j) dsrow[j] = wrow[j] * (dsrow[j] - mix);
    for (int j = i + 1; j < T; ++j) dsrow[j] = R(0);
  }
}

template <class R>
void attention_bwd_q(const R* k, const R* ds, R* dq, int T, int d, int heads) {
  const int hs = d / heads;
  const R scale = R(1) / std::sqrt(static_cast<R>(hs));
  const std::int64_t work = static_cast<std::int64_t>(heads) * T * T * hs;
  const int cells = heads * T;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int cell = 0; cell < cells; ++cell) {
    const int h = cell / T;
    const int i = cell % T;
    const R* dsrow = ds + (static_cast<std::size_t>(h) * T + i) * T;
    R* dqi = dq + static_cast<std::size_t>(i) * d + h * hs;
    for (int j = 0; j <= i; ++j) {
      const R* kj = k + static_cast<std::size_t>(j) * d + h * hs;
      const R g = dsrow[j] * scale;
      for (int t = 0; t < hs; ++t) dqi[t] += g * kj[t];
    }
  }
}

template <class R>
void attention_bwd_kv(const R* q, const R* w, const R* ds, const R* dout, R* dk, R* dv,
                      int T, int d, int heads) {
  const int hs = d / heads;
  const R scale = R(1) / std::sqrt(static_cast<R>(hs));
  const std::int64_t work = static_cast<std::int64_t>(heads) * T * T * hs;
  const int cells = heads * T;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int cell = 0; cell < cells; ++cell) {
    const int h = cell / T;
    const int j = cell % T;
    R* dkj = dk + static_cast<std::size_t>(j) * d + h * hs;
    R* dvj = dv + static_cast<std::size_t>(j) * d + h * hs;
    for (int i = j; i < T; ++i) {
      const R* qi = q + static_cast<std::size_t>(i) * d + h * hs;
      const R* doi = dout + static_cast<std::size_t>(i) * d + h * hs;
      const R dsij = ds[(static_cast<std::size_t>(h) * T + i) * T + j] * scale;
      const R wij = w[(static_cast<std::size_t>(h) * T + i) * T + j];
      for (int t = 0; t < hs; ++t) {
        dkj[t] += dsij * qi[t];
        dvj[t] += wij * doi[t];
      }
    }
  }
}

template <class R>
void gather_rows(const R* table, const int* ids, R* out, int n, int cols) {
  const std::int64_t work = static_cast<std::int64_t>(n) * cols;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int i = 0; i < n; ++i) {
    const R* src = table + static_cast<std::size_t>(ids[i]) * cols;
    R* dst = out + static_cast<std::size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) dst[j] = src[j];
  }
}

template <class R>
void scatter_rows_acc(const R* dout, const int* ids, R* dtable, int n, int cols) {
  const std::int64_t work = static_cast<std::int64_t>(n) * cols;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < n; ++i) {
      dtable[static_cast<std::size_t>(ids[i]) * cols + j] +=
          dout[static_cast<std::size_t>(i) * cols + j];
    }
  }
}

template <class R>
void cross_entropy_rows(const R* logits, const int* targets, R* probs, R* nll, int rows, int cols) {
  const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int i = 0; i < rows; ++i) {
    const R* xi = logits + static_cast<std::size_t>(i) * cols;
    R* pi = probs + static_cast<std::size_t>(i) * cols;
    serial::softmax_row(xi, pi, cols);
    nll[i] = -std::log(pi[targets[i]]);
  }
}

template <class R>
void cross_entropy_bwd(const R* probs, const int* targets, R g, R* dlogits, int rows, int cols) {
  const std::int64_t work = static_cast<std::int64_t>(rows) * cols;
#pragma omp parallel for schedule(static) if (work > kOmpMinWork)
  for (int i = 0; i < rows; ++i) {
    const R* pi = probs + static_cast<std::size_t>(i) * cols;
    R* di = dlogits + static_cast<std::size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) di[j] += g * pi[j];
    di[targets[i]] -= g;
  }
}

}  // namespace modcomp::kern
