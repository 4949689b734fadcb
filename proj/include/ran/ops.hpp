#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ran/errors.hpp"
#include "ran/tensor.hpp"

namespace ran {

// LayerNorm parameters; gamma/beta are 1-D of length D.
template <typename Real>
struct NormParams {
  Tensor<Real> gamma;
  Tensor<Real> beta;
  Real eps = Real(1e-5);

  static NormParams unit(int dim, bool with_grad = true, Real eps = Real(1e-5)) {
    NormParams p;
    p.gamma = Tensor<Real>::full({dim}, Real(1), with_grad);
    p.beta = Tensor<Real>::zeros({dim}, with_grad);
    p.eps = eps;
    return p;
  }
};

namespace detail {

// C(m,n) += A(m,k) * B(k,n)
template <typename Real>
inline void mm_nn(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Real* ai = a + static_cast<std::size_t>(i) * k;
    Real* ci = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const Real aip = ai[p];
      const Real* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C(m,n) += A(m,k) * B(n,k)^T
template <typename Real>
inline void mm_nt(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Real* ai = a + static_cast<std::size_t>(i) * k;
    Real* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const Real* bj = b + static_cast<std::size_t>(j) * k;
      Real s = 0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// C(k,n) += A(m,k)^T * B(m,n)
template <typename Real>
inline void mm_tn(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Real* ai = a + static_cast<std::size_t>(i) * k;
    const Real* bi = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const Real aip = ai[p];
      Real* cp = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul

// A 1-D left operand is treated as a single row and yields a 1-D result.
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b, TapeArg<Real> tape) {
  detail::require(a.ndim() <= 2 && b.ndim() == 2, "matmul: inputs must be 1-D or 2-D");
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions disagree (" +
                                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + ")");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  const std::vector<int> out_shape = a.ndim() == 1 ? std::vector<int>{n} : std::vector<int>{m, n};
  Tensor<Real> out = Tensor<Real>::zeros(out_shape, track_output(tape, {&a, &b}));
  detail::mm_nn(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  if (out.tracked()) {
    tape->record([a, b, out, m, k, n] {
      if (a.tracked()) detail::mm_nt(out.gptr(), b.ptr(), a.gptr(), m, n, k);
      if (b.tracked()) detail::mm_tn(a.ptr(), out.gptr(), b.gptr(), m, k, n);
    });
  }
  return out;
}

// a * b^T, with b stored row-major as (n, k).
template <typename Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b, TapeArg<Real> tape) {
  detail::require(a.ndim() == 2 && b.ndim() == 2, "matmul_nt: inputs must be 2-D");
  detail::require(a.cols() == b.cols(), "matmul_nt: inner dimensions disagree (" +
                                            std::to_string(a.cols()) + " vs " + std::to_string(b.cols()) + ")");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  Tensor<Real> out = Tensor<Real>::zeros({m, n}, track_output(tape, {&a, &b}));
  detail::mm_nt(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  if (out.tracked()) {
    tape->record([a, b, out, m, k, n] {
      if (a.tracked()) detail::mm_nn(out.gptr(), b.ptr(), a.gptr(), m, n, k);
      if (b.tracked()) detail::mm_tn(out.gptr(), a.ptr(), b.gptr(), m, n, k);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise and broadcasting

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b, TapeArg<Real> tape) {
  detail::require(a.shape == b.shape, "add: shape mismatch");
  Tensor<Real> out = Tensor<Real>::zeros(a.shape, track_output(tape, {&a, &b}));
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  if (out.tracked()) {
    tape->record([a, b, out, n] {
      if (a.tracked())
        for (std::size_t i = 0; i < n; ++i) (*a.grad)[i] += (*out.grad)[i];
      if (b.tracked())
        for (std::size_t i = 0; i < n; ++i) (*b.grad)[i] += (*out.grad)[i];
    });
  }
  return out;
}

// x (m,n) plus a length-n bias broadcast over rows; 1-D x is a single row.
template <typename Real>
Tensor<Real> add_row_bias(const Tensor<Real>& x, const Tensor<Real>& bias, TapeArg<Real> tape) {
  detail::require(bias.ndim() == 1 && bias.dim(0) == x.cols(), "add_row_bias: bias length mismatch");
  const int m = x.rows(), n = x.cols();
  Tensor<Real> out = Tensor<Real>::zeros(x.shape, track_output(tape, {&x, &bias}));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] = x[static_cast<std::size_t>(i) * n + j] + bias[j];
  if (out.tracked()) {
    tape->record([x, bias, out, m, n] {
      if (x.tracked())
        for (std::size_t i = 0; i < static_cast<std::size_t>(m) * n; ++i) (*x.grad)[i] += (*out.grad)[i];
      if (bias.tracked())
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) (*bias.grad)[j] += (*out.grad)[static_cast<std::size_t>(i) * n + j];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, Real s, TapeArg<Real> tape) {
  Tensor<Real> out = Tensor<Real>::zeros(x.shape, track_output(tape, {&x}));
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] * s;
  if (out.tracked()) {
    tape->record([x, out, s, n] {
      if (x.tracked())
        for (std::size_t i = 0; i < n; ++i) (*x.grad)[i] += (*out.grad)[i] * s;
    });
  }
  return out;
}

// Adds a constant additive mask (entries 0 or -inf). The mask itself carries
// no gradient.
template <typename Real>
Tensor<Real> add_mask(const Tensor<Real>& x, const Tensor<Real>& mask, TapeArg<Real> tape) {
  detail::require(x.shape == mask.shape, "add_mask: shape mismatch");
  Tensor<Real> out = Tensor<Real>::zeros(x.shape, track_output(tape, {&x}));
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] + (*mask.data)[i];
  if (out.tracked()) {
    tape->record([x, out, n] {
      if (x.tracked())
        for (std::size_t i = 0; i < n; ++i) (*x.grad)[i] += (*out.grad)[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax

// Row-wise softmax with max subtraction. -inf inputs are legal (masked keys)
// and produce exactly zero weight; NaN or +inf inputs, or a fully masked row,
// raise NumericError.
template <typename Real>
Tensor<Real> softmax_rows(const Tensor<Real>& x, TapeArg<Real> tape) {
  const int m = x.rows(), n = x.cols();
  detail::require(n >= 1, "softmax_rows: empty rows");
  Tensor<Real> out = Tensor<Real>::zeros(x.shape, track_output(tape, {&x}));
  const Real inf = std::numeric_limits<Real>::infinity();
  for (int i = 0; i < m; ++i) {
    const Real* xi = x.ptr() + static_cast<std::size_t>(i) * n;
    Real* oi = out.ptr() + static_cast<std::size_t>(i) * n;
    Real mx = -inf;
    for (int j = 0; j < n; ++j) {
      const Real v = xi[j];
      if (v != v || v == inf) throw NumericError("softmax_rows: non-finite input");
      if (v > mx) mx = v;
    }
    if (mx == -inf) throw NumericError("softmax_rows: all entries of a row are masked");
    Real sum = 0;
    for (int j = 0; j < n; ++j) {
      const Real e = std::exp(xi[j] - mx);
      oi[j] = e;
      sum += e;
    }
    const Real inv = Real(1) / sum;
    for (int j = 0; j < n; ++j) oi[j] *= inv;
  }
  if (out.tracked()) {
    tape->record([x, out, m, n] {
      if (!x.tracked()) return;
      for (int i = 0; i < m; ++i) {
        const Real* yi = out.ptr() + static_cast<std::size_t>(i) * n;
        const Real* gi = out.gptr() + static_cast<std::size_t>(i) * n;
        Real* xg = x.gptr() + static_cast<std::size_t>(i) * n;
        Real dot = 0;
        for (int j = 0; j < n; ++j) dot += gi[j] * yi[j];
        for (int j = 0; j < n; ++j) xg[j] += yi[j] * (gi[j] - dot);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization

// Per-row LayerNorm over the feature axis: gamma * (x - mu) / sqrt(var + eps) + beta.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const NormParams<Real>& p, TapeArg<Real> tape) {
  const int m = x.rows(), n = x.cols();
  detail::require(p.gamma.ndim() == 1 && p.gamma.dim(0) == n && p.beta.dim(0) == n,
                  "layer_norm: parameter length must equal the feature dim");
  const bool tracked = track_output(tape, {&x, &p.gamma, &p.beta});
  Tensor<Real> out = Tensor<Real>::zeros(x.shape, tracked);
  // xhat is kept for the backward pass.
  Tensor<Real> xhat = Tensor<Real>::zeros(x.shape);
  std::vector<Real> inv_std(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const Real* xi = x.ptr() + static_cast<std::size_t>(i) * n;
    Real mu = 0;
    for (int j = 0; j < n; ++j) mu += xi[j];
    mu /= Real(n);
    Real var = 0;
    for (int j = 0; j < n; ++j) {
      const Real d = xi[j] - mu;
      var += d * d;
    }
    var /= Real(n);
    const Real inv = Real(1) / std::sqrt(var + p.eps);
    inv_std[static_cast<std::size_t>(i)] = inv;
    Real* hi = xhat.ptr() + static_cast<std::size_t>(i) * n;
    Real* oi = out.ptr() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      hi[j] = (xi[j] - mu) * inv;
      oi[j] = p.gamma[j] * hi[j] + p.beta[j];
    }
  }
  if (tracked) {
    Tensor<Real> gamma = p.gamma, beta = p.beta;
    tape->record([x, gamma, beta, out, xhat, inv_std, m, n] {
      for (int i = 0; i < m; ++i) {
        const Real* hi = xhat.ptr() + static_cast<std::size_t>(i) * n;
        const Real* gi = out.gptr() + static_cast<std::size_t>(i) * n;
        if (gamma.tracked())
          for (int j = 0; j < n; ++j) (*gamma.grad)[j] += gi[j] * hi[j];
        if (beta.tracked())
          for (int j = 0; j < n; ++j) (*beta.grad)[j] += gi[j];
        if (x.tracked()) {
          // dx = (g*dy - mean(g*dy) - xhat * mean(g*dy*xhat)) / std
          Real mean_d = 0, mean_dh = 0;
          std::vector<Real> dh(static_cast<std::size_t>(n));
          for (int j = 0; j < n; ++j) {
            dh[static_cast<std::size_t>(j)] = gi[j] * gamma[j];
            mean_d += dh[static_cast<std::size_t>(j)];
            mean_dh += dh[static_cast<std::size_t>(j)] * hi[j];
          }
          mean_d /= Real(n);
          mean_dh /= Real(n);
          Real* xg = x.gptr() + static_cast<std::size_t>(i) * n;
          const Real inv = inv_std[static_cast<std::size_t>(i)];
          for (int j = 0; j < n; ++j)
            xg[j] += (dh[static_cast<std::size_t>(j)] - mean_d - hi[j] * mean_dh) * inv;
        }
      }
    });
  }
  return out;
}

// Parameter-free per-row standardization (x - mu) / sqrt(var + eps). The
// additive eps keeps constant rows at zero and the map smooth everywhere.
template <typename Real>
Tensor<Real> standard_norm_rows(const Tensor<Real>& x, Real eps, TapeArg<Real> tape) {
  const int m = x.rows(), n = x.cols();
  const bool tracked = track_output(tape, {&x});
  Tensor<Real> out = Tensor<Real>::zeros(x.shape, tracked);
  std::vector<Real> inv_std(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const Real* xi = x.ptr() + static_cast<std::size_t>(i) * n;
    Real mu = 0;
    for (int j = 0; j < n; ++j) mu += xi[j];
    mu /= Real(n);
    Real var = 0;
    for (int j = 0; j < n; ++j) {
      const Real d = xi[j] - mu;
      var += d * d;
    }
    var /= Real(n);
    const Real inv = Real(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = inv;
    Real* oi = out.ptr() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) oi[j] = (xi[j] - mu) * inv;
  }
  if (tracked) {
    // Same backward as LayerNorm without the affine pair: out already holds
    // (x - mu) * inv, so the variance path reduces to the mean of grad * out.
    tape->record([x, out, inv_std, m, n] {
      if (!x.tracked()) return;
      for (int i = 0; i < m; ++i) {
        const Real* yi = out.ptr() + static_cast<std::size_t>(i) * n;
        const Real* gi = out.gptr() + static_cast<std::size_t>(i) * n;
        Real* xg = x.gptr() + static_cast<std::size_t>(i) * n;
        const Real inv = inv_std[static_cast<std::size_t>(i)];
        Real mean_g = 0, mean_gy = 0;
        for (int j = 0; j < n; ++j) {
          mean_g += gi[j];
          mean_gy += gi[j] * yi[j];
        }
        mean_g /= Real(n);
        mean_gy /= Real(n);
        for (int j = 0; j < n; ++j) xg[j] += (gi[j] - mean_g - yi[j] * mean_gy) * inv;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// pooling over the time axis

// Per-feature max over rows marked valid. Backward routes the gradient to the
// first row attaining the max.
template <typename Real>
Tensor<Real> max_pool_time(const Tensor<Real>& x, const std::vector<std::uint8_t>& valid, TapeArg<Real> tape) {
  const int m = x.rows(), n = x.cols();
  detail::require(static_cast<int>(valid.size()) == m, "max_pool_time: mask length mismatch");
  int first_valid = -1;
  for (int i = 0; i < m && first_valid < 0; ++i)
    if (valid[static_cast<std::size_t>(i)]) first_valid = i;
  if (first_valid < 0) throw PreconditionError("max_pool_time: sequence has no valid positions");

  Tensor<Real> out = Tensor<Real>::zeros({n}, track_output(tape, {&x}));
  std::vector<int> argmax(static_cast<std::size_t>(n), first_valid);
  for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] = x.at(first_valid, j);
  for (int i = first_valid + 1; i < m; ++i) {
    if (!valid[static_cast<std::size_t>(i)]) continue;
    for (int j = 0; j < n; ++j) {
      const Real v = x.at(i, j);
      if (v > out[static_cast<std::size_t>(j)]) {
        out[static_cast<std::size_t>(j)] = v;
        argmax[static_cast<std::size_t>(j)] = i;
      }
    }
  }
  if (out.tracked()) {
    tape->record([x, out, argmax, n] {
      if (!x.tracked()) return;
      for (int j = 0; j < n; ++j)
        (*x.grad)[static_cast<std::size_t>(argmax[static_cast<std::size_t>(j)]) * n + j] += (*out.grad)[static_cast<std::size_t>(j)];
    });
  }
  return out;
}

// Per-feature mean over valid rows.
template <typename Real>
Tensor<Real> avg_pool_time(const Tensor<Real>& x, const std::vector<std::uint8_t>& valid, TapeArg<Real> tape) {
  const int m = x.rows(), n = x.cols();
  detail::require(static_cast<int>(valid.size()) == m, "avg_pool_time: mask length mismatch");
  int count = 0;
  for (std::uint8_t v : valid) count += v ? 1 : 0;
  if (count == 0) throw PreconditionError("avg_pool_time: sequence has no valid positions");
  Tensor<Real> out = Tensor<Real>::zeros({n}, track_output(tape, {&x}));
  for (int i = 0; i < m; ++i) {
    if (!valid[static_cast<std::size_t>(i)]) continue;
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] += x.at(i, j);
  }
  const Real inv = Real(1) / Real(count);
  for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] *= inv;
  if (out.tracked()) {
    tape->record([x, out, valid, inv, m, n] {
      if (!x.tracked()) return;
      for (int i = 0; i < m; ++i) {
        if (!valid[static_cast<std::size_t>(i)]) continue;
        Real* xg = x.gptr() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) xg[j] += (*out.grad)[static_cast<std::size_t>(j)] * inv;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// structural ops

// Gathers table rows by id; backward scatter-adds into the table gradient.
template <typename Real>
Tensor<Real> embed_rows(const Tensor<Real>& table, const std::vector<int>& ids, TapeArg<Real> tape) {
  const int v = table.rows(), d = table.cols();
  const int n = static_cast<int>(ids.size());
  detail::require(n >= 1, "embed_rows: empty id list");
  for (int id : ids)
    if (id < 0 || id >= v) throw DataError("embed_rows: token id " + std::to_string(id) + " out of range");
  Tensor<Real> out = Tensor<Real>::zeros({n, d}, track_output(tape, {&table}));
  for (int i = 0; i < n; ++i) {
    const Real* src = table.ptr() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d;
    std::copy(src, src + d, out.ptr() + static_cast<std::size_t>(i) * d);
  }
  if (out.tracked()) {
    tape->record([table, out, ids, d, n] {
      if (!table.tracked()) return;
      for (int i = 0; i < n; ++i) {
        Real* dst = table.gptr() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d;
        const Real* src = out.gptr() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// Rows [r0, r1) as a copy.
template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, int r0, int r1, TapeArg<Real> tape) {
  const int m = x.rows(), n = x.cols();
  detail::require(0 <= r0 && r0 < r1 && r1 <= m, "slice_rows: bad range");
  Tensor<Real> out = Tensor<Real>::zeros({r1 - r0, n}, track_output(tape, {&x}));
  std::copy(x.ptr() + static_cast<std::size_t>(r0) * n, x.ptr() + static_cast<std::size_t>(r1) * n, out.ptr());
  if (out.tracked()) {
    tape->record([x, out, r0, r1, n] {
      if (!x.tracked()) return;
      const std::size_t cnt = static_cast<std::size_t>(r1 - r0) * n;
      for (std::size_t i = 0; i < cnt; ++i) (*x.grad)[static_cast<std::size_t>(r0) * n + i] += (*out.grad)[i];
    });
  }
  return out;
}

// Single row as a 1-D tensor.
template <typename Real>
Tensor<Real> row(const Tensor<Real>& x, int r, TapeArg<Real> tape) {
  const int n = x.cols();
  detail::require(0 <= r && r < x.rows(), "row: index out of range");
  Tensor<Real> out = Tensor<Real>::zeros({n}, track_output(tape, {&x}));
  std::copy(x.ptr() + static_cast<std::size_t>(r) * n, x.ptr() + static_cast<std::size_t>(r + 1) * n, out.ptr());
  if (out.tracked()) {
    tape->record([x, out, r, n] {
      if (!x.tracked()) return;
      for (int j = 0; j < n; ++j) (*x.grad)[static_cast<std::size_t>(r) * n + j] += (*out.grad)[j];
    });
  }
  return out;
}

// Stacks parts vertically. 1-D parts count as single rows.
template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts, TapeArg<Real> tape) {
  detail::require(!parts.empty(), "concat_rows: no parts");
  const int n = parts[0].cols();
  int total = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    detail::require(p.cols() == n, "concat_rows: column mismatch");
    total += p.rows();
    tracked = tracked || (tape && p.tracked());
  }
  Tensor<Real> out = Tensor<Real>::zeros({total, n}, tracked);
  int r = 0;
  for (const auto& p : parts) {
    std::copy(p.ptr(), p.ptr() + p.size(), out.ptr() + static_cast<std::size_t>(r) * n);
    r += p.rows();
  }
  if (tracked) {
    tape->record([parts, out, n] {
      int r2 = 0;
      for (const auto& p : parts) {
        if (p.tracked()) {
          const Real* src = out.gptr() + static_cast<std::size_t>(r2) * n;
          for (std::size_t i = 0; i < p.size(); ++i) (*p.grad)[i] += src[i];
        }
        r2 += p.rows();
      }
    });
  }
  return out;
}

// Stacks parts side by side; all parts share the row count.
template <typename Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts, TapeArg<Real> tape) {
  detail::require(!parts.empty(), "concat_cols: no parts");
  const int m = parts[0].rows();
  int total = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    detail::require(p.rows() == m, "concat_cols: row mismatch");
    total += p.cols();
    tracked = tracked || (tape && p.tracked());
  }
  Tensor<Real> out = Tensor<Real>::zeros({m, total}, tracked);
  int c = 0;
  for (const auto& p : parts) {
    const int w = p.cols();
    for (int i = 0; i < m; ++i)
      std::copy(p.ptr() + static_cast<std::size_t>(i) * w, p.ptr() + static_cast<std::size_t>(i + 1) * w,
                out.ptr() + static_cast<std::size_t>(i) * total + c);
    c += w;
  }
  if (tracked) {
    tape->record([parts, out, m, total] {
      int c2 = 0;
      for (const auto& p : parts) {
        const int w = p.cols();
        if (p.tracked()) {
          for (int i = 0; i < m; ++i) {
            const Real* src = out.gptr() + static_cast<std::size_t>(i) * total + c2;
            Real* dst = p.gptr() + static_cast<std::size_t>(i) * w;
            for (int j = 0; j < w; ++j) dst[j] += src[j];
          }
        }
        c2 += w;
      }
    });
  }
  return out;
}

// Copies x with the rows not marked valid set to zero; their gradient does
// not flow back.
template <typename Real>
Tensor<Real> zero_invalid_rows(const Tensor<Real>& x, const std::vector<std::uint8_t>& valid, TapeArg<Real> tape) {
  const int m = x.rows(), n = x.cols();
  detail::require(static_cast<int>(valid.size()) == m, "zero_invalid_rows: mask length mismatch");
  Tensor<Real> out = Tensor<Real>::zeros(x.shape, track_output(tape, {&x}));
  for (int i = 0; i < m; ++i) {
    if (!valid[static_cast<std::size_t>(i)]) continue;
    std::copy(x.ptr() + static_cast<std::size_t>(i) * n, x.ptr() + static_cast<std::size_t>(i + 1) * n,
              out.ptr() + static_cast<std::size_t>(i) * n);
  }
  if (out.tracked()) {
    tape->record([x, out, valid, m, n] {
      if (!x.tracked()) return;
      for (int i = 0; i < m; ++i) {
        if (!valid[static_cast<std::size_t>(i)]) continue;
        Real* xg = x.gptr() + static_cast<std::size_t>(i) * n;
        const Real* og = out.gptr() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) xg[j] += og[j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses (fused with softmax/sigmoid for stability)

// Weighted cross entropy over rows of logits: sum_r w_r * (-log softmax(row_r)[t_r]).
// Rows with weight 0 are skipped entirely.
template <typename Real>
Tensor<Real> cross_entropy_rows(const Tensor<Real>& logits, const std::vector<int>& targets,
                                const std::vector<Real>& weights, TapeArg<Real> tape) {
  const int m = logits.rows(), n = logits.cols();
  detail::require(static_cast<int>(targets.size()) == m && static_cast<int>(weights.size()) == m,
                  "cross_entropy_rows: target/weight count mismatch");
  Tensor<Real> probs = Tensor<Real>::zeros(logits.shape);
  Tensor<Real> out = Tensor<Real>::zeros({1}, track_output(tape, {&logits}));
  Real loss = 0;
  for (int i = 0; i < m; ++i) {
    if (weights[static_cast<std::size_t>(i)] == Real(0)) continue;
    const int t = targets[static_cast<std::size_t>(i)];
    detail::require(0 <= t && t < n, "cross_entropy_rows: target out of range");
    const Real* zi = logits.ptr() + static_cast<std::size_t>(i) * n;
    Real mx = zi[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, zi[j]);
    Real sum = 0;
    Real* pi = probs.ptr() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      pi[j] = std::exp(zi[j] - mx);
      sum += pi[j];
    }
    const Real inv = Real(1) / sum;
    for (int j = 0; j < n; ++j) pi[j] *= inv;
    loss += weights[static_cast<std::size_t>(i)] * (std::log(sum) + mx - zi[t]);
  }
  out[0] = loss;
  if (out.tracked()) {
    tape->record([logits, probs, out, targets, weights, m, n] {
      if (!logits.tracked()) return;
      const Real g = (*out.grad)[0];
      for (int i = 0; i < m; ++i) {
        const Real w = weights[static_cast<std::size_t>(i)];
        if (w == Real(0)) continue;
        const Real* pi = probs.ptr() + static_cast<std::size_t>(i) * n;
        Real* zg = logits.gptr() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) zg[j] += g * w * pi[j];
        zg[targets[static_cast<std::size_t>(i)]] -= g * w;
      }
    });
  }
  return out;
}

// Mean binary cross entropy with logits over a 1-D logit vector (multi-label).
template <typename Real>
Tensor<Real> bce_with_logits(const Tensor<Real>& logits, const std::vector<std::uint8_t>& targets, TapeArg<Real> tape) {
  const int n = static_cast<int>(logits.size());
  detail::require(static_cast<int>(targets.size()) == n, "bce_with_logits: target count mismatch");
  Tensor<Real> out = Tensor<Real>::zeros({1}, track_output(tape, {&logits}));
  Real loss = 0;
  for (int j = 0; j < n; ++j) {
    const Real z = logits[static_cast<std::size_t>(j)];
    const Real y = targets[static_cast<std::size_t>(j)] ? Real(1) : Real(0);
    loss += std::max(z, Real(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  out[0] = loss / Real(n);
  if (out.tracked()) {
    tape->record([logits, out, targets, n] {
      if (!logits.tracked()) return;
      const Real g = (*out.grad)[0] / Real(n);
      for (int j = 0; j < n; ++j) {
        const Real z = logits[static_cast<std::size_t>(j)];
        const Real y = targets[static_cast<std::size_t>(j)] ? Real(1) : Real(0);
        const Real sig = Real(1) / (Real(1) + std::exp(-z));
        (*logits.grad)[static_cast<std::size_t>(j)] += g * (sig - y);
      }
    });
  }
  return out;
}

}  // namespace ran
