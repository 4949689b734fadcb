#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ran/errors.hpp"
#include "ran/ops.hpp"
#include "ran/rng.hpp"
#include "ran/rope.hpp"
#include "ran/tensor.hpp"

namespace ran {

// y = x W + b with W stored (in, out).
template <typename Real>
struct LinearParams {
  Tensor<Real> w;
  Tensor<Real> b;

  static LinearParams init(int in, int out, Rng& rng, Real stddev = Real(0.02), bool with_grad = true) {
    LinearParams p;
    p.w = Tensor<Real>::randn({in, out}, rng, stddev, with_grad);
    p.b = Tensor<Real>::zeros({out}, with_grad);
    return p;
  }

  Tensor<Real> apply(const Tensor<Real>& x, TapeArg<Real> tape) const {
    return add_row_bias(matmul(x, w, tape), b, tape);
  }
};

template <typename Real>
struct AttentionHeadParams {
  LinearParams<Real> q, k, v;
};

// Multi-head self-attention parameters: per-head Q/K/V projections of width
// d_k and one output projection back to D. h * d_k must equal D.
template <typename Real>
struct AttentionParams {
  std::vector<AttentionHeadParams<Real>> heads;
  LinearParams<Real> proj;
  int d_k = 0;

  static AttentionParams init(int dim, int n_heads, Rng& rng, bool with_grad = true) {
    if (n_heads <= 0 || dim % n_heads != 0)
      throw ConfigError("attention: head count " + std::to_string(n_heads) + " must divide dim " + std::to_string(dim));
    AttentionParams p;
    p.d_k = dim / n_heads;
    p.heads.resize(static_cast<std::size_t>(n_heads));
    for (auto& h : p.heads) {
      h.q = LinearParams<Real>::init(dim, p.d_k, rng, Real(0.02), with_grad);
      h.k = LinearParams<Real>::init(dim, p.d_k, rng, Real(0.02), with_grad);
      h.v = LinearParams<Real>::init(dim, p.d_k, rng, Real(0.02), with_grad);
    }
    p.proj = LinearParams<Real>::init(dim, dim, rng, Real(0.02), with_grad);
    return p;
  }
};

// Review cross-attention carries exactly one Q/K/V projection set and no
// output projection.
template <typename Real>
struct CrossAttentionParams {
  LinearParams<Real> q, k, v;

  static CrossAttentionParams init(int dim, Rng& rng, bool with_grad = true) {
    CrossAttentionParams p;
    p.q = LinearParams<Real>::init(dim, dim, rng, Real(0.02), with_grad);
    p.k = LinearParams<Real>::init(dim, dim, rng, Real(0.02), with_grad);
    p.v = LinearParams<Real>::init(dim, dim, rng, Real(0.02), with_grad);
    return p;
  }
};

enum class MaskKind { full, causal, prefix_causal };

inline MaskKind mask_kind_from_string(const std::string& s) {
  if (s == "full") return MaskKind::full;
  if (s == "causal") return MaskKind::causal;
  if (s == "prefix_causal" || s == "prefix-causal") return MaskKind::prefix_causal;
  throw ConfigError("unknown mask kind: " + s);
}

inline std::string to_string(MaskKind k) {
  switch (k) {
    case MaskKind::full: return "full";
    case MaskKind::causal: return "causal";
    default: return "prefix_causal";
  }
}

// Additive window mask over the (1+W) x (1+W) grid. Grid row/col 0 is the
// state slot; token t sits at grid index t+1.
template <typename Real>
struct MaskSpec {
  MaskKind kind = MaskKind::full;
  int prefix_len = 0;
  Tensor<Real> m;
};

// Builds the window mask. Column 0 (the state as key) is visible to every
// row, so no row is ever fully masked. Pad token columns are -inf for all
// rows. The state query row sees the whole valid window unless
// strict_state_row asks it to see only itself.
template <typename Real>
MaskSpec<Real> build_mask(MaskKind kind, int window, const std::vector<std::uint8_t>& valid, int prefix_len = 0,
                          bool strict_state_row = false) {
  if (static_cast<int>(valid.size()) != window) throw ShapeError("build_mask: one validity flag per token required");
  if (kind == MaskKind::prefix_causal && prefix_len < 0) throw ConfigError("build_mask: negative prefix length");
  const int s = window + 1;
  const Real ninf = -std::numeric_limits<Real>::infinity();
  MaskSpec<Real> spec;
  spec.kind = kind;
  spec.prefix_len = prefix_len;
  spec.m = Tensor<Real>::zeros({s, s});
  auto& m = spec.m;
  for (int r = 0; r < s; ++r) {
    for (int c = 1; c < s; ++c) {
      const int tok_q = r - 1, tok_k = c - 1;
      bool vis = valid[static_cast<std::size_t>(tok_k)] != 0;
      if (r == 0) {
        if (strict_state_row) vis = false;
      } else {
        switch (kind) {
          case MaskKind::full: break;
          case MaskKind::causal: vis = vis && tok_k <= tok_q; break;
          case MaskKind::prefix_causal: vis = vis && (tok_k < prefix_len || tok_k <= tok_q); break;
        }
      }
      if (!vis) m.at(r, c) = ninf;
    }
  }
  return spec;
}

// Positional multi-head self-attention over one window grid. Rotary rotates
// Q and K rows by the caller-supplied positions (-1 rows stay unrotated);
// rotary == nullptr disables rotation entirely.
template <typename Real>
Tensor<Real> pmhsa(const Tensor<Real>& x, const AttentionParams<Real>& params, const MaskSpec<Real>& mask,
                   RotaryArg<Real> rotary, const std::vector<int>& positions, TapeArg<Real> tape) {
  const int s = x.rows();
  if (mask.m.rows() != s || mask.m.cols() != s)
    throw ShapeError("pmhsa: mask is " + std::to_string(mask.m.rows()) + "x" + std::to_string(mask.m.cols()) +
                     " but input has " + std::to_string(s) + " rows");
  const Real inv_sqrt = Real(1) / std::sqrt(Real(params.d_k));
  std::vector<Tensor<Real>> contexts;
  contexts.reserve(params.heads.size());
  for (const auto& head : params.heads) {
    Tensor<Real> q = head.q.apply(x, tape);
    Tensor<Real> k = head.k.apply(x, tape);
    if (rotary) {
      q = rotary->apply(q, positions, tape);
      k = rotary->apply(k, positions, tape);
    }
    Tensor<Real> v = head.v.apply(x, tape);
    Tensor<Real> scores = scale(matmul_nt(q, k, tape), inv_sqrt, tape);
    scores = add_mask(scores, mask.m, tape);
    Tensor<Real> weights = softmax_rows(scores, tape);
    contexts.push_back(matmul(weights, v, tape));
  }
  return params.proj.apply(concat_cols(contexts, tape), tape);
}

// Cross attention of queries against a bank of key/value rows, Q K^T scaled
// by the projection width, no rotary and no output projection. review_mask is
// additive (n x bank rows); every query row must keep at least one visible key.
template <typename Real>
Tensor<Real> cross_attention(const Tensor<Real>& queries, const Tensor<Real>& keys_values,
                             const CrossAttentionParams<Real>& params, const Tensor<Real>& review_mask,
                             TapeArg<Real> tape) {
  const int n = queries.rows(), m = keys_values.rows();
  if (review_mask.rows() != n || review_mask.cols() != m) throw ShapeError("cross_attention: mask shape mismatch");
  for (int i = 0; i < n; ++i) {
    bool any = false;
    for (int j = 0; j < m && !any; ++j) any = review_mask.at(i, j) == Real(0);
    if (!any) throw MaskError("cross_attention: query row " + std::to_string(i) + " has no visible key");
  }
  Tensor<Real> q = params.q.apply(queries, tape);
  Tensor<Real> k = params.k.apply(keys_values, tape);
  Tensor<Real> v = params.v.apply(keys_values, tape);
  const Real inv_sqrt = Real(1) / std::sqrt(Real(q.cols()));
  Tensor<Real> scores = add_mask(scale(matmul_nt(q, k, tape), inv_sqrt, tape), review_mask, tape);
  return matmul(softmax_rows(scores, tape), v, tape);
}

}  // namespace ran
