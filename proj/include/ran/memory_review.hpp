#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ran/attention.hpp"
#include "ran/errors.hpp"
#include "ran/ops.hpp"
#include "ran/recurrence.hpp"
#include "ran/tensor.hpp"

namespace ran {

// Bank of updated state vectors, one row per window, in window order.
template <typename Real>
struct MemoryBank {
  Tensor<Real> states;  // m x D

  static MemoryBank from_history(const std::vector<GpcState<Real>>& history, TapeArg<Real> tape) {
    if (history.empty()) throw StateError("memory bank: empty history");
    std::vector<Tensor<Real>> rows;
    rows.reserve(history.size());
    for (const auto& g : history) rows.push_back(g.value);
    return MemoryBank{concat_rows(rows, tape)};
  }
};

template <typename Real>
struct ClassifierParams {
  Tensor<Real> wg;  // D x D, applied to the final state
  Tensor<Real> wo;  // D x D, applied to the pooled review output
  Tensor<Real> bo;  // D

  static ClassifierParams init(int dim, Rng& rng, Real stddev, bool with_grad = true) {
    ClassifierParams p;
    p.wg = Tensor<Real>::randn({dim, dim}, rng, stddev, with_grad);
    p.wo = Tensor<Real>::randn({dim, dim}, rng, stddev, with_grad);
    p.bo = Tensor<Real>::zeros({dim}, with_grad);
    return p;
  }
};

// Restores document order from per-window outputs and trims the chunk
// padding back to L rows.
template <typename Real>
Tensor<Real> concat_windows(const std::vector<Tensor<Real>>& per_window, int l, TapeArg<Real> tape) {
  Tensor<Real> all = concat_rows(per_window, tape);
  if (all.rows() < l) throw ShapeError("concat_windows: fewer rows than the document length");
  return all.rows() == l ? all : slice_rows(all, 0, l, tape);
}

// Review cross-attention of token outputs against the state bank. For the lm
// task, tokens of window i may only see states of windows < i, and window 1
// sees the pre-document sentinel state, which replaces the final state in the
// key list; other tasks use the full bank with no mask.
template <typename Real>
Tensor<Real> review(const Tensor<Real>& ow, const MemoryBank<Real>& bank, const GpcState<Real>& sentinel,
                    const CrossAttentionParams<Real>& params, Task task, int window, TapeArg<Real> tape) {
  const int l = ow.rows(), m = bank.states.rows();
  if (m < 1) throw StateError("review: empty state bank");
  if (task != Task::lm) {
    Tensor<Real> full = Tensor<Real>::zeros({l, m});
    return cross_attention(ow, bank.states, params, full, tape);
  }
  // Key j holds the state available before window j+1: sentinel, then G_1..G_{m-1}.
  std::vector<Tensor<Real>> keys{sentinel.value};
  if (m > 1) keys.push_back(slice_rows(bank.states, 0, m - 1, tape));
  Tensor<Real> bank_lm = concat_rows(keys, tape);
  Tensor<Real> mask = Tensor<Real>::zeros({l, m});
  const Real ninf = -std::numeric_limits<Real>::infinity();
  for (int r = 0; r < l; ++r) {
    const int wi = r / window;
    for (int j = wi + 1; j < m; ++j) mask.at(r, j) = ninf;
  }
  return cross_attention(ow, bank_lm, params, mask, tape);
}

// Final sequence representation: the review output, or the raw concatenated
// window outputs when the review ablation is on.
template <typename Real>
Tensor<Real> sequence_output(const Tensor<Real>& ow, const MemoryBank<Real>& bank, const GpcState<Real>& sentinel,
                             const CrossAttentionParams<Real>& params, const ModelConfig& cfg, TapeArg<Real> tape) {
  if (cfg.no_memory_review) return ow;
  return review(ow, bank, sentinel, params, cfg.task, cfg.window, tape);
}

// Document vector: final state through wg plus the time-pooled sequence
// output through wo, plus bias. Pooling is max over valid positions (mean
// under the avg_pool ablation).
template <typename Real>
Tensor<Real> classification_output(const GpcState<Real>& g_last, const Tensor<Real>& o_seq,
                                   const ClassifierParams<Real>& params, const std::vector<std::uint8_t>& valid,
                                   bool ablation_avg_pool, TapeArg<Real> tape) {
  Tensor<Real> pooled =
      ablation_avg_pool ? avg_pool_time(o_seq, valid, tape) : max_pool_time(o_seq, valid, tape);
  Tensor<Real> out = add(matmul(g_last.value, params.wg, tape), matmul(pooled, params.wo, tape), tape);
  return add_row_bias(out, params.bo, tape);
}

}  // namespace ran
