#pragma once

#include <string>
#include <vector>

#include "ran/attention.hpp"
#include "ran/errors.hpp"
#include "ran/ops.hpp"
#include "ran/tensor.hpp"

namespace ran {

// Output head. For the tied LM head the projection weight is the embedding
// table itself and only the bias lives here.
template <typename Real>
struct HeadParams {
  LinearParams<Real> out;
  Tensor<Real> tied_bias;
  bool tied = false;

  static HeadParams init(int dim, int n_out, Rng& rng, Real stddev, bool with_grad = true) {
    HeadParams p;
    p.out = LinearParams<Real>::init(dim, n_out, rng, stddev, with_grad);
    return p;
  }

  static HeadParams init_tied(int n_out, bool with_grad = true) {
    HeadParams p;
    p.tied = true;
    p.tied_bias = Tensor<Real>::zeros({n_out}, with_grad);
    return p;
  }
};

template <typename Real>
Tensor<Real> classify_logits(const Tensor<Real>& o_clf, const HeadParams<Real>& p, TapeArg<Real> tape) {
  if (static_cast<int>(o_clf.size()) != p.out.w.rows())
    throw ConfigError("classify head: input width does not match the weight");
  return p.out.apply(o_clf, tape);
}

template <typename Real>
Tensor<Real> tag_logits(const Tensor<Real>& o_seq, const HeadParams<Real>& p, TapeArg<Real> tape) {
  return p.out.apply(o_seq, tape);
}

// LM logits. Tied form multiplies by the transposed embedding table and adds
// the head's own bias, so the table's gradient collects both the input and
// output path contributions.
template <typename Real>
Tensor<Real> lm_logits(const Tensor<Real>& o_seq, const HeadParams<Real>& p, const Tensor<Real>& embedding,
                       TapeArg<Real> tape) {
  if (!p.tied) return p.out.apply(o_seq, tape);
  return add_row_bias(matmul_nt(o_seq, embedding, tape), p.tied_bias, tape);
}

// Rewrites an IOB2 tag sequence so every entity starts with B: an I-X that
// follows O, a different type, or the sequence start becomes B-X. Unknown
// shapes (no dash) are left alone.
inline std::vector<std::string> repair_bio(const std::vector<std::string>& tags) {
  std::vector<std::string> out = tags;
  std::string prev = "O";
  for (auto& t : out) {
    if (t.size() > 2 && t[0] == 'I' && t[1] == '-') {
      const std::string type = t.substr(2);
      const bool continues =
          prev.size() > 2 && (prev[0] == 'B' || prev[0] == 'I') && prev[1] == '-' && prev.substr(2) == type;
      if (!continues) t = "B-" + type;
    }
    prev = t;
  }
  return out;
}

}  // namespace ran
