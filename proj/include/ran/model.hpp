#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ran/attention.hpp"
#include "ran/errors.hpp"
#include "ran/heads.hpp"
#include "ran/memory_review.hpp"
#include "ran/ops.hpp"
#include "ran/recurrence.hpp"
#include "ran/rng.hpp"
#include "ran/rope.hpp"
#include "ran/tensor.hpp"

namespace ran {

// Named view of a parameter tensor; the tensor shares storage with the model.
template <typename Real>
struct NamedParam {
  std::string name;
  Tensor<Real> tensor;
};

template <typename Real>
struct ModelOutput {
  Tensor<Real> logits;                  // classify: n_labels; tag: L x T; lm: L x V
  Tensor<Real> o_seq;                   // L x D sequence representation
  std::vector<GpcState<Real>> history;  // final-layer state per window
  std::vector<std::uint8_t> valid;      // per-position validity
};

template <typename Real>
struct RanModel {
  ModelConfig cfg;
  Tensor<Real> embedding;  // V x D
  StackParams<Real> stack;
  CrossAttentionParams<Real> review_params;
  ClassifierParams<Real> clf;  // classify task only
  HeadParams<Real> head;
  RotaryTable<Real> rope;

  static RanModel init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    RanModel m;
    m.cfg = cfg;
    Rng rng(seed);
    const Real stddev = Real(cfg.init_stddev);
    m.embedding = Tensor<Real>::randn({cfg.vocab_size, cfg.dim}, rng, stddev, true);
    m.stack = StackParams<Real>::init(cfg, rng);
    m.review_params = CrossAttentionParams<Real>::init(cfg.dim, rng);
    switch (cfg.task) {
      case Task::classify:
        m.clf = ClassifierParams<Real>::init(cfg.dim, rng, stddev);
        m.head = HeadParams<Real>::init(cfg.dim, cfg.n_labels, rng, stddev);
        break;
      case Task::tag:
        m.head = HeadParams<Real>::init(cfg.dim, cfg.n_labels, rng, stddev);
        break;
      case Task::lm:
        m.head = cfg.tie_lm_head ? HeadParams<Real>::init_tied(cfg.vocab_size)
                                 : HeadParams<Real>::init(cfg.dim, cfg.vocab_size, rng, stddev);
        break;
    }
    m.rope = RotaryTable<Real>(cfg.head_dim(), cfg.window + 2, Real(cfg.rope_base));
    return m;
  }

  // Stable registry used by the optimizer, checkpointing and the gradient
  // checker. Order and names must not change across versions.
  std::vector<NamedParam<Real>> parameters() const {
    std::vector<NamedParam<Real>> out;
    auto put = [&out](const std::string& name, const Tensor<Real>& t) {
      out.push_back(NamedParam<Real>{name, t});
    };
    put("embedding", embedding);
    if (cfg.learnable_g0) put("gpc.g0", stack.gpc_init.g0);
    put("gpc.wg", stack.gpc_init.wg);
    put("gpc.norm.gamma", stack.gpc_init.norm.gamma);
    put("gpc.norm.beta", stack.gpc_init.norm.beta);
    for (std::size_t k = 0; k < stack.layers.size(); ++k) {
      const std::string lp = "layer" + std::to_string(k) + ".";
      const LayerParams<Real>& layer = stack.layers[k];
      put(lp + "input_norm.gamma", layer.input_norm.gamma);
      put(lp + "input_norm.beta", layer.input_norm.beta);
      for (std::size_t j = 0; j < layer.attn.heads.size(); ++j) {
        const std::string hp = lp + "attn.head" + std::to_string(j) + ".";
        const AttentionHeadParams<Real>& h = layer.attn.heads[j];
        put(hp + "q.w", h.q.w);
        put(hp + "q.b", h.q.b);
        put(hp + "k.w", h.k.w);
        put(hp + "k.b", h.k.b);
        put(hp + "v.w", h.v.w);
        put(hp + "v.b", h.v.b);
      }
      put(lp + "attn.proj.w", layer.attn.proj.w);
      put(lp + "attn.proj.b", layer.attn.proj.b);
      put(lp + "gpc_norm.gamma", layer.gpc_norm.gamma);
      put(lp + "gpc_norm.beta", layer.gpc_norm.beta);
    }
    put("review.q.w", review_params.q.w);
    put("review.q.b", review_params.q.b);
    put("review.k.w", review_params.k.w);
    put("review.k.b", review_params.k.b);
    put("review.v.w", review_params.v.w);
    put("review.v.b", review_params.v.b);
    if (cfg.task == Task::classify) {
      put("clf.wg", clf.wg);
      put("clf.wo", clf.wo);
      put("clf.bo", clf.bo);
    }
    if (head.tied) {
      put("head.tied_bias", head.tied_bias);
    } else {
      put("head.w", head.out.w);
      put("head.b", head.out.b);
    }
    return out;
  }

  void zero_grads() {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }

  // Full forward pass over one uniformly padded document.
  ModelOutput<Real> forward(const std::vector<int>& ids, int true_length, TapeArg<Real> tape) const {
    if (static_cast<int>(ids.size()) != cfg.max_len)
      throw ShapeError("forward: expected exactly max_len token ids");
    if (true_length < 1 || true_length > cfg.max_len)
      throw PreconditionError("forward: true_length must be in [1, max_len]");
    ModelOutput<Real> out;
    out.valid.assign(static_cast<std::size_t>(cfg.max_len), 0);
    for (int t = 0; t < true_length; ++t) out.valid[static_cast<std::size_t>(t)] = 1;

    Tensor<Real> embedded = embed_rows(embedding, ids, tape);
    StackResult<Real> enc = run_stack(embedded, out.valid, stack, &rope, cfg, tape);
    out.history = enc.history;
    Tensor<Real> ow = concat_windows(enc.tokens, cfg.max_len, tape);
    MemoryBank<Real> bank = MemoryBank<Real>::from_history(enc.history, tape);
    out.o_seq = sequence_output(ow, bank, enc.initial, review_params, cfg, tape);

    switch (cfg.task) {
      case Task::classify: {
        Tensor<Real> o_clf =
            classification_output(enc.history.back(), out.o_seq, clf, out.valid, cfg.avg_pool, tape);
        out.logits = classify_logits(o_clf, head, tape);
        break;
      }
      case Task::tag:
        out.logits = tag_logits(out.o_seq, head, tape);
        break;
      case Task::lm:
        out.logits = lm_logits(out.o_seq, head, embedding, tape);
        break;
    }
    return out;
  }
};

}  // namespace ran
