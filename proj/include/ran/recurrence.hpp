#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ran/attention.hpp"
#include "ran/errors.hpp"
#include "ran/ops.hpp"
#include "ran/rope.hpp"
#include "ran/tensor.hpp"

namespace ran {

enum class Task { classify, tag, lm };

inline Task task_from_string(const std::string& s) {
  if (s == "classify") return Task::classify;
  if (s == "tag") return Task::tag;
  if (s == "lm") return Task::lm;
  throw ConfigError("unknown task: " + s);
}

inline std::string to_string(Task t) {
  switch (t) {
    case Task::classify: return "classify";
    case Task::tag: return "tag";
    default: return "lm";
  }
}

struct ModelConfig {
  int max_len = 512;      // uniform padded document length L
  int window = 256;       // tokens per window W
  int dim = 64;           // model width D
  int heads = 2;          // attention heads h (d_k = dim / heads)
  int depth = 2;          // stacked layers
  int vocab_size = 0;
  int n_labels = 0;       // classes (classify) or tag types (tag)
  Task task = Task::classify;
  MaskKind mask_kind = MaskKind::full;
  int prefix_len = 0;

  // ablations
  bool avg_pool = false;
  bool no_residual = false;
  bool no_memory_review = false;
  bool no_rotary = false;

  // variants kept off by default
  bool multilabel = false;
  bool strict_gpc_row = false;      // state query row sees only itself
  bool rotate_gpc_slot = false;     // give the state slot position 0, tokens 1..W
  bool per_layer_gpc_chain = false; // each layer carries its own state chain
  bool learnable_g0 = false;
  bool tie_lm_head = true;

  double rope_base = 10000.0;
  double norm_eps = 1e-5;
  double sn_eps = 1e-5;
  double init_stddev = 0.02;

  int head_dim() const { return heads > 0 ? dim / heads : 0; }
  int windows() const { return (max_len + window - 1) / window; }

  void validate() const {
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
    if (window < 1) throw ConfigError("window must be >= 1");
    if (window > max_len) throw ConfigError("window exceeds max_len");
    if (dim < 1) throw ConfigError("dim must be >= 1");
    if (heads < 1 || dim % heads != 0) throw ConfigError("heads must divide dim");
    if (!no_rotary && head_dim() % 2 != 0) throw ConfigError("rotary needs an even head dim");
    if (depth < 1) throw ConfigError("depth must be >= 1");
    if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
    if (task != Task::lm && n_labels < 1) throw ConfigError("n_labels must be >= 1 for classify/tag");
    if (mask_kind == MaskKind::prefix_causal && prefix_len < 0) throw ConfigError("prefix_len must be >= 0");
  }

  static MaskKind default_mask(Task t) { return t == Task::lm ? MaskKind::causal : MaskKind::full; }
};

// Carried state vector plus the index of the window that produced it
// (0 = initial state, before any window).
template <typename Real>
struct GpcState {
  Tensor<Real> value;  // 1-D, length D
  int window_index = 0;
};

// The initial state is LayerNorm(W_g * g0) with g0 fixed to zero unless the
// learnable-init flag is set, so by default it reduces to the norm's beta.
template <typename Real>
struct GpcInitParams {
  Tensor<Real> g0;       // 1-D, length D
  Tensor<Real> wg;       // D x D, no bias
  NormParams<Real> norm;

  static GpcInitParams init(int dim, Rng& rng, bool learnable_g0, Real stddev, Real eps, bool with_grad = true) {
    GpcInitParams p;
    p.g0 = learnable_g0 ? Tensor<Real>::randn({dim}, rng, stddev, with_grad) : Tensor<Real>::zeros({dim}, false);
    p.wg = Tensor<Real>::randn({dim, dim}, rng, stddev, with_grad);
    p.norm = NormParams<Real>::unit(dim, with_grad, eps);
    return p;
  }
};

template <typename Real>
struct WindowOutput {
  Tensor<Real> gpc_prime;  // 1-D, length D
  Tensor<Real> tokens;     // W x D, pad rows zeroed
};

// One layer's parameters: LayerNorm on the concatenated input, the window
// attention, and the LayerNorm of the state update.
template <typename Real>
struct LayerParams {
  NormParams<Real> input_norm;
  AttentionParams<Real> attn;
  NormParams<Real> gpc_norm;

  static LayerParams init(const ModelConfig& cfg, Rng& rng, bool with_grad = true) {
    LayerParams p;
    p.input_norm = NormParams<Real>::unit(cfg.dim, with_grad, Real(cfg.norm_eps));
    p.attn = AttentionParams<Real>::init(cfg.dim, cfg.heads, rng, with_grad);
    p.gpc_norm = NormParams<Real>::unit(cfg.dim, with_grad, Real(cfg.norm_eps));
    return p;
  }
};

template <typename Real>
struct Chunked {
  std::vector<Tensor<Real>> windows;             // each W x D
  std::vector<std::vector<std::uint8_t>> valid;  // per-window token validity
};

// Splits L rows into ceil(L/W) windows of exactly W rows; the tail window is
// padded with constant zero rows marked invalid. valid flags mark the
// document's real (non-pad) positions.
template <typename Real>
Chunked<Real> chunk(const Tensor<Real>& x, int w, const std::vector<std::uint8_t>& valid, TapeArg<Real> tape) {
  const int l = x.rows(), d = x.cols();
  if (static_cast<int>(valid.size()) != l) throw ShapeError("chunk: one validity flag per row required");
  if (w < 1) throw ConfigError("chunk: window must be >= 1");
  Chunked<Real> out;
  const int m = (l + w - 1) / w;
  for (int i = 0; i < m; ++i) {
    const int r0 = i * w, r1 = std::min(l, r0 + w);
    Tensor<Real> win = slice_rows(x, r0, r1, tape);
    if (r1 - r0 < w) win = concat_rows<Real>({win, Tensor<Real>::zeros({w - (r1 - r0), d})}, tape);
    std::vector<std::uint8_t> v(static_cast<std::size_t>(w), 0);
    for (int t = r0; t < r1; ++t) v[static_cast<std::size_t>(t - r0)] = valid[static_cast<std::size_t>(t)];
    out.windows.push_back(std::move(win));
    out.valid.push_back(std::move(v));
  }
  return out;
}

template <typename Real>
GpcState<Real> init_gpc(const GpcInitParams<Real>& p, TapeArg<Real> tape) {
  return GpcState<Real>{layer_norm(matmul(p.g0, p.wg, tape), p.norm, tape), 0};
}

namespace detail {

inline std::vector<int> window_positions(int window, bool rotate_state_slot) {
  std::vector<int> pos(static_cast<std::size_t>(window) + 1);
  pos[0] = rotate_state_slot ? 0 : -1;
  for (int t = 0; t < window; ++t) pos[static_cast<std::size_t>(t) + 1] = rotate_state_slot ? t + 1 : t;
  return pos;
}

}  // namespace detail

// One window through one layer: concatenate state and tokens, LayerNorm,
// window attention, then split row 0 (state) from the token rows, each
// standardized per row; pad rows are zeroed.
template <typename Real>
WindowOutput<Real> encode_window(const GpcState<Real>& gpc_in, const Tensor<Real>& window,
                                 const std::vector<std::uint8_t>& valid, const LayerParams<Real>& params,
                                 const MaskSpec<Real>& mask, RotaryArg<Real> rotary, const ModelConfig& cfg,
                                 TapeArg<Real> tape) {
  const int w = window.rows();
  if (window.cols() != cfg.dim || static_cast<int>(gpc_in.value.size()) != cfg.dim)
    throw ShapeError("encode_window: width mismatch with config dim");
  Tensor<Real> x_in = concat_rows<Real>({gpc_in.value, window}, tape);
  Tensor<Real> x_norm = layer_norm(x_in, params.input_norm, tape);
  const std::vector<int> positions = detail::window_positions(w, cfg.rotate_gpc_slot);
  Tensor<Real> o = pmhsa(x_norm, params.attn, mask, cfg.no_rotary ? nullptr : rotary, positions, tape);
  WindowOutput<Real> out;
  out.gpc_prime = standard_norm_rows(row(o, 0, tape), Real(cfg.sn_eps), tape);
  Tensor<Real> tokens = standard_norm_rows(slice_rows(o, 1, w + 1, tape), Real(cfg.sn_eps), tape);
  out.tokens = zero_invalid_rows(tokens, valid, tape);
  return out;
}

// State update: residual over the previous state, then LayerNorm. The
// no_residual ablation normalizes the extracted state alone.
template <typename Real>
GpcState<Real> update_gpc(const Tensor<Real>& gpc_prime, const GpcState<Real>& gpc_prev, const NormParams<Real>& norm,
                          bool no_residual, TapeArg<Real> tape) {
  Tensor<Real> pre = no_residual ? gpc_prime : add(gpc_prime, gpc_prev.value, tape);
  return GpcState<Real>{layer_norm(pre, norm, tape), gpc_prev.window_index + 1};
}

template <typename Real>
struct LayerResult {
  std::vector<Tensor<Real>> tokens;        // per window, W x D
  std::vector<GpcState<Real>> history;     // updated state after each window
};

template <typename Real>
MaskSpec<Real> window_mask(const ModelConfig& cfg, const std::vector<std::uint8_t>& valid) {
  return build_mask<Real>(cfg.mask_kind, static_cast<int>(valid.size()), valid, cfg.prefix_len, cfg.strict_gpc_row);
}

// Sequential fold of encode + update over the windows of one document.
template <typename Real>
LayerResult<Real> run_layer(const GpcState<Real>& gpc0, const Chunked<Real>& chunks, const LayerParams<Real>& params,
                            RotaryArg<Real> rotary, const ModelConfig& cfg, TapeArg<Real> tape) {
  LayerResult<Real> res;
  GpcState<Real> carried = gpc0;
  const int m = static_cast<int>(chunks.windows.size());
  for (int i = 0; i < m; ++i) {
    const MaskSpec<Real> mask = window_mask<Real>(cfg, chunks.valid[static_cast<std::size_t>(i)]);
    WindowOutput<Real> wo = encode_window(carried, chunks.windows[static_cast<std::size_t>(i)],
                                          chunks.valid[static_cast<std::size_t>(i)], params, mask, rotary, cfg, tape);
    carried = update_gpc(wo.gpc_prime, carried, params.gpc_norm, cfg.no_residual, tape);
    res.tokens.push_back(std::move(wo.tokens));
    res.history.push_back(carried);
  }
  return res;
}

template <typename Real>
struct StackParams {
  GpcInitParams<Real> gpc_init;
  std::vector<LayerParams<Real>> layers;

  static StackParams init(const ModelConfig& cfg, Rng& rng, bool with_grad = true) {
    StackParams p;
    p.gpc_init = GpcInitParams<Real>::init(cfg.dim, rng, cfg.learnable_g0, Real(cfg.init_stddev), Real(cfg.norm_eps),
                                           with_grad);
    for (int k = 0; k < cfg.depth; ++k) p.layers.push_back(LayerParams<Real>::init(cfg, rng, with_grad));
    return p;
  }
};

template <typename Real>
struct StackResult {
  std::vector<Tensor<Real>> tokens;     // final layer token outputs per window
  std::vector<GpcState<Real>> history;  // final layer state after each window
  GpcState<Real> initial;               // pre-document state (review sentinel)
};

// Runs the layer stack over all windows. Default routing is vertical: within
// window i, layer k consumes layer k-1's token output and updated state, and
// the deepest layer's updated state is carried to window i+1 at layer 1. The
// per_layer_gpc_chain variant instead gives every layer its own carried
// chain, running each layer over the whole document in turn.
template <typename Real>
StackResult<Real> run_stack(const Tensor<Real>& embedded, const std::vector<std::uint8_t>& valid,
                            const StackParams<Real>& params, RotaryArg<Real> rotary, const ModelConfig& cfg,
                            TapeArg<Real> tape) {
  Chunked<Real> chunks = chunk(embedded, cfg.window, valid, tape);
  const int m = static_cast<int>(chunks.windows.size());
  const int depth = static_cast<int>(params.layers.size());
  StackResult<Real> res;

  if (cfg.per_layer_gpc_chain) {
    Chunked<Real> cur = std::move(chunks);
    std::vector<GpcState<Real>> history;
    for (int k = 0; k < depth; ++k) {
      GpcState<Real> g0 = init_gpc(params.gpc_init, tape);
      res.initial = g0;
      LayerResult<Real> lr = run_layer(g0, cur, params.layers[static_cast<std::size_t>(k)], rotary, cfg, tape);
      cur.windows = std::move(lr.tokens);
      history = std::move(lr.history);
    }
    res.tokens = std::move(cur.windows);
    res.history = std::move(history);
    return res;
  }

  GpcState<Real> carried = init_gpc(params.gpc_init, tape);
  res.initial = carried;
  for (int i = 0; i < m; ++i) {
    const std::vector<std::uint8_t>& v = chunks.valid[static_cast<std::size_t>(i)];
    const MaskSpec<Real> mask = window_mask<Real>(cfg, v);
    // Under a causal mask a non-final layer's state update flows back into the
    // same window one layer up, where every token row can read it, so those
    // state rows must not see the window; only the deepest update, consumed
    // first by window i+1, may absorb it.
    const bool guard_inner = depth > 1 && cfg.mask_kind != MaskKind::full && !cfg.strict_gpc_row;
    const MaskSpec<Real> inner_mask =
        guard_inner ? build_mask<Real>(cfg.mask_kind, static_cast<int>(v.size()), v, cfg.prefix_len, true) : mask;
    Tensor<Real> cur_tokens = chunks.windows[static_cast<std::size_t>(i)];
    GpcState<Real> cur_gpc = carried;
    for (int k = 0; k < depth; ++k) {
      const LayerParams<Real>& lp = params.layers[static_cast<std::size_t>(k)];
      WindowOutput<Real> wo =
          encode_window(cur_gpc, cur_tokens, v, lp, k + 1 < depth ? inner_mask : mask, rotary, cfg, tape);
      GpcState<Real> updated = update_gpc(wo.gpc_prime, cur_gpc, lp.gpc_norm, cfg.no_residual, tape);
      cur_tokens = std::move(wo.tokens);
      cur_gpc = updated;
    }
    carried = cur_gpc;
    carried.window_index = i + 1;
    res.tokens.push_back(std::move(cur_tokens));
    res.history.push_back(carried);
  }
  return res;
}

}  // namespace ran
