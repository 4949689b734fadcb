#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ran/data.hpp"
#include "ran/errors.hpp"
#include "ran/heads.hpp"
#include "ran/metrics.hpp"
#include "ran/model.hpp"
#include "ran/ops.hpp"
#include "ran/rng.hpp"
#include "ran/tensor.hpp"

namespace ran {

struct TrainConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 16;
  int epochs = 1;
  std::uint64_t seed = 42;
  int eval_every = 0;     // steps between evals; 0 = once per epoch
  double clip_norm = 0.0; // 0 = off
  int max_steps = 0;      // 0 = unlimited
  int max_train_docs = 0; // 0 = all

  void validate() const {
    if (lr <= 0) throw ConfigError("lr must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
  }
};

// Bias-corrected Adam. Moment buffers are created on first use, keyed by the
// registry order; a NaN or infinite gradient anywhere aborts the whole step
// before any parameter is touched.
template <typename Real>
class Adam {
 public:
  Adam() = default;
  Adam(Real lr, Real beta1 = Real(0.9), Real beta2 = Real(0.999), Real eps = Real(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<NamedParam<Real>>& params) {
    for (const auto& p : params) {
      if (!p.tensor.tracked()) throw StateError("adam: parameter " + p.name + " has no gradient buffer");
      for (const Real g : *p.tensor.grad)
        if (!std::isfinite(static_cast<double>(g)))
          throw NumericError("adam: non-finite gradient in " + p.name + ", step aborted");
    }
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(Tensor<Real>::zeros(p.tensor.shape));
        v_.push_back(Tensor<Real>::zeros(p.tensor.shape));
      }
    }
    if (m_.size() != params.size()) throw StateError("adam: parameter registry changed size");
    ++step_count_;
    const Real bc1 = Real(1) - std::pow(beta1_, Real(static_cast<double>(step_count_)));
    const Real bc2 = Real(1) - std::pow(beta2_, Real(static_cast<double>(step_count_)));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor<Real>& t = params[i].tensor;
      Tensor<Real>& m = m_[i];
      Tensor<Real>& v = v_[i];
      if (m.shape != t.shape) throw StateError("adam: moment shape mismatch for " + params[i].name);
      for (std::size_t j = 0; j < t.size(); ++j) {
        const Real g = (*t.grad)[j];
        (*m.data)[j] = beta1_ * (*m.data)[j] + (Real(1) - beta1_) * g;
        (*v.data)[j] = beta2_ * (*v.data)[j] + (Real(1) - beta2_) * g * g;
        const Real mhat = (*m.data)[j] / bc1;
        const Real vhat = (*v.data)[j] / bc2;
        (*t.data)[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  Real lr() const { return lr_; }
  void set_lr(Real lr) { lr_ = lr; }
  std::int64_t step_count() const { return step_count_; }
  std::vector<Tensor<Real>>& first_moments() { return m_; }
  std::vector<Tensor<Real>>& second_moments() { return v_; }
  void restore(std::int64_t step_count, std::vector<Tensor<Real>> m, std::vector<Tensor<Real>> v) {
    step_count_ = step_count;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  Real lr_ = Real(3e-4);
  Real beta1_ = Real(0.9);
  Real beta2_ = Real(0.999);
  Real eps_ = Real(1e-8);
  std::int64_t step_count_ = 0;
  std::vector<Tensor<Real>> m_;
  std::vector<Tensor<Real>> v_;
};

// ---------------------------------------------------------------------------
// per-document losses

// Loss for one document given the model output. classify: CE (or mean BCE
// when multilabel); tag: CE averaged over real positions; lm: next-token CE
// averaged over positions with a target.
template <typename Real>
Tensor<Real> document_loss(const ModelOutput<Real>& out, const TokenizedDocument& doc, const ModelConfig& cfg,
                           TapeArg<Real> tape) {
  switch (cfg.task) {
    case Task::classify: {
      if (cfg.multilabel) {
        if (static_cast<int>(doc.labels.size()) != cfg.n_labels)
          throw DataError("document_loss: multilabel width mismatch");
        return bce_with_logits(out.logits, doc.labels, tape);
      }
      if (doc.label < 0 || doc.label >= cfg.n_labels) throw DataError("document_loss: label out of range");
      return cross_entropy_rows(out.logits, {doc.label}, {Real(1)}, tape);
    }
    case Task::tag: {
      if (static_cast<int>(doc.tags.size()) != doc.true_length)
        throw DataError("document_loss: tag count != true_length");
      std::vector<int> targets(static_cast<std::size_t>(cfg.max_len), 0);
      std::vector<Real> weights(static_cast<std::size_t>(cfg.max_len), Real(0));
      const Real w = Real(1) / Real(doc.true_length);
      for (int t = 0; t < doc.true_length; ++t) {
        targets[static_cast<std::size_t>(t)] = doc.tags[static_cast<std::size_t>(t)];
        weights[static_cast<std::size_t>(t)] = w;
      }
      return cross_entropy_rows(out.logits, targets, weights, tape);
    }
    case Task::lm:
    default: {
      if (doc.true_length < 2) throw DataError("document_loss: lm segment needs at least 2 tokens");
      std::vector<int> targets(static_cast<std::size_t>(cfg.max_len), 0);
      std::vector<Real> weights(static_cast<std::size_t>(cfg.max_len), Real(0));
      const int n = doc.true_length - 1;
      const Real w = Real(1) / Real(n);
      for (int t = 0; t < n; ++t) {
        targets[static_cast<std::size_t>(t)] = doc.ids[static_cast<std::size_t>(t) + 1];
        weights[static_cast<std::size_t>(t)] = w;
      }
      return cross_entropy_rows(out.logits, targets, weights, tape);
    }
  }
}

// ---------------------------------------------------------------------------
// masked language modeling

struct MlmExample {
  std::vector<int> input;
  std::vector<int> targets;        // original ids at selected positions
  std::vector<std::uint8_t> sel;   // 1 where the loss applies
};

// Selects 15% of real positions; of those 80% become the mask token, 10% a
// random non-reserved token, 10% stay unchanged.
inline MlmExample mlm_mask(const std::vector<int>& ids, int true_length, int vocab_size, Rng& rng) {
  MlmExample ex;
  ex.input = ids;
  ex.targets.assign(ids.size(), 0);
  ex.sel.assign(ids.size(), 0);
  const int first_regular = Vocab::mask_id + 1;
  for (int t = 0; t < true_length; ++t) {
    if (rng.uniform() >= 0.15) continue;
    ex.sel[static_cast<std::size_t>(t)] = 1;
    ex.targets[static_cast<std::size_t>(t)] = ids[static_cast<std::size_t>(t)];
    const double r = rng.uniform();
    if (r < 0.8) {
      ex.input[static_cast<std::size_t>(t)] = Vocab::mask_id;
    } else if (r < 0.9 && vocab_size > first_regular) {
      ex.input[static_cast<std::size_t>(t)] = first_regular + rng.uniform_int(vocab_size - first_regular);
    }
  }
  return ex;
}

// MLM loss over the masked positions only; zero when nothing was selected.
template <typename Real>
Tensor<Real> mlm_loss(const RanModel<Real>& model, const TokenizedDocument& doc, Rng& rng, TapeArg<Real> tape,
                      ModelOutput<Real>* out_opt = nullptr) {
  const MlmExample ex = mlm_mask(doc.ids, doc.true_length, model.cfg.vocab_size, rng);
  ModelOutput<Real> out = model.forward(ex.input, doc.true_length, tape);
  int count = 0;
  for (auto s : ex.sel) count += s ? 1 : 0;
  std::vector<Real> weights(ex.sel.size(), Real(0));
  if (count > 0) {
    const Real w = Real(1) / Real(count);
    for (std::size_t i = 0; i < ex.sel.size(); ++i)
      if (ex.sel[i]) weights[i] = w;
  }
  Tensor<Real> loss = cross_entropy_rows(out.logits, ex.targets, weights, tape);
  if (out_opt) *out_opt = std::move(out);
  return loss;
}

// ---------------------------------------------------------------------------
// evaluation

struct EvalResult {
  double loss = 0.0;
  double metric = 0.0;       // accuracy / micro-F1 in [0,1]; entity F1 in percent; perplexity
  std::string metric_name;
};

template <typename Real>
EvalResult evaluate(const RanModel<Real>& model, const std::vector<TokenizedDocument>& docs,
                    const std::vector<std::string>& label_names, int max_docs = 0) {
  if (docs.empty()) throw PreconditionError("evaluate: no documents");
  const ModelConfig& cfg = model.cfg;
  const int n = max_docs > 0 ? std::min<int>(max_docs, static_cast<int>(docs.size()))
                             : static_cast<int>(docs.size());
  double total_loss = 0.0;
  std::vector<int> pred_cls, gold_cls;
  std::vector<std::vector<std::uint8_t>> pred_ml, gold_ml;
  std::vector<std::vector<std::string>> pred_tags, gold_tags;
  double total_nll = 0.0;
  std::int64_t nll_count = 0;

  for (int i = 0; i < n; ++i) {
    const TokenizedDocument& doc = docs[static_cast<std::size_t>(i)];
    ModelOutput<Real> out = model.forward(doc.ids, doc.true_length, nullptr);
    Tensor<Real> loss = document_loss<Real>(out, doc, cfg, nullptr);
    total_loss += static_cast<double>(loss[0]);
    switch (cfg.task) {
      case Task::classify: {
        if (cfg.multilabel) {
          std::vector<std::uint8_t> p(static_cast<std::size_t>(cfg.n_labels), 0);
          for (int j = 0; j < cfg.n_labels; ++j)
            p[static_cast<std::size_t>(j)] = out.logits[static_cast<std::size_t>(j)] > Real(0) ? 1 : 0;
          pred_ml.push_back(std::move(p));
          gold_ml.push_back(doc.labels);
        } else {
          int arg = 0;
          for (int j = 1; j < cfg.n_labels; ++j)
            if (out.logits[static_cast<std::size_t>(j)] > out.logits[static_cast<std::size_t>(arg)]) arg = j;
          pred_cls.push_back(arg);
          gold_cls.push_back(doc.label);
        }
        break;
      }
      case Task::tag: {
        std::vector<std::string> p, g;
        for (int t = 0; t < doc.true_length; ++t) {
          int arg = 0;
          for (int j = 1; j < cfg.n_labels; ++j)
            if (out.logits.at(t, j) > out.logits.at(t, arg)) arg = j;
          p.push_back(label_names[static_cast<std::size_t>(arg)]);
          g.push_back(label_names[static_cast<std::size_t>(doc.tags[static_cast<std::size_t>(t)])]);
        }
        pred_tags.push_back(repair_bio(p));
        gold_tags.push_back(std::move(g));
        break;
      }
      case Task::lm: {
        total_nll += static_cast<double>(loss[0]) * (doc.true_length - 1);
        nll_count += doc.true_length - 1;
        break;
      }
    }
  }

  EvalResult res;
  res.loss = total_loss / n;
  switch (cfg.task) {
    case Task::classify:
      if (cfg.multilabel) {
        res.metric = micro_f1(pred_ml, gold_ml);
        res.metric_name = "micro_f1";
      } else {
        res.metric = accuracy(pred_cls, gold_cls);
        res.metric_name = "accuracy";
      }
      break;
    case Task::tag:
      res.metric = entity_f1(pred_tags, gold_tags).f1;
      res.metric_name = "entity_f1";
      break;
    case Task::lm:
      res.metric = perplexity(total_nll, nll_count);
      res.metric_name = "perplexity";
      break;
  }
  return res;
}

// ---------------------------------------------------------------------------
// training loop

struct TrainReport {
  int steps = 0;
  double final_loss = 0.0;
  EvalResult last_eval;
};

namespace detail {

template <typename Real>
void clip_gradients(const std::vector<NamedParam<Real>>& params, double clip_norm) {
  if (clip_norm <= 0) return;
  double sq = 0.0;
  for (const auto& p : params)
    for (const Real g : *p.tensor.grad) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm <= clip_norm) return;
  const Real s = Real(clip_norm / norm);
  for (const auto& p : params)
    for (Real& g : *p.tensor.grad) g *= s;
}

inline std::string format_metric(double value, bool available) {
  if (!available) return "-";
  std::ostringstream ss;
  ss << std::setprecision(17) << value;
  return ss.str();
}

}  // namespace detail

// Deterministic single-threaded training: per step, gradients are accumulated
// over the batch documents in order, then one Adam update. Log lines are
// `step<TAB>loss<TAB>metric`; the metric column repeats the latest evaluation
// result ("-" before the first one).
template <typename Real>
TrainReport train(RanModel<Real>& model, Adam<Real>& opt, const std::vector<TokenizedDocument>& train_docs,
                  const std::vector<TokenizedDocument>& eval_docs, const std::vector<std::string>& label_names,
                  const TrainConfig& tc, std::ostream& log, int eval_cap = 0) {
  tc.validate();
  if (train_docs.empty()) throw PreconditionError("train: no training documents");
  Rng shuffle_rng(tc.seed);
  std::vector<NamedParam<Real>> params = model.parameters();
  TrainReport report;
  bool have_eval = false;

  std::vector<int> order(train_docs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  const int use_docs = tc.max_train_docs > 0
                           ? std::min<int>(tc.max_train_docs, static_cast<int>(train_docs.size()))
                           : static_cast<int>(train_docs.size());

  auto maybe_eval = [&] {
    if (eval_docs.empty()) return;
    report.last_eval = evaluate(model, eval_docs, label_names, eval_cap);
    have_eval = true;
  };

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    int cursor = 0;
    while (cursor < use_docs) {
      if (tc.max_steps > 0 && report.steps >= tc.max_steps) break;
      const int batch = std::min(tc.batch_size, use_docs - cursor);
      model.zero_grads();
      double batch_loss = 0.0;
      for (int b = 0; b < batch; ++b) {
        const TokenizedDocument& doc = train_docs[static_cast<std::size_t>(order[static_cast<std::size_t>(cursor + b)])];
        Tape<Real> tape;
        ModelOutput<Real> out = model.forward(doc.ids, doc.true_length, &tape);
        Tensor<Real> loss = document_loss<Real>(out, doc, model.cfg, &tape);
        batch_loss += static_cast<double>(loss[0]);
        (*loss.grad)[0] = Real(1) / Real(batch);
        tape.backward();
      }
      cursor += batch;
      detail::clip_gradients(params, tc.clip_norm);
      opt.step(params);
      ++report.steps;
      report.final_loss = batch_loss / batch;
      if (tc.eval_every > 0 && report.steps % tc.eval_every == 0) maybe_eval();
      log << report.steps << '\t' << std::setprecision(17) << report.final_loss << '\t'
          << detail::format_metric(report.last_eval.metric, have_eval) << '\n';
    }
    if (tc.eval_every == 0) maybe_eval();
    if (tc.max_steps > 0 && report.steps >= tc.max_steps) break;
  }
  if (!have_eval) maybe_eval();
  return report;
}

// ---------------------------------------------------------------------------
// finite-difference gradient checking

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
  std::string worst_param;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  double max_rel_err = 0.0;
  bool passed = true;
};

namespace detail {

inline TokenizedDocument random_doc(const ModelConfig& cfg, Rng& rng) {
  TokenizedDocument doc;
  doc.ids.resize(static_cast<std::size_t>(cfg.max_len));
  const int first_regular = Vocab::mask_id + 1;
  // Leave a couple of pad positions when the document spans several windows
  // so padding paths are exercised.
  doc.true_length = cfg.max_len > cfg.window ? cfg.max_len - 2 : cfg.max_len;
  for (int t = 0; t < cfg.max_len; ++t)
    doc.ids[static_cast<std::size_t>(t)] =
        t < doc.true_length ? first_regular + rng.uniform_int(cfg.vocab_size - first_regular) : Vocab::pad_id;
  switch (cfg.task) {
    case Task::classify:
      if (cfg.multilabel) {
        doc.labels.resize(static_cast<std::size_t>(cfg.n_labels));
        for (auto& l : doc.labels) l = rng.uniform_int(2) ? 1 : 0;
      } else {
        doc.label = rng.uniform_int(cfg.n_labels);
      }
      break;
    case Task::tag:
      for (int t = 0; t < doc.true_length; ++t) doc.tags.push_back(rng.uniform_int(cfg.n_labels));
      break;
    case Task::lm:
      break;
  }
  return doc;
}

}  // namespace detail

// Central-difference check of every parameter tensor of a 64-bit model
// against the recorded backward pass.
inline GradCheckCase grad_check_single(const ModelConfig& cfg, std::uint64_t seed, double tolerance,
                                       double fd_step = 1e-5) {
  cfg.validate();
  RanModel<double> model = RanModel<double>::init(cfg, seed);
  Rng rng(seed + 1);
  // Move every parameter to a generic point before probing. The training init
  // is a poor one for central differences: biases sit exactly at zero, and the
  // 0.02-scale weights leave row variances near the normalizer eps, where the
  // curvature inflates the truncation error of the probe far beyond the
  // tolerance even though the recorded gradients are exact.
  for (auto& p : model.parameters()) {
    const bool is_gain = p.name.size() >= 5 && p.name.compare(p.name.size() - 5, 5, "gamma") == 0;
    for (std::size_t j = 0; j < p.tensor.size(); ++j)
      (*p.tensor.data)[j] = (is_gain ? 1.0 : 0.0) + 0.1 * rng.normal();
  }
  const TokenizedDocument doc = detail::random_doc(cfg, rng);

  auto loss_value = [&]() {
    ModelOutput<double> out = model.forward(doc.ids, doc.true_length, nullptr);
    Tensor<double> loss = document_loss<double>(out, doc, cfg, nullptr);
    return loss[0];
  };

  model.zero_grads();
  {
    Tape<double> tape;
    ModelOutput<double> out = model.forward(doc.ids, doc.true_length, &tape);
    Tensor<double> loss = document_loss<double>(out, doc, cfg, &tape);
    (*loss.grad)[0] = 1.0;
    tape.backward();
  }

  GradCheckCase result;
  result.name = to_string(cfg.task) + " depth=" + std::to_string(cfg.depth) +
                " m=" + std::to_string(cfg.windows());
  for (auto& p : model.parameters()) {
    for (std::size_t j = 0; j < p.tensor.size(); ++j) {
      const double saved = (*p.tensor.data)[j];
      (*p.tensor.data)[j] = saved + fd_step;
      const double up = loss_value();
      (*p.tensor.data)[j] = saved - fd_step;
      const double down = loss_value();
      (*p.tensor.data)[j] = saved;
      const double fd = (up - down) / (2.0 * fd_step);
      const double an = (*p.tensor.grad)[j];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = p.name + "[" + std::to_string(j) + "]";
      }
    }
  }
  result.passed = result.max_rel_err < tolerance;
  return result;
}

// The full matrix: {depth 1,2} x {classify, tag, lm} x {1, 2, 4 windows} on a
// tiny width-8 model.
inline GradCheckReport grad_check_matrix(double tolerance = 1e-4, std::uint64_t seed = 7) {
  GradCheckReport report;
  for (int depth : {1, 2}) {
    for (Task task : {Task::classify, Task::tag, Task::lm}) {
      for (int m : {1, 2, 4}) {
        ModelConfig cfg;
        cfg.task = task;
        cfg.mask_kind = ModelConfig::default_mask(task);
        cfg.depth = depth;
        cfg.window = 4;
        cfg.max_len = 4 * m;
        cfg.dim = 8;
        cfg.heads = 2;
        cfg.vocab_size = 19;
        cfg.n_labels = task == Task::tag ? 5 : 3;
        GradCheckCase c = grad_check_single(cfg, seed, tolerance);
        report.max_rel_err = std::max(report.max_rel_err, c.max_rel_err);
        report.passed = report.passed && c.passed;
        report.cases.push_back(std::move(c));
      }
    }
  }
  return report;
}

}  // namespace ran
