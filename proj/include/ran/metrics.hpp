#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "ran/errors.hpp"

namespace ran {

// Fraction of exact matches in [0, 1].
inline double accuracy(const std::vector<int>& pred, const std::vector<int>& gold) {
  if (pred.size() != gold.size() || pred.empty()) throw PreconditionError("accuracy: size mismatch or empty");
  std::int64_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == gold[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// Micro-averaged F1 over pooled multi-label decisions, in [0, 1].
inline double micro_f1(const std::vector<std::vector<std::uint8_t>>& pred,
                       const std::vector<std::vector<std::uint8_t>>& gold) {
  if (pred.size() != gold.size() || pred.empty()) throw PreconditionError("micro_f1: size mismatch or empty");
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != gold[i].size()) throw PreconditionError("micro_f1: label width mismatch");
    for (std::size_t j = 0; j < pred[i].size(); ++j) {
      const bool p = pred[i][j] != 0, g = gold[i][j] != 0;
      tp += (p && g) ? 1 : 0;
      fp += (p && !g) ? 1 : 0;
      fn += (!p && g) ? 1 : 0;
    }
  }
  if (tp == 0) return 0.0;
  const double prec = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double rec = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * prec * rec / (prec + rec);
}

struct EntityScore {
  double precision = 0.0;  // percent, as conlleval prints
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t correct = 0;
  std::int64_t predicted = 0;
  std::int64_t gold = 0;
};

namespace detail {

// Maximal typed spans under conlleval's chunking rules: B-X always opens a
// chunk; I-X opens one after O, after a different type, or at the start.
inline std::vector<std::tuple<std::string, int, int>> chunks_of(const std::vector<std::string>& tags) {
  std::vector<std::tuple<std::string, int, int>> out;
  std::string open_type;
  int open_start = -1;
  auto close = [&](int end) {
    if (open_start >= 0) out.emplace_back(open_type, open_start, end);
    open_start = -1;
    open_type.clear();
  };
  for (int i = 0; i < static_cast<int>(tags.size()); ++i) {
    const std::string& t = tags[static_cast<std::size_t>(i)];
    const bool shaped = t.size() > 2 && (t[0] == 'B' || t[0] == 'I') && t[1] == '-';
    if (!shaped) {
      close(i);
      continue;
    }
    const std::string type = t.substr(2);
    if (t[0] == 'B' || open_start < 0 || open_type != type) {
      close(i);
      open_type = type;
      open_start = i;
    }
  }
  close(static_cast<int>(tags.size()));
  return out;
}

}  // namespace detail

// Exact span-and-type entity F1 over tag-name sequences, percentages like the
// conlleval reference tool.
inline EntityScore entity_f1(const std::vector<std::vector<std::string>>& pred,
                             const std::vector<std::vector<std::string>>& gold) {
  if (pred.size() != gold.size()) throw PreconditionError("entity_f1: sentence count mismatch");
  EntityScore s;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != gold[i].size()) throw PreconditionError("entity_f1: sentence length mismatch");
    const auto pc = detail::chunks_of(pred[i]);
    const auto gc = detail::chunks_of(gold[i]);
    s.predicted += static_cast<std::int64_t>(pc.size());
    s.gold += static_cast<std::int64_t>(gc.size());
    for (const auto& c : pc)
      for (const auto& g : gc)
        if (c == g) {
          ++s.correct;
          break;
        }
  }
  s.precision = s.predicted > 0 ? 100.0 * static_cast<double>(s.correct) / static_cast<double>(s.predicted) : 0.0;
  s.recall = s.gold > 0 ? 100.0 * static_cast<double>(s.correct) / static_cast<double>(s.gold) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

// exp(mean negative log likelihood).
inline double perplexity(double total_nll, std::int64_t count) {
  if (count < 1) throw PreconditionError("perplexity: no targets");
  return std::exp(total_nll / static_cast<double>(count));
}

}  // namespace ran
