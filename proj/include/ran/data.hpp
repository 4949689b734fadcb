#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ran/errors.hpp"
#include "ran/rng.hpp"

namespace ran {

enum class TokenMode { word, chars };

inline TokenMode token_mode_from_string(const std::string& s) {
  if (s == "word") return TokenMode::word;
  if (s == "char" || s == "chars") return TokenMode::chars;
  throw ConfigError("unknown tokenizer mode: " + s);
}

inline std::string to_string(TokenMode m) { return m == TokenMode::word ? "word" : "char"; }

// Token <-> id bijection with fixed reserved ids.
class Vocab {
 public:
  static constexpr int pad_id = 0;
  static constexpr int unk_id = 1;
  static constexpr int bos_id = 2;
  static constexpr int eos_id = 3;
  static constexpr int mask_id = 4;

  Vocab() {
    for (const char* t : {"<pad>", "<unk>", "<bos>", "<eos>", "<mask>"}) add(t);
  }

  int add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    ids_.emplace(token, id);
    tokens_.push_back(token);
    return id;
  }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? unk_id : it->second;
  }

  bool contains(const std::string& token) const { return ids_.count(token) > 0; }

  const std::string& token(int id) const {
    if (id < 0 || id >= size()) throw DataError("vocab: id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

inline std::vector<std::string> tokenize(const std::string& text, TokenMode mode) {
  std::vector<std::string> out;
  if (mode == TokenMode::word) {
    std::istringstream ss(text);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
  } else {
    for (char c : text) out.emplace_back(1, c);
  }
  return out;
}

// Frequency-ordered vocabulary; ties break lexicographically so the result is
// independent of input order. max_size counts the reserved ids.
inline Vocab build_vocab(const std::vector<std::string>& corpus_tokens, int max_size = 0) {
  if (corpus_tokens.empty()) throw DataError("build_vocab: empty corpus");
  std::map<std::string, std::int64_t> freq;
  for (const auto& t : corpus_tokens) ++freq[t];
  std::vector<std::pair<std::string, std::int64_t>> entries(freq.begin(), freq.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [tok, cnt] : entries) {
    if (max_size > 0 && v.size() >= max_size) break;
    if (!v.contains(tok)) v.add(tok);
  }
  return v;
}

// One padded training example. Exactly one of label / labels / tags is
// meaningful, depending on the task.
struct TokenizedDocument {
  std::vector<int> ids;  // length L
  int true_length = 0;
  int label = -1;
  std::vector<std::uint8_t> labels;  // multilabel indicator over n_labels
  std::vector<int> tags;             // length true_length
};

struct Dataset {
  std::vector<TokenizedDocument> docs;
  Vocab vocab;
  std::vector<std::string> label_names;
};

inline TokenizedDocument encode(const std::string& text, const Vocab& vocab, int max_len, TokenMode mode) {
  TokenizedDocument d;
  d.ids.assign(static_cast<std::size_t>(max_len), Vocab::pad_id);
  const std::vector<std::string> toks = tokenize(text, mode);
  const int n = std::min<int>(static_cast<int>(toks.size()), max_len);
  for (int i = 0; i < n; ++i) d.ids[static_cast<std::size_t>(i)] = vocab.id(toks[static_cast<std::size_t>(i)]);
  d.true_length = n;
  return d;
}

namespace detail {

inline DataError line_error(const std::string& path, int line, const std::string& msg) {
  return DataError(path + ":" + std::to_string(line) + ": " + msg);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

// `label<TAB>text`, one document per line; multi-label files join labels with
// commas. With an empty label_names the label set is collected from the file
// (sorted); otherwise unseen labels are an error.
inline Dataset load_tsv_classification(const std::string& path, int max_len, TokenMode mode,
                                       std::vector<std::string> label_names = {}, const Vocab* fixed_vocab = nullptr,
                                       bool multilabel = false, int max_vocab = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw detail::line_error(path, lineno, "expected label<TAB>text");
    const std::string label = line.substr(0, tab), text = line.substr(tab + 1);
    if (label.empty()) throw detail::line_error(path, lineno, "empty label");
    if (text.empty()) throw detail::line_error(path, lineno, "empty text");
    rows.emplace_back(label, text);
  }
  if (rows.empty()) throw DataError(path + ": no documents");

  Dataset ds;
  if (label_names.empty()) {
    std::map<std::string, int> seen;
    for (const auto& [label, text] : rows)
      for (const auto& l : detail::split(label, ','))
        if (!l.empty()) seen.emplace(l, 0);
    for (const auto& [l, unused] : seen) ds.label_names.push_back(l);
  } else {
    ds.label_names = std::move(label_names);
  }
  std::unordered_map<std::string, int> label_ids;
  for (std::size_t i = 0; i < ds.label_names.size(); ++i) label_ids[ds.label_names[i]] = static_cast<int>(i);

  if (fixed_vocab) {
    ds.vocab = *fixed_vocab;
  } else {
    std::vector<std::string> all;
    for (const auto& [label, text] : rows) {
      auto toks = tokenize(text, mode);
      all.insert(all.end(), toks.begin(), toks.end());
    }
    ds.vocab = build_vocab(all, max_vocab);
  }

  lineno = 0;
  for (const auto& [label, text] : rows) {
    ++lineno;
    TokenizedDocument d = encode(text, ds.vocab, max_len, mode);
    if (d.true_length == 0) throw detail::line_error(path, lineno, "document has no tokens");
    if (multilabel) {
      d.labels.assign(ds.label_names.size(), 0);
      for (const auto& l : detail::split(label, ',')) {
        if (l.empty()) continue;
        auto it = label_ids.find(l);
        if (it == label_ids.end()) throw detail::line_error(path, lineno, "unknown label: " + l);
        d.labels[static_cast<std::size_t>(it->second)] = 1;
      }
    } else {
      auto it = label_ids.find(label);
      if (it == label_ids.end()) throw detail::line_error(path, lineno, "unknown label: " + label);
      d.label = it->second;
    }
    ds.docs.push_back(std::move(d));
  }
  return ds;
}

// Token-per-line CoNLL: first column the token, last column the tag, blank
// line ends a sentence, -DOCSTART- lines skipped. Tag names are collected
// sorted, so ids are stable across shuffled files.
inline Dataset load_conll(const std::string& path, int max_len, const Vocab* fixed_vocab = nullptr,
                          std::vector<std::string> tag_names = {}, int max_vocab = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::vector<std::pair<std::string, std::string>>> sentences(1);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      if (!sentences.back().empty()) sentences.emplace_back();
      continue;
    }
    std::istringstream ss(line);
    std::vector<std::string> cols;
    std::string col;
    while (ss >> col) cols.push_back(col);
    if (cols.size() < 2) throw detail::line_error(path, lineno, "expected token and tag columns");
    if (cols[0] == "-DOCSTART-") continue;
    sentences.back().emplace_back(cols[0], cols.back());
  }
  if (sentences.back().empty()) sentences.pop_back();
  if (sentences.empty()) throw DataError(path + ": no sentences");

  Dataset ds;
  if (tag_names.empty()) {
    std::map<std::string, int> seen;
    for (const auto& s : sentences)
      for (const auto& [tok, tag] : s) seen.emplace(tag, 0);
    for (const auto& [t, unused] : seen) ds.label_names.push_back(t);
  } else {
    ds.label_names = std::move(tag_names);
  }
  std::unordered_map<std::string, int> tag_ids;
  for (std::size_t i = 0; i < ds.label_names.size(); ++i) tag_ids[ds.label_names[i]] = static_cast<int>(i);

  if (fixed_vocab) {
    ds.vocab = *fixed_vocab;
  } else {
    std::vector<std::string> all;
    for (const auto& s : sentences)
      for (const auto& [tok, tag] : s) all.push_back(tok);
    ds.vocab = build_vocab(all, max_vocab);
  }

  for (const auto& s : sentences) {
    if (s.empty()) continue;
    TokenizedDocument d;
    d.ids.assign(static_cast<std::size_t>(max_len), Vocab::pad_id);
    const int n = std::min<int>(static_cast<int>(s.size()), max_len);
    for (int i = 0; i < n; ++i) {
      d.ids[static_cast<std::size_t>(i)] = ds.vocab.id(s[static_cast<std::size_t>(i)].first);
      auto it = tag_ids.find(s[static_cast<std::size_t>(i)].second);
      if (it == tag_ids.end()) throw DataError(path + ": unknown tag " + s[static_cast<std::size_t>(i)].second);
      d.tags.push_back(it->second);
    }
    d.true_length = n;
    ds.docs.push_back(std::move(d));
  }
  return ds;
}

// Reads a text file as one contiguous token stream and cuts it into length-L
// documents; a final partial segment is kept padded.
inline Dataset load_text_lm(const std::string& path, int max_len, TokenMode mode = TokenMode::chars,
                            const Vocab* fixed_vocab = nullptr, int max_vocab = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (text.empty()) throw DataError(path + ": empty corpus");
  std::vector<std::string> toks = tokenize(text, mode);
  if (toks.empty()) throw DataError(path + ": no tokens");

  Dataset ds;
  ds.vocab = fixed_vocab ? *fixed_vocab : build_vocab(toks, max_vocab);
  const std::int64_t n = static_cast<std::int64_t>(toks.size());
  for (std::int64_t start = 0; start < n; start += max_len) {
    TokenizedDocument d;
    d.ids.assign(static_cast<std::size_t>(max_len), Vocab::pad_id);
    const int len = static_cast<int>(std::min<std::int64_t>(max_len, n - start));
    if (len < 2) break;  // a segment needs at least one next-token target
    for (int i = 0; i < len; ++i)
      d.ids[static_cast<std::size_t>(i)] = ds.vocab.id(toks[static_cast<std::size_t>(start + i)]);
    d.true_length = len;
    ds.docs.push_back(std::move(d));
  }
  if (ds.docs.empty()) throw DataError(path + ": corpus shorter than one usable segment");
  return ds;
}

// Synthetic long-range retrieval task. The opening window carries a run of
// alpha markers whose index is the label; every later window may carry a
// decoy run of either index. Pooled window features cannot tell the opening
// run from a decoy, so the label is only reachable through the state carried
// out of the opening window.
inline Dataset synth_longrange(int n, int max_len, int window, std::uint64_t seed, double decoy_rate = 0.25) {
  if (n < 1 || max_len < 1 || window < 1 || window > max_len) throw ConfigError("synth_longrange: bad sizes");
  Rng rng(seed);
  const std::vector<std::string> fillers = {
      "the",  "a",     "of",    "and",  "to",    "in",   "is",    "was",  "for",  "on",
      "with", "as",    "by",    "at",   "from",  "that", "this",  "it",   "are",  "be",
      "or",   "an",    "were",  "not",  "had",   "has",  "have",  "but",  "they", "his",
      "her",  "which", "their", "will", "would", "can",  "could", "more", "other"};
  const std::vector<std::string> markers = {"alpha0", "alpha1", "beta0", "beta1"};

  Dataset ds;
  ds.label_names = {"even", "odd"};
  for (const auto& f : fillers) ds.vocab.add(f);
  for (const auto& m : markers) ds.vocab.add(m);

  // Markers come as contiguous runs scaled to the window so the run keeps a
  // fixed share of the window's attention mass at any width.
  const int m = (max_len + window - 1) / window;
  const int burst = std::max(1, window / 16);
  auto plant = [&](TokenizedDocument& d, int start, int len, int marker) {
    const int b = std::min(burst, len);
    const int off = start + static_cast<int>(rng.uniform_int(len - b + 1));
    for (int t = 0; t < b; ++t) d.ids[static_cast<std::size_t>(off + t)] = ds.vocab.id(markers[static_cast<std::size_t>(marker)]);
  };
  for (int i = 0; i < n; ++i) {
    TokenizedDocument d;
    d.ids.resize(static_cast<std::size_t>(max_len));
    for (int t = 0; t < max_len; ++t)
      d.ids[static_cast<std::size_t>(t)] =
          ds.vocab.id(fillers[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(fillers.size())))]);
    const int a = static_cast<int>(rng.uniform_int(2));
    plant(d, 0, std::min(window, max_len), a);
    for (int w = 1; w < m; ++w) {
      if (rng.uniform() >= decoy_rate) continue;
      plant(d, w * window, std::min(window, max_len - w * window), static_cast<int>(rng.uniform_int(2)));
    }
    d.label = a;
    d.true_length = max_len;
    ds.docs.push_back(std::move(d));
  }
  return ds;
}

}  // namespace ran
