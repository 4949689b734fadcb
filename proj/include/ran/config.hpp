#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "ran/errors.hpp"
#include "ran/recurrence.hpp"
#include "ran/training.hpp"

namespace ran {

// Everything a run needs, parsed from a flat key=value file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string train_data;
  std::string eval_data;
  std::string out;
  std::string tokenizer;        // empty = by task (char for lm, word otherwise)
  std::string precision = "f32";
  int max_vocab = 0;
  int synth_n = 20000;          // used when a data path is the literal "synth"
  double decoy_rate = 0.25;
  int eval_cap = 0;             // cap on eval docs during training evals
  bool mask_kind_set = false;

  TokenMode token_mode() const {
    if (!tokenizer.empty()) return token_mode_from_string(tokenizer);
    return model.task == Task::lm ? TokenMode::chars : TokenMode::word;
  }

  // Structural validation that does not depend on the data (vocab and label
  // counts may still be 0 here; they are filled from the dataset).
  void validate_static() const {
    ModelConfig probe = model;
    if (probe.vocab_size == 0) probe.vocab_size = 1;
    if (probe.n_labels == 0) probe.n_labels = 1;
    probe.validate();
    train.validate();
    if (precision != "f32" && precision != "f64") throw ConfigError("precision must be f32 or f64");
    if (synth_n < 1) throw ConfigError("synth_n must be >= 1");
    if (decoy_rate < 0.0 || decoy_rate > 1.0) throw ConfigError("decoy_rate must be in [0, 1]");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError(where + ": expected a boolean, got '" + v + "'");
}

inline int parse_int(const std::string& v, const std::string& where) {
  try {
    std::size_t pos;
    const int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(where + ": expected an integer, got '" + v + "'");
  }
}

inline double parse_double(const std::string& v, const std::string& where) {
  try {
    std::size_t pos;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(where + ": expected a number, got '" + v + "'");
  }
}

}  // namespace detail

// Flat `key=value` lines; '#' starts a comment; keys may appear once.
inline RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
  RunConfig rc;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool task_set = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key " + key);

    if (key == "task") {
      rc.model.task = task_from_string(val);
      task_set = true;
    } else if (key == "max_len") {
      rc.model.max_len = detail::parse_int(val, where);
    } else if (key == "window") {
      rc.model.window = detail::parse_int(val, where);
    } else if (key == "dim") {
      rc.model.dim = detail::parse_int(val, where);
    } else if (key == "heads") {
      rc.model.heads = detail::parse_int(val, where);
    } else if (key == "depth") {
      rc.model.depth = detail::parse_int(val, where);
    } else if (key == "vocab_size") {
      rc.model.vocab_size = detail::parse_int(val, where);
    } else if (key == "n_labels") {
      rc.model.n_labels = detail::parse_int(val, where);
    } else if (key == "mask_kind") {
      rc.model.mask_kind = mask_kind_from_string(val);
      rc.mask_kind_set = true;
    } else if (key == "prefix_len") {
      rc.model.prefix_len = detail::parse_int(val, where);
    } else if (key == "avg_pool") {
      rc.model.avg_pool = detail::parse_bool(val, where);
    } else if (key == "no_residual") {
      rc.model.no_residual = detail::parse_bool(val, where);
    } else if (key == "no_memory_review") {
      rc.model.no_memory_review = detail::parse_bool(val, where);
    } else if (key == "no_rotary") {
      rc.model.no_rotary = detail::parse_bool(val, where);
    } else if (key == "multilabel") {
      rc.model.multilabel = detail::parse_bool(val, where);
    } else if (key == "strict_gpc_row") {
      rc.model.strict_gpc_row = detail::parse_bool(val, where);
    } else if (key == "rotate_gpc_slot") {
      rc.model.rotate_gpc_slot = detail::parse_bool(val, where);
    } else if (key == "per_layer_gpc_chain") {
      rc.model.per_layer_gpc_chain = detail::parse_bool(val, where);
    } else if (key == "learnable_g0") {
      rc.model.learnable_g0 = detail::parse_bool(val, where);
    } else if (key == "tie_lm_head") {
      rc.model.tie_lm_head = detail::parse_bool(val, where);
    } else if (key == "rope_base") {
      rc.model.rope_base = detail::parse_double(val, where);
    } else if (key == "norm_eps") {
      rc.model.norm_eps = detail::parse_double(val, where);
    } else if (key == "sn_eps") {
      rc.model.sn_eps = detail::parse_double(val, where);
    } else if (key == "init_stddev") {
      rc.model.init_stddev = detail::parse_double(val, where);
    } else if (key == "lr") {
      rc.train.lr = detail::parse_double(val, where);
    } else if (key == "beta1") {
      rc.train.beta1 = detail::parse_double(val, where);
    } else if (key == "beta2") {
      rc.train.beta2 = detail::parse_double(val, where);
    } else if (key == "adam_eps") {
      rc.train.adam_eps = detail::parse_double(val, where);
    } else if (key == "batch_size") {
      rc.train.batch_size = detail::parse_int(val, where);
    } else if (key == "epochs") {
      rc.train.epochs = detail::parse_int(val, where);
    } else if (key == "seed") {
      rc.train.seed = static_cast<std::uint64_t>(detail::parse_int(val, where));
    } else if (key == "eval_every") {
      rc.train.eval_every = detail::parse_int(val, where);
    } else if (key == "clip_norm") {
      rc.train.clip_norm = detail::parse_double(val, where);
    } else if (key == "max_steps") {
      rc.train.max_steps = detail::parse_int(val, where);
    } else if (key == "max_train_docs") {
      rc.train.max_train_docs = detail::parse_int(val, where);
    } else if (key == "train_data") {
      rc.train_data = val;
    } else if (key == "eval_data") {
      rc.eval_data = val;
    } else if (key == "out") {
      rc.out = val;
    } else if (key == "tokenizer") {
      rc.tokenizer = val;
    } else if (key == "precision") {
      rc.precision = val;
    } else if (key == "max_vocab") {
      rc.max_vocab = detail::parse_int(val, where);
    } else if (key == "synth_n") {
      rc.synth_n = detail::parse_int(val, where);
    } else if (key == "decoy_rate") {
      rc.decoy_rate = detail::parse_double(val, where);
    } else if (key == "eval_cap") {
      rc.eval_cap = detail::parse_int(val, where);
    } else {
      throw ConfigError(where + ": unknown key " + key);
    }
  }
  if (task_set && !rc.mask_kind_set) rc.model.mask_kind = ModelConfig::default_mask(rc.model.task);
  rc.validate_static();
  return rc;
}

inline RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config_text(buf.str(), path);
}

}  // namespace ran
