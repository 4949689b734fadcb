#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ran/data.hpp"
#include "ran/errors.hpp"
#include "ran/model.hpp"
#include "ran/training.hpp"

namespace ran {

namespace ckpt {

constexpr std::uint8_t version = 1;
constexpr char magic[8] = "RANCKPT";  // 7 chars + NUL, the NUL is not written

inline void write_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!in) throw DataError("checkpoint: unexpected end of file");
}

template <typename T>
void write_le(std::ostream& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const std::uint8_t b = static_cast<std::uint8_t>(static_cast<std::make_unsigned_t<T>>(v) >> (8 * i));
    write_bytes(out, &b, 1);
  }
}

template <typename T>
T read_le(std::istream& in) {
  static_assert(std::is_integral_v<T>);
  std::make_unsigned_t<T> v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    std::uint8_t b;
    read_bytes(in, &b, 1);
    v |= static_cast<std::make_unsigned_t<T>>(b) << (8 * i);
  }
  return static_cast<T>(v);
}

inline void write_str(std::ostream& out, const std::string& s) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  write_bytes(out, s.data(), s.size());
}

inline std::string read_str(std::istream& in) {
  const std::uint32_t n = read_le<std::uint32_t>(in);
  if (n > (1u << 28)) throw DataError("checkpoint: unreasonable string length");
  std::string s(n, '\0');
  if (n) read_bytes(in, s.data(), n);
  return s;
}

// Raw little-endian payload of Real values.
template <typename Real>
void write_payload(std::ostream& out, const std::vector<Real>& v) {
  if constexpr (std::endian::native == std::endian::little) {
    write_bytes(out, v.data(), v.size() * sizeof(Real));
  } else {
    using U = std::conditional_t<sizeof(Real) == 4, std::uint32_t, std::uint64_t>;
    for (Real x : v) {
      U u;
      std::memcpy(&u, &x, sizeof(Real));
      write_le<U>(out, u);
    }
  }
}

template <typename Real>
void read_payload(std::istream& in, std::vector<Real>& v) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(Real)));
    if (!in) throw DataError("checkpoint: unexpected end of file");
  } else {
    using U = std::conditional_t<sizeof(Real) == 4, std::uint32_t, std::uint64_t>;
    for (Real& x : v) {
      const U u = read_le<U>(in);
      std::memcpy(&x, &u, sizeof(Real));
    }
  }
}

inline std::string fmt_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

inline std::map<std::string, std::string> config_to_map(const ModelConfig& c) {
  std::map<std::string, std::string> m;
  m["task"] = to_string(c.task);
  m["max_len"] = std::to_string(c.max_len);
  m["window"] = std::to_string(c.window);
  m["dim"] = std::to_string(c.dim);
  m["heads"] = std::to_string(c.heads);
  m["depth"] = std::to_string(c.depth);
  m["vocab_size"] = std::to_string(c.vocab_size);
  m["n_labels"] = std::to_string(c.n_labels);
  m["mask_kind"] = to_string(c.mask_kind);
  m["prefix_len"] = std::to_string(c.prefix_len);
  m["avg_pool"] = c.avg_pool ? "1" : "0";
  m["no_residual"] = c.no_residual ? "1" : "0";
  m["no_memory_review"] = c.no_memory_review ? "1" : "0";
  m["no_rotary"] = c.no_rotary ? "1" : "0";
  m["multilabel"] = c.multilabel ? "1" : "0";
  m["strict_gpc_row"] = c.strict_gpc_row ? "1" : "0";
  m["rotate_gpc_slot"] = c.rotate_gpc_slot ? "1" : "0";
  m["per_layer_gpc_chain"] = c.per_layer_gpc_chain ? "1" : "0";
  m["learnable_g0"] = c.learnable_g0 ? "1" : "0";
  m["tie_lm_head"] = c.tie_lm_head ? "1" : "0";
  m["rope_base"] = fmt_double(c.rope_base);
  m["norm_eps"] = fmt_double(c.norm_eps);
  m["sn_eps"] = fmt_double(c.sn_eps);
  m["init_stddev"] = fmt_double(c.init_stddev);
  return m;
}

inline ModelConfig config_from_map(const std::map<std::string, std::string>& m) {
  auto get = [&m](const std::string& k) -> const std::string& {
    auto it = m.find(k);
    if (it == m.end()) throw ConfigError("checkpoint: missing config key " + k);
    return it->second;
  };
  ModelConfig c;
  c.task = task_from_string(get("task"));
  c.max_len = std::stoi(get("max_len"));
  c.window = std::stoi(get("window"));
  c.dim = std::stoi(get("dim"));
  c.heads = std::stoi(get("heads"));
  c.depth = std::stoi(get("depth"));
  c.vocab_size = std::stoi(get("vocab_size"));
  c.n_labels = std::stoi(get("n_labels"));
  c.mask_kind = mask_kind_from_string(get("mask_kind"));
  c.prefix_len = std::stoi(get("prefix_len"));
  c.avg_pool = get("avg_pool") == "1";
  c.no_residual = get("no_residual") == "1";
  c.no_memory_review = get("no_memory_review") == "1";
  c.no_rotary = get("no_rotary") == "1";
  c.multilabel = get("multilabel") == "1";
  c.strict_gpc_row = get("strict_gpc_row") == "1";
  c.rotate_gpc_slot = get("rotate_gpc_slot") == "1";
  c.per_layer_gpc_chain = get("per_layer_gpc_chain") == "1";
  c.learnable_g0 = get("learnable_g0") == "1";
  c.tie_lm_head = get("tie_lm_head") == "1";
  c.rope_base = std::stod(get("rope_base"));
  c.norm_eps = std::stod(get("norm_eps"));
  c.sn_eps = std::stod(get("sn_eps"));
  c.init_stddev = std::stod(get("init_stddev"));
  return c;
}

}  // namespace ckpt

// Self-describing binary checkpoint: version byte, magic, flat config map,
// label names, vocab, named parameter tensors, optional optimizer state.
template <typename Real>
void save_checkpoint(const std::string& path, const RanModel<Real>& model, const Vocab& vocab,
                     const std::vector<std::string>& label_names,
                     const std::map<std::string, std::string>& extra = {}, Adam<Real>* opt = nullptr) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  ckpt::write_bytes(out, &ckpt::version, 1);
  ckpt::write_bytes(out, ckpt::magic, 7);

  std::map<std::string, std::string> cfg_map = ckpt::config_to_map(model.cfg);
  for (const auto& [k, v] : extra) {
    if (!cfg_map.emplace("x." + k, v).second) throw ConfigError("checkpoint: duplicate extra key " + k);
  }
  ckpt::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg_map.size()));
  for (const auto& [k, v] : cfg_map) {
    ckpt::write_str(out, k);
    ckpt::write_str(out, v);
  }

  ckpt::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(label_names.size()));
  for (const auto& l : label_names) ckpt::write_str(out, l);

  ckpt::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(vocab.size()));
  for (const auto& t : vocab.tokens()) ckpt::write_str(out, t);

  std::vector<NamedParam<Real>> params = model.parameters();
  ckpt::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    ckpt::write_str(out, p.name);
    const std::uint8_t dtype = sizeof(Real);
    ckpt::write_bytes(out, &dtype, 1);
    const std::uint8_t ndim = static_cast<std::uint8_t>(p.tensor.ndim());
    ckpt::write_bytes(out, &ndim, 1);
    for (int d : p.tensor.shape) ckpt::write_le<std::int32_t>(out, d);
    ckpt::write_payload(out, *p.tensor.data);
  }

  const std::uint8_t has_opt = opt != nullptr && !opt->first_moments().empty() ? 1 : 0;
  ckpt::write_bytes(out, &has_opt, 1);
  if (has_opt) {
    if (opt->first_moments().size() != params.size())
      throw StateError("checkpoint: optimizer state does not match the parameter registry");
    ckpt::write_le<std::int64_t>(out, opt->step_count());
    for (std::size_t i = 0; i < params.size(); ++i) {
      ckpt::write_payload(out, *opt->first_moments()[i].data);
      ckpt::write_payload(out, *opt->second_moments()[i].data);
    }
  }
  if (!out) throw DataError("checkpoint: write failed for " + path);
}

template <typename Real>
struct LoadedCheckpoint {
  RanModel<Real> model;
  Vocab vocab;
  std::vector<std::string> label_names;
  std::map<std::string, std::string> extra;
  bool has_optimizer = false;
  std::int64_t opt_step = 0;
  std::vector<Tensor<Real>> opt_m, opt_v;

  void restore_optimizer(Adam<Real>& opt) const {
    if (!has_optimizer) throw StateError("checkpoint carries no optimizer state");
    opt.restore(opt_step, opt_m, opt_v);
  }
};

// Reads the header far enough to learn the stored element width (4 or 8).
inline int checkpoint_dtype(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::uint8_t ver;
  ckpt::read_bytes(in, &ver, 1);
  char m[7];
  ckpt::read_bytes(in, m, 7);
  if (std::memcmp(m, ckpt::magic, 7) != 0) throw ConfigError(path + ": not a checkpoint file");
  if (ver != ckpt::version) throw ConfigError(path + ": unsupported checkpoint version " + std::to_string(ver));
  const std::uint32_t n_cfg = ckpt::read_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_cfg; ++i) {
    ckpt::read_str(in);
    ckpt::read_str(in);
  }
  const std::uint32_t n_labels = ckpt::read_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_labels; ++i) ckpt::read_str(in);
  const std::uint32_t n_vocab = ckpt::read_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_vocab; ++i) ckpt::read_str(in);
  const std::uint32_t n_params = ckpt::read_le<std::uint32_t>(in);
  if (n_params == 0) throw DataError(path + ": checkpoint holds no parameters");
  ckpt::read_str(in);
  std::uint8_t dtype;
  ckpt::read_bytes(in, &dtype, 1);
  return dtype;
}

template <typename Real>
LoadedCheckpoint<Real> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::uint8_t ver;
  ckpt::read_bytes(in, &ver, 1);
  char m[7];
  ckpt::read_bytes(in, m, 7);
  if (std::memcmp(m, ckpt::magic, 7) != 0) throw ConfigError(path + ": not a checkpoint file");
  if (ver != ckpt::version) throw ConfigError(path + ": unsupported checkpoint version " + std::to_string(ver));

  std::map<std::string, std::string> cfg_map;
  const std::uint32_t n_cfg = ckpt::read_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_cfg; ++i) {
    std::string k = ckpt::read_str(in);
    std::string v = ckpt::read_str(in);
    cfg_map.emplace(std::move(k), std::move(v));
  }

  LoadedCheckpoint<Real> loaded;
  for (const auto& [k, v] : cfg_map)
    if (k.rfind("x.", 0) == 0) loaded.extra.emplace(k.substr(2), v);
  const ModelConfig cfg = ckpt::config_from_map(cfg_map);

  const std::uint32_t n_labels = ckpt::read_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_labels; ++i) loaded.label_names.push_back(ckpt::read_str(in));

  const std::uint32_t n_vocab = ckpt::read_le<std::uint32_t>(in);
  if (n_vocab < 5) throw DataError(path + ": vocab misses the reserved tokens");
  for (std::uint32_t i = 0; i < n_vocab; ++i) {
    const std::string tok = ckpt::read_str(in);
    if (i < 5) {
      if (tok != loaded.vocab.token(static_cast<int>(i)))
        throw DataError(path + ": reserved vocab slot " + std::to_string(i) + " holds " + tok);
    } else {
      loaded.vocab.add(tok);
    }
  }

  loaded.model = RanModel<Real>::init(cfg, 0);
  std::vector<NamedParam<Real>> params = loaded.model.parameters();
  const std::uint32_t n_params = ckpt::read_le<std::uint32_t>(in);
  if (n_params != params.size())
    throw ConfigError(path + ": parameter count " + std::to_string(n_params) + " does not match the model (" +
                      std::to_string(params.size()) + ")");
  for (auto& p : params) {
    const std::string name = ckpt::read_str(in);
    if (name != p.name) throw ConfigError(path + ": expected tensor " + p.name + ", found " + name);
    std::uint8_t dtype, ndim;
    ckpt::read_bytes(in, &dtype, 1);
    ckpt::read_bytes(in, &ndim, 1);
    if (dtype != sizeof(Real))
      throw ConfigError(path + ": tensor " + name + " stored with element width " + std::to_string(dtype));
    if (ndim != p.tensor.ndim()) throw ConfigError(path + ": tensor " + name + " rank mismatch");
    for (int k = 0; k < ndim; ++k) {
      const std::int32_t d = ckpt::read_le<std::int32_t>(in);
      if (d != p.tensor.shape[static_cast<std::size_t>(k)])
        throw ConfigError(path + ": tensor " + name + " shape mismatch");
    }
    ckpt::read_payload(in, *p.tensor.data);
  }

  std::uint8_t has_opt;
  ckpt::read_bytes(in, &has_opt, 1);
  if (has_opt) {
    loaded.has_optimizer = true;
    loaded.opt_step = ckpt::read_le<std::int64_t>(in);
    for (const auto& p : params) {
      Tensor<Real> mm = Tensor<Real>::zeros(p.tensor.shape);
      Tensor<Real> vv = Tensor<Real>::zeros(p.tensor.shape);
      ckpt::read_payload(in, *mm.data);
      ckpt::read_payload(in, *vv.data);
      loaded.opt_m.push_back(std::move(mm));
      loaded.opt_v.push_back(std::move(vv));
    }
  }
  return loaded;
}

}  // namespace ran
