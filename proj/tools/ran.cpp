#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ran/ran.hpp"

namespace {

constexpr int exit_config_error = 2;
constexpr int exit_data_error = 3;

bool deterministic_mode() {
  const char* v = std::getenv("RAN_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

struct LoadedData {
  ran::Dataset train;
  std::vector<ran::TokenizedDocument> eval_docs;
};

// Loads train and eval sets for a run. The literal path "synth" produces the
// built-in long-range marker task, split 80/20.
LoadedData load_for_training(ran::RunConfig& rc) {
  LoadedData out;
  const ran::TokenMode mode = rc.token_mode();
  if (rc.train_data.empty()) throw ran::ConfigError("train_data is required");
  if (rc.train_data == "synth") {
    ran::Dataset all = ran::synth_longrange(rc.synth_n, rc.model.max_len, rc.model.window, rc.train.seed,
                                            rc.decoy_rate);
    const std::size_t split = all.docs.size() - all.docs.size() / 5;
    out.train.vocab = all.vocab;
    out.train.label_names = all.label_names;
    out.train.docs.assign(all.docs.begin(), all.docs.begin() + static_cast<std::ptrdiff_t>(split));
    out.eval_docs.assign(all.docs.begin() + static_cast<std::ptrdiff_t>(split), all.docs.end());
    return out;
  }
  switch (rc.model.task) {
    case ran::Task::classify: {
      out.train = ran::load_tsv_classification(rc.train_data, rc.model.max_len, mode, {}, nullptr,
                                               rc.model.multilabel, rc.max_vocab);
      if (!rc.eval_data.empty()) {
        ran::Dataset ev = ran::load_tsv_classification(rc.eval_data, rc.model.max_len, mode, out.train.label_names,
                                                       &out.train.vocab, rc.model.multilabel);
        out.eval_docs = std::move(ev.docs);
      }
      break;
    }
    case ran::Task::tag: {
      out.train = ran::load_conll(rc.train_data, rc.model.max_len, nullptr, {}, rc.max_vocab);
      if (!rc.eval_data.empty()) {
        ran::Dataset ev = ran::load_conll(rc.eval_data, rc.model.max_len, &out.train.vocab, out.train.label_names);
        out.eval_docs = std::move(ev.docs);
      }
      break;
    }
    case ran::Task::lm: {
      out.train = ran::load_text_lm(rc.train_data, rc.model.max_len, mode, nullptr, rc.max_vocab);
      if (!rc.eval_data.empty()) {
        ran::Dataset ev = ran::load_text_lm(rc.eval_data, rc.model.max_len, mode, &out.train.vocab);
        out.eval_docs = std::move(ev.docs);
      }
      break;
    }
  }
  return out;
}

template <typename Real>
int run_train(ran::RunConfig rc) {
  LoadedData data = load_for_training(rc);
  if (rc.model.vocab_size == 0) rc.model.vocab_size = data.train.vocab.size();
  if (rc.model.n_labels == 0) rc.model.n_labels = static_cast<int>(data.train.label_names.size());
  rc.model.validate();

  ran::RanModel<Real> model = ran::RanModel<Real>::init(rc.model, rc.train.seed);
  ran::Adam<Real> opt(Real(rc.train.lr), Real(rc.train.beta1), Real(rc.train.beta2), Real(rc.train.adam_eps));
  ran::TrainReport report = ran::train(model, opt, data.train.docs, data.eval_docs, data.train.label_names,
                                       rc.train, std::cout, rc.eval_cap);
  std::cerr << "trained " << report.steps << " steps, final loss " << report.final_loss << "\n";
  if (!data.eval_docs.empty())
    std::cerr << report.last_eval.metric_name << " " << report.last_eval.metric << "\n";
  if (!rc.out.empty()) {
    std::map<std::string, std::string> extra{{"tokenizer", to_string(rc.token_mode())},
                                             {"precision", rc.precision}};
    ran::save_checkpoint(rc.out, model, data.train.vocab, data.train.label_names, extra, &opt);
    std::cerr << "checkpoint written to " << rc.out << "\n";
  }
  return 0;
}

std::vector<ran::TokenizedDocument> load_for_eval(const ran::ModelConfig& cfg, const ran::Vocab& vocab,
                                                  const std::vector<std::string>& label_names, ran::TokenMode mode,
                                                  const std::string& path) {
  switch (cfg.task) {
    case ran::Task::classify:
      return ran::load_tsv_classification(path, cfg.max_len, mode, label_names, &vocab, cfg.multilabel).docs;
    case ran::Task::tag:
      return ran::load_conll(path, cfg.max_len, &vocab, label_names).docs;
    case ran::Task::lm:
    default:
      return ran::load_text_lm(path, cfg.max_len, mode, &vocab).docs;
  }
}

template <typename Real>
int run_eval(const std::string& ckpt_path, const std::string& data_path, int max_docs) {
  ran::LoadedCheckpoint<Real> loaded = ran::load_checkpoint<Real>(ckpt_path);
  const ran::TokenMode mode = ran::token_mode_from_string(
      loaded.extra.count("tokenizer") ? loaded.extra.at("tokenizer") : "word");
  std::vector<ran::TokenizedDocument> docs =
      load_for_eval(loaded.model.cfg, loaded.vocab, loaded.label_names, mode, data_path);
  ran::EvalResult res = ran::evaluate(loaded.model, docs, loaded.label_names, max_docs);
  std::cout << "loss\t" << std::setprecision(17) << res.loss << "\n";
  std::cout << res.metric_name << "\t" << std::setprecision(17) << res.metric << "\n";
  return 0;
}

template <typename Real>
int run_predict(const std::string& ckpt_path, const std::string& data_path, int gen_length, double temperature,
                std::uint64_t seed) {
  ran::LoadedCheckpoint<Real> loaded = ran::load_checkpoint<Real>(ckpt_path);
  const ran::ModelConfig& cfg = loaded.model.cfg;
  const ran::TokenMode mode = ran::token_mode_from_string(
      loaded.extra.count("tokenizer") ? loaded.extra.at("tokenizer") : "word");

  std::ifstream in(data_path, std::ios::binary);
  if (!in) throw ran::DataError("cannot open " + data_path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos)
    throw ran::ConfigError("predict: input is empty");

  if (cfg.task == ran::Task::lm) {
    std::vector<std::string> toks = ran::tokenize(text, mode);
    std::vector<int> ids;
    for (const auto& t : toks) ids.push_back(loaded.vocab.id(t));
    if (static_cast<int>(ids.size()) >= cfg.max_len) ids.resize(static_cast<std::size_t>(cfg.max_len) - 1);
    ran::Rng rng(seed);
    std::string generated;
    for (int step = 0; step < gen_length && static_cast<int>(ids.size()) < cfg.max_len; ++step) {
      std::vector<int> padded(static_cast<std::size_t>(cfg.max_len), ran::Vocab::pad_id);
      std::copy(ids.begin(), ids.end(), padded.begin());
      ran::ModelOutput<Real> out = loaded.model.forward(padded, static_cast<int>(ids.size()), nullptr);
      const int last = static_cast<int>(ids.size()) - 1;
      std::vector<double> probs(static_cast<std::size_t>(cfg.vocab_size));
      double mx = -1e300;
      for (int vtok = 0; vtok < cfg.vocab_size; ++vtok)
        mx = std::max(mx, static_cast<double>(out.logits.at(last, vtok)));
      double sum = 0;
      for (int vtok = 0; vtok < cfg.vocab_size; ++vtok) {
        probs[static_cast<std::size_t>(vtok)] =
            std::exp((static_cast<double>(out.logits.at(last, vtok)) - mx) / std::max(temperature, 1e-6));
        sum += probs[static_cast<std::size_t>(vtok)];
      }
      double r = rng.uniform() * sum;
      int pick = cfg.vocab_size - 1;
      for (int vtok = 0; vtok < cfg.vocab_size; ++vtok) {
        r -= probs[static_cast<std::size_t>(vtok)];
        if (r <= 0) {
          pick = vtok;
          break;
        }
      }
      ids.push_back(pick);
      const std::string& tok = loaded.vocab.token(pick);
      if (mode == ran::TokenMode::word && !generated.empty()) generated += " ";
      generated += tok;
    }
    std::cout << text << generated << "\n";
    return 0;
  }

  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    ran::TokenizedDocument doc = ran::encode(line, loaded.vocab, cfg.max_len, mode);
    if (doc.true_length == 0) throw ran::ConfigError("predict: a line has no tokens");
    ran::ModelOutput<Real> out = loaded.model.forward(doc.ids, doc.true_length, nullptr);
    if (cfg.task == ran::Task::classify) {
      if (cfg.multilabel) {
        std::string joined;
        for (int j = 0; j < cfg.n_labels; ++j) {
          if (out.logits[static_cast<std::size_t>(j)] <= Real(0)) continue;
          if (!joined.empty()) joined += ",";
          joined += loaded.label_names[static_cast<std::size_t>(j)];
        }
        std::cout << joined << "\n";
      } else {
        int arg = 0;
        for (int j = 1; j < cfg.n_labels; ++j)
          if (out.logits[static_cast<std::size_t>(j)] > out.logits[static_cast<std::size_t>(arg)]) arg = j;
        std::cout << loaded.label_names[static_cast<std::size_t>(arg)] << "\n";
      }
    } else {
      const std::vector<std::string> toks = ran::tokenize(line, mode);
      std::vector<std::string> tags;
      for (int t = 0; t < doc.true_length; ++t) {
        int arg = 0;
        for (int j = 1; j < cfg.n_labels; ++j)
          if (out.logits.at(t, j) > out.logits.at(t, arg)) arg = j;
        tags.push_back(loaded.label_names[static_cast<std::size_t>(arg)]);
      }
      tags = ran::repair_bio(tags);
      for (int t = 0; t < doc.true_length; ++t)
        std::cout << toks[static_cast<std::size_t>(t)] << "\t" << tags[static_cast<std::size_t>(t)] << "\n";
      std::cout << "\n";
    }
  }
  return 0;
}

int run_grad_check(double tolerance) {
  ran::GradCheckReport report = ran::grad_check_matrix(tolerance);
  for (const auto& c : report.cases)
    std::cout << c.name << "\tmax_rel_err=" << std::setprecision(6) << c.max_rel_err << "\t"
              << (c.passed ? "PASS" : "FAIL (" + c.worst_param + ")") << "\n";
  std::cout << "overall max_rel_err=" << report.max_rel_err << " " << (report.passed ? "PASS" : "FAIL") << "\n";
  return report.passed ? 0 : 1;
}

// Rough per-document activation footprint, used to report how many documents
// fit a 4 GiB budget at each window size.
template <typename Real>
std::int64_t estimate_max_batch(const ran::ModelConfig& cfg) {
  const std::int64_t s = cfg.window + 1;
  const std::int64_t m = cfg.windows();
  const std::int64_t per_window = cfg.heads * s * s + 14 * s * cfg.dim;
  const std::int64_t review = 2LL * cfg.max_len * cfg.dim + cfg.max_len * m;
  const std::int64_t values = cfg.depth * m * per_window + review + 4LL * cfg.max_len * cfg.dim;
  const std::int64_t bytes_per_doc = 2 * values * static_cast<std::int64_t>(sizeof(Real));
  const std::int64_t budget = 4LL << 30;
  return std::max<std::int64_t>(1, budget / std::max<std::int64_t>(1, bytes_per_doc));
}

template <typename Real>
int run_bench(ran::RunConfig rc, const std::vector<int>& windows, const std::string& out_path) {
  std::ostringstream csv;
  csv << "window,seconds_per_epoch,accuracy,max_batch,threads\n";
  for (int w : windows) {
    if (w > rc.model.max_len) throw ran::ConfigError("bench: window " + std::to_string(w) + " exceeds max_len");
    ran::RunConfig cur = rc;
    cur.model.window = w;
    cur.model.task = ran::Task::classify;
    cur.model.mask_kind = ran::MaskKind::full;
    cur.train_data = "synth";
    LoadedData data = load_for_training(cur);
    cur.model.vocab_size = data.train.vocab.size();
    cur.model.n_labels = static_cast<int>(data.train.label_names.size());
    cur.model.validate();

    ran::RanModel<Real> model = ran::RanModel<Real>::init(cur.model, cur.train.seed);
    ran::Adam<Real> opt(Real(cur.train.lr), Real(cur.train.beta1), Real(cur.train.beta2), Real(cur.train.adam_eps));
    ran::TrainConfig tc = cur.train;
    const int epochs = tc.epochs;
    tc.epochs = 1;
    std::ostringstream sink;
    double seconds_per_epoch = 0.0;
    for (int e = 0; e < epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      ran::train(model, opt, data.train.docs, {}, data.train.label_names, tc, sink);
      const auto t1 = std::chrono::steady_clock::now();
      seconds_per_epoch += std::chrono::duration<double>(t1 - t0).count();
    }
    seconds_per_epoch /= epochs;
    ran::EvalResult res = ran::evaluate(model, data.eval_docs, data.train.label_names, cur.eval_cap);
    csv << w << "," << std::setprecision(6) << seconds_per_epoch << "," << std::setprecision(6) << res.metric
        << "," << estimate_max_batch<Real>(cur.model) << ",1\n";
    std::cerr << "bench window " << w << ": " << seconds_per_epoch << " s/epoch, "
              << res.metric_name << " " << res.metric << "\n";
  }
  if (out_path.empty() || out_path == "-") {
    std::cout << csv.str();
  } else {
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw ran::DataError("cannot write " + out_path);
    out << csv.str();
  }
  return 0;
}

std::vector<int> parse_window_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ran::ConfigError("bad window list entry: " + item);
    }
    if (out.back() < 1) throw ran::ConfigError("window sizes must be >= 1");
  }
  if (out.empty()) throw ran::ConfigError("empty window list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent attention network trainer"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, data_path, eval_path, out_path, windows_arg = "8,32,128,512";
  std::int64_t seed_arg = -1;
  int max_docs = 0, gen_length = 64;
  double tolerance = 1e-4, temperature = 1.0;

  CLI::App* c_train = app.add_subcommand("train", "Train a model from a config file");
  c_train->add_option("--config", config_path, "key=value config file")->required();
  c_train->add_option("--data", data_path, "override train_data");
  c_train->add_option("--eval", eval_path, "override eval_data");
  c_train->add_option("--out", out_path, "override checkpoint output path");
  c_train->add_option("--seed", seed_arg, "override seed");

  CLI::App* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  c_eval->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  c_eval->add_option("--data", data_path, "dataset path")->required();
  c_eval->add_option("--max-docs", max_docs, "evaluate at most this many documents");

  CLI::App* c_predict = app.add_subcommand("predict", "Predict labels/tags or sample a continuation");
  c_predict->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  c_predict->add_option("--data", data_path, "input text file")->required();
  c_predict->add_option("--length", gen_length, "continuation length (lm)");
  c_predict->add_option("--temperature", temperature, "sampling temperature (lm)");
  c_predict->add_option("--seed", seed_arg, "sampling seed");

  CLI::App* c_grad = app.add_subcommand("grad-check", "Finite-difference check of the backward pass");
  c_grad->add_option("--tolerance", tolerance, "max relative error allowed");

  CLI::App* c_bench = app.add_subcommand("bench", "Time training across window sizes");
  c_bench->add_option("--config", config_path, "key=value config file")->required();
  c_bench->add_option("--windows", windows_arg, "comma-separated window sizes");
  c_bench->add_option("--out", out_path, "CSV output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return exit_config_error;
  }

  (void)deterministic_mode();  // kernels are always deterministic and single-threaded

  try {
    if (*c_train) {
      ran::RunConfig rc = ran::parse_run_config(config_path);
      if (!data_path.empty()) rc.train_data = data_path;
      if (!eval_path.empty()) rc.eval_data = eval_path;
      if (!out_path.empty()) rc.out = out_path;
      if (seed_arg >= 0) rc.train.seed = static_cast<std::uint64_t>(seed_arg);
      return rc.precision == "f64" ? run_train<double>(rc) : run_train<float>(rc);
    }
    if (*c_eval) {
      return ran::checkpoint_dtype(ckpt_path) == 8 ? run_eval<double>(ckpt_path, data_path, max_docs)
                                                   : run_eval<float>(ckpt_path, data_path, max_docs);
    }
    if (*c_predict) {
      const std::uint64_t seed = seed_arg >= 0 ? static_cast<std::uint64_t>(seed_arg) : 42;
      return ran::checkpoint_dtype(ckpt_path) == 8
                 ? run_predict<double>(ckpt_path, data_path, gen_length, temperature, seed)
                 : run_predict<float>(ckpt_path, data_path, gen_length, temperature, seed);
    }
    if (*c_grad) return run_grad_check(tolerance);
    if (*c_bench) {
      ran::RunConfig rc = ran::parse_run_config(config_path);
      if (seed_arg >= 0) rc.train.seed = static_cast<std::uint64_t>(seed_arg);
      const std::vector<int> windows = parse_window_list(windows_arg);
      return rc.precision == "f64" ? run_bench<double>(rc, windows, out_path)
                                   : run_bench<float>(rc, windows, out_path);
    }
  } catch (const ran::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_config_error;
  } catch (const ran::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return exit_data_error;
  } catch (const ran::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
