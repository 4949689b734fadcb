#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "ran/checkpoint.hpp"

namespace {

template <typename Real>
ran::RanModel<Real> make_model(ran::Task task, std::uint64_t seed) {
  ran::ModelConfig cfg;
  cfg.max_len = 8;
  cfg.window = 4;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.depth = 2;
  cfg.vocab_size = 48;
  cfg.n_labels = 2;
  cfg.task = task;
  cfg.mask_kind = ran::ModelConfig::default_mask(task);
  return ran::RanModel<Real>::init(cfg, seed);
}

ran::Vocab demo_vocab() {
  ran::Vocab v;
  while (v.size() < 48) v.add("tok" + std::to_string(v.size()));
  return v;
}

template <typename Real>
void expect_same_parameters(const ran::RanModel<Real>& a, const ran::RanModel<Real>& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_TRUE(helpers::bit_equal(pa[i].tensor, pb[i].tensor)) << pa[i].name;
  }
}

// Overwrites the first occurrence of `needle` in the file with `patch`.
void patch_file(const std::string& path, const std::string& needle, const std::string& patch) {
  std::string bytes = helpers::read_file(path);
  const std::size_t at = bytes.find(needle);
  ASSERT_NE(at, std::string::npos);
  bytes.replace(at, patch.size(), patch);
  helpers::write_file(path, bytes);
}

TEST(Checkpoint, RoundTripsEveryTensorBitExactly) {
  const std::string path = helpers::temp_dir() + "/clf.ckpt";
  const auto model = make_model<double>(ran::Task::classify, 40);
  const ran::Vocab vocab = demo_vocab();
  ran::save_checkpoint(path, model, vocab, {"even", "odd"}, {{"tokenizer", "word"}});

  const auto loaded = ran::load_checkpoint<double>(path);
  expect_same_parameters(model, loaded.model);
  EXPECT_EQ(loaded.label_names, (std::vector<std::string>{"even", "odd"}));
  EXPECT_EQ(loaded.vocab.tokens(), vocab.tokens());
  EXPECT_EQ(loaded.extra.at("tokenizer"), "word");
  EXPECT_FALSE(loaded.has_optimizer);
  EXPECT_EQ(loaded.model.cfg.dim, 8);
  EXPECT_EQ(loaded.model.cfg.task, ran::Task::classify);

  // The loaded model must compute bit-identical outputs.
  std::vector<int> ids = {5, 9, 12, 30, 7, 6, 0, 0};
  const auto a = model.forward(ids, 6, nullptr);
  const auto b = loaded.model.forward(ids, 6, nullptr);
  EXPECT_TRUE(helpers::bit_equal(a.logits, b.logits));
}

TEST(Checkpoint, RoundTripsTiedLmHeadsInSinglePrecision) {
  const std::string path = helpers::temp_dir() + "/lm.ckpt";
  const auto model = make_model<float>(ran::Task::lm, 41);
  ran::save_checkpoint(path, model, demo_vocab(), {});
  const auto loaded = ran::load_checkpoint<float>(path);
  expect_same_parameters(model, loaded.model);
  EXPECT_TRUE(loaded.model.head.tied);

  std::vector<int> ids = {5, 9, 12, 30, 7, 6, 8, 11};
  const auto a = model.forward(ids, 8, nullptr);
  const auto b = loaded.model.forward(ids, 8, nullptr);
  EXPECT_TRUE(helpers::bit_equal(a.logits, b.logits));
}

TEST(Checkpoint, DtypePeekDistinguishesWidths) {
  const std::string dir = helpers::temp_dir();
  ran::save_checkpoint(dir + "/f32.ckpt", make_model<float>(ran::Task::classify, 42), demo_vocab(), {"a", "b"});
  ran::save_checkpoint(dir + "/f64.ckpt", make_model<double>(ran::Task::classify, 42), demo_vocab(), {"a", "b"});
  EXPECT_EQ(ran::checkpoint_dtype(dir + "/f32.ckpt"), 4);
  EXPECT_EQ(ran::checkpoint_dtype(dir + "/f64.ckpt"), 8);
  EXPECT_THROW(ran::load_checkpoint<double>(dir + "/f32.ckpt"), ran::ConfigError);
}

TEST(Checkpoint, OptimizerStateRoundTripsAndResumesIdentically) {
  const std::string path = helpers::temp_dir() + "/opt.ckpt";
  auto model = make_model<double>(ran::Task::classify, 43);
  const ran::Dataset data = ran::synth_longrange(8, 8, 4, 44);
  ran::TrainConfig tc;
  tc.batch_size = 4;
  tc.epochs = 1;
  ran::Adam<double> opt(tc.lr);
  std::ostringstream log;
  ran::train(model, opt, data.docs, {}, data.label_names, tc, log);
  ASSERT_EQ(opt.step_count(), 2);
  ran::save_checkpoint(path, model, data.vocab, data.label_names, {}, &opt);

  auto loaded = ran::load_checkpoint<double>(path);
  ASSERT_TRUE(loaded.has_optimizer);
  ran::Adam<double> resumed(tc.lr);
  loaded.restore_optimizer(resumed);
  EXPECT_EQ(resumed.step_count(), opt.step_count());
  for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
    EXPECT_TRUE(helpers::bit_equal(opt.first_moments()[i], resumed.first_moments()[i]));
    EXPECT_TRUE(helpers::bit_equal(opt.second_moments()[i], resumed.second_moments()[i]));
  }

  // Stepping both replicas with identical gradients must keep them identical.
  auto fill_grads = [](ran::RanModel<double>& m) {
    for (auto& p : m.parameters()) {
      p.tensor.zero_grad();
      for (std::size_t j = 0; j < p.tensor.size(); ++j)
        (*p.tensor.grad)[j] = 0.001 * static_cast<double>(j % 13) - 0.005;
    }
  };
  fill_grads(model);
  fill_grads(loaded.model);
  opt.step(model.parameters());
  resumed.step(loaded.model.parameters());
  expect_same_parameters(model, loaded.model);
}

TEST(Checkpoint, RestoringFromAPlainCheckpointThrows) {
  const std::string path = helpers::temp_dir() + "/plain.ckpt";
  ran::save_checkpoint(path, make_model<double>(ran::Task::classify, 48), demo_vocab(), {"a", "b"});
  const auto loaded = ran::load_checkpoint<double>(path);
  ran::Adam<double> opt(1e-3);
  EXPECT_THROW(loaded.restore_optimizer(opt), ran::StateError);
}

TEST(Checkpoint, TamperedVersionOrMagicIsRejected) {
  const std::string dir = helpers::temp_dir();
  const std::string path = dir + "/v.ckpt";
  ran::save_checkpoint(path, make_model<double>(ran::Task::classify, 45), demo_vocab(), {"a", "b"});

  std::string bytes = helpers::read_file(path);
  bytes[0] = 9;
  helpers::write_file(dir + "/badver.ckpt", bytes);
  EXPECT_THROW(ran::load_checkpoint<double>(dir + "/badver.ckpt"), ran::ConfigError);

  bytes = helpers::read_file(path);
  bytes[3] = 'X';
  helpers::write_file(dir + "/badmagic.ckpt", bytes);
  EXPECT_THROW(ran::load_checkpoint<double>(dir + "/badmagic.ckpt"), ran::ConfigError);
}

TEST(Checkpoint, TamperedShapeOrNameIsRejected) {
  const std::string dir = helpers::temp_dir();
  const std::string path = dir + "/t.ckpt";
  ran::save_checkpoint(path, make_model<double>(ran::Task::classify, 46), demo_vocab(), {"a", "b"});

  // Rewriting the stored width makes every tensor's shape disagree.
  const std::string orig = helpers::read_file(path);
  std::string dim_key;
  dim_key += '\x03';
  dim_key += '\x00';
  dim_key += '\x00';
  dim_key += '\x00';
  dim_key += "dim";
  dim_key += '\x01';
  dim_key += '\x00';
  dim_key += '\x00';
  dim_key += '\x00';
  helpers::write_file(dir + "/badshape.ckpt", orig);
  patch_file(dir + "/badshape.ckpt", dim_key + "8", dim_key + "4");
  EXPECT_THROW(ran::load_checkpoint<double>(dir + "/badshape.ckpt"), ran::ConfigError);

  helpers::write_file(dir + "/badname.ckpt", orig);
  patch_file(dir + "/badname.ckpt", "embedding", "embeddinG");
  EXPECT_THROW(ran::load_checkpoint<double>(dir + "/badname.ckpt"), ran::ConfigError);
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  const std::string dir = helpers::temp_dir();
  const std::string path = dir + "/full.ckpt";
  ran::save_checkpoint(path, make_model<double>(ran::Task::classify, 47), demo_vocab(), {"a", "b"});
  const std::string bytes = helpers::read_file(path);
  helpers::write_file(dir + "/cut.ckpt", bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(ran::load_checkpoint<double>(dir + "/cut.ckpt"), ran::DataError);
}

TEST(Checkpoint, MissingFileThrows) {
  EXPECT_THROW(ran::load_checkpoint<double>("/nonexistent/x.ckpt"), ran::DataError);
  EXPECT_THROW(ran::checkpoint_dtype("/nonexistent/x.ckpt"), ran::DataError);
}

}  // namespace
