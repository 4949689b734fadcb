#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "oracles.hpp"
#include "ran/attention.hpp"

namespace {

using ran::Tensor;
constexpr double kInf = std::numeric_limits<double>::infinity();

oracle::AttentionWeights export_weights(const ran::AttentionParams<double>& p) {
  oracle::AttentionWeights w;
  for (const auto& h : p.heads) {
    oracle::HeadWeights hw;
    hw.wq = oracle::to_mat(h.q.w);
    hw.bq = oracle::to_vec(h.q.b);
    hw.wk = oracle::to_mat(h.k.w);
    hw.bk = oracle::to_vec(h.k.b);
    hw.wv = oracle::to_mat(h.v.w);
    hw.bv = oracle::to_vec(h.v.b);
    w.heads.push_back(std::move(hw));
  }
  w.wp = oracle::to_mat(p.proj.w);
  w.bp = oracle::to_vec(p.proj.b);
  return w;
}

std::vector<int> token_positions(int window) {
  std::vector<int> pos(static_cast<std::size_t>(window) + 1, -1);
  for (int t = 0; t < window; ++t) pos[static_cast<std::size_t>(t) + 1] = t;
  return pos;
}

TEST(BuildMask, CausalWindowTwo) {
  const auto spec = ran::build_mask<double>(ran::MaskKind::causal, 2, {1, 1});
  // State row sees everything valid; token rows are causal; state column open.
  EXPECT_EQ(spec.m.at(0, 0), 0.0);
  EXPECT_EQ(spec.m.at(0, 1), 0.0);
  EXPECT_EQ(spec.m.at(0, 2), 0.0);
  EXPECT_EQ(spec.m.at(1, 0), 0.0);
  EXPECT_EQ(spec.m.at(1, 1), 0.0);
  EXPECT_EQ(spec.m.at(1, 2), -kInf);
  EXPECT_EQ(spec.m.at(2, 0), 0.0);
  EXPECT_EQ(spec.m.at(2, 1), 0.0);
  EXPECT_EQ(spec.m.at(2, 2), 0.0);
}

TEST(BuildMask, FullWindowAllOpenExceptPads) {
  const auto spec = ran::build_mask<double>(ran::MaskKind::full, 2, {1, 0});
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(spec.m.at(r, 0), 0.0);
    EXPECT_EQ(spec.m.at(r, 1), 0.0);
    EXPECT_EQ(spec.m.at(r, 2), -kInf);  // pad column closed for every row
  }
}

TEST(BuildMask, PrefixCoveringWholeWindowEqualsFull) {
  const std::vector<std::uint8_t> valid = {1, 1, 1, 1};
  const auto full = ran::build_mask<double>(ran::MaskKind::full, 4, valid);
  const auto prefix = ran::build_mask<double>(ran::MaskKind::prefix_causal, 4, valid, 4);
  EXPECT_TRUE(helpers::bit_equal(full.m, prefix.m));
}

TEST(BuildMask, PrefixCausalMixesBothRegimes) {
  const auto spec = ran::build_mask<double>(ran::MaskKind::prefix_causal, 4, {1, 1, 1, 1}, 2);
  // Token row 0 (grid row 1) sees the whole prefix but not beyond itself.
  EXPECT_EQ(spec.m.at(1, 2), 0.0);   // token key 1 is inside the prefix
  EXPECT_EQ(spec.m.at(1, 3), -kInf); // token key 2 is future and past the prefix
  EXPECT_EQ(spec.m.at(3, 4), -kInf);
  EXPECT_EQ(spec.m.at(4, 4), 0.0);
  EXPECT_EQ(spec.m.at(3, 1), 0.0);
}

TEST(BuildMask, StrictStateRowSeesOnlyItself) {
  const auto spec = ran::build_mask<double>(ran::MaskKind::full, 3, {1, 1, 1}, 0, true);
  EXPECT_EQ(spec.m.at(0, 0), 0.0);
  for (int c = 1; c < 4; ++c) EXPECT_EQ(spec.m.at(0, c), -kInf);
}

TEST(BuildMask, WrongValidLengthThrows) {
  EXPECT_THROW(ran::build_mask<double>(ran::MaskKind::full, 3, {1, 1}), ran::ShapeError);
}

TEST(Pmhsa, DegenerateSingleVisibleKeyReturnsProjectedValue) {
  ran::Rng rng(31);
  const int window = 3, dim = 4;
  ran::AttentionParams<double> params = ran::AttentionParams<double>::init(dim, 1, rng, false);
  Tensor<double> x = Tensor<double>::randn({window + 1, dim}, rng, 1.0, false);

  // Every row is forced onto key 2 (grid column 2): the softmax is a point mass.
  ran::MaskSpec<double> spec;
  spec.m = Tensor<double>::full({window + 1, window + 1}, -kInf);
  for (int r = 0; r < window + 1; ++r) spec.m.at(r, 2) = 0.0;

  Tensor<double> out = ran::pmhsa(x, params, spec, nullptr, token_positions(window), nullptr);
  Tensor<double> v = params.heads[0].v.apply(x, nullptr);
  Tensor<double> vrow = Tensor<double>::from({1, dim}, {v.at(2, 0), v.at(2, 1), v.at(2, 2), v.at(2, 3)});
  Tensor<double> want = params.proj.apply(vrow, nullptr);
  for (int r = 0; r < window + 1; ++r)
    for (int j = 0; j < dim; ++j) EXPECT_NEAR(out.at(r, j), want.at(0, j), 1e-12);
}

TEST(Pmhsa, MatchesNaiveSingleHeadReference) {
  ran::Rng rng(32);
  const int window = 3, dim = 4;
  ran::AttentionParams<double> params = ran::AttentionParams<double>::init(dim, 1, rng, false);
  Tensor<double> x = Tensor<double>::randn({window + 1, dim}, rng, 1.0, false);
  const auto spec = ran::build_mask<double>(ran::MaskKind::full, window, {1, 1, 1});
  ran::RotaryTable<double> rope(dim, window + 2);
  const std::vector<int> pos = token_positions(window);

  Tensor<double> out = ran::pmhsa(x, params, spec, &rope, pos, nullptr);
  const oracle::Mat want =
      oracle::mhsa(oracle::to_mat(x), export_weights(params), oracle::to_mat(spec.m), pos, true, 10000.0);
  for (int r = 0; r < window + 1; ++r)
    for (int j = 0; j < dim; ++j) EXPECT_NEAR(out.at(r, j), want[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)], 1e-8);
}

TEST(Pmhsa, MatchesNaiveReferenceForEveryDividingHeadCount) {
  ran::Rng rng(33);
  const int window = 5, dim = 12;
  Tensor<double> x = Tensor<double>::randn({window + 1, dim}, rng, 1.0, false);
  const auto spec = ran::build_mask<double>(ran::MaskKind::full, window, {1, 1, 1, 1, 1});
  const std::vector<int> pos = token_positions(window);
  for (int heads : {1, 2, 3, 6}) {
    if (dim % heads != 0 || (dim / heads) % 2 != 0) continue;
    ran::AttentionParams<double> params = ran::AttentionParams<double>::init(dim, heads, rng, false);
    ran::RotaryTable<double> rope(dim / heads, window + 2);
    Tensor<double> out = ran::pmhsa(x, params, spec, &rope, pos, nullptr);
    const oracle::Mat want =
        oracle::mhsa(oracle::to_mat(x), export_weights(params), oracle::to_mat(spec.m), pos, true, 10000.0);
    for (int r = 0; r < window + 1; ++r)
      for (int j = 0; j < dim; ++j)
        EXPECT_NEAR(out.at(r, j), want[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)], 1e-8)
            << "heads=" << heads;
  }
}

TEST(Pmhsa, PaperScaleShapeRoundTrip) {
  ran::Rng rng(34);
  const int window = 256, dim = 768, heads = 12;
  ran::AttentionParams<float> params = ran::AttentionParams<float>::init(dim, heads, rng, false);
  EXPECT_EQ(params.d_k, 64);
  Tensor<float> x = Tensor<float>::randn({window + 1, dim}, rng, 0.1, false);
  std::vector<std::uint8_t> valid(window, 1);
  const auto spec = ran::build_mask<float>(ran::MaskKind::full, window, valid);
  ran::RotaryTable<float> rope(64, window + 2);
  std::vector<int> pos(static_cast<std::size_t>(window) + 1, -1);
  for (int t = 0; t < window; ++t) pos[static_cast<std::size_t>(t) + 1] = t;
  Tensor<float> out = ran::pmhsa(x, params, spec, &rope, pos, nullptr);
  EXPECT_EQ(out.rows(), window + 1);
  EXPECT_EQ(out.cols(), dim);
}

TEST(Pmhsa, WrongMaskShapeThrows) {
  ran::Rng rng(35);
  ran::AttentionParams<double> params = ran::AttentionParams<double>::init(4, 2, rng, false);
  Tensor<double> x = Tensor<double>::randn({4, 4}, rng, 1.0, false);
  ran::MaskSpec<double> spec;
  spec.m = Tensor<double>::zeros({3, 3});
  EXPECT_THROW(ran::pmhsa(x, params, spec, nullptr, {-1, 0, 1, 2}, nullptr), ran::ShapeError);
}

TEST(Pmhsa, CausalRowssAreBitExactUnderFuturePerturbation) {
  ran::Rng rng(36);
  const int window = 6, dim = 8;
  ran::AttentionParams<double> params = ran::AttentionParams<double>::init(dim, 2, rng, false);
  std::vector<std::uint8_t> valid(window, 1);
  const auto spec = ran::build_mask<double>(ran::MaskKind::causal, window, valid);
  ran::RotaryTable<double> rope(4, window + 2);
  const std::vector<int> pos = token_positions(window);

  Tensor<double> x = Tensor<double>::randn({window + 1, dim}, rng, 1.0, false);
  Tensor<double> base = ran::pmhsa(x, params, spec, &rope, pos, nullptr);
  for (int trial = 0; trial < 20; ++trial) {
    const int t = 1 + rng.uniform_int(window - 1);  // perturbed token index
    Tensor<double> mod = x.clone();
    for (int j = 0; j < dim; ++j) mod.at(t + 1, j) += rng.normal(0.0, 1.0);
    Tensor<double> out = ran::pmhsa(mod, params, spec, &rope, pos, nullptr);
    for (int r = 1; r <= t; ++r)
      for (int j = 0; j < dim; ++j) EXPECT_EQ(out.at(r, j), base.at(r, j));
  }
}

TEST(Pmhsa, PadColumnsGetZeroAttention) {
  ran::Rng rng(37);
  const int window = 4, dim = 4;
  ran::AttentionParams<double> params = ran::AttentionParams<double>::init(dim, 1, rng, false);
  const std::vector<std::uint8_t> valid = {1, 1, 0, 0};
  const auto spec = ran::build_mask<double>(ran::MaskKind::full, window, valid);
  Tensor<double> x = Tensor<double>::randn({window + 1, dim}, rng, 1.0, false);

  // Recompute the attention weights of head 0 and check the pad columns.
  Tensor<double> q = params.heads[0].q.apply(x, nullptr);
  Tensor<double> k = params.heads[0].k.apply(x, nullptr);
  Tensor<double> scores = ran::scale(ran::matmul_nt(q, k, nullptr), 1.0 / 2.0, nullptr);
  Tensor<double> weights = ran::softmax_rows(ran::add_mask(scores, spec.m, nullptr), nullptr);
  for (int r = 0; r < window + 1; ++r) {
    EXPECT_EQ(weights.at(r, 3), 0.0);
    EXPECT_EQ(weights.at(r, 4), 0.0);
  }
}

TEST(Pmhsa, GradientMatchesFiniteDifferences) {
  ran::Rng rng(38);
  const int window = 3, dim = 4;
  ran::AttentionParams<double> params = ran::AttentionParams<double>::init(dim, 2, rng);
  Tensor<double> x = Tensor<double>::randn({window + 1, dim}, rng, 1.0, false);
  const auto spec = ran::build_mask<double>(ran::MaskKind::causal, window, {1, 1, 0});
  ran::RotaryTable<double> rope(2, window + 2);
  const std::vector<int> pos = token_positions(window);
  std::vector<Tensor<double>*> inputs = {&x};
  for (auto& h : params.heads) {
    inputs.push_back(&h.q.w);
    inputs.push_back(&h.q.b);
    inputs.push_back(&h.k.w);
    inputs.push_back(&h.k.b);
    inputs.push_back(&h.v.w);
    inputs.push_back(&h.v.b);
  }
  inputs.push_back(&params.proj.w);
  inputs.push_back(&params.proj.b);
  const double rel = helpers::fd_max_rel(
      inputs, [&](ran::Tape<double>* t) { return ran::pmhsa(x, params, spec, &rope, pos, t); });
  EXPECT_LT(rel, 1e-4);
}

TEST(CrossAttention, SingleStateBroadcastsItsProjectedValue) {
  ran::Rng rng(39);
  const int dim = 4;
  ran::CrossAttentionParams<double> params = ran::CrossAttentionParams<double>::init(dim, rng, false);
  Tensor<double> queries = Tensor<double>::randn({5, dim}, rng, 1.0, false);
  Tensor<double> state = Tensor<double>::randn({1, dim}, rng, 1.0, false);
  Tensor<double> mask = Tensor<double>::zeros({5, 1});
  Tensor<double> out = ran::cross_attention(queries, state, params, mask, nullptr);
  Tensor<double> want = params.v.apply(state, nullptr);
  for (int r = 0; r < 5; ++r)
    for (int j = 0; j < dim; ++j) EXPECT_NEAR(out.at(r, j), want.at(0, j), 1e-12);
}

TEST(CrossAttention, MatchesNaiveReference) {
  ran::Rng rng(40);
  const int dim = 6;
  ran::CrossAttentionParams<double> params = ran::CrossAttentionParams<double>::init(dim, rng, false);
  Tensor<double> queries = Tensor<double>::randn({4, dim}, rng, 1.0, false);
  Tensor<double> kv = Tensor<double>::randn({3, dim}, rng, 1.0, false);
  Tensor<double> mask = Tensor<double>::zeros({4, 3});
  Tensor<double> out = ran::cross_attention(queries, kv, params, mask, nullptr);
  const oracle::Mat want = oracle::cross_attention(
      oracle::to_mat(queries), oracle::to_mat(kv), oracle::to_mat(params.q.w), oracle::to_vec(params.q.b),
      oracle::to_mat(params.k.w), oracle::to_vec(params.k.b), oracle::to_mat(params.v.w), oracle::to_vec(params.v.b),
      oracle::to_mat(mask));
  for (int r = 0; r < 4; ++r)
    for (int j = 0; j < dim; ++j)
      EXPECT_NEAR(out.at(r, j), want[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)], 1e-8);
}

TEST(CrossAttention, MaskedStateGetsNoWeight) {
  ran::Rng rng(41);
  const int dim = 4;
  ran::CrossAttentionParams<double> params = ran::CrossAttentionParams<double>::init(dim, rng, false);
  Tensor<double> queries = Tensor<double>::randn({2, dim}, rng, 1.0, false);
  Tensor<double> kv = Tensor<double>::randn({3, dim}, rng, 1.0, false);
  Tensor<double> mask = Tensor<double>::zeros({2, 3});
  mask.at(1, 2) = -kInf;

  Tensor<double> base = ran::cross_attention(queries, kv, params, mask, nullptr);
  Tensor<double> kv2 = kv.clone();
  for (int j = 0; j < dim; ++j) kv2.at(2, j) = 123.0 + j;  // row 1 must not notice
  Tensor<double> out = ran::cross_attention(queries, kv2, params, mask, nullptr);
  for (int j = 0; j < dim; ++j) EXPECT_EQ(out.at(1, j), base.at(1, j));
}

TEST(CrossAttention, FullyMaskedQueryRowThrows) {
  ran::Rng rng(42);
  ran::CrossAttentionParams<double> params = ran::CrossAttentionParams<double>::init(4, rng, false);
  Tensor<double> queries = Tensor<double>::randn({2, 4}, rng, 1.0, false);
  Tensor<double> kv = Tensor<double>::randn({2, 4}, rng, 1.0, false);
  Tensor<double> mask = Tensor<double>::zeros({2, 2});
  mask.at(0, 0) = -kInf;
  mask.at(0, 1) = -kInf;
  EXPECT_THROW(ran::cross_attention(queries, kv, params, mask, nullptr), ran::MaskError);
}

TEST(CrossAttention, GradientMatchesFiniteDifferences) {
  ran::Rng rng(43);
  const int dim = 4;
  ran::CrossAttentionParams<double> params = ran::CrossAttentionParams<double>::init(dim, rng);
  Tensor<double> queries = Tensor<double>::randn({3, dim}, rng, 1.0, false);
  Tensor<double> kv = Tensor<double>::randn({2, dim}, rng, 1.0, false);
  Tensor<double> mask = Tensor<double>::zeros({3, 2});
  mask.at(0, 1) = -kInf;
  const double rel = helpers::fd_max_rel(
      {&queries, &kv, &params.q.w, &params.q.b, &params.k.w, &params.k.b, &params.v.w, &params.v.b},
      [&](ran::Tape<double>* t) { return ran::cross_attention(queries, kv, params, mask, t); });
  EXPECT_LT(rel, 1e-4);
}

}  // namespace
