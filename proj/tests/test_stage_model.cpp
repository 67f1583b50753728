#include "contracts.hpp"

#include <sintra/nn/stage_model.hpp>

#include <gtest/gtest.h>

using namespace sintra;
using namespace sintra::nn;

namespace {

StageConfig small_config(int D = 8, int layers = 1) {
  StageConfig c;
  c.layers = layers;
  c.heads = 2;
  c.head_dim = D / 2;
  c.model_dim = D;
  c.ffn_dim = 2 * D;
  c.dropout = 0.0;
  c.proc_len = 4;
  c.mem_len = 4;
  return c;
}

}  // namespace

TEST(StageConfig, Validation) {
  EXPECT_NO_THROW(StageConfig{}.validate());
  StageConfig c;
  c.model_dim = 100;
  EXPECT_THROW(c.validate(), UsageError);
  c = StageConfig{};
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), UsageError);
  EXPECT_THROW(StageModel<float>(StageConfig{}, {}, 0), UsageError);
  EXPECT_THROW(StageModel<float>(StageConfig{}, {0}, 0), UsageError);
}

TEST(RelativePositions, SinusoidValues) {
  auto r = relative_positions<double>(4, 4);
  // Row 0 encodes distance 3.
  EXPECT_NEAR(r(0, 0), 0.1411200080598672, 1e-15);
  EXPECT_NEAR(r(0, 1), 0.02999550020249566, 1e-15);
  EXPECT_NEAR(r(0, 2), -0.9899924966004454, 1e-15);
  EXPECT_NEAR(r(0, 3), 0.9995500337489875, 1e-15);
  EXPECT_EQ(r(3, 0), 0.0);
  EXPECT_EQ(r(3, 2), 1.0);
}

TEST(TrackMulti2One, Shapes) {
  StageModel<float> full(StageConfig{}, {8, 9, 8, 11}, 1);
  std::mt19937_64 gen(1);
  auto fused = full.track_multi2one(test::random_tokens(gen, {8, 9, 8, 11}, 4));
  EXPECT_EQ(fused->value.rows(), 4u);
  EXPECT_EQ(fused->value.cols(), 256u);
  EXPECT_THROW(full.track_multi2one(TokenGrid(3, 4)), UsageError);
}

TEST(TrackMulti2One, SingleTrackIsScaledEmbedding) {
  StageModel<double> m(small_config(), {6}, 2);
  TokenGrid g(1, 3);
  g.data = {5, 0, 2};
  auto fused = m.track_multi2one(g)->value;
  const double w = m.fuse_weight()->value[0];
  const auto& table = m.embedding_table(0)->value;
  for (int t = 0; t < 3; ++t)
    for (std::size_t d = 0; d < 8; ++d) EXPECT_NEAR(fused(t, d), w * table(g.data[t], d), 1e-15);
}

TEST(TrackMulti2One, SelectorWeightsReturnTrackEmbedding) {
  StageModel<double> m(small_config(), {4, 5, 6, 7}, 3);
  m.fuse_weight()->value = Tensor<double>(1, 4, {1, 0, 0, 0});
  std::mt19937_64 gen(2);
  auto tokens = test::random_tokens(gen, {4, 5, 6, 7}, 4);
  auto fused = m.track_multi2one(tokens)->value;
  for (int t = 0; t < 4; ++t)
    for (std::size_t d = 0; d < 8; ++d) EXPECT_EQ(fused(t, d), m.embedding_table(0)->value(tokens.at(0, t), d));
}

TEST(XlEncoder, SinglePositionAttendsToItself) {
  StageModel<double> m(small_config(), {5}, 4);
  auto x = constant(test::random_tensor(*std::make_unique<std::mt19937_64>(5), 1, 8));
  auto memory = m.new_memory();
  auto h = m.xl_encoder_forward(x, memory)->value;
  // With one key the attention weight is 1: the block reduces to its value path.
  auto& ly = m.layer(0);
  auto attn = matmul(matmul(x, ly.wv), ly.wo);
  auto h1 = layer_norm(add(x, attn), ly.ln1_gain, ly.ln1_bias);
  auto ff = add_row(matmul(relu(add_row(matmul(h1, ly.w1), ly.b1)), ly.w2), ly.b2);
  auto expected = layer_norm(add(h1, ff), ly.ln2_gain, ly.ln2_bias)->value;
  for (std::size_t d = 0; d < 8; ++d) EXPECT_NEAR(h(0, d), expected(0, d), 1e-12);
}

TEST(XlEncoder, SecondSegmentAttendsOverMemory) {
  StageModel<double> m(small_config(8, 2), {5}, 6);
  std::mt19937_64 gen(7);
  auto memory = m.new_memory();
  EXPECT_EQ(memory.length(), 0u);
  m.forward(test::random_tokens(gen, {5}, 4), memory);
  EXPECT_EQ(memory.length(), 4u);
  EXPECT_EQ(memory.layers.size(), 2u);
  auto second = test::random_tokens(gen, {5}, 4);
  auto with_memory = m.forward(second, memory)[0]->value;
  EXPECT_EQ(memory.length(), 4u);
  auto fresh = m.new_memory();
  auto without = m.forward(second, fresh)[0]->value;
  EXPECT_FALSE(test::rows_equal(with_memory, without, 1, 1e-9));
  memory.reset();
  EXPECT_EQ(memory.length(), 0u);
}

TEST(XlEncoder, CausalPerturbation) {
  int violations = 0;
  for (std::uint64_t s = 0; s < 100; ++s) violations += test::causal_trial(1000 + s);
  EXPECT_EQ(violations, 0);
}

TEST(XlEncoder, WindowArithmetic) {
  // One layer: mem_len + proc_len positions back from the end.
  EXPECT_EQ(test::oldest_visible(20, 4, 4, 1), 16);
  // Two layers, mem 2: layer 2 reads back to 18, which sits in segment [16, 20).
  EXPECT_EQ(test::oldest_visible(20, 4, 2, 2), 14);
  EXPECT_EQ(test::oldest_visible(4, 4, 8, 3), 0);
}

TEST(XlEncoder, MemoryWindow) {
  int violations = 0;
  for (std::uint64_t s = 0; s < 100; ++s) violations += test::memory_trial(2000 + s);
  EXPECT_EQ(violations, 0);
}

TEST(XlEncoder, NonFiniteActivationIsReported) {
  StageModel<double> m(small_config(), {5}, 8);
  m.embedding_table(0)->value.fill(std::numeric_limits<double>::quiet_NaN());
  auto memory = m.new_memory();
  EXPECT_THROW(m.forward(TokenGrid(1, 4), memory), NumericError);
}

TEST(TrackOne2Multi, ShapesAndIdentity) {
  StageModel<float> full(StageConfig{}, {3, 3, 3, 3}, 1);
  auto hidden = constant(Tensor<float>(8, 256, 0.5f));
  auto per_track = full.track_one2multi(hidden);
  ASSERT_EQ(per_track.size(), 4u);
  for (const auto& t : per_track) EXPECT_EQ(t->value.shape(), (std::array<std::size_t, 2>{8, 256}));

  StageModel<double> m(small_config(), {3, 4}, 2);
  for (int k = 0; k < 2; ++k) {
    auto& w = m.projection(k)->value;
    w.zero();
    for (std::size_t d = 0; d < 8; ++d) w(d, d) = 1.0;
  }
  std::mt19937_64 gen(3);
  auto h = constant(test::random_tensor(gen, 4, 8));
  for (const auto& t : m.track_one2multi(h)) EXPECT_EQ(t->value, h->value);
  EXPECT_EQ(m.track_one2multi(h).size(), 2u);
}

TEST(TrackwiseDecode, WidthsAndZeroLogits) {
  StageModel<double> m(small_config(), {5, 7, 3, 9}, 9);
  std::vector<Var<double>> zero(4, constant(Tensor<double>(4, 8)));
  auto logits = m.trackwise_decode(zero);
  const std::vector<std::size_t> widths{5, 7, 3, 9};
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(logits[k]->value.cols(), widths[k]);
    for (double v : logits[k]->value.values()) EXPECT_EQ(v, 0.0);
  }
  EXPECT_THROW(m.trackwise_decode({zero[0]}), UsageError);
}

TEST(TrackwiseDecode, CrossTrackHeadGradientsAreZero) {
  StageModel<double> m(small_config(), {5, 7, 3}, 10);
  std::mt19937_64 gen(4);
  auto memory = m.new_memory();
  auto logits = m.forward(test::random_tokens(gen, {5, 7, 3}, 4), memory);
  m.zero_grad();
  backward(nll_loss<double>({logits[1]}, {{0, 6, 2, 1}}));
  for (int j : {0, 2}) {
    for (double g : m.head(j)->grad_buffer().values()) EXPECT_EQ(g, 0.0);
    for (double g : m.head_bias(j)->grad_buffer().values()) EXPECT_EQ(g, 0.0);
    for (double g : m.projection(j)->grad_buffer().values()) EXPECT_EQ(g, 0.0);
  }
  double norm = 0;
  for (double g : m.head(1)->grad_buffer().values()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(StageModel, GradientCheckEveryParameterGroup) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto checks = test::stage_grad_check(seed);
    EXPECT_GE(checks.size(), 20u);
    for (const auto& c : checks) EXPECT_LE(c.rel_error, 1e-3) << c.name << " seed " << seed;
  }
}

TEST(StageModel, DropoutDeterminism) {
  auto cfg = small_config();
  cfg.dropout = 0.3;
  StageModel<float> m(cfg, {5, 6}, 11);
  std::mt19937_64 gen(5);
  auto tokens = test::random_tokens(gen, {5, 6}, 4);
  auto m1 = m.new_memory(), m2 = m.new_memory();
  EXPECT_EQ(m.forward(tokens, m1)[1]->value, m.forward(tokens, m2)[1]->value);
  Rng r1(3), r2(3), r3(4);
  auto a = m.new_memory(), b = m.new_memory(), c = m.new_memory();
  auto la = m.forward(tokens, a, true, &r1)[1]->value;
  EXPECT_EQ(la, m.forward(tokens, b, true, &r2)[1]->value);
  EXPECT_NE(la, m.forward(tokens, c, true, &r3)[1]->value);
}

TEST(StageModel, SeededInitAndDeepCopy) {
  StageModel<float> a(small_config(), {5}, 12), b(small_config(), {5}, 12), c(small_config(), {5}, 13);
  auto values = [](const StageModel<float>& m) {
    std::vector<float> out;
    for (const auto& p : m.parameters()) out.insert(out.end(), p.var->value.values().begin(), p.var->value.values().end());
    return out;
  };
  EXPECT_EQ(values(a), values(b));
  EXPECT_NE(values(a), values(c));
  StageModel<float> copy = a;
  copy.parameters()[0].var->value[0] += 1.0f;
  EXPECT_NE(values(copy), values(a));
  EXPECT_EQ(a.parameter_count(), copy.parameter_count());
}

TEST(StageModel, ParameterCountOfPaperConfig) {
  StageModel<float> m(StageConfig{}, {8, 9, 8, 11}, 0);
  // Embeddings 36*256, fusion 4+1, biases 2*256, per layer 5*256^2 + 2*1024*256 + 1024 + 5*256,
  // one2multi 4*(256^2+256), heads 256*36 + 36.
  const std::size_t D = 256, F = 1024;
  const std::size_t expected = 36 * D + 5 + 2 * D + 6 * (5 * D * D + 2 * D * F + F + 5 * D) + 4 * (D * D + D) +
                               D * 36 + 36;
  EXPECT_EQ(m.parameter_count(), expected);
}
