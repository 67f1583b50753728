#include "test_util.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace sintra;

namespace {

TrainConfig tiny_config(int steps = 40, std::uint64_t seed = 0) {
  TrainConfig c;
  c.steps_per_stage = steps;
  c.warmup_steps = steps / 10;
  c.base_lr = 3e-3;
  c.seed = seed;
  c.arch.layers = 1;
  c.arch.heads = 2;
  c.arch.head_dim = 8;
  c.arch.model_dim = 16;
  c.arch.ffn_dim = 32;
  c.arch.dropout = 0.1;
  return c;
}

const TokenSequence& chorale() {
  static const TokenSequence seq = test::chorale_sequence("bwv157_5.mid");
  return seq;
}

const SinTraModel& tiny_model() {
  static const SinTraModel model = train(chorale(), tiny_config());
  return model;
}

}  // namespace

TEST(TrainConfig, Validation) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  auto c = tiny_config();
  c.steps_per_stage = 0;
  EXPECT_THROW(c.validate(), UsageError);
  c = tiny_config();
  c.sample_p_coarse = 0;
  EXPECT_THROW(c.validate(), UsageError);
  c = tiny_config();
  c.arch.model_dim = 15;
  EXPECT_THROW(c.validate(), UsageError);
  EXPECT_DOUBLE_EQ(TrainConfig{}.lr(2000), 2e-6);
  GenConfig g;
  g.gen_bars = 0;
  EXPECT_THROW(g.validate(), UsageError);
}

TEST(Train, ThreeStagesWithScaleSpecificLengths) {
  const auto& m = tiny_model();
  ASSERT_EQ(m.depth(), 3);
  const std::vector<int> values{4, 8, 16};
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(m.stages[i].scale.note_value, values[i]);
    EXPECT_EQ(m.stages[i].model.config().proc_len, values[i]);
    EXPECT_EQ(m.stages[i].model.config().mem_len, values[i]);
    EXPECT_EQ(m.stages[i].nll_curve.size(), 40u);
    EXPECT_TRUE(std::isfinite(m.stages[i].final_nll));
    EXPECT_EQ(m.stages[i].optimizer.step, 40);
  }
  EXPECT_EQ(m.finest_note_value(), 16);
  EXPECT_EQ(m.steps_per_bar(), 16);
  EXPECT_EQ(m.segment.tokens, chorale().tokens);
  EXPECT_FALSE(m.single_stage);
}

TEST(Train, SingleStageBaseline) {
  auto m = train_single_stage(chorale(), tiny_config(10));
  ASSERT_EQ(m.depth(), 1);
  EXPECT_EQ(m.stages[0].scale.note_value, 16);
  EXPECT_EQ(m.stages[0].model.config().proc_len, 16);
  EXPECT_TRUE(m.single_stage);
}

TEST(Train, TwoBarSegmentIsOneTrainingPair) {
  auto two = chorale();
  two.tokens = two.tokens.slice(0, 32);
  auto m = train(two, tiny_config(6));
  for (const auto& s : m.stages) EXPECT_EQ(s.nll_curve.size(), 6u);
  auto one = chorale();
  one.tokens = one.tokens.slice(0, 16);
  EXPECT_THROW(train(one, tiny_config(6)), DataError);
}

TEST(Train, TeacherForcingDoesNotAffectStageZero) {
  auto on = tiny_config(12, 3);
  auto off = on;
  off.teacher_forcing = false;
  auto a = train(chorale(), on);
  auto b = train(chorale(), off);
  EXPECT_EQ(a.stages[0].nll_curve, b.stages[0].nll_curve);
  EXPECT_EQ(a.stages[0].final_nll, b.stages[0].final_nll);
  EXPECT_NE(a.stages[1].nll_curve, b.stages[1].nll_curve);
}

TEST(Train, DeterministicForFixedSeed) {
  auto a = train(chorale(), tiny_config(8, 5));
  auto b = train(chorale(), tiny_config(8, 5));
  auto c = train(chorale(), tiny_config(8, 6));
  for (int i = 0; i < 3; ++i) EXPECT_EQ(a.stages[i].nll_curve, b.stages[i].nll_curve);
  EXPECT_NE(a.stages[0].nll_curve, c.stages[0].nll_curve);
}

TEST(Train, LossFallsOnRepeatingSegment) {
  // Four bars repeating a one-bar pattern per voice: every next bar is predictable.
  std::vector<std::vector<int>> rows(2);
  for (int b = 0; b < 4; ++b)
    for (int t = 0; t < 16; ++t) {
      rows[0].push_back(1 + t % 3);
      rows[1].push_back((t / 8) % 2);
    }
  auto seq = test::toy_sequence(rows, 16);
  auto cfg = tiny_config(300, 1);
  cfg.arch.dropout = 0.0;
  cfg.base_lr = 1e-2;
  auto m = train(seq, cfg);
  for (const auto& s : m.stages) {
    const auto& c = s.nll_curve;
    const double head = std::accumulate(c.begin(), c.begin() + 30, 0.0) / 30;
    const double tail = std::accumulate(c.end() - 30, c.end(), 0.0) / 30;
    EXPECT_LT(tail, head) << "stage " << s.scale.name();
    EXPECT_LT(s.final_nll, 0.05) << "stage " << s.scale.name();
  }
}

TEST(Generate, LengthAndRelevanceClosure) {
  const auto& m = tiny_model();
  GenConfig g;
  g.seed = 1;
  auto out = generate(m, chorale(), g);
  EXPECT_TRUE(out.warnings.empty());
  EXPECT_EQ(out.tokens.steps(), 32 * 16);
  EXPECT_EQ(out.tokens.tracks(), 4);
  EXPECT_EQ(out.tokens.dictionaries, m.dictionaries);
  out.tokens.validate();
  // Every decoded group was seen in the segment, not merely in the dictionaries.
  auto roll = decode(out.tokens);
  std::size_t unseen = 0;
  for (int k = 0; k < roll.tracks(); ++k)
    for (int t = 0; t < roll.steps(); ++t) unseen += !(*m.dictionaries)[static_cast<std::size_t>(k)].contains(PitchGroup::at_step(roll, k, t));
  EXPECT_EQ(unseen, 0u);
}

TEST(Generate, NeverRestsWhereTheSegmentDoesNot) {
  // bwv157_5 has no rests, yet rest is token 0 of every dictionary. An undertrained
  // model sampled from its full distribution must still avoid it.
  const auto& m = tiny_model();
  const auto real_groups = group_distribution(chorale()).support();
  ASSERT_FALSE(real_groups.count(PitchGroup{}));
  GenConfig g;
  g.p_coarse = 1.0;
  g.p_refine = 1.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    g.seed = seed;
    const auto out = generate(m, chorale(), g).tokens;
    const auto groups = group_distribution(out).support();
    for (const auto& grp : groups) EXPECT_TRUE(real_groups.count(grp)) << grp.to_string();
    EXPECT_EQ(overlap(groups, real_groups), static_cast<double>(groups.size()) / static_cast<double>(real_groups.size()));
  }
}

TEST(Generate, DeterministicPerSeed) {
  const auto& m = tiny_model();
  GenConfig g;
  g.gen_bars = 4;
  g.seed = 9;
  auto a = generate(m, chorale(), g), b = generate(m, chorale(), g);
  EXPECT_EQ(a.tokens.tokens, b.tokens.tokens);
  g.seed = 10;
  g.p_refine = 1.0;
  g.p_coarse = 1.0;
  auto c = generate(m, chorale(), g);
  g.seed = 11;
  EXPECT_NE(c.tokens.tokens, generate(m, chorale(), g).tokens.tokens);
}

TEST(Generate, TinyThresholdIsSeedIndependent) {
  const auto& m = tiny_model();
  GenConfig g;
  g.gen_bars = 3;
  g.p_coarse = g.p_refine = 1e-9;
  g.seed = 1;
  auto a = generate(m, chorale(), g);
  g.seed = 2;
  EXPECT_EQ(a.tokens.tokens, generate(m, chorale(), g).tokens.tokens);
}

TEST(Generate, ShortPrimerWarnsAndForeignPrimerFails) {
  const auto& m = tiny_model();
  GenConfig g;
  g.gen_bars = 1;
  auto shorter = chorale();
  shorter.tokens = shorter.tokens.slice(0, 3 * 16);
  auto out = generate(m, shorter, g);
  ASSERT_EQ(out.warnings.size(), 1u);
  EXPECT_NE(out.warnings[0].find("3 bars"), std::string::npos);

  auto foreign = test::chorale_sequence("bwv111_6.mid");
  try {
    generate(m, foreign, g);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("not in the training dictionary"), std::string::npos);
  }
}

TEST(RefineStage, RejectsWrongLength) {
  const auto& m = tiny_model();
  auto memory = m.stages[1].model.new_memory();
  Rng rng(0);
  EXPECT_THROW(refine_stage(m.stages[1].model, memory, TokenGrid(4, 4), 0.5, rng), UsageError);
  auto ok = refine_stage(m.stages[1].model, memory, TokenGrid(4, 8), 0.5, rng);
  EXPECT_EQ(ok.steps, 8);
  EXPECT_EQ(memory.length(), 8u);
}
