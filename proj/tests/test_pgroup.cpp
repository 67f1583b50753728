#include "test_util.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace sintra;

namespace {

PianoRoll three_step_roll() {
  PianoRoll roll(1, 4, 4, 16);
  roll.set(0, 0, 60);
  roll.set(0, 0, 63);
  roll.set(0, 1, 60);
  roll.set(0, 1, 65);
  return roll;
}

}  // namespace

TEST(PitchGroup, CanonicalForm) {
  PitchGroup g({63, 60, 63});
  EXPECT_EQ(g.to_string(), "60,63");
  EXPECT_EQ(PitchGroup().to_string(), "rest");
  EXPECT_TRUE(PitchGroup().is_rest());
  EXPECT_THROW(PitchGroup({128}), DataError);
}

TEST(BuildDictionary, RestFirstThenFirstOccurrence) {
  auto dicts = build_dictionary(three_step_roll());
  ASSERT_EQ(dicts.size(), 1u);
  ASSERT_EQ(dicts[0].size(), 3);
  EXPECT_TRUE(dicts[0].group(0).is_rest());
  EXPECT_EQ(dicts[0].group(1), PitchGroup({60, 63}));
  EXPECT_EQ(dicts[0].group(2), PitchGroup({60, 65}));
}

TEST(BuildDictionary, AllRestTrackHasSizeOne) {
  PianoRoll roll(2, 16, 16, 16);
  roll.set(1, 3, 70);
  auto dicts = build_dictionary(roll);
  EXPECT_EQ(dicts[0].size(), 1);
  EXPECT_EQ(dicts[1].size(), 2);
}

TEST(BuildDictionary, DeterministicAndMatchesReferenceScan) {
  auto oracle = test::read_csv(test::chorale_dir() / "roll_oracle.csv");
  for (const auto& [file, row] : oracle) {
    auto roll = quantize(load_midi(test::chorale_dir() / file), 16);
    auto a = build_dictionary(roll), b = build_dictionary(roll);
    EXPECT_EQ(a, b);
    for (int k = 0; k < 4; ++k) EXPECT_EQ(a[k].size(), std::stoi(row[5 + k])) << file << " track " << k;
  }
}

TEST(Encode, TokensAndRest) {
  auto roll = three_step_roll();
  auto seq = encode(roll, build_dictionary(roll));
  EXPECT_EQ(seq.tokens.at(0, 0), 1);
  EXPECT_EQ(seq.tokens.at(0, 1), 2);
  EXPECT_EQ(seq.tokens.at(0, 2), 0);
  EXPECT_EQ(seq.tokens.at(0, 3), 0);
}

TEST(Encode, UnknownGroupNamesTrackAndStep) {
  auto roll = three_step_roll();
  auto dicts = build_dictionary(roll);
  roll.set(0, 3, 40);
  try {
    encode(roll, dicts);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos) << e.what();
  }
}

TEST(Decode, DirectLookup) {
  PitchGroupDictionary d;
  d.add(PitchGroup({60}));
  TokenSequence seq;
  seq.dictionaries = std::make_shared<const Dictionaries>(Dictionaries{d});
  seq.tokens = TokenGrid(1, 4);
  seq.tokens.data = {1, 1, 0, 0};
  seq.steps_per_bar = 4;
  auto roll = decode(seq);
  EXPECT_TRUE(roll.at(0, 0, 60));
  EXPECT_TRUE(roll.at(0, 1, 60));
  EXPECT_FALSE(roll.at(0, 2, 60));
  EXPECT_EQ(roll.active_cells(), 2u);

  seq.tokens.data = {0, 0, 0, 0};
  EXPECT_EQ(decode(seq).active_cells(), 0u);
  seq.tokens.data = {0, 2, 0, 0};
  EXPECT_THROW(decode(seq), DataError);
}

TEST(Codec, RoundTripsOnCorpus) {
  for (const auto& path : test::chorale_files()) {
    auto roll = quantize(load_midi(path), 16);
    auto seq = encode(roll, build_dictionary(roll));
    EXPECT_EQ(decode(seq), roll) << path;
    EXPECT_EQ(encode(decode(seq), seq.dictionaries), seq) << path;
  }
}

TEST(Codec, RandomTokenSequencesRoundTrip) {
  auto base = test::chorale_sequence("bwv111_6.mid");
  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 20; ++trial) {
    TokenSequence seq = base;
    for (int k = 0; k < seq.tracks(); ++k)
      for (int t = 0; t < seq.steps(); ++t) seq.tokens.at(k, t) = static_cast<int>(gen() % seq.dicts()[k].size());
    EXPECT_EQ(encode(decode(seq), seq.dictionaries), seq);
  }
}

TEST(DictionaryText, DumpAndParse) {
  auto dicts = build_dictionary(three_step_roll());
  auto text = dump_dictionary(dicts[0]);
  EXPECT_EQ(text, "0\trest\n1\t60,63\n2\t60,65\n");
  EXPECT_EQ(parse_dictionary(text), dicts[0]);
  for (const auto& path : test::chorale_files())
    for (const auto& d : build_dictionary(quantize(load_midi(path), 16)))
      EXPECT_EQ(parse_dictionary(dump_dictionary(d)), d);
}

TEST(DictionaryText, RejectsMalformed) {
  EXPECT_THROW(parse_dictionary(""), DataError);
  EXPECT_THROW(parse_dictionary("0\t60\n"), DataError);
  EXPECT_THROW(parse_dictionary("0\trest\n2\t60\n"), DataError);
  EXPECT_THROW(parse_dictionary("0\trest\n1\t60\n2\t60\n"), DataError);
  EXPECT_THROW(parse_dictionary("0\trest\n1\t60,x\n"), DataError);
  EXPECT_THROW(parse_dictionary("0\trest\n1\t200\n"), DataError);
}

TEST(VocabSizes, CountsPerTrack) {
  auto seq = test::chorale_sequence("bwv111_6.mid");
  EXPECT_EQ(vocab_sizes(seq.dicts()), (std::vector<int>{8, 9, 8, 11}));
}
