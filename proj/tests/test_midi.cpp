#include "test_util.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace sintra;

namespace {

Bytes header(int format, int ntracks, int division) {
  return {'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, static_cast<std::uint8_t>(format), 0,
          static_cast<std::uint8_t>(ntracks), static_cast<std::uint8_t>(division >> 8),
          static_cast<std::uint8_t>(division & 0xff)};
}

void append_track(Bytes& file, const Bytes& body) {
  Bytes chunk = {'M', 'T', 'r', 'k', 0, 0, static_cast<std::uint8_t>(body.size() >> 8),
                 static_cast<std::uint8_t>(body.size() & 0xff)};
  file.insert(file.end(), chunk.begin(), chunk.end());
  file.insert(file.end(), body.begin(), body.end());
}

// One C4 quarter note at 120 bpm, 480 ticks per quarter.
Bytes single_note_file() {
  Bytes f = header(0, 1, 480);
  append_track(f, {0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20,  // tempo 500000
                   0x00, 0x90, 60, 100, 0x83, 0x60, 0x80, 60, 64, 0x00, 0xff, 0x2f, 0x00});
  return f;
}

}  // namespace

TEST(ParseMidi, SingleNote) {
  auto song = parse_midi(single_note_file());
  ASSERT_EQ(song.tracks.size(), 1u);
  ASSERT_EQ(song.tracks[0].size(), 1u);
  EXPECT_EQ(song.tracks[0][0].pitch, 60);
  EXPECT_EQ(song.tracks[0][0].start_tick, 0);
  EXPECT_EQ(song.tracks[0][0].end_tick, 480);
  EXPECT_EQ(song.tracks[0][0].velocity, 100);
  EXPECT_DOUBLE_EQ(song.tempo_bpm(), 120.0);
  EXPECT_EQ(song.ticks_per_quarter, 480);
}

TEST(ParseMidi, EmptyTrackChunkHasNoEvents) {
  Bytes f = header(1, 2, 96);
  append_track(f, {0x00, 0xff, 0x2f, 0x00});
  append_track(f, {0x00, 0x90, 64, 90, 0x60, 0x90, 64, 0, 0x00, 0xff, 0x2f, 0x00});
  auto song = parse_midi(f);
  ASSERT_EQ(song.tracks.size(), 1u);
  EXPECT_EQ(song.tracks[0].size(), 1u);

  Bytes g = header(0, 1, 96);
  append_track(g, {0x00, 0xff, 0x2f, 0x00});
  auto empty = parse_midi(g);
  ASSERT_EQ(empty.tracks.size(), 1u);
  EXPECT_TRUE(empty.tracks[0].empty());
}

TEST(ParseMidi, RunningStatusAndVelocityZeroNoteOff) {
  Bytes f = header(0, 1, 96);
  append_track(f, {0x00, 0x90, 60, 80, 0x00, 64, 80, 0x60, 60, 0, 0x00, 64, 0, 0x00, 0xff, 0x2f, 0x00});
  auto song = parse_midi(f);
  ASSERT_EQ(song.tracks[0].size(), 2u);
  for (const auto& n : song.tracks[0]) EXPECT_EQ(n.end_tick, 96);
}

TEST(ParseMidi, LaterTempoIgnoredWithWarning) {
  Bytes f = header(0, 1, 96);
  append_track(f, {0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20, 0x10, 0xff, 0x51, 0x03, 0x0f, 0x42, 0x40,
                   0x00, 0xff, 0x2f, 0x00});
  auto song = parse_midi(f);
  EXPECT_EQ(song.us_per_quarter, 500000u);
  EXPECT_FALSE(song.warnings.empty());
}

TEST(ParseMidi, FormatZeroSplitsByChannel) {
  Bytes f = header(0, 1, 96);
  append_track(f, {0x00, 0x91, 50, 80, 0x00, 0x90, 70, 80, 0x60, 0x81, 50, 0, 0x00, 0x80, 70, 0, 0x00, 0xff, 0x2f,
                   0x00});
  auto song = parse_midi(f);
  ASSERT_EQ(song.tracks.size(), 2u);
  EXPECT_EQ(song.tracks[0][0].pitch, 70);  // channel 0 first
  EXPECT_EQ(song.tracks[1][0].pitch, 50);
}

TEST(ParseMidi, StructuredErrors) {
  EXPECT_THROW(parse_midi(Bytes{}), ParseError);
  EXPECT_THROW(parse_midi(Bytes(20, 0)), ParseError);
  Bytes smpte = header(1, 1, 0xe728);
  append_track(smpte, {0x00, 0xff, 0x2f, 0x00});
  EXPECT_THROW(parse_midi(smpte), ParseError);
  Bytes missing = header(1, 2, 96);
  append_track(missing, {0x00, 0xff, 0x2f, 0x00});
  EXPECT_THROW(parse_midi(missing), ParseError);
  Bytes no_status = header(0, 1, 96);
  append_track(no_status, {0x00, 60, 64, 0x00, 0xff, 0x2f, 0x00});
  try {
    parse_midi(no_status);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 23u);  // the data byte after the delta time
  }
}

TEST(ParseMidi, TruncatedFilesNeverCrash) {
  auto f = single_note_file();
  for (std::size_t n = 0; n < f.size(); ++n) {
    Bytes cut(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_THROW(parse_midi(cut), ParseError) << "prefix " << n;
  }
}

TEST(ParseMidi, FuzzYieldsSongOrParseError) {
  std::mt19937_64 gen(1234);
  const auto seed_files = test::chorale_files();
  int parsed = 0, rejected = 0;
  for (int trial = 0; trial < 3000; ++trial) {
    Bytes f;
    if (trial % 3 == 0) {
      f.resize(gen() % 64);
      for (auto& b : f) b = static_cast<std::uint8_t>(gen());
    } else {
      f = read_file(seed_files[trial % seed_files.size()]);
      int flips = 1 + static_cast<int>(gen() % 8);
      for (int i = 0; i < flips; ++i) f[gen() % f.size()] = static_cast<std::uint8_t>(gen());
      if (trial % 5 == 0) f.resize(gen() % f.size());
    }
    try {
      auto song = parse_midi(f);
      for (const auto& t : song.tracks)
        for (const auto& n : t) {
          ASSERT_LE(n.start_tick, n.end_tick);
          ASSERT_GE(n.pitch, 0);
          ASSERT_LE(n.pitch, 127);
        }
      ++parsed;
    } catch (const ParseError&) {
      ++rejected;
    }
  }
  EXPECT_GT(parsed, 0);
  EXPECT_GT(rejected, 0);
}

// Note counts per voice were dumped with mido (tools/data/export_chorales.py).
TEST(ParseMidi, ChoraleNoteCountsMatchReferenceDump) {
  auto counts = test::read_csv(test::chorale_dir() / "note_counts.csv");
  ASSERT_GE(counts.size(), 20u);
  for (const auto& [file, row] : counts) {
    auto song = load_midi(test::chorale_dir() / file);
    ASSERT_EQ(song.tracks.size(), 4u) << file;
    for (int k = 0; k < 4; ++k) EXPECT_EQ(song.tracks[k].size(), std::stoul(row[1 + k])) << file << " track " << k;
  }
}

TEST(WriteMidi, RoundTripPreservesNotes) {
  for (const auto& path : test::chorale_files()) {
    auto song = load_midi(path);
    auto again = parse_midi(write_midi(song));
    EXPECT_EQ(again.tracks.size(), song.tracks.size());
    for (std::size_t k = 0; k < song.tracks.size(); ++k) {
      auto a = song.tracks[k], b = again.tracks[k];
      ASSERT_EQ(a.size(), b.size()) << path;
      for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].pitch, b[i].pitch);
        EXPECT_EQ(a[i].start_tick, b[i].start_tick);
        EXPECT_EQ(a[i].end_tick, b[i].end_tick);
      }
    }
    EXPECT_EQ(again.us_per_quarter, song.us_per_quarter);
    EXPECT_EQ(again.time_signature, song.time_signature);
    EXPECT_EQ(again.length_ticks, song.length_ticks);
  }
}

TEST(WriteMidi, HeaderAndVlq) {
  MidiSong song;
  song.ticks_per_quarter = 96;
  song.tracks = {{{60, 0, 200, 100}}};
  song.length_ticks = 200;
  auto bytes = write_midi(song);
  ASSERT_GE(bytes.size(), 14u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MThd");
  EXPECT_EQ(bytes[9], 1);   // format 1
  EXPECT_EQ(bytes[11], 2);  // conductor + 1 track
  EXPECT_EQ(bytes[13], 96);
  // 200 ticks encodes as 0x81 0x48.
  const Bytes vlq = {0x81, 0x48, 0x80, 60};
  EXPECT_NE(std::search(bytes.begin(), bytes.end(), vlq.begin(), vlq.end()), bytes.end());
}
