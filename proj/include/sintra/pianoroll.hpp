#pragma once

#include <sintra/error.hpp>
#include <sintra/midi.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace sintra {

inline constexpr int kPitches = 128;

/// Binary pitch x time grid per track. T is always a whole number of bars.
class PianoRoll {
public:
  PianoRoll() = default;

  PianoRoll(int tracks, int steps, int steps_per_bar, int resolution = 16)
      : tracks_(tracks), steps_(steps), steps_per_bar_(steps_per_bar), resolution_(resolution) {
    if (tracks < 1 || steps < 0 || steps_per_bar < 1 || resolution < 1)
      throw UsageError("invalid piano-roll dimensions");
    if (steps % steps_per_bar != 0)
      throw UsageError("piano-roll length " + std::to_string(steps) + " is not a multiple of " +
                       std::to_string(steps_per_bar) + " steps per bar");
    grid_.assign(static_cast<std::size_t>(tracks) * steps * kPitches, 0);
  }

  int tracks() const { return tracks_; }
  int steps() const { return steps_; }
  int steps_per_bar() const { return steps_per_bar_; }
  int bars() const { return steps_ / steps_per_bar_; }
  /// Note value of one step (16 = sixteenth note).
  int resolution() const { return resolution_; }

  bool at(int track, int step, int pitch) const { return grid_[index(track, step, pitch)] != 0; }
  void set(int track, int step, int pitch, bool on = true) { grid_[index(track, step, pitch)] = on; }

  std::size_t active_cells() const {
    std::size_t n = 0;
    for (auto c : grid_) n += c;
    return n;
  }

  friend bool operator==(const PianoRoll&, const PianoRoll&) = default;

private:
  std::size_t index(int track, int step, int pitch) const {
    return (static_cast<std::size_t>(track) * steps_ + step) * kPitches + pitch;
  }

  int tracks_ = 0;
  int steps_ = 0;
  int steps_per_bar_ = 16;
  int resolution_ = 16;
  std::vector<std::uint8_t> grid_;
};

inline bool is_note_value(int v) { return v >= 1 && v <= 64 && (v & (v - 1)) == 0; }

/// Steps per bar for a meter at the given note-value resolution; throws when not integral.
inline int steps_per_bar_for(TimeSignature ts, int resolution) {
  long num = static_cast<long>(ts.numerator) * resolution;
  if (ts.denominator <= 0 || num % ts.denominator != 0)
    throw DataError("time signature " + std::to_string(ts.numerator) + "/" + std::to_string(ts.denominator) +
                    " does not span a whole number of " + std::to_string(resolution) + "th-note steps");
  return static_cast<int>(num / ts.denominator);
}

/// Snap notes onto a grid of `resolution`th notes (4, 8, 16 or 32).
///
/// A note covers cells round(start/step) .. round(end/step) (half rounds up), at least
/// one cell. The length is padded with rests to a whole number of bars.
inline PianoRoll quantize(const MidiSong& song, int resolution = 16) {
  if (resolution != 4 && resolution != 8 && resolution != 16 && resolution != 32)
    throw UsageError("resolution must be 4, 8, 16 or 32");
  const std::int64_t tpq = song.ticks_per_quarter;
  if (tpq <= 0) throw DataError("ticks per quarter must be positive");
  // cell = round(tick * resolution / (4 * tpq))
  auto cell = [&](std::int64_t tick) { return (2 * tick * resolution + 4 * tpq) / (8 * tpq); };

  int spb = steps_per_bar_for(song.time_signature, resolution);
  std::int64_t steps = cell(song.length_ticks);
  for (const auto& track : song.tracks)
    for (const auto& n : track) steps = std::max(steps, std::max(cell(n.end_tick), cell(n.start_tick) + 1));
  if (steps <= 0 || song.tracks.empty()) throw DataError("empty segment");
  steps = (steps + spb - 1) / spb * spb;

  PianoRoll roll(static_cast<int>(song.tracks.size()), static_cast<int>(steps), spb, resolution);
  for (std::size_t k = 0; k < song.tracks.size(); ++k) {
    for (const auto& n : song.tracks[k]) {
      if (n.pitch < 0 || n.pitch >= kPitches) throw DataError("pitch out of range");
      std::int64_t s = cell(n.start_tick);
      std::int64_t e = std::max(cell(n.end_tick), s + 1);
      for (std::int64_t t = s; t < e; ++t) roll.set(static_cast<int>(k), static_cast<int>(t), n.pitch);
    }
  }
  return roll;
}

/// First `bars` bars of a roll (all of it when bars <= 0 or bars >= roll.bars()).
inline PianoRoll crop_bars(const PianoRoll& roll, int bars) {
  if (bars <= 0 || bars >= roll.bars()) return roll;
  PianoRoll out(roll.tracks(), bars * roll.steps_per_bar(), roll.steps_per_bar(), roll.resolution());
  for (int k = 0; k < roll.tracks(); ++k)
    for (int t = 0; t < out.steps(); ++t)
      for (int p = 0; p < kPitches; ++p)
        if (roll.at(k, t, p)) out.set(k, t, p);
  return out;
}

/// Time signature that reproduces a roll's bar length.
inline TimeSignature time_signature_for(const PianoRoll& roll) {
  for (int den = 4; den <= 64; den *= 2) {
    long num = static_cast<long>(roll.steps_per_bar()) * den;
    if (num % roll.resolution() == 0 && num / roll.resolution() <= 255)
      return {static_cast<int>(num / roll.resolution()), den};
  }
  throw UsageError("bar length has no time signature");
}

/// Piano-roll back to notes: each run of on-cells becomes one sustained note.
inline MidiSong roll_to_song(const PianoRoll& roll, double tempo_bpm = 120.0, int velocity = 100,
                             int ticks_per_quarter = 480) {
  if (!(tempo_bpm > 0)) throw UsageError("tempo must be positive");
  if (velocity < 1 || velocity > 127) throw UsageError("velocity must be in [1, 127]");
  if ((ticks_per_quarter * 4) % roll.resolution() != 0)
    throw UsageError("ticks per quarter not divisible into roll steps");
  const std::int64_t step_ticks = ticks_per_quarter * 4 / roll.resolution();

  MidiSong song;
  song.ticks_per_quarter = ticks_per_quarter;
  song.us_per_quarter = static_cast<std::uint32_t>(std::lround(60'000'000.0 / tempo_bpm));
  song.time_signature = time_signature_for(roll);
  song.length_ticks = roll.steps() * step_ticks;
  song.tracks.resize(roll.tracks());
  for (int k = 0; k < roll.tracks(); ++k) {
    for (int p = 0; p < kPitches; ++p) {
      int t = 0;
      while (t < roll.steps()) {
        if (!roll.at(k, t, p)) {
          ++t;
          continue;
        }
        int start = t;
        while (t < roll.steps() && roll.at(k, t, p)) ++t;
        song.tracks[k].push_back({p, start * step_ticks, t * step_ticks, velocity});
      }
    }
    midi_detail::sort_notes(song.tracks[k]);
  }
  return song;
}

/// Render a roll as Standard MIDI File bytes with a fixed velocity.
inline Bytes render_midi(const PianoRoll& roll, double tempo_bpm = 120.0, int velocity = 100) {
  return write_midi(roll_to_song(roll, tempo_bpm, velocity));
}

/// 8-bit grayscale raster.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

inline constexpr std::uint8_t kPixelNote = 0;
inline constexpr std::uint8_t kPixelBarLine = 192;
inline constexpr std::uint8_t kPixelRest = 255;

/// One 128-row panel per track, stacked top to bottom; pitch 127 is the top row of a
/// panel. Columns are steps. Rest cells in the first step of each bar are gray.
inline GrayImage pianoroll_image(const PianoRoll& roll) {
  GrayImage img;
  img.width = roll.steps();
  img.height = roll.tracks() * kPitches;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, kPixelRest);
  for (int k = 0; k < roll.tracks(); ++k) {
    for (int p = 0; p < kPitches; ++p) {
      int row = k * kPitches + (kPitches - 1 - p);
      for (int t = 0; t < roll.steps(); ++t) {
        std::uint8_t v = kPixelRest;
        if (roll.at(k, t, p))
          v = kPixelNote;
        else if (t % roll.steps_per_bar() == 0)
          v = kPixelBarLine;
        img.pixels[static_cast<std::size_t>(row) * img.width + t] = v;
      }
    }
  }
  return img;
}

/// Write the roll image as binary PGM (P5, maxval 255).
inline void export_pianoroll_image(const PianoRoll& roll, const std::filesystem::path& path) {
  GrayImage img = pianoroll_image(roll);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw DataError("write failed for image " + path.string());
}

}  // namespace sintra
