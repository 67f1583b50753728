#pragma once

#include <sintra/error.hpp>
#include <sintra/pgroup.hpp>
#include <sintra/pianoroll.hpp>

#include <algorithm>
#include <string>
#include <vector>

namespace sintra {

/// Temporal grain of one pyramid stage.
struct ScaleSpec {
  int note_value = 16;  ///< 4 = quarter, 8 = eighth, 16 = sixteenth, ...

  /// Steps of a `finest`-note grid covered by one step of this scale.
  int stride(int finest = 16) const { return finest / note_value; }

  std::string name() const { return std::to_string(note_value) + (note_value % 10 == 2 && note_value % 100 != 12 ? "nd" : "th"); }

  friend bool operator==(const ScaleSpec&, const ScaleSpec&) = default;
};

inline constexpr int kMaxPyramidDepth = 4;

/// Sequence pyramid levels, coarse to fine, sharing one set of dictionaries.
struct SequencePyramid {
  std::vector<ScaleSpec> specs;
  std::vector<TokenSequence> levels;

  std::size_t depth() const { return levels.size(); }
};

/// Keep the first token of every group of `factor` steps.
inline TokenSequence downsample(const TokenSequence& seq, int factor) {
  if (factor < 1) throw UsageError("downsample factor must be >= 1");
  if (seq.steps() % factor != 0)
    throw DataError("cannot downsample " + std::to_string(seq.steps()) + " steps by " + std::to_string(factor));
  if (seq.steps_per_bar % factor != 0 || seq.note_value % factor != 0)
    throw DataError("downsample factor " + std::to_string(factor) + " does not divide the bar grid");
  TokenSequence out;
  out.dictionaries = seq.dictionaries;
  out.steps_per_bar = seq.steps_per_bar / factor;
  out.note_value = seq.note_value / factor;
  out.tokens = TokenGrid(seq.tracks(), seq.steps() / factor);
  for (int k = 0; k < seq.tracks(); ++k)
    for (int t = 0; t < out.tokens.steps; ++t) out.tokens.at(k, t) = seq.tokens.at(k, t * factor);
  return out;
}

inline TokenGrid upsample(const TokenGrid& grid, int factor) {
  if (factor < 1) throw UsageError("upsample factor must be >= 1");
  TokenGrid out(grid.tracks, grid.steps * factor);
  for (int k = 0; k < grid.tracks; ++k)
    for (int t = 0; t < out.steps; ++t) out.at(k, t) = grid.at(k, t / factor);
  return out;
}

/// Nearest-neighbour repeat of every token.
inline TokenSequence upsample(const TokenSequence& seq, int factor) {
  TokenSequence out;
  out.dictionaries = seq.dictionaries;
  out.steps_per_bar = seq.steps_per_bar * factor;
  out.note_value = seq.note_value * factor;
  out.tokens = upsample(seq.tokens, factor);
  return out;
}

/// One downsampled level per spec. Specs may come in either order but must be distinct
/// powers of two, adjacent ones a factor 2 apart, the finest matching `seq`.
inline SequencePyramid build_pyramid(const TokenSequence& seq, std::vector<ScaleSpec> specs) {
  if (specs.empty()) throw UsageError("pyramid needs at least one scale");
  std::sort(specs.begin(), specs.end(), [](ScaleSpec a, ScaleSpec b) { return a.note_value < b.note_value; });
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!is_note_value(specs[i].note_value)) throw UsageError("note value must be a power of two");
    if (i && specs[i].note_value != 2 * specs[i - 1].note_value)
      throw UsageError("adjacent pyramid scales must differ by a factor of 2");
  }
  if (specs.back().note_value != seq.note_value)
    throw UsageError("finest scale " + specs.back().name() + " does not match sequence resolution " +
                     std::to_string(seq.note_value) + "th");
  SequencePyramid pyr;
  pyr.specs = specs;
  for (const auto& s : specs) pyr.levels.push_back(downsample(seq, seq.note_value / s.note_value));
  return pyr;
}

/// Scales from the quarter note down to the shortest note in the roll, coarse to fine.
/// A note's value is rounded up to the next power-of-two denominator; at most four
/// stages (down to 32nd notes) and never finer than the roll itself.
inline std::vector<ScaleSpec> choose_scales(const PianoRoll& roll) {
  if (roll.steps() < 1 || roll.tracks() < 1) throw DataError("empty segment");
  int shortest = 0;  // in roll steps
  for (int k = 0; k < roll.tracks(); ++k)
    for (int p = 0; p < kPitches; ++p) {
      int run = 0;
      for (int t = 0; t <= roll.steps(); ++t) {
        if (t < roll.steps() && roll.at(k, t, p)) {
          ++run;
        } else if (run) {
          shortest = shortest ? std::min(shortest, run) : run;
          run = 0;
        }
      }
    }
  int finest = 4;
  if (shortest) {
    // Smallest power-of-two note value v with 1/v <= shortest/resolution.
    while (finest < roll.resolution() && finest * shortest < roll.resolution()) finest *= 2;
  }
  int cap = 4 << (kMaxPyramidDepth - 1);
  finest = std::min({finest, cap, std::max(4, roll.resolution())});
  std::vector<ScaleSpec> out;
  for (int v = 4; v <= finest; v *= 2) out.push_back({v});
  return out;
}

}  // namespace sintra
