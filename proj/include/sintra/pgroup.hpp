#pragma once

// Pitch-group representation: every (track, step) is the set of sounding pitches,
// mapped to an index in a per-track dictionary built from the training segment.

#include <sintra/error.hpp>
#include <sintra/pianoroll.hpp>

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace sintra {

/// Sorted, duplicate-free set of MIDI pitches; empty means rest.
class PitchGroup {
public:
  PitchGroup() = default;

  explicit PitchGroup(std::vector<int> pitches) {
    std::sort(pitches.begin(), pitches.end());
    pitches.erase(std::unique(pitches.begin(), pitches.end()), pitches.end());
    for (int p : pitches) {
      if (p < 0 || p >= kPitches) throw DataError("pitch " + std::to_string(p) + " out of range");
      pitches_.push_back(static_cast<std::uint8_t>(p));
    }
  }

  static PitchGroup at_step(const PianoRoll& roll, int track, int step) {
    PitchGroup g;
    for (int p = 0; p < kPitches; ++p)
      if (roll.at(track, step, p)) g.pitches_.push_back(static_cast<std::uint8_t>(p));
    return g;
  }

  bool is_rest() const { return pitches_.empty(); }
  std::size_t size() const { return pitches_.size(); }
  const std::vector<std::uint8_t>& pitches() const { return pitches_; }

  std::string to_string() const {
    if (is_rest()) return "rest";
    std::string s;
    for (std::size_t i = 0; i < pitches_.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(pitches_[i]);
    }
    return s;
  }

  friend auto operator<=>(const PitchGroup&, const PitchGroup&) = default;
  friend bool operator==(const PitchGroup&, const PitchGroup&) = default;

private:
  std::vector<std::uint8_t> pitches_;
};

/// Bijection between token indices 0..n and pitch groups. Index 0 is always the rest.
class PitchGroupDictionary {
public:
  PitchGroupDictionary() { add(PitchGroup{}); }

  int size() const { return static_cast<int>(groups_.size()); }

  const PitchGroup& group(int index) const {
    if (index < 0 || index >= size())
      throw DataError("token " + std::to_string(index) + " outside dictionary of size " + std::to_string(size()));
    return groups_[static_cast<std::size_t>(index)];
  }

  std::optional<int> index_of(const PitchGroup& g) const {
    auto it = lookup_.find(g);
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const PitchGroup& g) const { return lookup_.count(g) != 0; }

  /// Index of `g`, appending it when new.
  int add(const PitchGroup& g) {
    auto [it, inserted] = lookup_.emplace(g, size());
    if (inserted) groups_.push_back(g);
    return it->second;
  }

  const std::vector<PitchGroup>& groups() const { return groups_; }

  friend bool operator==(const PitchGroupDictionary& a, const PitchGroupDictionary& b) {
    return a.groups_ == b.groups_;
  }

private:
  std::vector<PitchGroup> groups_;
  std::map<PitchGroup, int> lookup_;
};

using Dictionaries = std::vector<PitchGroupDictionary>;

/// Tracks x steps grid of token indices, row-major by track.
struct TokenGrid {
  int tracks = 0;
  int steps = 0;
  std::vector<int> data;

  TokenGrid() = default;
  TokenGrid(int tracks_, int steps_, int fill = 0)
      : tracks(tracks_), steps(steps_), data(static_cast<std::size_t>(tracks_) * steps_, fill) {}

  int& at(int track, int step) { return data[static_cast<std::size_t>(track) * steps + step]; }
  int at(int track, int step) const { return data[static_cast<std::size_t>(track) * steps + step]; }

  /// Columns [first, first + count).
  TokenGrid slice(int first, int count) const {
    if (first < 0 || count < 0 || first + count > steps) throw UsageError("token slice out of range");
    TokenGrid out(tracks, count);
    for (int k = 0; k < tracks; ++k)
      for (int t = 0; t < count; ++t) out.at(k, t) = at(k, first + t);
    return out;
  }

  void append(const TokenGrid& other) {
    if (other.tracks != tracks) throw UsageError("track count mismatch in append");
    TokenGrid out(tracks, steps + other.steps);
    for (int k = 0; k < tracks; ++k) {
      for (int t = 0; t < steps; ++t) out.at(k, t) = at(k, t);
      for (int t = 0; t < other.steps; ++t) out.at(k, steps + t) = other.at(k, t);
    }
    *this = std::move(out);
  }

  friend bool operator==(const TokenGrid&, const TokenGrid&) = default;
};

/// Token grid plus the dictionaries that give the tokens meaning.
struct TokenSequence {
  TokenGrid tokens;
  std::shared_ptr<const Dictionaries> dictionaries;
  int steps_per_bar = 16;
  /// Note value of one step (4 = quarter, 16 = sixteenth).
  int note_value = 16;

  int tracks() const { return tokens.tracks; }
  int steps() const { return tokens.steps; }
  int bars() const { return tokens.steps / steps_per_bar; }
  const Dictionaries& dicts() const { return *dictionaries; }

  /// Tokens of bar `bar` (all tracks).
  TokenGrid bar(int index) const { return tokens.slice(index * steps_per_bar, steps_per_bar); }

  /// Check every token against its track's dictionary.
  void validate() const {
    if (!dictionaries || static_cast<int>(dictionaries->size()) != tokens.tracks)
      throw UsageError("token sequence needs one dictionary per track");
    if (steps_per_bar < 1) throw UsageError("steps_per_bar must be positive");
    for (int k = 0; k < tokens.tracks; ++k)
      for (int t = 0; t < tokens.steps; ++t) {
        int v = tokens.at(k, t);
        if (v < 0 || v >= (*dictionaries)[k].size())
          throw DataError("token " + std::to_string(v) + " out of range for track " + std::to_string(k) +
                          " at step " + std::to_string(t));
      }
  }

  friend bool operator==(const TokenSequence& a, const TokenSequence& b) {
    return a.tokens == b.tokens && a.steps_per_bar == b.steps_per_bar && a.note_value == b.note_value &&
           (a.dictionaries == b.dictionaries || (a.dictionaries && b.dictionaries && *a.dictionaries == *b.dictionaries));
  }
};

/// One dictionary per track: rest first, then groups in order of first occurrence.
inline Dictionaries build_dictionary(const PianoRoll& roll) {
  if (roll.tracks() < 1 || roll.steps() < 1) throw DataError("empty segment");
  Dictionaries dicts(static_cast<std::size_t>(roll.tracks()));
  for (int k = 0; k < roll.tracks(); ++k)
    for (int t = 0; t < roll.steps(); ++t) dicts[k].add(PitchGroup::at_step(roll, k, t));
  return dicts;
}

inline TokenSequence encode(const PianoRoll& roll, std::shared_ptr<const Dictionaries> dicts) {
  if (!dicts || static_cast<int>(dicts->size()) != roll.tracks())
    throw UsageError("need one dictionary per track");
  TokenSequence seq;
  seq.tokens = TokenGrid(roll.tracks(), roll.steps());
  seq.steps_per_bar = roll.steps_per_bar();
  seq.note_value = roll.resolution();
  for (int k = 0; k < roll.tracks(); ++k)
    for (int t = 0; t < roll.steps(); ++t) {
      PitchGroup g = PitchGroup::at_step(roll, k, t);
      auto idx = (*dicts)[k].index_of(g);
      if (!idx)
        throw DataError("out-of-dictionary pitch group {" + g.to_string() + "} in track " + std::to_string(k) +
                        " at step " + std::to_string(t));
      seq.tokens.at(k, t) = *idx;
    }
  seq.dictionaries = std::move(dicts);
  return seq;
}

inline TokenSequence encode(const PianoRoll& roll, const Dictionaries& dicts) {
  return encode(roll, std::make_shared<const Dictionaries>(dicts));
}

inline PianoRoll decode(const TokenSequence& seq) {
  seq.validate();
  PianoRoll roll(seq.tracks(), seq.steps(), seq.steps_per_bar, seq.note_value);
  for (int k = 0; k < seq.tracks(); ++k)
    for (int t = 0; t < seq.steps(); ++t)
      for (auto p : seq.dicts()[k].group(seq.tokens.at(k, t)).pitches()) roll.set(k, t, p);
  return roll;
}

inline std::vector<int> vocab_sizes(const Dictionaries& dicts) {
  std::vector<int> out;
  for (const auto& d : dicts) out.push_back(d.size());
  return out;
}

/// `index<TAB>pitches` per line, `rest` for the empty group.
inline std::string dump_dictionary(const PitchGroupDictionary& dict) {
  std::string out;
  for (int i = 0; i < dict.size(); ++i) out += std::to_string(i) + '\t' + dict.group(i).to_string() + '\n';
  return out;
}

inline PitchGroupDictionary parse_dictionary(const std::string& text) {
  PitchGroupDictionary dict;
  std::istringstream in(text);
  std::string line;
  int expected = 0;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("dictionary line " + std::to_string(lineno) + ": missing tab");
    int index = 0;
    try {
      std::size_t used = 0;
      index = std::stoi(line.substr(0, tab), &used);
      if (used != tab) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError("dictionary line " + std::to_string(lineno) + ": bad index");
    }
    if (index != expected)
      throw DataError("dictionary line " + std::to_string(lineno) + ": expected index " + std::to_string(expected));
    std::string body = line.substr(tab + 1);
    PitchGroup g;
    if (body != "rest") {
      std::vector<int> pitches;
      std::istringstream items(body);
      std::string item;
      while (std::getline(items, item, ',')) {
        try {
          std::size_t used = 0;
          pitches.push_back(std::stoi(item, &used));
          if (used != item.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw DataError("dictionary line " + std::to_string(lineno) + ": bad pitch '" + item + "'");
        }
      }
      if (pitches.empty()) throw DataError("dictionary line " + std::to_string(lineno) + ": empty group");
      g = PitchGroup(std::move(pitches));
    }
    if (index == 0) {
      if (!g.is_rest()) throw DataError("dictionary index 0 must be the rest");
    } else if (dict.add(g) != index) {
      throw DataError("dictionary line " + std::to_string(lineno) + ": duplicate group");
    }
    ++expected;
  }
  if (expected == 0) throw DataError("empty dictionary");
  return dict;
}

}  // namespace sintra
