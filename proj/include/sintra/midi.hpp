#pragma once

// Standard MIDI File (format 0/1) reader and writer.

#include <sintra/error.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace sintra {

using Bytes = std::vector<std::uint8_t>;

struct NoteEvent {
  int pitch = 60;
  std::int64_t start_tick = 0;
  std::int64_t end_tick = 0;
  int velocity = 100;

  friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

struct TimeSignature {
  int numerator = 4;
  int denominator = 4;

  friend bool operator==(const TimeSignature&, const TimeSignature&) = default;
};

/// Note content of a MIDI file. Only the first tempo and time signature are kept.
struct MidiSong {
  int ticks_per_quarter = 480;
  std::uint32_t us_per_quarter = 500000;
  TimeSignature time_signature;
  std::vector<std::vector<NoteEvent>> tracks;
  /// Latest tick seen in any track (end-of-track markers included).
  std::int64_t length_ticks = 0;
  /// Non-fatal issues found while parsing (ignored tempo changes etc).
  std::vector<std::string> warnings;

  double tempo_bpm() const { return 60'000'000.0 / us_per_quarter; }

  std::size_t note_count() const {
    std::size_t n = 0;
    for (const auto& t : tracks) n += t.size();
    return n;
  }
};

namespace midi_detail {

class Reader {
public:
  Reader(std::span<const std::uint8_t> data, std::size_t base) : data_(data), base_(base) {}

  bool done() const { return pos_ >= data_.size(); }
  std::size_t offset() const { return base_ + pos_; }

  std::uint8_t peek() const {
    if (done()) throw ParseError("unexpected end of data", offset());
    return data_[pos_];
  }

  std::uint8_t u8() {
    std::uint8_t b = peek();
    ++pos_;
    return b;
  }

  std::uint32_t u16() {
    std::uint32_t hi = u8();
    return (hi << 8) | u8();
  }

  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
    return v;
  }

  /// Variable-length quantity, at most four bytes.
  std::uint32_t vlq() {
    std::size_t start = offset();
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7f);
      if (!(b & 0x80)) return v;
    }
    throw ParseError("variable-length quantity longer than 4 bytes", start);
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > data_.size() - pos_) throw ParseError("length runs past end of data", offset());
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

private:
  std::span<const std::uint8_t> data_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

struct RawNote {
  int channel;
  NoteEvent note;
};

struct ParsedTrack {
  std::vector<RawNote> notes;
  std::int64_t end_tick = 0;
};

struct GlobalMeta {
  bool have_tempo = false;
  bool have_timesig = false;
  std::uint32_t us_per_quarter = 500000;
  TimeSignature ts;
  std::vector<std::string> warnings;
};

inline ParsedTrack parse_track(std::span<const std::uint8_t> chunk, std::size_t base, GlobalMeta& meta) {
  Reader r(chunk, base);
  ParsedTrack out;
  std::int64_t tick = 0;
  int running = 0;
  // Open notes per (channel, pitch), closed first-in first-out.
  std::map<int, std::deque<std::pair<std::int64_t, int>>> open;

  auto data_byte = [&r]() {
    std::size_t at = r.offset();
    std::uint8_t b = r.u8();
    if (b & 0x80) throw ParseError("status byte where data byte expected", at);
    return static_cast<int>(b);
  };

  auto close_note = [&](int channel, int pitch) {
    auto it = open.find(channel * 128 + pitch);
    if (it == open.end() || it->second.empty()) return;
    auto [start, vel] = it->second.front();
    it->second.pop_front();
    if (tick > start) out.notes.push_back({channel, NoteEvent{pitch, start, tick, vel}});
  };

  while (!r.done()) {
    tick += r.vlq();
    std::size_t status_at = r.offset();
    int status = r.peek();
    if (status & 0x80) {
      r.u8();
    } else {
      if (running == 0) throw ParseError("running status without a preceding status byte", status_at);
      status = running;
    }

    if (status == 0xff) {
      running = 0;
      int type = r.u8();
      std::uint32_t len = r.vlq();
      auto body = r.take(len);
      if (type == 0x2f) break;
      if (type == 0x51) {
        if (len != 3) throw ParseError("tempo event with length " + std::to_string(len), status_at);
        std::uint32_t us = (std::uint32_t(body[0]) << 16) | (std::uint32_t(body[1]) << 8) | body[2];
        if (us == 0) throw ParseError("zero tempo", status_at);
        if (!meta.have_tempo) {
          meta.have_tempo = true;
          meta.us_per_quarter = us;
        } else if (us != meta.us_per_quarter) {
          meta.warnings.push_back("ignoring tempo change at tick " + std::to_string(tick));
        }
      } else if (type == 0x58) {
        if (len < 2) throw ParseError("time signature event too short", status_at);
        if (body[1] > 6) throw ParseError("time signature denominator exponent out of range", status_at);
        TimeSignature ts{body[0], 1 << body[1]};
        if (ts.numerator == 0) throw ParseError("time signature numerator is zero", status_at);
        if (!meta.have_timesig) {
          meta.have_timesig = true;
          meta.ts = ts;
        } else if (!(ts == meta.ts)) {
          meta.warnings.push_back("ignoring time signature change at tick " + std::to_string(tick));
        }
      }
      continue;
    }
    if (status == 0xf0 || status == 0xf7) {
      running = 0;
      r.take(r.vlq());
      continue;
    }
    if (status >= 0xf0) throw ParseError("system message not allowed in a track", status_at);

    running = status;
    int kind = status & 0xf0;
    int channel = status & 0x0f;
    switch (kind) {
      case 0x80: {
        int pitch = data_byte();
        data_byte();
        close_note(channel, pitch);
        break;
      }
      case 0x90: {
        int pitch = data_byte();
        int vel = data_byte();
        if (vel == 0)
          close_note(channel, pitch);
        else
          open[channel * 128 + pitch].emplace_back(tick, vel);
        break;
      }
      case 0xa0:
      case 0xb0:
      case 0xe0:
        data_byte();
        data_byte();
        break;
      default:  // 0xc0, 0xd0
        data_byte();
        break;
    }
  }

  // Notes left hanging end at the end of the track.
  for (auto& [key, starts] : open) {
    for (auto [start, vel] : starts)
      if (tick > start) out.notes.push_back({key / 128, NoteEvent{key % 128, start, tick, vel}});
  }
  out.end_tick = tick;
  return out;
}

inline void sort_notes(std::vector<NoteEvent>& notes) {
  std::sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
    return std::tie(a.start_tick, a.pitch, a.end_tick) < std::tie(b.start_tick, b.pitch, b.end_tick);
  });
}

inline void put_u16(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void put_vlq(Bytes& out, std::uint32_t v) {
  std::array<std::uint8_t, 5> buf{};
  int n = 0;
  buf[n++] = v & 0x7f;
  while (v >>= 7) buf[n++] = static_cast<std::uint8_t>(0x80 | (v & 0x7f));
  while (n) out.push_back(buf[--n]);
}

inline void put_chunk(Bytes& out, const char* tag, const Bytes& body) {
  out.insert(out.end(), tag, tag + 4);
  put_u32(out, static_cast<std::uint32_t>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
}

}  // namespace midi_detail

/// Parse a format 0 or 1 Standard MIDI File.
///
/// Format 1: one song track per track chunk, except that a leading chunk without
/// notes (the conductor track) is dropped when other chunks follow. Format 0: the
/// single chunk is split by channel, ascending. Zero-length notes are dropped.
/// Throws ParseError on malformed data; never reads out of bounds.
inline MidiSong parse_midi(std::span<const std::uint8_t> bytes) {
  using namespace midi_detail;
  Reader r(bytes, 0);
  if (bytes.size() < 14) throw ParseError("file too short for a MIDI header", 0);
  auto tag = r.take(4);
  if (!std::equal(tag.begin(), tag.end(), "MThd")) throw ParseError("missing MThd header", 0);
  std::uint32_t hlen = r.u32();
  if (hlen < 6) throw ParseError("header chunk shorter than 6 bytes", 4);
  std::size_t fmt_at = r.offset();
  std::uint32_t format = r.u16();
  std::uint32_t ntracks = r.u16();
  std::uint32_t division = r.u16();
  r.take(hlen - 6);
  if (format > 1) throw ParseError("unsupported MIDI format " + std::to_string(format), fmt_at);
  if (division & 0x8000) throw ParseError("SMPTE time division is not supported", fmt_at + 4);
  if (division == 0) throw ParseError("zero ticks per quarter note", fmt_at + 4);
  if (ntracks == 0) throw ParseError("header declares no tracks", fmt_at + 2);
  if (format == 0 && ntracks != 1) throw ParseError("format 0 file must have exactly one track", fmt_at + 2);

  GlobalMeta meta;
  std::vector<ParsedTrack> chunks;
  while (chunks.size() < ntracks) {
    if (r.done())
      throw ParseError("expected " + std::to_string(ntracks) + " track chunks, found " +
                           std::to_string(chunks.size()),
                       r.offset());
    std::size_t chunk_at = r.offset();
    auto ctag = r.take(4);
    std::uint32_t len = r.u32();
    std::size_t body_at = r.offset();
    auto body = r.take(len);
    (void)chunk_at;
    if (!std::equal(ctag.begin(), ctag.end(), "MTrk")) continue;  // unknown chunks are skipped
    chunks.push_back(parse_track(body, body_at, meta));
  }

  MidiSong song;
  song.ticks_per_quarter = static_cast<int>(division);
  song.us_per_quarter = meta.us_per_quarter;
  song.time_signature = meta.ts;
  song.warnings = std::move(meta.warnings);
  for (const auto& c : chunks) {
    song.length_ticks = std::max(song.length_ticks, c.end_tick);
    for (const auto& n : c.notes) song.length_ticks = std::max(song.length_ticks, n.note.end_tick);
  }

  if (format == 0) {
    std::map<int, std::vector<NoteEvent>> by_channel;
    for (const auto& n : chunks[0].notes) by_channel[n.channel].push_back(n.note);
    for (auto& [ch, notes] : by_channel) song.tracks.push_back(std::move(notes));
    if (song.tracks.empty()) song.tracks.emplace_back();
  } else {
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      if (i == 0 && chunks.size() > 1 && chunks[0].notes.empty()) continue;
      std::vector<NoteEvent> notes;
      for (const auto& n : chunks[i].notes) notes.push_back(n.note);
      song.tracks.push_back(std::move(notes));
    }
  }
  for (auto& t : song.tracks) sort_notes(t);
  return song;
}

/// Serialize as a format 1 file: a conductor chunk with tempo and time signature,
/// then one chunk per song track. Track k plays on channel k, skipping channel 10.
inline Bytes write_midi(const MidiSong& song) {
  using namespace midi_detail;
  if (song.ticks_per_quarter <= 0 || song.ticks_per_quarter >= 0x8000)
    throw UsageError("ticks_per_quarter must be in [1, 32767]");
  Bytes out;
  Bytes header;
  put_u16(header, 1);
  put_u16(header, static_cast<std::uint32_t>(song.tracks.size() + 1));
  put_u16(header, static_cast<std::uint32_t>(song.ticks_per_quarter));
  put_chunk(out, "MThd", header);

  int denom_pow = 0;
  while ((1 << denom_pow) < song.time_signature.denominator) ++denom_pow;
  Bytes conductor;
  put_vlq(conductor, 0);
  conductor.insert(conductor.end(), {0xff, 0x51, 0x03});
  conductor.push_back(static_cast<std::uint8_t>(song.us_per_quarter >> 16));
  conductor.push_back(static_cast<std::uint8_t>(song.us_per_quarter >> 8));
  conductor.push_back(static_cast<std::uint8_t>(song.us_per_quarter));
  put_vlq(conductor, 0);
  conductor.insert(conductor.end(), {0xff, 0x58, 0x04});
  conductor.push_back(static_cast<std::uint8_t>(song.time_signature.numerator));
  conductor.push_back(static_cast<std::uint8_t>(denom_pow));
  conductor.insert(conductor.end(), {24, 8});
  put_vlq(conductor, static_cast<std::uint32_t>(song.length_ticks));
  conductor.insert(conductor.end(), {0xff, 0x2f, 0x00});
  put_chunk(out, "MTrk", conductor);

  for (std::size_t k = 0; k < song.tracks.size(); ++k) {
    int channel = static_cast<int>(k % 15);
    if (channel >= 9) ++channel;
    struct Ev {
      std::int64_t tick;
      int on;
      int pitch;
      int velocity;
    };
    std::vector<Ev> events;
    for (const auto& n : song.tracks[k]) {
      if (n.pitch < 0 || n.pitch > 127 || n.velocity < 1 || n.velocity > 127 || n.start_tick < 0 ||
          n.end_tick <= n.start_tick)
        throw UsageError("invalid note event in track " + std::to_string(k));
      events.push_back({n.start_tick, 1, n.pitch, n.velocity});
      events.push_back({n.end_tick, 0, n.pitch, 0});
    }
    // Offs before ons at the same tick so back-to-back notes stay separate.
    std::sort(events.begin(), events.end(), [](const Ev& a, const Ev& b) {
      return std::tie(a.tick, a.on, a.pitch) < std::tie(b.tick, b.on, b.pitch);
    });
    Bytes body;
    std::int64_t now = 0;
    for (const auto& e : events) {
      put_vlq(body, static_cast<std::uint32_t>(e.tick - now));
      now = e.tick;
      body.push_back(static_cast<std::uint8_t>((e.on ? 0x90 : 0x80) | channel));
      body.push_back(static_cast<std::uint8_t>(e.pitch));
      body.push_back(static_cast<std::uint8_t>(e.on ? e.velocity : 64));
    }
    put_vlq(body, static_cast<std::uint32_t>(std::max<std::int64_t>(0, song.length_ticks - now)));
    body.insert(body.end(), {0xff, 0x2f, 0x00});
    put_chunk(out, "MTrk", body);
  }
  return out;
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

inline MidiSong load_midi(const std::filesystem::path& path) { return parse_midi(read_file(path)); }

}  // namespace sintra
