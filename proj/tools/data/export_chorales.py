#!/usr/bin/env python3
"""Export 12-bar SATB segments of 4/4 Bach chorales (music21 corpus) as MIDI.

Writes tests/data/chorales/*.mid plus tests/data/chorales/note_counts.csv, the
per-track note counts read back with mido. mido is independent of the C++
parser, so the CSV serves as its cross-check oracle.

Usage: python3 tools/data/export_chorales.py [out_dir] [count]
"""

import csv
import sys
from pathlib import Path

import mido
from music21 import corpus

TPQ = 480
BARS = 12
TEMPO_US = 500000  # 120 bpm


def segment_notes(part, bars):
    """(pitch, start_tick, end_tick) for measures 1..bars of a tie-stripped part."""
    part = part.stripTies()
    measures = list(part.getElementsByClass("Measure"))
    measures = [m for m in measures if 1 <= m.number <= bars]
    if len(measures) != bars:
        return None
    origin = measures[0].offset
    limit = BARS * 4
    out = []
    for m in measures:
        for n in m.recurse().notes:
            if n.quarterLength <= 0:
                continue
            start = float(m.offset - origin + n.offset)
            end = min(start + float(n.quarterLength), limit)
            for p in n.pitches:
                out.append((p.midi, round(start * TPQ), round(end * TPQ)))
    return out


def track_messages(notes, channel, use_note_off):
    events = []
    for pitch, start, end in notes:
        events.append((start, 1, pitch))
        events.append((end, 0, pitch))
    events.sort()
    msgs, now = [], 0
    for tick, kind, pitch in events:
        delta = tick - now
        now = tick
        if kind == 1:
            msgs.append(mido.Message("note_on", channel=channel, note=pitch, velocity=80, time=delta))
        elif use_note_off:
            msgs.append(mido.Message("note_off", channel=channel, note=pitch, velocity=64, time=delta))
        else:
            msgs.append(mido.Message("note_on", channel=channel, note=pitch, velocity=0, time=delta))
    return msgs


def conductor():
    return [
        mido.MetaMessage("set_tempo", tempo=TEMPO_US, time=0),
        mido.MetaMessage("time_signature", numerator=4, denominator=4, time=0),
    ]


def main():
    out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "tests/data/chorales")
    count = int(sys.argv[2]) if len(sys.argv) > 2 else 24
    out_dir.mkdir(parents=True, exist_ok=True)

    written = []
    for path in corpus.getComposer("bach"):
        if len(written) >= count:
            break
        if not str(path).endswith(".mxl"):
            continue
        score = corpus.parse(path)
        if len(score.parts) != 4:
            continue
        sigs = list(score.recurse().getElementsByClass("TimeSignature"))
        if not sigs or sigs[0].ratioString != "4/4":
            continue
        parts = [segment_notes(p, BARS) for p in score.parts]
        if any(p is None or not p for p in parts):
            continue

        name = path.name.replace(".mxl", "").replace(".", "_")
        mid = mido.MidiFile(ticks_per_beat=TPQ)
        # Every fourth file is format 0 with channels carrying the voices.
        if len(written) % 4 == 3:
            mid.type = 0
            merged = mido.MidiTrack(conductor())
            abs_events = []
            for ch, notes in enumerate(parts):
                t = 0
                for msg in track_messages(notes, ch, use_note_off=False):
                    t += msg.time
                    abs_events.append((t, ch, msg))
            abs_events.sort(key=lambda e: (e[0], e[1]))
            now = 0
            for t, _, msg in abs_events:
                merged.append(msg.copy(time=t - now))
                now = t
            mid.tracks.append(merged)
        else:
            mid.type = 1
            mid.tracks.append(mido.MidiTrack(conductor()))
            for ch, notes in enumerate(parts):
                mid.tracks.append(mido.MidiTrack(track_messages(notes, ch, use_note_off=(ch % 2 == 0))))
        mid.save(out_dir / f"{name}.mid")
        written.append(name)

    with open(out_dir / "note_counts.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "format", "track0", "track1", "track2", "track3"])
        for name in written:
            mid = mido.MidiFile(out_dir / f"{name}.mid")
            counts = [0, 0, 0, 0]
            for track in mid.tracks:
                for msg in track:
                    if msg.type == "note_on" and msg.velocity > 0:
                        counts[msg.channel] += 1
            w.writerow([f"{name}.mid", mid.type] + counts)
    print(f"wrote {len(written)} files to {out_dir}")


if __name__ == "__main__":
    main()
