"""Reference quantization of the chorale corpus, written against mido only.

For every file: grid length at 16th resolution (padded to 4/4 bars), active cells per
voice, and distinct per-step pitch sets per voice (plus the rest entry). Output is
frozen into tests/data/chorales/roll_oracle.csv.
"""
import csv
import sys
from collections import defaultdict, deque
from fractions import Fraction
from pathlib import Path

import mido

RES = 16


def voices(mf):
    tracks = []
    for tr in mf.tracks:
        now = 0
        events = []
        for msg in tr:
            now += msg.time
            events.append((now, msg))
        tracks.append(events)
    end = max(ev[-1][0] if ev else 0 for ev in tracks)
    if mf.type == 0:
        by_channel = defaultdict(list)
        for now, msg in tracks[0]:
            if hasattr(msg, "channel"):
                by_channel[msg.channel].append((now, msg))
        groups = [by_channel[c] for c in sorted(by_channel)]
    else:
        groups = tracks[1:] if len(tracks) > 1 else tracks
    out = []
    for events in groups:
        pending = defaultdict(deque)
        notes = []
        for now, msg in events:
            if msg.type == "note_on" and msg.velocity > 0:
                pending[(msg.channel, msg.note)].append(now)
            elif msg.type in ("note_off", "note_on"):
                q = pending[(msg.channel, msg.note)]
                if q:
                    start = q.popleft()
                    if now > start:
                        notes.append((msg.note, start, now))
        out.append(notes)
    return out, end


def cell(tick, tpq):
    return int(Fraction(tick * RES, 4 * tpq) + Fraction(1, 2))


def main(folder):
    folder = Path(folder)
    rows = []
    for path in sorted(folder.glob("*.mid")):
        mf = mido.MidiFile(path)
        tpq = mf.ticks_per_beat
        vs, end = voices(mf)
        steps = cell(end, tpq)
        spans = []
        for notes in vs:
            sp = []
            for pitch, s, e in notes:
                a = cell(s, tpq)
                b = max(cell(e, tpq), a + 1)
                sp.append((pitch, a, b))
                steps = max(steps, b)
            spans.append(sp)
        steps = -(-steps // RES) * RES
        cells, dicts = [], []
        for sp in spans:
            grid = [set() for _ in range(steps)]
            for pitch, a, b in sp:
                for t in range(a, b):
                    grid[t].add(pitch)
            cells.append(sum(len(g) for g in grid))
            dicts.append(len({frozenset(g) for g in grid if g}) + 1)
        rows.append([path.name, steps] + cells + dicts)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["file", "steps", "cells0", "cells1", "cells2", "cells3", "dict0", "dict1", "dict2", "dict3"])
    w.writerows(rows)


if __name__ == "__main__":
    main(sys.argv[1])
