"""Scores, performances, and the 10 ms windowing front-end.

Builds a small duet score, renders a solo performance of it, and walks
the performance through the window assembler the way the live engine
sees it arriving.

Run:  python demos/01_scores_and_windows.py
"""

from continuo.evaluate import events_from_performance
from continuo.midi_io import window_events
from continuo.score import SOLO, build_onset_grid, parse_score, score_to_document
from continuo.synthetic import constant_tempo, melody_score, perform_part

# a scale-walk solo over block chords, 120 bpm
score = melody_score(8, ioi_beats=0.5, accompaniment=True)
print("score document (first 400 chars):")
print(score_to_document(score)[:400], "...\n")

# the document round-trips through the parser
reparsed = parse_score(score_to_document(score), duet=True)
assert reparsed.notes == score.notes

grid = build_onset_grid(score, SOLO)
print(f"solo onset grid: {len(grid)} onsets, IOIs {set(map(float, grid.iois))} beats")

# render the solo at a steady 0.5 s/beat and window the event stream
perf = perform_part(score, SOLO, constant_tempo(0.5), articulation=0.9)
events = events_from_performance(perf)
windows = window_events(events)

print(f"\n{len(events)} MIDI events -> {len(windows)} windows of 10 ms")
for w in windows:
    if not w.empty:
        pitches = ", ".join(str(p) for p, _ in w.pitches)
        print(f"  window ending {w.window_end_sec:6.3f}s: note-ons [{pitches}], "
              f"sounding {sorted(w.active_pitches)}")
