"""Synthetic desk-scale corpus: scores, timing curves, performances.

Substitutes for unavailable recorded corpora. Every generator is
deterministic given its arguments; randomness always flows through a
numpy Generator seeded by the caller (PCG64 via np.random.default_rng).
The frozen corpus constants at the bottom version the pieces used by the
evaluation suite.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .score import (
    ACCOMPANIMENT,
    SOLO,
    PerformedNote,
    ReferencePerformance,
    Score,
    ScoreNote,
    build_onset_grid,
)

_SCALE = (60, 62, 64, 65, 67, 69, 71, 72)  # C major walk
_CHORD = ((48, 52, 55), (45, 48, 52), (50, 53, 57), (43, 47, 50))


def melody_score(
    n_onsets: int,
    ioi_beats: float | Sequence[float] = 0.5,
    bpm: float = 120.0,
    accompaniment: bool = False,
    accomp_every_beats: float = 1.0,
) -> Score:
    """A scale-walk solo line, optionally with block-chord accompaniment.

    ioi_beats may be a single value or a pattern cycled across onsets.
    """
    if isinstance(ioi_beats, (int, float, str, Fraction)):
        pattern = [Fraction(ioi_beats).limit_denominator(64)]
    else:
        pattern = [Fraction(v).limit_denominator(64) for v in ioi_beats]
    notes = []
    onset = Fraction(0)
    for i in range(n_onsets):
        ioi = pattern[i % len(pattern)]
        dur = ioi if i < n_onsets - 1 else pattern[0]
        notes.append(
            ScoreNote(f"s{i}", _SCALE[i % len(_SCALE)], onset, max(dur, Fraction(1, 64)), SOLO)
        )
        onset += ioi
    total = onset
    if accompaniment:
        step = Fraction(accomp_every_beats).limit_denominator(64)
        beat = Fraction(0)
        k = 0
        while beat < total:
            for j, pitch in enumerate(_CHORD[k % len(_CHORD)]):
                notes.append(ScoreNote(f"a{k}_{j}", pitch, beat, step, ACCOMPANIMENT))
            beat += step
            k += 1
    return Score(notes=tuple(notes), initial_bpm=bpm)


# -- timing curves: score beats -> performance seconds -----------------------


def constant_tempo(beat_period: float, start: float = 0.0) -> Callable[[float], float]:
    return lambda s: start + beat_period * s


def ritardando(b_start: float, b_end: float, total_beats: float, start: float = 0.0):
    """Beat period rising linearly from b_start to b_end over the piece."""

    def curve(s: float) -> float:
        return start + b_start * s + (b_end - b_start) * s * s / (2.0 * total_beats)

    return curve


def rubato(beat_period: float, depth: float, period_beats: float, start: float = 0.0):
    """Sinusoidal tempo sway: b(s) = beat_period * (1 + depth sin(2pi s / P))."""
    if not 0 <= depth < 1:
        raise ValueError("rubato depth must be in [0, 1)")

    def curve(s: float) -> float:
        phase = 2.0 * math.pi * s / period_beats
        return start + beat_period * (s + depth * period_beats / (2.0 * math.pi) * (1.0 - math.cos(phase)))

    return curve


def repair_monotone(times: np.ndarray, min_gap: float = 0.001) -> np.ndarray:
    out = times.copy()
    for i in range(1, len(out)):
        if out[i] < out[i - 1] + min_gap:
            out[i] = out[i - 1] + min_gap
    return out


def perform_part(
    score: Score,
    part: str,
    time_map: Callable[[float], float],
    articulation: float = 0.9,
    velocity: int = 64,
    jitter_ms: float = 0.0,
    rng: np.random.Generator | None = None,
    min_event_sec: float = 0.0,
) -> ReferencePerformance:
    """Render one part through a timing curve.

    Chord members share their onset; durations follow the local tempo
    scaled by the articulation fraction; optional Gaussian onset jitter is
    applied per chord and monotonicity repaired. min_event_sec imposes a
    motor limit: consecutive onsets never land closer than this, the way a
    player squeezes ornaments at a roughly fixed rate no matter what the
    notation demands.
    """
    grid = build_onset_grid(score, part)
    times = np.array([time_map(float(s)) for s in grid.onsets])
    if min_event_sec > 0:
        times = repair_monotone(times, min_gap=min_event_sec)
    if jitter_ms > 0:
        if rng is None:
            raise ValueError("jitter needs an rng")
        times = times + rng.normal(0.0, jitter_ms / 1000.0, size=len(times))
        times = repair_monotone(np.maximum(times, 0.0))
    by_onset = {float(o): t for o, t in zip(grid.onsets, times)}
    notes = []
    for n in score.part_notes(part):
        s0 = float(n.onset_beats)
        onset = by_onset[s0]
        dur = max((time_map(s0 + float(n.duration_beats)) - time_map(s0)) * articulation, 0.01)
        notes.append(PerformedNote(n.pitch, onset, dur, velocity))
    notes.sort(key=lambda n: (n.onset_sec, n.pitch))
    alignment = tuple((float(o), float(t)) for o, t in zip(grid.onsets, times))
    return ReferencePerformance(notes=tuple(notes), alignment=alignment)


def aligned_onsets(perf: ReferencePerformance) -> list[tuple[float, float]]:
    """(score onset beats, performed time sec) pairs of a performance."""
    return [(float(s), float(t)) for s, t in perf.alignment]


# -- frozen corpus for the evaluation suite ----------------------------------
#
# The tempo-model comparison runs on an expressive piece whose character
# follows the hard cases of real ornamented repertoire: written-out
# ornament runs (very short notated IOIs squeezed against a motor limit,
# which makes the raw IOI ratio spike), a sinusoidal tempo sway, and
# per-onset timing jitter.

EXPRESSIVE_SEED = 9021
EXPRESSIVE_IOI_PATTERN = (
    1, "1/32", "1/32", "1/32", 1, "1/2", "1/32", "1/32", 1, "1/2", "1/32", 1,
)
EXPRESSIVE_N_ONSETS = 121
EXPRESSIVE_BEAT_PERIOD = 0.5
EXPRESSIVE_RUBATO_DEPTH = 0.3
EXPRESSIVE_RUBATO_PERIOD = 12.0
EXPRESSIVE_JITTER_MS = 10.0
EXPRESSIVE_MOTOR_FLOOR_SEC = 0.06

ROBUSTNESS_SEED = 4177
ROBUSTNESS_N_ONSETS = 200
ROBUSTNESS_IOI = 0.5
ROBUSTNESS_BEAT_PERIOD = 0.35


def expressive_piece() -> tuple[Score, ReferencePerformance]:
    """The frozen expressive solo piece for the tempo-model comparison."""
    score = melody_score(
        EXPRESSIVE_N_ONSETS, ioi_beats=[Fraction(v) for v in EXPRESSIVE_IOI_PATTERN]
    )
    rng = np.random.default_rng(EXPRESSIVE_SEED)
    curve = rubato(
        EXPRESSIVE_BEAT_PERIOD, EXPRESSIVE_RUBATO_DEPTH, EXPRESSIVE_RUBATO_PERIOD
    )
    perf = perform_part(
        score,
        SOLO,
        curve,
        jitter_ms=EXPRESSIVE_JITTER_MS,
        rng=rng,
        min_event_sec=EXPRESSIVE_MOTOR_FLOOR_SEC,
    )
    return score, perf


def robustness_piece() -> tuple[Score, ReferencePerformance]:
    """The frozen constant-IOI piece for the follower robustness run."""
    score = melody_score(ROBUSTNESS_N_ONSETS, ioi_beats=ROBUSTNESS_IOI)
    curve = rubato(ROBUSTNESS_BEAT_PERIOD, 0.1, 24.0)
    perf = perform_part(score, SOLO, curve)
    return score, perf
