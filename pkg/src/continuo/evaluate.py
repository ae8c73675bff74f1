"""Desk-scale evaluation harness.

Covers the two experiment families: follower asynchrony against perturbed
reference performances, and tempo-model onset/tempo prediction with
exhaustive grid search. Ground-truth tempo is the instantaneous spanned
ratio tau_{n+1} = (o_{n+1} - o_n) / (s_{n+1} - s_n).

All randomness flows through numpy's default Generator (PCG64), so a
fixed seed reproduces a run bit-for-bit on any platform.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .followers.hmm import HmmConfig, HmmFollower
from .followers.oltw import OltwConfig, OltwEnsemble
from .midi_io import NOTE_OFF, NOTE_ON, MidiEvent
from .pipeline import follow_performance
from .score import PerformedNote, ReferencePerformance, Score
from .tempo import (
    TempoParams,
    TempoObservation,
    VARIANTS,
    init_tempo_state,
    step_tempo,
)

WINDOW = 0.010


class EvalError(ValueError):
    pass


# -- asynchrony metrics -------------------------------------------------------


@dataclass(frozen=True)
class AsynchronyReport:
    asynchronies_ms: tuple[float, ...]
    median_abs_ms: float
    pct_le_25: float
    pct_le_50: float
    pct_le_100: float


def asynchrony_metrics(
    estimated: Sequence[tuple[float, float]], truth: Sequence[tuple[float, float]]
) -> AsynchronyReport:
    """Per-onset |estimated - true| time, with the summary used in reports.

    Both inputs are (score onset beats, performed time sec) lists over the
    same score-onset key set.
    """
    est = sorted(estimated)
    tru = sorted(truth)
    if len(est) != len(tru) or any(abs(a[0] - b[0]) > 1e-9 for a, b in zip(est, tru)):
        raise EvalError("estimated and truth cover different score onsets")
    asyncs = tuple(abs(a[1] - b[1]) * 1000.0 for a, b in zip(est, tru))
    arr = np.array(asyncs)
    return AsynchronyReport(
        asynchronies_ms=asyncs,
        median_abs_ms=float(np.median(arr)),
        pct_le_25=float(np.mean(arr <= 25.0) * 100.0),
        pct_le_50=float(np.mean(arr <= 50.0) * 100.0),
        pct_le_100=float(np.mean(arr <= 100.0) * 100.0),
    )


# -- perturbed reference generation ------------------------------------------


def perturb_performance(
    perf: ReferencePerformance,
    sigma_ms: float = 100.0,
    count: int = 5,
    seed: int = 0,
) -> list[ReferencePerformance]:
    """Synthetic repeat performances: Gaussian noise on every note's onset
    and offset time.

    Each note belongs to the aligned chord nearest its onset; the chord's
    alignment time moves by the mean of its members' onset shifts, then
    monotonicity is repaired with a 1 ms minimum gap. With sigma 0 the
    output equals the input exactly.
    """
    if sigma_ms < 0:
        raise EvalError("sigma_ms must be >= 0")
    rng = np.random.default_rng(seed)
    sigma = sigma_ms / 1000.0
    align_times = np.array([t for _, t in perf.alignment])
    chord_of = [int(np.argmin(np.abs(align_times - n.onset_sec))) for n in perf.notes]

    out = []
    for _ in range(count):
        deltas = np.zeros(len(align_times))
        counts = np.zeros(len(align_times))
        new_notes = []
        for note, chord in zip(perf.notes, chord_of):
            d_on = rng.normal(0.0, sigma) if sigma else 0.0
            d_off = rng.normal(0.0, sigma) if sigma else 0.0
            onset = note.onset_sec + d_on
            if onset < 0.0:
                onset = 0.0
                duration = note.onset_sec + note.duration_sec + d_off
            else:
                duration = note.duration_sec + (d_off - d_on)
            new_notes.append(
                PerformedNote(note.pitch, onset, max(duration, 0.010), note.velocity)
            )
            deltas[chord] += onset - note.onset_sec
            counts[chord] += 1
        mean_delta = np.where(counts > 0, deltas / np.maximum(counts, 1), 0.0)
        new_times = align_times + mean_delta
        for i in range(1, len(new_times)):
            if new_times[i] < new_times[i - 1] + 0.001:
                new_times[i] = new_times[i - 1] + 0.001
        new_notes.sort(key=lambda n: (n.onset_sec, n.pitch))
        out.append(
            ReferencePerformance(
                notes=tuple(new_notes),
                alignment=tuple(
                    (s, float(t)) for (s, _), t in zip(perf.alignment, new_times)
                ),
            )
        )
    return out


# -- follower experiment -------------------------------------------------------


def events_from_performance(perf: ReferencePerformance) -> list[MidiEvent]:
    events = []
    for n in perf.notes:
        events.append(MidiEvent(NOTE_ON, n.pitch, n.velocity, n.onset_sec))
        events.append(MidiEvent(NOTE_OFF, n.pitch, 0, n.onset_sec + n.duration_sec))
    events.sort(key=lambda e: (e.timestamp_sec, 0 if e.kind == NOTE_OFF else 1, e.pitch))
    return events


def quantize_to_window(t: float, anchor: float, width: float = WINDOW) -> float:
    """End of the window that contains time t (the chord-onset convention)."""
    k = int((t - anchor) / width + 1e-9)
    return anchor + (k + 1) * width


def run_follower_experiment(
    score: Score,
    test_perf: ReferencePerformance,
    references: Sequence[ReferencePerformance] = (),
    kind: str = "oltw",
    hmm_config: HmmConfig | None = None,
    oltw_config: OltwConfig | None = None,
    initial_bpm: float | None = None,
) -> AsynchronyReport:
    """Replay a test performance through windowing + a follower and score
    the estimated onset times against the aligned truth.

    Truth times are quantized to the same 10 ms window grid the follower
    sees, so the comparison carries no windowing bias. Onsets the follower
    never reached are charged the end-of-stream time.
    """
    events = events_from_performance(test_perf)
    if kind == "oltw":
        if not references:
            raise EvalError("warping follower needs at least one reference")
        follower = OltwEnsemble(references, oltw_config)
    elif kind == "hmm":
        follower = HmmFollower(score, hmm_config, initial_bpm)
    else:
        raise EvalError(f"unknown follower kind {kind!r}")

    crossings = follow_performance(score, events, follower)
    est = {s: t for s, t in crossings}
    anchor = math.floor(events[0].timestamp_sec / WINDOW) * WINDOW
    end_of_stream = quantize_to_window(events[-1].timestamp_sec, anchor)
    estimated = []
    truth = []
    for s, t_true in test_perf.alignment:
        estimated.append((s, est.get(s, end_of_stream)))
        truth.append((s, quantize_to_window(t_true, anchor)))
    return asynchrony_metrics(estimated, truth)


# -- tempo experiment ----------------------------------------------------------


@dataclass(frozen=True)
class TempoErrorReport:
    variant: str
    onset_error_ms: float
    tempo_error_ms_per_beat: float
    params: Mapping[str, float] = field(default_factory=dict)


def run_tempo_experiment(
    aligned: Sequence[tuple[float, float]],
    variant: str,
    params: TempoParams | None = None,
    beat_period: float = 0.5,
    expectation: Callable[[float], float] | None = None,
) -> TempoErrorReport:
    """Feed aligned onsets one by one; average absolute prediction errors.

    At each onset n the model predicts the next onset time and beat
    period; errors are |o_hat_{n+1} - o_{n+1}| in ms and
    |b_{n+1} - tau_{n+1}| in ms/beat against the instantaneous ratio.
    """
    if len(aligned) < 3:
        raise EvalError("need at least three aligned onsets")
    state = init_tempo_state(variant, beat_period=beat_period, params=params, expectation=expectation)
    onset_errors = []
    tempo_errors = []
    for n in range(len(aligned) - 1):
        s_n, t_n = aligned[n]
        s_next, t_next = aligned[n + 1]
        obs = TempoObservation(
            onset_sec=t_n,
            perf_ioi=(t_n - aligned[n - 1][1]) if n else None,
            score_ioi_prev=(s_n - aligned[n - 1][0]) if n else None,
            score_ioi_next=s_next - s_n,
            score_onset_next=s_next,
        )
        state = step_tempo(state, obs)
        onset_errors.append(abs(state.predicted_onset - t_next) * 1000.0)
        tau_next = (t_next - t_n) / (s_next - s_n)
        tempo_errors.append(abs(state.beat_period - tau_next) * 1000.0)
    return TempoErrorReport(
        variant=variant,
        onset_error_ms=float(np.mean(onset_errors)),
        tempo_error_ms_per_beat=float(np.mean(tempo_errors)),
        params={} if params is None else dict(_param_items(variant, params)),
    )


# -- grid search ----------------------------------------------------------------

_ETA_10 = tuple(round(0.1 * i, 10) for i in range(1, 11))
_ETA_8 = tuple(round(0.125 * i, 10) for i in range(1, 9))

DEFAULT_GRIDS: dict[str, dict[str, tuple[float, ...]]] = {
    "reactive": {},
    "moving-average": {"smoothing": _ETA_10},
    "linear": {"eta_onset": _ETA_10, "eta_period": _ETA_10},
    "expectation": {"eta_onset": _ETA_10, "eta_period": _ETA_10},
    "joint": {"eta_onset": _ETA_8, "eta_period": _ETA_8, "eta_anticipation": _ETA_8},
    "kalman": {
        "transition": (0.95, 1.0, 1.05),
        "variance_gain": (0.9, 1.0, 1.1),
        "process_noise": (1e-5, 1e-4, 1e-3),
        "obs_noise": (1e-3, 1e-2, 1e-1, 1.0),
    },
}


def grid_size(grids: Mapping[str, Mapping[str, Sequence[float]]] = DEFAULT_GRIDS) -> int:
    total = 0
    for params in grids.values():
        combos = 1
        for values in params.values():
            combos *= len(values)
        total += combos
    return total


def _param_items(variant: str, params: TempoParams):
    for name in DEFAULT_GRIDS.get(variant, {}):
        yield name, getattr(params, name)


def iter_param_grid(variant: str, grids=DEFAULT_GRIDS):
    """Parameter combinations in lexicographic (name-sorted) order."""
    spec = grids.get(variant, {})
    names = sorted(spec)
    if not names:
        yield TempoParams()
        return
    for combo in itertools.product(*(spec[n] for n in names)):
        yield TempoParams(**dict(zip(names, combo)))


def grid_search(
    aligned: Sequence[tuple[float, float]],
    variants: Sequence[str] = VARIANTS,
    grids: Mapping[str, Mapping[str, Sequence[float]]] = DEFAULT_GRIDS,
    beat_period: float = 0.5,
    expectation: Callable[[float], float] | None = None,
) -> dict[str, TempoErrorReport]:
    """Exhaustive search per variant; best mean onset error wins.

    Disagreement between tempo and onset error, and exact ties, resolve by
    onset error then by lexicographic parameter order (first-seen wins).
    """
    best: dict[str, TempoErrorReport] = {}
    for variant in variants:
        for params in iter_param_grid(variant, grids):
            exp = expectation if variant == "expectation" else None
            report = run_tempo_experiment(aligned, variant, params, beat_period, exp)
            current = best.get(variant)
            if current is None or report.onset_error_ms < current.onset_error_ms:
                best[variant] = report
    return best


# -- report formatting -----------------------------------------------------------


def format_asynchrony_table(rows: Sequence[tuple[str, AsynchronyReport]]) -> str:
    """Aligned-column text in the follower-accuracy table shape."""
    header = f"{'SF':<14}{'Async':>10}{'<=25ms':>10}{'<=50ms':>10}{'<=100ms':>10}"
    lines = [header]
    for label, r in rows:
        lines.append(
            f"{label:<14}{r.median_abs_ms:>10.1f}{r.pct_le_25:>10.1f}"
            f"{r.pct_le_50:>10.1f}{r.pct_le_100:>10.1f}"
        )
    return "\n".join(lines)


def format_tempo_table(reports: Sequence[TempoErrorReport]) -> str:
    """Aligned-column text in the tempo-model comparison shape."""
    header = f"{'Method':<16}{'Onset Error (ms)':>18}{'Tempo Error (ms/beat)':>24}"
    lines = [header]
    for r in reports:
        lines.append(f"{r.variant:<16}{r.onset_error_ms:>18.1f}{r.tempo_error_ms_per_beat:>24.1f}")
    return "\n".join(lines)


def asynchrony_csv(rows: Sequence[tuple[str, AsynchronyReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["follower", "median_abs_ms", "pct_le_25", "pct_le_50", "pct_le_100"])
    for label, r in rows:
        w.writerow([label, f"{r.median_abs_ms:.3f}", f"{r.pct_le_25:.1f}", f"{r.pct_le_50:.1f}", f"{r.pct_le_100:.1f}"])
    return buf.getvalue()


def tempo_csv(reports: Sequence[TempoErrorReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "onset_error_ms", "tempo_error_ms_per_beat", "params"])
    for r in reports:
        params = ";".join(f"{k}={v}" for k, v in r.params.items())
        w.writerow([r.variant, f"{r.onset_error_ms:.3f}", f"{r.tempo_error_ms_per_beat:.3f}", params])
    return buf.getvalue()
