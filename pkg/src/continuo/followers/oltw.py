"""Online time-warping score follower.

Aligns the incoming 10 ms window stream against a reference performance
that has itself been aligned to the score. The alignment is a banded
dynamic-programming sweep: each incoming frame extends the accumulated
cost matrix by one row inside a sliding band over the reference, and the
reference pointer advances toward the cheapest band cell, at most
step_size frames per input frame. Frames are binary pitch-activity
vectors (a pitch is active from its note-on until its note-off, capped at
2 s); the local distance is the Jaccard distance between pitch sets, with
two silent frames counting as a perfect match.

An ensemble of followers, one per reference performance, is aggregated by
the arithmetic mean of the member score positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..midi_io import InputWindow
from ..score import ReferencePerformance
from .base import ScorePositionEstimate

HOP = 0.010
N_PITCHES = 128


class OltwError(ValueError):
    pass


@dataclass(frozen=True)
class OltwConfig:
    window_sec: float = 2.0  # how much reference context the band covers
    step_sec: float = 0.1  # maximum reference advance per input frame
    hop_sec: float = HOP

    @property
    def window_frames(self) -> int:
        return max(int(round(self.window_sec / self.hop_sec)), 2)

    @property
    def step_frames(self) -> int:
        return max(int(round(self.step_sec / self.hop_sec)), 1)


@dataclass(frozen=True)
class FrameSequence:
    """Reference performance as pitch-activity frames plus a frame→score map."""

    frames: np.ndarray  # (n_frames, 128) bool
    anchor_frames: np.ndarray  # frame indices of the aligned score onsets
    anchor_scores: np.ndarray  # score onsets (beats) at those frames

    def __len__(self) -> int:
        return len(self.frames)

    def position_at(self, frame_index: float) -> float:
        """Score position of a frame; linear between aligned onsets,
        constant beyond the ends."""
        return float(np.interp(frame_index, self.anchor_frames, self.anchor_scores))


def featurize_reference(ref: ReferencePerformance, hop: float = HOP) -> FrameSequence:
    """Binary pitch-activity frames at the window hop, sustain included.

    Trailing silence is trimmed to a single frame.
    """
    if not ref.notes:
        raise OltwError("empty reference performance")
    end = max(n.onset_sec + n.duration_sec for n in ref.notes)
    n_frames = max(int(math.ceil(end / hop - 1e-9)), 1)
    frames = np.zeros((n_frames, N_PITCHES), dtype=bool)
    for note in ref.notes:
        k0 = int(note.onset_sec / hop + 1e-9)
        k1 = int(math.ceil((note.onset_sec + note.duration_sec) / hop - 1e-9))
        frames[k0 : max(k1, k0 + 1), note.pitch] = True

    last_active = int(np.nonzero(frames.any(axis=1))[0][-1]) if frames.any() else 0
    frames = frames[: min(last_active + 2, n_frames)]

    anchor_frames = []
    anchor_scores = []
    for score_onset, perf_time in ref.alignment:
        f = min(max(int(perf_time / hop + 1e-9), 0), len(frames) - 1)
        if anchor_frames and f <= anchor_frames[-1]:
            anchor_scores[-1] = score_onset  # two onsets inside one frame
            continue
        anchor_frames.append(f)
        anchor_scores.append(score_onset)
    return FrameSequence(
        frames=frames,
        anchor_frames=np.array(anchor_frames, dtype=float),
        anchor_scores=np.array(anchor_scores, dtype=float),
    )


@dataclass
class OltwState:
    """Mutable banded-DP state for one reference."""

    ref: FrameSequence
    config: OltwConfig
    current_ref_index: int = 0
    band_start: int = 0
    cost_row: np.ndarray | None = None  # accumulated costs of the previous row
    len_row: np.ndarray | None = None  # path lengths of the previous row
    input_count: int = 0
    started: bool = False
    last_position: float = float("-inf")
    end_of_reference: bool = False
    last_confidence: float = 1.0

    @property
    def band_width(self) -> int:
        return min(self.config.window_frames, len(self.ref))


def oltw_init(ref: FrameSequence, config: OltwConfig | None = None) -> OltwState:
    state = OltwState(ref=ref, config=config or OltwConfig())
    state.last_position = state.ref.position_at(0)
    return state


def _frame_vector(window: InputWindow) -> np.ndarray:
    v = np.zeros(N_PITCHES, dtype=bool)
    for p in window.active_pitches:
        v[p] = True
    for p, _ in window.pitches:
        v[p] = True
    return v


def _band_distances(state: OltwState, frame: np.ndarray) -> np.ndarray:
    """Jaccard distance of the input frame to each reference frame in the band."""
    band = state.ref.frames[state.band_start : state.band_start + state.band_width]
    inter = (band & frame).sum(axis=1)
    union = (band | frame).sum(axis=1)
    d = 1.0 - inter / np.maximum(union, 1)
    d[union == 0] = 0.0  # silence matches silence
    return d


def oltw_step(state: OltwState, window: InputWindow) -> tuple[OltwState, ScorePositionEstimate]:
    """Consume one window and report the current score position.

    Leading empty windows (before the soloist has played anything) leave
    the state untouched and hold the estimate at the first onset; empty
    windows after that are regular silent frames.
    """
    frame = _frame_vector(window)
    if not state.started:
        if not frame.any():
            return state, ScorePositionEstimate(
                position_beats=state.ref.position_at(0),
                confidence=1.0,
                timestamp_sec=window.window_end_sec,
            )
        state.started = True

    m = len(state.ref)
    bw = state.band_width
    step = state.config.step_frames
    c = state.current_ref_index

    # slide the band toward the current pointer (forward only)
    j0 = min(max(c - bw // 2, state.band_start), max(m - bw, 0))
    if state.cost_row is not None and j0 > state.band_start:
        shift = j0 - state.band_start
        row = np.full(bw, np.inf)
        lens = np.ones(bw)
        row[: bw - shift] = state.cost_row[shift:]
        lens[: bw - shift] = state.len_row[shift:]
        state.cost_row, state.len_row = row, lens
    state.band_start = j0

    d = _band_distances(state, frame)
    cost = np.empty(bw)
    length = np.empty(bw)
    if state.cost_row is None:
        # first row: paths can only run along the reference
        cost[:] = np.cumsum(d)
        length[:] = np.arange(1, bw + 1)
    else:
        prev_c, prev_l = state.cost_row, state.len_row
        run_c, run_l = np.inf, 1.0
        for j in range(bw):
            diag = prev_c[j - 1] if j else np.inf
            diag_l = prev_l[j - 1] if j else 1.0
            up, up_l = prev_c[j], prev_l[j]
            best, best_l = diag, diag_l
            if up < best:
                best, best_l = up, up_l
            if run_c < best:
                best, best_l = run_c, run_l
            cost[j] = d[j] + best
            length[j] = 1.0 + best_l
            run_c, run_l = cost[j], length[j]
    state.cost_row = cost
    state.len_row = length
    state.input_count += 1

    # the advance decision is local: only cells up to step_frames ahead
    # compete, so a distant cheap region cannot trigger repeated maximum
    # jumps (the runaway failure mode); paths through the rest of the band
    # still accumulate normally and pull the pointer over time
    lo = c - j0
    hi = min(lo + step, bw - 1)
    norm = cost[lo : hi + 1] / length[lo : hi + 1]
    best = norm.min()
    candidates = c + np.nonzero(norm == best)[0]
    forward = candidates[candidates > c]
    target = int(forward[0]) if len(forward) else c
    c = min(max(c, target), c + step, m - 1)
    state.current_ref_index = c
    state.end_of_reference = c >= m - 1

    position = max(state.ref.position_at(c), state.last_position)
    state.last_position = position
    state.last_confidence = 1.0 / (1.0 + float(cost[c - j0] / length[c - j0]))
    return state, ScorePositionEstimate(
        position_beats=position,
        confidence=state.last_confidence,
        timestamp_sec=window.window_end_sec,
        end_of_reference=state.end_of_reference,
    )


def ensemble_step(followers: Sequence[OltwState], window: InputWindow) -> ScorePositionEstimate:
    """Step every follower on the same window; mean of their positions.

    Member positions are individually non-decreasing, so the mean is too.
    A follower at end-of-reference keeps contributing its pinned position.
    """
    if not followers:
        raise OltwError("ensemble needs at least one follower")
    estimates = [oltw_step(f, window)[1] for f in followers]
    return ScorePositionEstimate(
        position_beats=float(np.mean([e.position_beats for e in estimates])),
        confidence=float(np.mean([e.confidence for e in estimates])),
        timestamp_sec=window.window_end_sec,
        end_of_reference=all(e.end_of_reference for e in estimates),
    )


class OltwEnsemble:
    """Pipeline wrapper around one or more warping followers."""

    def __init__(self, references: Sequence[ReferencePerformance], config: OltwConfig | None = None):
        if not references:
            raise OltwError("need at least one reference performance")
        self.states = [oltw_init(featurize_reference(r), config) for r in references]

    def process(self, window: InputWindow) -> ScorePositionEstimate:
        return ensemble_step(self.states, window)
