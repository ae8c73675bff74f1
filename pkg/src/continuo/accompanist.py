"""Expressive accompaniment: encoding the soloist, decoding the response.

The encoder turns each aligned soloist onset into expressive parameters:
smoothed MIDI velocity, beat period (performed IOI over score IOI), a
log2 articulation ratio comparing performed durations with the notated
duration at the current tempo, and per-note micro-timing offsets from the
chord onset. The decoder maps those parameters onto accompaniment notes
relative to an anchor (the tempo model's predicted next onset during live
play): onsets extrapolate linearly at the beat period, durations invert
the articulation ratio, velocities scale the smoothed soloist velocity by
a balance factor and, when a reference accompaniment performance is
available, by that note's share of the reference dynamics.

The scheduler owns the pending-event queue: every tempo update may re-time
events still at least the re-timing horizon in the future; a note-on that
has fired is never retracted; events that come in late fire immediately
and are counted.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .midi_io import NOTE_OFF, NOTE_ON, EventSink, MidiEvent
from .score import ACCOMPANIMENT, ReferencePerformance, Score, ScoreChord, part_chords

MIN_DURATION = 0.010
DEFAULT_BALANCE = 0.8
DEFAULT_VELOCITY_EMA = 0.7
DEFAULT_RETIME_HORIZON = 0.020


@dataclass(frozen=True)
class MatchedNote:
    """A performed note matched to a score note at an aligned onset."""

    note_id: str
    pitch: int
    onset_sec: float
    velocity: int
    duration_sec: float | None  # None while the note is still sounding
    duration_beats: float = 1.0


@dataclass(frozen=True)
class AlignedOnset:
    """One soloist onset the follower has matched to the score."""

    perf_onset_sec: float
    score_onset_beats: float
    perf_ioi: float | None  # seconds since the previous aligned onset
    score_ioi: float | None  # beats spanned by perf_ioi
    notes: tuple[MatchedNote, ...] = ()


@dataclass(frozen=True)
class ExpressiveParams:
    velocity: float  # smoothed chord-mean MIDI velocity, [1, 127]
    beat_period: float  # sec/beat
    articulation: float  # log2(performed / notated-at-tempo)
    microtiming: Mapping[str, float] = field(default_factory=dict)  # note id -> sec offset


@dataclass(frozen=True)
class AccompanimentEvent:
    pitch: int
    onset_sec: float
    duration_sec: float
    velocity: int
    source_note_id: str


def encode_soloist(
    onset: AlignedOnset,
    prev: ExpressiveParams | None,
    initial_beat_period: float,
    velocity_ema: float = DEFAULT_VELOCITY_EMA,
) -> ExpressiveParams:
    """Expressive parameters for one aligned soloist onset.

    Still-sounding notes (unknown duration) are excluded from the
    articulation average; when nothing has completed, the previous
    articulation carries over.
    """
    if onset.perf_ioi is not None and onset.score_ioi:
        b = onset.perf_ioi / onset.score_ioi
    elif prev is not None:
        b = prev.beat_period
    else:
        b = initial_beat_period

    ratios = [
        math.log2(n.duration_sec / (n.duration_beats * b))
        for n in onset.notes
        if n.duration_sec is not None and n.duration_beats > 0
    ]
    if ratios:
        articulation = sum(ratios) / len(ratios)
    else:
        articulation = prev.articulation if prev is not None else 0.0

    if onset.notes:
        chord_mean = sum(n.velocity for n in onset.notes) / len(onset.notes)
        if prev is None:
            velocity = chord_mean
        else:
            velocity = velocity_ema * prev.velocity + (1.0 - velocity_ema) * chord_mean
    else:
        velocity = prev.velocity if prev is not None else 64.0

    micro = {n.note_id: n.onset_sec - onset.perf_onset_sec for n in onset.notes}
    return ExpressiveParams(
        velocity=min(max(velocity, 1.0), 127.0),
        beat_period=b,
        articulation=articulation,
        microtiming=micro,
    )


@dataclass(frozen=True)
class ReferenceNoteStyle:
    microtiming: float  # onset offset from its chord (sec)
    velocity_ratio: float  # note velocity / mean reference velocity


def reference_accompaniment_map(
    score: Score, reference: ReferencePerformance
) -> dict[str, ReferenceNoteStyle]:
    """Per-note micro-timing and dynamics from a reference accompaniment.

    Reference notes are matched to accompaniment score notes by pitch
    within the chord nearest each aligned onset.
    """
    chords = part_chords(score, ACCOMPANIMENT)
    mean_vel = sum(n.velocity for n in reference.notes) / max(len(reference.notes), 1)
    style: dict[str, ReferenceNoteStyle] = {}
    pool = list(reference.notes)
    for chord in chords:
        chord_time = reference.perf_time_at(chord.onset_beats)
        for note in chord.notes:
            best = None
            for perf in pool:
                if perf.pitch != note.pitch:
                    continue
                gap = abs(perf.onset_sec - chord_time)
                if best is None or gap < best[0]:
                    best = (gap, perf)
            if best is not None and best[0] < 0.5:
                pool.remove(best[1])
                style[note.note_id] = ReferenceNoteStyle(
                    microtiming=best[1].onset_sec - chord_time,
                    velocity_ratio=best[1].velocity / mean_vel if mean_vel else 1.0,
                )
    return style


def decode_accompaniment(
    params: ExpressiveParams,
    chords: Sequence[ScoreChord],
    anchor_score_beats: float,
    anchor_time_sec: float,
    balance: float = DEFAULT_BALANCE,
    reference_style: Mapping[str, ReferenceNoteStyle] | None = None,
) -> list[AccompanimentEvent]:
    """Render accompaniment chords relative to an anchor.

    Onsets extrapolate linearly at the beat period from the anchor;
    durations are 2^articulation * notated duration * beat period
    (floored at 10 ms); velocities are balance * soloist velocity, shaped
    per note by the reference dynamics when available, clamped to [1,127].
    """
    b = params.beat_period
    events = []
    for chord in chords:
        chord_time = anchor_time_sec + (chord.onset_beats - anchor_score_beats) * b
        for note in chord.notes:
            style = reference_style.get(note.note_id) if reference_style else None
            micro = params.microtiming.get(note.note_id)
            if micro is None:
                micro = style.microtiming if style else 0.0
            ratio = style.velocity_ratio if style else 1.0
            vel = int(balance * params.velocity * ratio + 0.5)
            duration = (2.0**params.articulation) * float(note.duration_beats) * b
            events.append(
                AccompanimentEvent(
                    pitch=note.pitch,
                    onset_sec=chord_time + micro,
                    duration_sec=max(duration, MIN_DURATION),
                    velocity=min(max(vel, 1), 127),
                    source_note_id=note.note_id,
                )
            )
    return events


class Scheduler:
    """Pending-queue between the decoder and the MIDI sink.

    submit() inserts or re-times events; dispatch_until() fires note-ons
    and note-offs in time order up to a clock value. Late events fire
    immediately (counted); fired events are never moved.
    """

    def __init__(
        self,
        sink: EventSink,
        retime_horizon: float = DEFAULT_RETIME_HORIZON,
        latency: float = 0.0,
    ):
        self.sink = sink
        self.horizon = retime_horizon
        self.latency = latency
        self.pending: dict[str, AccompanimentEvent] = {}
        self.fired: set[str] = set()
        self.cancelled: set[str] = set()
        self.late_count = 0
        self.skipped_count = 0
        self._offs: list[tuple[float, int, str]] = []  # (time, pitch, id) heap
        self._now = float("-inf")

    def submit(self, events: Sequence[AccompanimentEvent], now: float):
        """Insert new events; re-time pending ones still beyond the horizon."""
        for ev in events:
            key = ev.source_note_id
            if key in self.fired or key in self.cancelled:
                continue
            existing = self.pending.get(key)
            if existing is not None and existing.onset_sec < now + self.horizon:
                continue  # too close to its note-on to move
            self.pending[key] = ev

    def cancel_before(self, ids: Sequence[str]):
        """Drop unfired events (forward-jump skip); counted, never replayed."""
        for key in ids:
            if key in self.pending:
                del self.pending[key]
                self.cancelled.add(key)
                self.skipped_count += 1

    def dispatch_until(self, t: float):
        """Fire everything scheduled up to time t, offs interleaved in order."""
        while True:
            next_on = min(self.pending.values(), key=lambda e: (e.onset_sec, e.pitch), default=None)
            has_on = next_on is not None and next_on.onset_sec - self.latency <= t
            has_off = bool(self._offs) and self._offs[0][0] - self.latency <= t
            if not has_on and not has_off:
                break
            on_time = next_on.onset_sec if next_on is not None else float("inf")
            if has_off and (not has_on or self._offs[0][0] <= on_time):
                off_t, pitch, _ = heapq.heappop(self._offs)
                emit_t = max(off_t, self._now)
                self._now = emit_t
                self.sink.send(MidiEvent(NOTE_OFF, pitch, 0, emit_t - self.latency))
            else:
                ev = next_on
                del self.pending[ev.source_note_id]
                self.fired.add(ev.source_note_id)
                emit_t = ev.onset_sec
                if emit_t < self._now:
                    emit_t = self._now
                    self.late_count += 1
                self._now = emit_t
                self.sink.send(MidiEvent(NOTE_ON, ev.pitch, ev.velocity, emit_t - self.latency))
                heapq.heappush(self._offs, (emit_t + ev.duration_sec, ev.pitch, ev.source_note_id))
        self._now = max(self._now, t)

    def flush(self):
        """Fire everything still pending, then close any open notes."""
        end = self._now
        if self.pending:
            end = max(end, max(e.onset_sec + e.duration_sec for e in self.pending.values()))
        if self._offs:
            end = max(end, max(t for t, _, _ in self._offs))
        self.dispatch_until(end + 1e-9)
        self.sink.all_notes_off(max(end, self._now))
