"""The live loop: windows in, follower, tempo model, accompaniment out.

One deterministic pass drives everything: incoming events are windowed,
each window updates the follower, every newly crossed solo onset feeds
the tempo model and the expression encoder, and the decoder (re)schedules
upcoming accompaniment through the scheduler into the sink. Replay mode
runs this loop on an event list under a virtual clock, which makes the
whole pipeline byte-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping

from .accompanist import (
    DEFAULT_BALANCE,
    DEFAULT_RETIME_HORIZON,
    DEFAULT_VELOCITY_EMA,
    AlignedOnset,
    ExpressiveParams,
    MatchedNote,
    ReferenceNoteStyle,
    Scheduler,
    decode_accompaniment,
    encode_soloist,
)
from .midi_io import EventSink, MidiEvent, NoteTracker, WindowAssembler
from .score import ACCOMPANIMENT, SOLO, Score, build_onset_grid, part_chords
from .tempo import TempoObservation, TempoState, step_tempo

DEFAULT_LOOKAHEAD_BEATS = 8.0
DEFAULT_SKIP_CAP = 4


@dataclass
class CrossingRecord:
    """One solo onset as the pipeline consumed it (the per-onset log row)."""

    score_onset_beats: float
    est_time_sec: float
    position_beats: float
    predicted_next_onset: float | None
    beat_period: float
    truth_time_sec: float | None = None

    @property
    def asynchrony_ms(self) -> float | None:
        if self.truth_time_sec is None:
            return None
        return (self.est_time_sec - self.truth_time_sec) * 1000.0


@dataclass
class DuetResult:
    crossings: list[CrossingRecord]
    late_count: int
    skipped_count: int
    final_tempo: TempoState


@dataclass
class AccompanimentConfig:
    balance: float = DEFAULT_BALANCE
    velocity_ema: float = DEFAULT_VELOCITY_EMA
    retime_horizon: float = DEFAULT_RETIME_HORIZON
    lookahead_beats: float = DEFAULT_LOOKAHEAD_BEATS
    skip_cap: int = DEFAULT_SKIP_CAP
    latency: float = 0.0


class DuetRunner:
    """Owns the full solo-to-accompaniment loop for one run."""

    def __init__(
        self,
        score: Score,
        follower,
        tempo_state: TempoState,
        sink: EventSink,
        config: AccompanimentConfig | None = None,
        reference_style: Mapping[str, ReferenceNoteStyle] | None = None,
        truth: Mapping[float, float] | None = None,
        window_width: float = 0.010,
    ):
        self.score = score
        self.follower = follower
        self.tempo = tempo_state
        self.config = config or AccompanimentConfig()
        self.reference_style = reference_style
        self.truth = dict(truth) if truth else {}

        self.solo_grid = build_onset_grid(score, SOLO)
        self.solo_chords = part_chords(score, SOLO)
        self.accomp_chords = part_chords(score, ACCOMPANIMENT) if score.accompaniment_notes else []

        self.assembler = WindowAssembler(window_width)
        self.window_width = window_width
        self.tracker = NoteTracker()
        self.scheduler = Scheduler(sink, self.config.retime_horizon, self.config.latency)

        self.params: ExpressiveParams | None = None
        self.next_solo = 0
        self.accomp_floor = 0  # first accompaniment chord that may still need scheduling
        self.last_cross: tuple[int, float] | None = None  # (solo index, time)
        self.crossings: list[CrossingRecord] = []

    # -- event entry points --------------------------------------------------

    def feed(self, event: MidiEvent):
        for window in self.assembler.feed(event):
            self._handle_window(window)
        self.tracker.feed(event)

    def finish(self, until: float | None = None) -> DuetResult:
        for window in self.assembler.finish(until):
            self._handle_window(window)
        self._schedule_remaining()
        self.scheduler.flush()
        return DuetResult(
            crossings=self.crossings,
            late_count=self.scheduler.late_count,
            skipped_count=self.scheduler.skipped_count,
            final_tempo=self.tempo,
        )

    # -- internals -------------------------------------------------------------

    def _handle_window(self, window):
        estimate = self.follower.process(window)
        if estimate is not None:
            self._handle_crossings(window, estimate)
        self.scheduler.dispatch_until(window.window_end_sec)

    def _handle_crossings(self, window, estimate):
        onsets = self.solo_grid.onsets
        crossed = []
        while self.next_solo < len(onsets) and onsets[self.next_solo] <= estimate.position_beats + 1e-9:
            crossed.append(self.next_solo)
            self.next_solo += 1
        if not crossed:
            return
        k = crossed[-1]
        t = window.window_end_sec
        s_k = float(onsets[k])

        if self.last_cross is not None:
            j, t_prev = self.last_cross
            perf_ioi = t - t_prev
            score_ioi = s_k - float(onsets[j])
        else:
            perf_ioi = score_ioi = None
        has_next = k + 1 < len(onsets)
        obs = TempoObservation(
            onset_sec=t,
            perf_ioi=perf_ioi,
            score_ioi_prev=score_ioi,
            score_ioi_next=float(onsets[k + 1] - onsets[k]) if has_next else None,
            score_onset_next=float(onsets[k + 1]) if has_next else None,
        )
        self.tempo = step_tempo(self.tempo, obs)

        matched = self._match_notes(k, window)
        aligned = AlignedOnset(
            perf_onset_sec=t,
            score_onset_beats=s_k,
            perf_ioi=perf_ioi,
            score_ioi=score_ioi,
            notes=matched,
        )
        self.params = encode_soloist(
            aligned, self.params, self.tempo.tau_initial, self.config.velocity_ema
        )
        self.last_cross = (k, t)
        self.crossings.append(
            CrossingRecord(
                score_onset_beats=s_k,
                est_time_sec=t,
                position_beats=estimate.position_beats,
                predicted_next_onset=self.tempo.predicted_onset,
                beat_period=self.tempo.beat_period,
                truth_time_sec=self._truth_for(s_k),
            )
        )
        self._schedule_accompaniment(k, t)

    def _truth_for(self, score_onset: float) -> float | None:
        for onset, t in self.truth.items():
            if abs(onset - score_onset) < 1e-9:
                return t
        return None

    def _match_notes(self, k: int, window) -> tuple[MatchedNote, ...]:
        chord = self.solo_chords[k]
        start = window.window_end_sec - self.window_width
        matched = []
        window_pitches = dict(window.pitches)
        for note in chord.notes:
            if note.pitch not in window_pitches:
                continue
            info = self.tracker.note_in(note.pitch, start, window.window_end_sec)
            if info is None:
                onset, vel, dur = window.window_end_sec, window_pitches[note.pitch], None
            else:
                onset, vel, dur = info
            matched.append(
                MatchedNote(
                    note_id=note.note_id,
                    pitch=note.pitch,
                    onset_sec=onset,
                    velocity=vel,
                    duration_sec=dur,
                    duration_beats=float(note.duration_beats),
                )
            )
        return tuple(matched)

    def _anchor(self, k: int, t: float) -> tuple[float, float]:
        """Anchor the decoder at the tempo prediction when there is one."""
        onsets = self.solo_grid.onsets
        if self.tempo.predicted_onset is not None and k + 1 < len(onsets):
            return float(onsets[k + 1]), self.tempo.predicted_onset
        return float(onsets[k]), t

    def _decode_params(self) -> ExpressiveParams:
        # scheduling always runs at the tempo model's smoothed beat period
        return replace(self.params, beat_period=self.tempo.beat_period)

    def _schedule_accompaniment(self, k: int, t: float):
        if not self.accomp_chords or self.params is None:
            return
        onsets = self.solo_grid.onsets
        s_k = float(onsets[k])

        # advance the floor past chords already played or cancelled
        while self.accomp_floor < len(self.accomp_chords):
            chord = self.accomp_chords[self.accomp_floor]
            ids = [n.note_id for n in chord.notes]
            if all(i in self.scheduler.fired or i in self.scheduler.cancelled for i in ids):
                self.accomp_floor += 1
            else:
                break

        # forward-jump cap: keep at most skip_cap chords behind the soloist
        behind = [
            i
            for i in range(self.accomp_floor, len(self.accomp_chords))
            if self.accomp_chords[i].onset_beats < s_k - 1e-9
        ]
        if len(behind) > self.config.skip_cap:
            for i in behind[: len(behind) - self.config.skip_cap]:
                self.scheduler.cancel_before([n.note_id for n in self.accomp_chords[i].notes])

        anchor_beats, anchor_time = self._anchor(k, t)
        horizon_beats = anchor_beats + self.config.lookahead_beats
        chords = [
            c
            for c in self.accomp_chords[self.accomp_floor :]
            if c.onset_beats <= horizon_beats + 1e-9
        ]
        events = decode_accompaniment(
            self._decode_params(),
            chords,
            anchor_beats,
            anchor_time,
            balance=self.config.balance,
            reference_style=self.reference_style,
        )
        self.scheduler.submit(events, now=t)

    def _schedule_remaining(self):
        """Soloist done (or gone): everything left fires at the last tempo."""
        if not self.accomp_chords or self.params is None or self.last_cross is None:
            return
        k, t = self.last_cross
        anchor_beats, anchor_time = self._anchor(k, t)
        chords = self.accomp_chords[self.accomp_floor :]
        events = decode_accompaniment(
            self._decode_params(),
            chords,
            anchor_beats,
            anchor_time,
            balance=self.config.balance,
            reference_style=self.reference_style,
        )
        self.scheduler.submit(events, now=t)


def run_duet(
    score: Score,
    events: Iterable[MidiEvent],
    follower,
    tempo_state: TempoState,
    sink: EventSink,
    config: AccompanimentConfig | None = None,
    reference_style: Mapping[str, ReferenceNoteStyle] | None = None,
    truth: Mapping[float, float] | None = None,
    flush_after: float = 0.1,
) -> DuetResult:
    """Replay a solo event stream through the full pipeline (virtual time)."""
    runner = DuetRunner(
        score, follower, tempo_state, sink, config, reference_style, truth
    )
    last_t = 0.0
    for event in events:
        runner.feed(event)
        last_t = max(last_t, event.timestamp_sec)
    return runner.finish(until=last_t + flush_after)


def follow_performance(score: Score, events: Iterable[MidiEvent], follower) -> list[tuple[float, float]]:
    """Track a solo performance without generating accompaniment.

    Returns (score onset beats, first window-end time at/after which the
    follower's position reached it) for every crossed solo onset.
    """
    grid = build_onset_grid(score, SOLO)
    assembler = WindowAssembler()
    crossings: list[tuple[float, float]] = []
    next_idx = 0

    def handle(window):
        nonlocal next_idx
        est = follower.process(window)
        if est is None:
            return
        while next_idx < len(grid.onsets) and grid.onsets[next_idx] <= est.position_beats + 1e-9:
            crossings.append((float(grid.onsets[next_idx]), window.window_end_sec))
            next_idx += 1

    last_t = 0.0
    for event in events:
        for window in assembler.feed(event):
            handle(window)
        last_t = max(last_t, event.timestamp_sec)
    for window in assembler.finish(until=last_t + 0.05):
        handle(window)
    return crossings
