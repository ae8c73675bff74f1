"""Real-time MIDI plumbing: event streams, 10 ms windowing, replay, sinks.

The windowing front-end aggregates incoming note-ons into non-overlapping
10 ms windows; all note-ons inside a window count as one chord whose
performed onset is the window end. Note-offs never open windows — they
feed the note tracker (durations) and the sustained-activity state used
by the warping follower.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable, Iterator

from . import smf

WINDOW_WIDTH = 0.010
CLOCK_TOLERANCE = 0.001
SUSTAIN_CAP = 2.0

NOTE_ON = "note_on"
NOTE_OFF = "note_off"


class MidiIoError(ValueError):
    """Clock faults, bad replays, unavailable sinks."""


@dataclass(frozen=True)
class MidiEvent:
    kind: str
    pitch: int
    velocity: int
    timestamp_sec: float

    @staticmethod
    def normalized(kind: str, pitch: int, velocity: int, timestamp_sec: float) -> "MidiEvent":
        """note-on with velocity 0 is a note-off."""
        if kind == NOTE_ON and velocity == 0:
            kind = NOTE_OFF
        return MidiEvent(kind, pitch, velocity, timestamp_sec)


@dataclass(frozen=True)
class InputWindow:
    """One 10 ms aggregation window.

    `pitches` holds the note-ons that arrived inside the window (the chord);
    `active_pitches` is the sustained pitch activity sampled at the window
    end (held notes stay active until their note-off or a 2 s cap).
    """

    frame_index: int
    window_end_sec: float
    pitches: tuple[tuple[int, int], ...]  # (pitch, velocity), sorted by pitch
    active_pitches: frozenset[int] = frozenset()

    @property
    def empty(self) -> bool:
        return not self.pitches

    @property
    def pitch_set(self) -> frozenset[int]:
        return frozenset(p for p, _ in self.pitches)


class WindowAssembler:
    """Streams MidiEvents into contiguous InputWindows.

    The window phase is anchored at the first event's timestamp rounded
    down to a width boundary. Empty windows are emitted so downstream
    silence tracking sees time pass. Timestamps may regress by at most
    1 ms (clamped); anything larger is a clock fault.
    """

    def __init__(self, width: float = WINDOW_WIDTH):
        if width <= 0:
            raise MidiIoError("window width must be positive")
        self.width = width
        self._anchor: float | None = None
        self._frame = 0  # next window index to emit
        self._last_ts = float("-inf")
        self._pending: dict[int, int] = {}  # pitch -> velocity for current window
        self._open: dict[int, list[float]] = {}  # pitch -> onset times (FIFO)

    def _index_for(self, ts: float) -> int:
        return int((ts - self._anchor) / self.width + 1e-9)

    def _window_end(self, frame: int) -> float:
        return self._anchor + (frame + 1) * self.width

    def _active_at(self, t: float) -> frozenset[int]:
        return frozenset(
            p for p, onsets in self._open.items() if any(t - on < SUSTAIN_CAP for on in onsets)
        )

    def _emit(self, frame: int) -> InputWindow:
        end = self._window_end(frame)
        window = InputWindow(
            frame_index=frame,
            window_end_sec=end,
            pitches=tuple(sorted(self._pending.items())),
            active_pitches=self._active_at(end),
        )
        self._pending.clear()
        return window

    def feed(self, event: MidiEvent) -> list[InputWindow]:
        """Consume one event; return windows completed strictly before it."""
        ts = event.timestamp_sec
        if ts < self._last_ts:
            if self._last_ts - ts > CLOCK_TOLERANCE:
                raise MidiIoError(
                    f"clock fault: timestamp regressed {self._last_ts - ts:.4f}s"
                )
            ts = self._last_ts
        self._last_ts = ts
        event = MidiEvent.normalized(event.kind, event.pitch, event.velocity, ts)

        if self._anchor is None:
            self._anchor = (int(ts / self.width + 1e-9)) * self.width

        out = []
        idx = self._index_for(ts)
        while self._frame < idx:
            out.append(self._emit(self._frame))
            self._frame += 1

        if event.kind == NOTE_ON:
            self._pending[event.pitch] = event.velocity
            self._open.setdefault(event.pitch, []).append(ts)
        elif event.kind == NOTE_OFF:
            onsets = self._open.get(event.pitch)
            if onsets:
                onsets.pop(0)
                if not onsets:
                    del self._open[event.pitch]
        return out

    def finish(self, until: float | None = None) -> list[InputWindow]:
        """Flush: emit the window holding the last event, then empties to `until`."""
        if self._anchor is None:
            return []
        out = []
        last = self._index_for(self._last_ts)
        target = last
        if until is not None and until > self._window_end(last):
            target = self._index_for(until)
        while self._frame <= target:
            out.append(self._emit(self._frame))
            self._frame += 1
        return out


def window_events(
    events: Iterable[MidiEvent], width: float = WINDOW_WIDTH, end_time: float | None = None
) -> list[InputWindow]:
    """Batch-window an event list (offline convenience)."""
    assembler = WindowAssembler(width)
    windows = []
    for ev in events:
        windows.extend(assembler.feed(ev))
    windows.extend(assembler.finish(end_time))
    return windows


class NoteTracker:
    """Record of performed notes: velocities, exact onsets, durations.

    note-offs close the earliest open note-on of their pitch; completed
    notes keep their duration for the articulation encoder.
    """

    def __init__(self):
        self._open: dict[int, list[tuple[float, int]]] = {}
        self.completed: list[tuple[int, float, float, int]] = []  # pitch, onset, dur, vel

    def feed(self, event: MidiEvent):
        event = MidiEvent.normalized(event.kind, event.pitch, event.velocity, event.timestamp_sec)
        if event.kind == NOTE_ON:
            self._open.setdefault(event.pitch, []).append((event.timestamp_sec, event.velocity))
        elif event.kind == NOTE_OFF:
            stack = self._open.get(event.pitch)
            if stack:
                onset, vel = stack.pop(0)
                if not stack:
                    del self._open[event.pitch]
                self.completed.append((event.pitch, onset, event.timestamp_sec - onset, vel))

    def note_in(self, pitch: int, start: float, end: float):
        """(onset, velocity, duration|None) of a note-on inside [start, end]."""
        for onset, dur, vel in (
            (o, d, v) for p, o, d, v in reversed(self.completed) if p == pitch
        ):
            if start - 1e-9 <= onset <= end + 1e-9:
                return onset, vel, dur
        for onset, vel in self._open.get(pitch, []):
            if start - 1e-9 <= onset <= end + 1e-9:
                return onset, vel, None
        return None


# -- clocks ------------------------------------------------------------------


class VirtualClock:
    """Deterministic clock that jumps instead of sleeping."""

    def __init__(self, start: float = 0.0):
        self._now = start

    def now(self) -> float:
        return self._now

    def sleep_until(self, t: float):
        if t > self._now:
            self._now = t


class WallClock:
    def __init__(self):
        self._t0 = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._t0

    def sleep_until(self, t: float):
        delay = t - self.now()
        if delay > 0:
            time.sleep(delay)


# -- replay ------------------------------------------------------------------


def replay_performance(data: bytes, speed: float = 1.0, clock=None) -> Iterator[MidiEvent]:
    """Yield a recorded SMF performance as a live event stream.

    With no clock (or a VirtualClock) delivery is immediate and
    deterministic; with a WallClock events arrive in real time. `speed`
    scales delivery rate: speed=2 halves every timestamp.
    """
    if speed <= 0:
        raise MidiIoError("replay speed must be positive")
    parsed = smf.parse_smf(data)
    tempo_map = parsed.tempo_map()
    timed = []
    for track in parsed.tracks:
        for ev in track:
            if ev.kind in (NOTE_ON, NOTE_OFF):
                t = smf.ticks_to_seconds(ev.tick, tempo_map, parsed.ppq) / speed
                timed.append(MidiEvent.normalized(ev.kind, ev.pitch, ev.velocity, t))
    timed.sort(key=lambda e: (e.timestamp_sec, 0 if e.kind == NOTE_OFF else 1, e.pitch))
    for ev in timed:
        if clock is not None:
            clock.sleep_until(ev.timestamp_sec)
        yield ev


# -- sinks -------------------------------------------------------------------


class EventSink:
    """Receives timed note events; tracks open notes for the final flush."""

    def __init__(self):
        self._open: dict[int, int] = {}
        self.events: list[MidiEvent] = []

    def send(self, event: MidiEvent):
        if event.kind == NOTE_ON:
            self._open[event.pitch] = self._open.get(event.pitch, 0) + 1
        elif event.kind == NOTE_OFF:
            n = self._open.get(event.pitch, 0)
            if n <= 1:
                self._open.pop(event.pitch, None)
            else:
                self._open[event.pitch] = n - 1
        self.events.append(event)

    def all_notes_off(self, t: float):
        """Close every still-open note (shutdown flush: no stuck notes)."""
        for pitch, count in sorted(self._open.items()):
            for _ in range(count):
                self.events.append(MidiEvent(NOTE_OFF, pitch, 0, t))
        self._open.clear()

    @property
    def open_count(self) -> int:
        return sum(self._open.values())


class SmfSink(EventSink):
    """Collects events and renders them as a single-track SMF."""

    def __init__(self, bpm: float = 120.0, ppq: int = smf.DEFAULT_PPQ):
        super().__init__()
        self.bpm = bpm
        self.ppq = ppq

    def to_bytes(self) -> bytes:
        us_per_beat = int(round(60e6 / self.bpm))
        sec_per_tick = us_per_beat / (1e6 * self.ppq)
        events = [smf.SmfEvent(0, "tempo", us_per_beat=us_per_beat)]
        for ev in self.events:
            tick = int(round(ev.timestamp_sec / sec_per_tick))
            events.append(smf.SmfEvent(max(tick, 0), ev.kind, ev.pitch, ev.velocity))
        return smf.write_smf([events], ppq=self.ppq)


class PortSink(EventSink):
    """Hardware MIDI output. Needs an rtmidi backend, which this build
    treats as optional; without one, opening a port fails loudly."""

    def __init__(self, port_name: str, latency_ms: float = 0.0):
        super().__init__()
        self.latency = latency_ms / 1000.0
        try:
            import rtmidi  # type: ignore
        except ImportError as exc:
            raise MidiIoError(
                "no real-time MIDI backend available (install python-rtmidi); "
                "use --replay mode or an SMF sink"
            ) from exc
        self._out = rtmidi.MidiOut()
        ports = self._out.get_ports()
        matches = [i for i, p in enumerate(ports) if port_name in p]
        if not matches:
            raise MidiIoError(f"MIDI output port {port_name!r} not found in {ports}")
        self._out.open_port(matches[0])

    def send(self, event: MidiEvent):
        super().send(event)
        status = 0x90 if event.kind == NOTE_ON else 0x80
        self._out.send_message([status, event.pitch, event.velocity])


def list_input_ports() -> list[str]:
    try:
        import rtmidi  # type: ignore
    except ImportError as exc:
        raise MidiIoError("no real-time MIDI backend available") from exc
    return rtmidi.MidiIn().get_ports()


@dataclass
class EmitStats:
    late_count: int = 0
    emitted: int = 0


def play_events(events, sink: EventSink, clock=None, latency: float = 0.0) -> EmitStats:
    """Emit accompaniment events as note-on/off pairs in time order.

    Chord note-ons at one onset are emitted before any of their note-offs
    (offs happen at onset+duration). Events already in the past when
    dispatched fire immediately and are counted late.
    """
    stats = EmitStats()
    timed: list[tuple[float, int, MidiEvent]] = []
    for ev in events:
        on_t = ev.onset_sec - latency
        timed.append((on_t, 1, MidiEvent(NOTE_ON, ev.pitch, ev.velocity, on_t)))
        timed.append((on_t + ev.duration_sec, 0, MidiEvent(NOTE_OFF, ev.pitch, 0, on_t + ev.duration_sec)))
    timed.sort(key=lambda item: (item[0], item[1], item[2].pitch))
    now = clock.now() if clock is not None else float("-inf")
    for t, _, ev in timed:
        if t < now:
            stats.late_count += 1 if ev.kind == NOTE_ON else 0
            ev = MidiEvent(ev.kind, ev.pitch, ev.velocity, now)
        elif clock is not None:
            clock.sleep_until(t)
            now = clock.now()
        sink.send(ev)
        stats.emitted += 1
    sink.all_notes_off(max(now, timed[-1][0]) if timed else now)
    return stats
