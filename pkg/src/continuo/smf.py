"""Minimal Standard MIDI File reader/writer.

Covers exactly what the engine needs: formats 0 and 1, PPQ time division,
note on/off and set-tempo meta events. Everything else in a file is parsed
and skipped. SMPTE time division is rejected.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

DEFAULT_PPQ = 480
DEFAULT_US_PER_BEAT = 500_000  # 120 bpm


class SmfError(ValueError):
    """Malformed or unsupported Standard MIDI File."""


@dataclass(frozen=True)
class SmfEvent:
    """One retained track event at an absolute tick."""

    tick: int
    kind: str  # "note_on" | "note_off" | "tempo"
    pitch: int = 0
    velocity: int = 0
    us_per_beat: int = 0  # set for kind == "tempo"


@dataclass(frozen=True)
class SmfFile:
    ppq: int
    tracks: tuple[tuple[SmfEvent, ...], ...]

    def tempo_map(self) -> list[tuple[int, int]]:
        """Set-tempo events as (tick, us_per_beat), always anchored at tick 0."""
        changes = {0: DEFAULT_US_PER_BEAT}
        for track in self.tracks:
            for ev in track:
                if ev.kind == "tempo":
                    changes[ev.tick] = ev.us_per_beat
        return sorted(changes.items())


def _read_varlen(data: bytes, pos: int) -> tuple[int, int]:
    value = 0
    while True:
        if pos >= len(data):
            raise SmfError("truncated variable-length quantity")
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos


def _varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def parse_smf(data: bytes) -> SmfFile:
    """Parse SMF bytes into retained events with absolute ticks.

    Note-ons with velocity 0 are normalized to note-offs here, so downstream
    code only ever sees the two-kind form.
    """
    if len(data) < 14 or data[:4] != b"MThd":
        raise SmfError("not a Standard MIDI File (missing MThd)")
    header_len, fmt, ntrks, division = struct.unpack(">IHHH", data[4:14])
    if header_len < 6:
        raise SmfError("bad MThd length")
    if fmt not in (0, 1):
        raise SmfError(f"unsupported SMF format {fmt}")
    if division & 0x8000:
        raise SmfError("SMPTE time division is not supported")
    if division == 0:
        raise SmfError("zero PPQ division")

    tracks = []
    pos = 8 + header_len
    for _ in range(ntrks):
        if pos + 8 > len(data):
            raise SmfError("truncated track header")
        if data[pos : pos + 4] != b"MTrk":
            raise SmfError("expected MTrk chunk")
        (length,) = struct.unpack(">I", data[pos + 4 : pos + 8])
        body = data[pos + 8 : pos + 8 + length]
        if len(body) < length:
            raise SmfError("truncated track body")
        tracks.append(tuple(_parse_track(body)))
        pos += 8 + length
    return SmfFile(ppq=division, tracks=tuple(tracks))


def _parse_track(body: bytes) -> list[SmfEvent]:
    events: list[SmfEvent] = []
    tick = 0
    pos = 0
    running = 0
    while pos < len(body):
        delta, pos = _read_varlen(body, pos)
        tick += delta
        status = body[pos]
        if status & 0x80:
            pos += 1
            if status < 0xF0:
                running = status
        else:
            if not running:
                raise SmfError("data byte without running status")
            status = running

        if status == 0xFF:  # meta
            meta_type = body[pos]
            length, pos = _read_varlen(body, pos + 1)
            payload = body[pos : pos + length]
            pos += length
            if meta_type == 0x51 and length == 3:
                us = (payload[0] << 16) | (payload[1] << 8) | payload[2]
                events.append(SmfEvent(tick, "tempo", us_per_beat=us))
            elif meta_type == 0x2F:
                break
        elif status in (0xF0, 0xF7):  # sysex
            length, pos = _read_varlen(body, pos)
            pos += length
        else:
            hi = status & 0xF0
            n_data = 1 if hi in (0xC0, 0xD0) else 2
            payload = body[pos : pos + n_data]
            if len(payload) < n_data:
                raise SmfError("truncated channel message")
            pos += n_data
            if hi == 0x90:
                if payload[1] == 0:
                    events.append(SmfEvent(tick, "note_off", payload[0], 0))
                else:
                    events.append(SmfEvent(tick, "note_on", payload[0], payload[1]))
            elif hi == 0x80:
                events.append(SmfEvent(tick, "note_off", payload[0], payload[1]))
    return events


def ticks_to_seconds(tick: int, tempo_map: Sequence[tuple[int, int]], ppq: int) -> float:
    """Convert an absolute tick to seconds under a piecewise-constant tempo map."""
    seconds = 0.0
    for (t0, us), nxt in zip(tempo_map, list(tempo_map[1:]) + [None]):
        if nxt is not None and nxt[0] <= tick:
            seconds += (nxt[0] - t0) * us / (1e6 * ppq)
        else:
            seconds += (tick - t0) * us / (1e6 * ppq)
            break
    return seconds


@dataclass(frozen=True)
class SmfNote:
    """A paired note with absolute tick onset/duration."""

    track: int
    pitch: int
    onset_tick: int
    duration_tick: int
    velocity: int


def notes_from_smf(smf: SmfFile) -> list[SmfNote]:
    """Pair note-ons with note-offs per track.

    Each note-off closes the earliest still-open note-on of its pitch
    (FIFO pairing, which keeps overlapping equal pitches well defined).
    A note-on left open at end of track is an error; so is a stray note-off.
    """
    notes = []
    for idx, track in enumerate(smf.tracks):
        open_notes: dict[int, list[tuple[int, int]]] = {}
        for ev in track:
            if ev.kind == "note_on":
                open_notes.setdefault(ev.pitch, []).append((ev.tick, ev.velocity))
            elif ev.kind == "note_off":
                stack = open_notes.get(ev.pitch)
                if not stack:
                    raise SmfError(f"note-off without matching note-on (pitch {ev.pitch})")
                on_tick, vel = stack.pop(0)
                notes.append(SmfNote(idx, ev.pitch, on_tick, ev.tick - on_tick, vel))
        leftover = [p for p, stack in open_notes.items() if stack]
        if leftover:
            raise SmfError(f"unmatched note-on(s) at end of track {idx}: pitches {sorted(leftover)}")
    notes.sort(key=lambda n: (n.track, n.onset_tick, n.pitch))
    return notes


def write_smf(tracks: Iterable[Iterable[SmfEvent]], ppq: int = DEFAULT_PPQ, fmt: int | None = None) -> bytes:
    """Serialize tracks of absolute-tick events to SMF bytes.

    Events are stably sorted by (tick, tempo-first, note-off-before-note-on,
    pitch) so that identical inputs always produce identical bytes and a
    note-off at the same tick as a re-strike lands first.
    """
    track_list = [list(t) for t in tracks]
    if fmt is None:
        fmt = 0 if len(track_list) <= 1 else 1
    order = {"tempo": 0, "note_off": 1, "note_on": 2}
    chunks = [struct.pack(">4sIHHH", b"MThd", 6, fmt, len(track_list), ppq)]
    for events in track_list:
        events = sorted(events, key=lambda e: (e.tick, order[e.kind], e.pitch, e.velocity))
        body = bytearray()
        last_tick = 0
        for ev in events:
            if ev.tick < 0:
                raise SmfError("negative tick")
            body += _varlen(ev.tick - last_tick)
            last_tick = ev.tick
            if ev.kind == "tempo":
                us = ev.us_per_beat
                body += bytes([0xFF, 0x51, 0x03, (us >> 16) & 0xFF, (us >> 8) & 0xFF, us & 0xFF])
            elif ev.kind == "note_on":
                body += bytes([0x90, ev.pitch, ev.velocity])
            elif ev.kind == "note_off":
                body += bytes([0x80, ev.pitch, max(0, min(127, ev.velocity))])
            else:
                raise SmfError(f"unknown event kind {ev.kind!r}")
        body += bytes([0x00, 0xFF, 0x2F, 0x00])
        chunks.append(struct.pack(">4sI", b"MTrk", len(body)) + bytes(body))
    return b"".join(chunks)


def timed_notes_to_smf(
    notes: Iterable[tuple[int, float, float, int]],
    bpm: float = 120.0,
    ppq: int = DEFAULT_PPQ,
) -> bytes:
    """Write (pitch, onset_sec, duration_sec, velocity) notes as a one-track file.

    Times are quantized to the tick grid of the given fixed tempo; with
    ppq=480 at 120 bpm one tick is ~1 ms.
    """
    us_per_beat = int(round(60e6 / bpm))
    sec_per_tick = us_per_beat / (1e6 * ppq)
    events = [SmfEvent(0, "tempo", us_per_beat=us_per_beat)]
    for pitch, onset, duration, velocity in notes:
        on = int(round(onset / sec_per_tick))
        off = int(round((onset + duration) / sec_per_tick))
        if off <= on:
            off = on + 1
        events.append(SmfEvent(on, "note_on", pitch, velocity))
        events.append(SmfEvent(off, "note_off", pitch, 0))
    return write_smf([events], ppq=ppq)
