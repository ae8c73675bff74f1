"""Score and performance data model.

Scores are symbolic: pitches with onsets/durations in musical beats, split
into a solo and an accompaniment part. Performances are timestamped MIDI
notes in seconds. A reference performance is a performance plus an
alignment of every distinct solo score onset to a performed time, from
which a beat-period curve is derived.

Score documents are JSON with beats written as decimal strings (exact);
real data comes in through Standard MIDI File import.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from . import smf

SOLO = "solo"
ACCOMPANIMENT = "accompaniment"
PARTS = (SOLO, ACCOMPANIMENT)

SCORE_DOC_VERSION = 1


class ScoreError(ValueError):
    """Invalid score document, alignment, or score invariant violation."""


def _as_beats(value) -> Fraction:
    """Exact beats from a decimal string, int, or Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ScoreError(f"not a beat value: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ScoreError(f"bad beats value {value!r}") from exc
    if isinstance(value, float):
        # JSON numbers arrive as floats; convert through repr to keep
        # "0.5" exact instead of inheriting binary representation error.
        return Fraction(repr(value))
    raise ScoreError(f"not a beat value: {value!r}")


@dataclass(frozen=True)
class ScoreNote:
    """One notated note: pitch plus onset/duration in beats."""

    note_id: str
    pitch: int
    onset_beats: Fraction
    duration_beats: Fraction
    part: str

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ScoreError(f"pitch {self.pitch} outside [0, 127]")
        if self.onset_beats < 0:
            raise ScoreError(f"negative onset for note {self.note_id!r}")
        if self.duration_beats <= 0:
            raise ScoreError(f"non-positive duration for note {self.note_id!r}")
        if self.part not in PARTS:
            raise ScoreError(f"unknown part {self.part!r}")


@dataclass(frozen=True)
class Score:
    notes: tuple[ScoreNote, ...]
    beats_per_measure: int = 4
    beat_unit: int = 4
    initial_bpm: float | None = None

    def __post_init__(self):
        ids = [n.note_id for n in self.notes]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ScoreError(f"duplicate note id(s): {dupes}")

    def part_notes(self, part: str) -> tuple[ScoreNote, ...]:
        return tuple(n for n in self.notes if n.part == part)

    @property
    def solo_notes(self) -> tuple[ScoreNote, ...]:
        return self.part_notes(SOLO)

    @property
    def accompaniment_notes(self) -> tuple[ScoreNote, ...]:
        return self.part_notes(ACCOMPANIMENT)

    def require_duet(self):
        if not self.solo_notes or not self.accompaniment_notes:
            raise ScoreError("duet mode needs at least one solo and one accompaniment note")


@dataclass(frozen=True)
class OnsetGrid:
    """Distinct sorted onsets of one part, with their inter-onset intervals."""

    onsets: np.ndarray  # beats, strictly increasing
    iois: np.ndarray  # beats, len(onsets) - 1

    def __post_init__(self):
        if len(self.iois) != max(len(self.onsets) - 1, 0):
            raise ScoreError("ioi count must be onset count - 1")
        if len(self.iois) and np.min(self.iois) <= 0:
            raise ScoreError("onsets must be strictly increasing")

    def __len__(self) -> int:
        return len(self.onsets)


@dataclass(frozen=True)
class ScoreChord:
    """All notes of one part sharing a score onset."""

    onset_beats: float
    notes: tuple[ScoreNote, ...]

    @property
    def pitches(self) -> frozenset[int]:
        return frozenset(n.pitch for n in self.notes)


def build_onset_grid(score: Score, part: str) -> OnsetGrid:
    """Distinct sorted onset grid of a part; chord members collapse."""
    notes = score.part_notes(part)
    if not notes:
        raise ScoreError(f"part {part!r} is empty")
    exact = sorted(set(n.onset_beats for n in notes))
    onsets = np.array([float(o) for o in exact])
    return OnsetGrid(onsets=onsets, iois=np.diff(onsets))


def part_chords(score: Score, part: str) -> list[ScoreChord]:
    """Chords of a part in grid order (same onsets as build_onset_grid)."""
    groups: dict[Fraction, list[ScoreNote]] = {}
    for n in score.part_notes(part):
        groups.setdefault(n.onset_beats, []).append(n)
    return [
        ScoreChord(float(o), tuple(sorted(groups[o], key=lambda n: (n.pitch, n.note_id))))
        for o in sorted(groups)
    ]


# -- score document (JSON, version 1) ---------------------------------------


def parse_score(document: bytes | str, duet: bool = False) -> Score:
    """Parse a version-1 score document.

    Layout: {"version": 1, "time_signature": "4/4", "initial_bpm": "120",
    "notes": [{"id", "pitch", "onset_beats", "duration_beats", "part"}, ...]}
    with beats given as decimal strings.
    """
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ScoreError(f"malformed score document: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScoreError("score document must be a JSON object")
    if doc.get("version") != SCORE_DOC_VERSION:
        raise ScoreError(f"unsupported score document version {doc.get('version')!r}")

    ts = doc.get("time_signature", "4/4")
    if isinstance(ts, str):
        try:
            num, den = (int(x) for x in ts.split("/"))
        except ValueError as exc:
            raise ScoreError(f"bad time_signature {ts!r}") from exc
    elif isinstance(ts, (list, tuple)) and len(ts) == 2:
        num, den = int(ts[0]), int(ts[1])
    else:
        raise ScoreError(f"bad time_signature {ts!r}")

    bpm = doc.get("initial_bpm")
    if bpm is not None:
        bpm = float(bpm)
        if bpm <= 0:
            raise ScoreError("initial_bpm must be positive")

    raw_notes = doc.get("notes")
    if not isinstance(raw_notes, list) or not raw_notes:
        raise ScoreError("score document has no notes")
    notes = []
    for i, item in enumerate(raw_notes):
        try:
            notes.append(
                ScoreNote(
                    note_id=str(item["id"]),
                    pitch=int(item["pitch"]),
                    onset_beats=_as_beats(item["onset_beats"]),
                    duration_beats=_as_beats(item["duration_beats"]),
                    part=str(item["part"]),
                )
            )
        except KeyError as exc:
            raise ScoreError(f"note {i} missing field {exc}") from exc
    score = Score(notes=tuple(notes), beats_per_measure=num, beat_unit=den, initial_bpm=bpm)
    if duet:
        score.require_duet()
    return score


def score_to_document(score: Score) -> str:
    """Serialize a Score back to the version-1 document format."""
    doc = {
        "version": SCORE_DOC_VERSION,
        "time_signature": f"{score.beats_per_measure}/{score.beat_unit}",
        "notes": [
            {
                "id": n.note_id,
                "pitch": n.pitch,
                "onset_beats": _beats_str(n.onset_beats),
                "duration_beats": _beats_str(n.duration_beats),
                "part": n.part,
            }
            for n in score.notes
        ],
    }
    if score.initial_bpm is not None:
        doc["initial_bpm"] = repr(score.initial_bpm)
    return json.dumps(doc, indent=2)


def _beats_str(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


# -- MIDI import -------------------------------------------------------------


def import_midi_score(data: bytes, part_map: Mapping[int, str], duet: bool = False) -> Score:
    """Import an SMF as a score, mapping track indices to parts.

    Ticks become beats via the file's PPQ. Onsets within one tick of each
    other are merged to a single grid onset (guards exporter rounding).
    """
    parsed = smf.parse_smf(data)
    for track, part in part_map.items():
        if part not in PARTS:
            raise ScoreError(f"part_map maps track {track} to unknown part {part!r}")
    ppq = parsed.ppq
    raw = [n for n in smf.notes_from_smf(parsed) if n.track in part_map]
    if not raw:
        raise ScoreError("no notes on mapped tracks")

    # Cluster onset ticks whose consecutive gaps are <= 1 tick.
    ticks = sorted(set(n.onset_tick for n in raw))
    snap: dict[int, int] = {}
    anchor = ticks[0]
    prev = ticks[0]
    for t in ticks:
        if t - prev > 1:
            anchor = t
        snap[t] = anchor
        prev = t

    notes = []
    counters: dict[int, int] = {}
    for n in raw:
        idx = counters.get(n.track, 0)
        counters[n.track] = idx + 1
        notes.append(
            ScoreNote(
                note_id=f"t{n.track}n{idx}",
                pitch=n.pitch,
                onset_beats=Fraction(snap[n.onset_tick], ppq),
                duration_beats=Fraction(max(n.duration_tick, 1), ppq),
                part=part_map[n.track],
            )
        )
    bpm = 60e6 / parsed.tempo_map()[0][1]
    score = Score(notes=tuple(notes), initial_bpm=bpm)
    if duet:
        score.require_duet()
    return score


def export_score_smf(score: Score, ppq: int = smf.DEFAULT_PPQ) -> bytes:
    """Write a score as a two-track SMF (track 0 solo, track 1 accompaniment)."""
    tracks = []
    for part in PARTS:
        events = []
        if part == SOLO and score.initial_bpm:
            events.append(smf.SmfEvent(0, "tempo", us_per_beat=int(round(60e6 / score.initial_bpm))))
        for n in score.part_notes(part):
            on = int(round(n.onset_beats * ppq))
            off = int(round((n.onset_beats + n.duration_beats) * ppq))
            events.append(smf.SmfEvent(on, "note_on", n.pitch, 64))
            events.append(smf.SmfEvent(max(off, on + 1), "note_off", n.pitch, 0))
        tracks.append(events)
    return smf.write_smf(tracks, ppq=ppq, fmt=1)


# -- performances ------------------------------------------------------------


@dataclass(frozen=True)
class PerformedNote:
    pitch: int
    onset_sec: float
    duration_sec: float
    velocity: int

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ScoreError(f"pitch {self.pitch} outside [0, 127]")
        if self.onset_sec < 0:
            raise ScoreError("negative performed onset")
        if self.duration_sec <= 0:
            raise ScoreError("non-positive performed duration")
        if not 1 <= self.velocity <= 127:
            raise ScoreError(f"velocity {self.velocity} outside [1, 127]")


def import_midi_performance(data: bytes) -> tuple[PerformedNote, ...]:
    """Read an SMF as performed notes with seconds from its tempo map."""
    parsed = smf.parse_smf(data)
    tempo_map = parsed.tempo_map()
    notes = []
    for n in smf.notes_from_smf(parsed):
        onset = smf.ticks_to_seconds(n.onset_tick, tempo_map, parsed.ppq)
        offset = smf.ticks_to_seconds(n.onset_tick + n.duration_tick, tempo_map, parsed.ppq)
        notes.append(PerformedNote(n.pitch, onset, max(offset - onset, 1e-4), max(n.velocity, 1)))
    return tuple(sorted(notes, key=lambda n: (n.onset_sec, n.pitch)))


@dataclass(frozen=True)
class ReferencePerformance:
    """A performance aligned to the score, with its beat-period curve.

    `alignment` pairs every distinct solo score onset (beats) with a
    performed time (seconds), strictly increasing in both coordinates.
    The beat-period curve is the slope of each alignment segment,
    attributed to [onset_i, onset_{i+1}) and held constant beyond the ends.
    """

    notes: tuple[PerformedNote, ...]
    alignment: tuple[tuple[float, float], ...]
    _onsets: np.ndarray = field(init=False, repr=False, compare=False)
    _times: np.ndarray = field(init=False, repr=False, compare=False)
    _slopes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.alignment:
            raise ScoreError("empty alignment")
        onsets = np.array([a[0] for a in self.alignment])
        times = np.array([a[1] for a in self.alignment])
        if len(onsets) > 1:
            if np.min(np.diff(onsets)) <= 0:
                raise ScoreError("alignment score onsets must be strictly increasing")
            if np.min(np.diff(times)) <= 0:
                raise ScoreError("alignment performed times must be strictly increasing")
            slopes = np.diff(times) / np.diff(onsets)
        else:
            slopes = np.zeros(0)
        object.__setattr__(self, "_onsets", onsets)
        object.__setattr__(self, "_times", times)
        object.__setattr__(self, "_slopes", slopes)

    def beat_period_at(self, score_onset: float) -> float:
        """Beat period (sec/beat) at a score position."""
        if not len(self._slopes):
            raise ScoreError("beat-period curve needs at least two alignment points")
        idx = int(np.searchsorted(self._onsets, score_onset, side="right")) - 1
        idx = min(max(idx, 0), len(self._slopes) - 1)
        return float(self._slopes[idx])

    def perf_time_at(self, score_onset: float) -> float:
        """Performed time of a score position (piecewise-linear time map)."""
        return float(np.interp(score_onset, self._onsets, self._times))


def parse_alignment_csv(data: bytes | str) -> list[tuple[float, float]]:
    """Read `score_onset_beats,perf_onset_sec` rows."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    lines = [ln.strip() for ln in data.split("\n") if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "score_onset_beats,perf_onset_sec":
        raise ScoreError("alignment CSV must start with header score_onset_beats,perf_onset_sec")
    pairs = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != 2:
            raise ScoreError(f"bad alignment row: {ln!r}")
        pairs.append((float(cells[0]), float(cells[1])))
    return pairs


def load_reference(perf: bytes, alignment_csv: bytes | str, score: Score) -> ReferencePerformance:
    """Build a reference performance from an SMF and an alignment CSV.

    Every distinct solo score onset must appear in the CSV exactly once.
    """
    notes = import_midi_performance(perf)
    pairs = parse_alignment_csv(alignment_csv)
    grid = build_onset_grid(score, SOLO)
    aligned = sorted(pairs)
    got = [p[0] for p in aligned]
    want = [float(o) for o in grid.onsets]
    if len(got) != len(set(got)):
        raise ScoreError("alignment repeats a score onset")
    missing = [o for o in want if not any(abs(o - g) < 1e-9 for g in got)]
    if missing:
        raise ScoreError(f"alignment missing solo score onset(s): {missing[:5]}")
    return ReferencePerformance(notes=notes, alignment=tuple(aligned))
