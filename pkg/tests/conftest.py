import json
from fractions import Fraction

import pytest

from continuo.score import (
    ACCOMPANIMENT,
    SOLO,
    PerformedNote,
    ReferencePerformance,
    Score,
    ScoreNote,
)


def note(nid, pitch, onset, dur=1, part=SOLO):
    return ScoreNote(nid, pitch, Fraction(onset), Fraction(dur), part)


@pytest.fixture
def duet_score():
    return Score(
        notes=(
            note("s0", 60, 0),
            note("s1", 62, 1),
            note("s2", 64, 2),
            note("a0", 48, 0, 2, ACCOMPANIMENT),
            note("a1", 52, 2, 1, ACCOMPANIMENT),
        ),
        initial_bpm=120.0,
    )


def simple_document(**overrides):
    doc = {
        "version": 1,
        "time_signature": "4/4",
        "initial_bpm": "120",
        "notes": [
            {"id": "s0", "pitch": 60, "onset_beats": "0", "duration_beats": "1", "part": "solo"},
            {
                "id": "a0",
                "pitch": 48,
                "onset_beats": "0",
                "duration_beats": "1",
                "part": "accompaniment",
            },
        ],
    }
    doc.update(overrides)
    return json.dumps(doc)


def constant_reference(n_onsets=3, beat_period=0.5, ioi_beats=1.0, pitch0=60):
    notes = []
    alignment = []
    for i in range(n_onsets):
        t = i * ioi_beats * beat_period
        notes.append(PerformedNote(pitch0 + i % 8, t, beat_period * ioi_beats * 0.9, 64))
        alignment.append((i * ioi_beats, t))
    return ReferencePerformance(notes=tuple(notes), alignment=tuple(alignment))
