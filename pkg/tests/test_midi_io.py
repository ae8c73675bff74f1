import pytest
from hypothesis import given, settings, strategies as st

from continuo import smf
from continuo.accompanist import AccompanimentEvent
from continuo.midi_io import (
    NOTE_OFF,
    NOTE_ON,
    EventSink,
    MidiEvent,
    MidiIoError,
    NoteTracker,
    SmfSink,
    VirtualClock,
    WindowAssembler,
    play_events,
    replay_performance,
    window_events,
)


def on(pitch, t, vel=64):
    return MidiEvent(NOTE_ON, pitch, vel, t)


def off(pitch, t):
    return MidiEvent(NOTE_OFF, pitch, 0, t)


class TestWindowing:
    def test_same_window_shares_onset(self):
        windows = window_events([on(60, 0.003), on(64, 0.007)])
        nonempty = [w for w in windows if not w.empty]
        assert len(nonempty) == 1
        assert nonempty[0].window_end_sec == pytest.approx(0.010)
        assert nonempty[0].pitch_set == {60, 64}

    def test_two_windows(self):
        windows = window_events([on(60, 0.003), on(64, 0.013)])
        nonempty = [w for w in windows if not w.empty]
        assert [w.window_end_sec for w in nonempty] == pytest.approx([0.010, 0.020])

    def test_silence_emits_empty_windows(self):
        windows = window_events([on(60, 0.001)], end_time=0.051)
        assert len(windows) == 6  # window of the note plus five empties
        assert sum(w.empty for w in windows) == 5

    def test_clock_fault(self):
        asm = WindowAssembler()
        asm.feed(on(60, 0.5))
        with pytest.raises(MidiIoError, match="clock"):
            asm.feed(on(62, 0.4))

    def test_small_regression_clamped(self):
        asm = WindowAssembler()
        asm.feed(on(60, 0.5))
        asm.feed(on(62, 0.4995))  # within tolerance

    def test_phase_anchored_at_first_event(self):
        windows = window_events([on(60, 1.2345)])
        assert windows[-1].window_end_sec == pytest.approx(1.24)

    def test_note_off_does_not_open_window(self):
        windows = window_events([on(60, 0.005), off(60, 0.043)], end_time=0.06)
        nonempty = [w for w in windows if not w.empty]
        assert len(nonempty) == 1

    def test_velocity_zero_note_on_is_off(self):
        windows = window_events([on(60, 0.005), MidiEvent(NOTE_ON, 60, 0, 0.043)], end_time=0.06)
        nonempty = [w for w in windows if not w.empty]
        assert len(nonempty) == 1

    def test_sustain_feeds_active_set(self):
        windows = window_events([on(60, 0.005), off(60, 0.035)], end_time=0.07)
        actives = [60 in w.active_pitches for w in windows]
        assert actives[:3] == [True, True, True]
        assert actives[3:] == [False] * (len(windows) - 3)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(
            st.tuples(st.integers(0, 127), st.floats(0, 5, allow_nan=False), st.integers(1, 127)),
            min_size=1,
            max_size=40,
        )
    )
    def test_partition_property(self, raw):
        events = sorted((on(p, round(t, 4), v) for p, t, v in raw), key=lambda e: e.timestamp_sec)
        windows = window_events(events)
        # contiguous, disjoint, fixed width
        for a, b in zip(windows, windows[1:]):
            assert b.frame_index == a.frame_index + 1
            assert b.window_end_sec - a.window_end_sec == pytest.approx(0.010)
        # every note-on in exactly one window
        total = sum(len(w.pitches) for w in windows)
        distinct = len({(e.pitch, e.timestamp_sec) for e in events})
        assert total >= distinct - sum(
            # same pitch twice in one window collapses to the later velocity
            1
            for i, e in enumerate(events)
            for f in events[i + 1 :]
            if e.pitch == f.pitch and abs(e.timestamp_sec - f.timestamp_sec) < 0.010
        )
        for w in windows:
            for p, _ in w.pitches:
                assert any(
                    e.pitch == p and w.window_end_sec - 0.010 - 1e-9 <= e.timestamp_sec < w.window_end_sec + 1e-9
                    for e in events
                )


class TestReplay:
    def _perf(self):
        return smf.timed_notes_to_smf([(60, 0.0, 0.5, 64), (62, 1.0, 0.5, 64)])

    def test_virtual_clock_times_match_file(self):
        events = list(replay_performance(self._perf(), speed=1.0))
        ons = [e for e in events if e.kind == NOTE_ON]
        assert ons[0].timestamp_sec == pytest.approx(0.0, abs=1e-6)
        assert ons[1].timestamp_sec == pytest.approx(1.0, abs=1e-6)

    def test_speed_two_halves_timestamps(self):
        events = list(replay_performance(self._perf(), speed=2.0))
        ons = [e for e in events if e.kind == NOTE_ON]
        assert ons[1].timestamp_sec == pytest.approx(0.5, abs=1e-6)

    def test_replay_windowing_deterministic(self):
        runs = []
        for _ in range(2):
            events = list(replay_performance(self._perf()))
            runs.append(window_events(events))
        assert runs[0] == runs[1]


class TestTracker:
    def test_duration_on_completion(self):
        tracker = NoteTracker()
        tracker.feed(on(60, 1.0, 80))
        assert tracker.note_in(60, 0.99, 1.01) == (1.0, 80, None)
        tracker.feed(off(60, 1.7))
        onset, vel, dur = tracker.note_in(60, 0.99, 1.01)
        assert (onset, vel) == (1.0, 80)
        assert dur == pytest.approx(0.7)


class TestEmission:
    def _events(self):
        return [
            AccompanimentEvent(60, 1.0, 0.5, 54, "a0"),
            AccompanimentEvent(64, 1.0, 0.5, 54, "a1"),
        ]

    def test_note_pairs(self):
        sink = EventSink()
        play_events([AccompanimentEvent(60, 1.0, 0.5, 54, "x")], sink, VirtualClock())
        kinds = [(e.kind, e.pitch, round(e.timestamp_sec, 6)) for e in sink.events]
        assert kinds == [(NOTE_ON, 60, 1.0), (NOTE_OFF, 60, 1.5)]

    def test_chord_ons_before_offs(self):
        sink = EventSink()
        play_events(self._events(), sink, VirtualClock())
        kinds = [e.kind for e in sink.events]
        assert kinds == [NOTE_ON, NOTE_ON, NOTE_OFF, NOTE_OFF]

    def test_late_event_fires_immediately(self):
        sink = EventSink()
        clock = VirtualClock(start=2.0)
        stats = play_events([AccompanimentEvent(60, 1.0, 0.5, 54, "x")], sink, clock)
        assert stats.late_count == 1
        assert sink.events[0].timestamp_sec == pytest.approx(2.0)

    def test_no_stuck_notes_even_without_offs(self):
        sink = EventSink()
        sink.send(on(60, 0.0))
        sink.send(on(60, 0.1))
        sink.send(off(60, 0.2))
        assert sink.open_count == 1
        sink.all_notes_off(1.0)
        assert sink.open_count == 0
        ons = sum(e.kind == NOTE_ON for e in sink.events)
        offs = sum(e.kind == NOTE_OFF for e in sink.events)
        assert ons == offs

    def test_smf_sink_roundtrip(self):
        sink = SmfSink(bpm=120)
        play_events(self._events(), sink, VirtualClock())
        parsed = smf.parse_smf(sink.to_bytes())
        notes = smf.notes_from_smf(parsed)
        assert len(notes) == 2
