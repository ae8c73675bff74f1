"""continuo: real-time symbolic accompaniment.

A solo MIDI performance is followed against a known score (probabilistic
or time-warping follower), a synchronization tempo model predicts the
soloist's next onset, and an expressive decoder schedules the
accompaniment part conditioned on the soloist's tempo, dynamics and
articulation.
"""

from .accompanist import (
    AccompanimentEvent,
    AlignedOnset,
    ExpressiveParams,
    MatchedNote,
    Scheduler,
    decode_accompaniment,
    encode_soloist,
)
from .followers import (
    HmmConfig,
    HmmFollower,
    OltwConfig,
    OltwEnsemble,
    ScorePositionEstimate,
    featurize_reference,
)
from .midi_io import (
    InputWindow,
    MidiEvent,
    NoteTracker,
    SmfSink,
    VirtualClock,
    WindowAssembler,
    replay_performance,
    window_events,
)
from .pipeline import AccompanimentConfig, DuetRunner, run_duet
from .score import (
    OnsetGrid,
    PerformedNote,
    ReferencePerformance,
    Score,
    ScoreNote,
    build_onset_grid,
    import_midi_score,
    load_reference,
    parse_score,
)
from .tempo import (
    TempoObservation,
    TempoParams,
    TempoState,
    init_tempo_state,
    step_tempo,
)

__version__ = "0.1.0"
