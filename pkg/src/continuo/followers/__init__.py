"""Score followers: probabilistic (HMM) and warping (online DTW) trackers."""

from .base import ScorePositionEstimate
from .hmm import HmmConfig, HmmFollower, HmmState, hmm_init, hmm_step
from .oltw import (
    FrameSequence,
    OltwConfig,
    OltwEnsemble,
    OltwState,
    ensemble_step,
    featurize_reference,
    oltw_init,
    oltw_step,
)

__all__ = [
    "ScorePositionEstimate",
    "HmmConfig",
    "HmmFollower",
    "HmmState",
    "hmm_init",
    "hmm_step",
    "FrameSequence",
    "OltwConfig",
    "OltwEnsemble",
    "OltwState",
    "ensemble_step",
    "featurize_reference",
    "oltw_init",
    "oltw_step",
]
