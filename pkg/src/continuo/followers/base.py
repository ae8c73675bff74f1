"""Shared follower output type."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ScorePositionEstimate:
    """Where the follower believes the soloist is.

    position_beats is a score position (continuous for the warping
    follower, an onset-grid value for the probabilistic one), reported
    monotonically non-decreasing over a run.
    """

    position_beats: float
    confidence: float
    timestamp_sec: float
    end_of_reference: bool = False
