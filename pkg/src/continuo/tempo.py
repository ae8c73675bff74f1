"""Synchronization tempo models.

Each model consumes one aligned soloist onset at a time and predicts the
time of the next onset together with a beat period (seconds per beat).
Six variants:

* ``reactive`` — next onset extrapolated from the last observed one; the
  beat period is the raw observed inter-onset ratio.
* ``moving-average`` — reactive prediction, exponentially smoothed beat
  period.
* ``linear`` — timekeeper with error correction: both the onset
  prediction and the beat period are corrected by the observed
  asynchrony; a late prediction is corrected at twice the rate of an
  early one.
* ``expectation`` — the linear model with the beat period driven by a
  reference performance's tempo curve evaluated at the upcoming score
  position. Without a reference it degenerates exactly to ``linear``.
* ``joint`` — an error-correcting adaptation estimate blended with an
  anticipation estimate built from a linear extrapolation of the two
  most recent observed beat periods.
* ``kalman`` — scalar Kalman filter with the beat period as the latent
  state and the observed inter-onset interval as the measurement.

Conventions: the asynchrony is prediction minus observation; the observed
beat period is the performed IOI divided by the score IOI over the same
span; on the first observation there is no IOI yet, so every model
anchors on the observed onset (zero asynchrony) and keeps its initial
beat period. Beat periods are clamped to [0.05, 5.0] s/beat after every
update so a pathological IOI can never capsize the scheduler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

BEAT_PERIOD_MIN = 0.05
BEAT_PERIOD_MAX = 5.0

VARIANTS = ("reactive", "moving-average", "linear", "expectation", "joint", "kalman")


class TempoError(ValueError):
    """Bad variant, parameters, or observation."""


def clamp_beat_period(b: float) -> float:
    return min(max(b, BEAT_PERIOD_MIN), BEAT_PERIOD_MAX)


@dataclass(frozen=True)
class TempoParams:
    """Learning rates and filter constants for all variants.

    Each variant reads only its own fields; unused fields are ignored so a
    single grid-search record can describe any variant.
    """

    smoothing: float = 0.25  # moving-average: weight kept on the previous beat period
    eta_onset: float = 0.5  # linear/expectation/joint: onset correction rate
    eta_period: float = 0.5  # linear/expectation/joint: beat-period correction rate
    eta_anticipation: float = 0.5  # joint: blend rate between adaptation and anticipation
    transition: float = 1.0  # kalman: beat-period transition coefficient
    variance_gain: float = 1.0  # kalman: prior-variance scale (applied squared)
    process_noise: float = 1e-4  # kalman: additive process noise
    obs_noise: float = 1e-2  # kalman: observation noise
    initial_variance: float = 1.0  # kalman: starting variance of the beat period


@dataclass(frozen=True)
class TempoObservation:
    """One aligned soloist onset.

    perf_ioi and score_ioi_prev span the interval from the previous aligned
    onset to this one (their ratio is the observed beat period; when the
    follower skipped onsets both span the whole skip). score_ioi_next and
    score_onset_next describe the upcoming onset the model must predict.
    On the first onset of a run the *prev fields are None; at the final
    onset the *next fields are None.
    """

    onset_sec: float
    perf_ioi: float | None = None
    score_ioi_prev: float | None = None
    score_ioi_next: float | None = None
    score_onset_next: float | None = None

    @property
    def observed_beat_period(self) -> float | None:
        if self.perf_ioi is None or not self.score_ioi_prev:
            return None
        return self.perf_ioi / self.score_ioi_prev


@dataclass(frozen=True)
class TempoState:
    variant: str
    beat_period: float
    params: TempoParams = field(default_factory=TempoParams)
    predicted_onset: float | None = None
    tau_initial: float = 0.5
    tau_prev: float | None = None  # joint: previous observed beat period
    variance: float = 1.0  # kalman: posterior variance carried between steps
    expectation: Callable[[float], float] | None = None
    observed: int = 0


def init_tempo_state(
    variant: str,
    initial_bpm: float | None = None,
    beat_period: float | None = None,
    params: TempoParams | None = None,
    expectation: Callable[[float], float] | None = None,
) -> TempoState:
    """Fresh model state at the performer-set initial tempo."""
    if variant not in VARIANTS:
        raise TempoError(f"unknown tempo variant {variant!r}; valid: {', '.join(VARIANTS)}")
    if beat_period is None:
        if initial_bpm is None or initial_bpm <= 0:
            raise TempoError("need initial_bpm > 0 or an explicit beat_period")
        beat_period = 60.0 / initial_bpm
    params = params or TempoParams()
    return TempoState(
        variant=variant,
        beat_period=clamp_beat_period(beat_period),
        params=params,
        tau_initial=beat_period,
        variance=params.initial_variance,
        expectation=expectation,
    )


def _asynchrony(state: TempoState, obs: TempoObservation) -> float:
    if state.predicted_onset is None:
        return 0.0
    return state.predicted_onset - obs.onset_sec


def _predict(anchor: float, b: float, obs: TempoObservation) -> float | None:
    if obs.score_ioi_next is None:
        return None
    return anchor + b * obs.score_ioi_next


def update_reactive(state: TempoState, obs: TempoObservation) -> TempoState:
    """Prediction from the observed onset at the current beat period;
    the new beat period is the raw observed ratio."""
    o_hat = _predict(obs.onset_sec, state.beat_period, obs)
    tau = obs.observed_beat_period
    b = state.beat_period if tau is None else tau
    return replace(
        state, beat_period=clamp_beat_period(b), predicted_onset=o_hat, observed=state.observed + 1
    )


def update_moving_average(state: TempoState, obs: TempoObservation) -> TempoState:
    """Reactive prediction with an exponentially smoothed beat period."""
    o_hat = _predict(obs.onset_sec, state.beat_period, obs)
    tau = obs.observed_beat_period
    if tau is None:
        b = state.beat_period
    else:
        w = state.params.smoothing
        b = w * state.beat_period + (1.0 - w) * tau
    return replace(
        state, beat_period=clamp_beat_period(b), predicted_onset=o_hat, observed=state.observed + 1
    )


def _linear_step(state: TempoState, obs: TempoObservation) -> tuple[float | None, float]:
    a = _asynchrony(state, obs)
    anchor = obs.onset_sec if state.predicted_onset is None else state.predicted_onset
    o_hat = None
    if obs.score_ioi_next is not None:
        o_hat = anchor + state.beat_period * obs.score_ioi_next - state.params.eta_onset * a
    return o_hat, a


def update_linear(state: TempoState, obs: TempoObservation) -> TempoState:
    """Error-correcting timekeeper; late predictions (positive asynchrony)
    pull the beat period down at twice the rate."""
    o_hat, a = _linear_step(state, obs)
    eta = state.params.eta_period
    if a < 0:
        b = state.beat_period - eta * a
    else:
        b = state.beat_period - 2.0 * eta * a
    return replace(
        state, beat_period=clamp_beat_period(b), predicted_onset=o_hat, observed=state.observed + 1
    )


def update_expectation(state: TempoState, obs: TempoObservation) -> TempoState:
    """Linear onset correction with the beat period anchored to the
    reference tempo curve at the upcoming score position. Exactly the
    linear model when no reference is configured."""
    if state.expectation is None:
        return update_linear(state, obs)
    o_hat, a = _linear_step(state, obs)
    if obs.score_onset_next is not None:
        b = state.expectation(obs.score_onset_next) - state.params.eta_period * a
    else:
        b = state.beat_period
    return replace(
        state, beat_period=clamp_beat_period(b), predicted_onset=o_hat, observed=state.observed + 1
    )


def update_joint(state: TempoState, obs: TempoObservation) -> TempoState:
    """Adaptation (error correction) joined with anticipation (linear
    extrapolation of the two most recent observed beat periods)."""
    p = state.params
    a = _asynchrony(state, obs)
    anchor = obs.onset_sec if state.predicted_onset is None else state.predicted_onset
    b = state.beat_period - p.eta_period * a
    tau = obs.observed_beat_period
    if obs.score_ioi_next is None:
        o_hat = None
        tau_prev = state.tau_prev if tau is None else tau
    elif tau is None:
        o_hat = obs.onset_sec + state.beat_period * obs.score_ioi_next
        tau_prev = state.tau_prev
    else:
        tau_prev = state.tau_prev if state.tau_prev is not None else tau
        tau_hat = p.eta_period * (2.0 * tau - tau_prev) + (1.0 - p.eta_period) * tau
        o_adapt = anchor + state.beat_period * obs.score_ioi_next - p.eta_onset * a
        o_anticipate = obs.onset_sec + tau_hat * obs.score_ioi_next
        o_hat = o_anticipate - p.eta_anticipation * (o_adapt - o_anticipate)
        tau_prev = tau
    return replace(
        state,
        beat_period=clamp_beat_period(b),
        predicted_onset=o_hat,
        tau_prev=tau_prev,
        observed=state.observed + 1,
    )


def update_kalman(state: TempoState, obs: TempoObservation) -> TempoState:
    """Scalar Kalman filter on the beat period.

    Prior: b' = transition * b with variance variance_gain^2 * v +
    process_noise. Measurement: the performed IOI, whose model is
    b' * score_ioi with observation noise obs_noise. The prediction then
    advances the previous prediction by the filtered beat period."""
    p = state.params
    anchor = obs.onset_sec if state.predicted_onset is None else state.predicted_onset
    if obs.perf_ioi is None or not obs.score_ioi_prev:
        o_hat = _predict(anchor, state.beat_period, obs)
        return replace(state, predicted_onset=o_hat, observed=state.observed + 1)
    d_prev = obs.score_ioi_prev
    b_prior = p.transition * state.beat_period
    v = p.variance_gain**2 * state.variance + p.process_noise
    residual = obs.perf_ioi - b_prior * d_prev
    gain = v * d_prev / (v * d_prev**2 + p.obs_noise)
    b = b_prior + gain * residual
    v_post = (1.0 - gain * d_prev) * v
    o_hat = None
    if obs.score_ioi_next is not None:
        o_hat = anchor + b * obs.score_ioi_next
    return replace(
        state,
        beat_period=clamp_beat_period(b),
        predicted_onset=o_hat,
        variance=v_post,
        observed=state.observed + 1,
    )


_UPDATES = {
    "reactive": update_reactive,
    "moving-average": update_moving_average,
    "linear": update_linear,
    "expectation": update_expectation,
    "joint": update_joint,
    "kalman": update_kalman,
}


def step_tempo(state: TempoState, obs: TempoObservation) -> TempoState:
    return _UPDATES[state.variant](state, obs)


def expectation_from_references(references: Sequence, mode: str = "mean") -> Callable[[float], float]:
    """Beat-period curve from one or more reference performances.

    mode="mean" averages the per-reference beat periods at each lookup;
    mode="first" uses only the first reference.
    """
    if not references:
        raise TempoError("need at least one reference performance")
    if mode == "first":
        references = references[:1]
    elif mode != "mean":
        raise TempoError(f"unknown blend mode {mode!r}")

    def curve(score_onset: float) -> float:
        return math.fsum(r.beat_period_at(score_onset) for r in references) / len(references)

    return curve
