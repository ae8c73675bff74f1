"""Probabilistic score follower.

A hybrid of a discrete Markov chain over score onsets and a scalar Kalman
filter over the beat period. Each solo score onset contributes two hidden
states: a match state (the soloist is playing this onset) and an insertion
state (extra notes sounding around it). Windows of incoming note-ons are
scored against the states with a per-pitch Bernoulli model and against the
elapsed time with a Gaussian over the tempo-predicted inter-onset
interval; the forward algorithm keeps the full posterior, and the Kalman
filter is updated with the score IOI of the maximum-posterior state (hard
assignment).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..midi_io import InputWindow
from ..score import SOLO, Score, build_onset_grid, part_chords
from .base import ScorePositionEstimate

LIKELIHOOD_FLOOR = 1e-300
N_PITCHES = 128


class HmmError(ValueError):
    pass


@dataclass(frozen=True)
class HmmConfig:
    q_match: float = 0.95  # P(expected pitch sounds | match state)
    q_spur: float = 0.02  # P(unexpected pitch sounds)
    p_self: float = 0.5  # self-loop probability
    p_insert: float = 0.05  # match -> its insertion state
    skip_max: int = 4  # furthest forward jump, in onsets
    skip_decay: float = 0.5  # geometric weight ratio for longer jumps
    ioi_sigma_rel: float = 0.2  # IOI std dev, relative part
    ioi_sigma_min: float = 0.02  # IOI std dev floor (sec)
    epsilon: float = 0.01  # initial belief mass spread off the first onset
    kalman_process_noise: float = 1e-4
    kalman_obs_noise: float = 2.5e-3
    kalman_initial_variance: float = 0.01

    def __post_init__(self):
        for name in ("q_match", "q_spur", "p_self", "p_insert", "skip_decay", "epsilon"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise HmmError(f"{name} must be in (0, 1), got {v}")
        if self.p_self + self.p_insert >= 1.0:
            raise HmmError("p_self + p_insert must be < 1")
        if self.skip_max < 1:
            raise HmmError("skip_max must be >= 1")
        if self.ioi_sigma_min <= 0 or self.ioi_sigma_rel < 0:
            raise HmmError("bad IOI sigma parameters")


@dataclass
class HmmState:
    """Mutable follower state; steps are strictly serialized by the owner."""

    config: HmmConfig
    onsets: np.ndarray  # solo grid onsets (beats)
    pitch_masks: np.ndarray  # (n_onsets, 128) bool, expected pitches
    belief: np.ndarray  # (2 * n_onsets,) match states first, then insertions
    kalman_mean: float  # beat period (sec/beat)
    kalman_var: float
    last_window_end_sec: float | None = None
    last_reported_onset_index: int = 0
    map_index: int = 0  # raw (unclamped) MAP match state of the last step
    last_advance_time: float | None = None
    # transition structure (parallel arrays over sparse transitions)
    trans_src: np.ndarray = field(default=None, repr=False)
    trans_dst: np.ndarray = field(default=None, repr=False)
    trans_prob: np.ndarray = field(default=None, repr=False)
    trans_span: np.ndarray = field(default=None, repr=False)  # beats

    @property
    def n_onsets(self) -> int:
        return len(self.onsets)


def _build_transitions(onsets: np.ndarray, cfg: HmmConfig):
    """Sparse transition table over match/insertion states.

    Match state i: self-loop, its insertion state, and geometric forward
    jumps of 1..skip_max onsets. Insertion state i: self-loop and the same
    forward jumps (exit to its host onset's next states). Jump mass that
    falls off the end of the score folds into the self-loop.
    """
    n = len(onsets)
    src, dst, prob, span = [], [], [], []

    def add(s, d, p, beats):
        if p > 0:
            src.append(s)
            dst.append(d)
            prob.append(p)
            span.append(beats)

    for i in range(n):
        kmax = min(cfg.skip_max, n - 1 - i)
        weights = np.array([cfg.skip_decay**k for k in range(kmax)])
        # from the match state
        forward_mass = 1.0 - cfg.p_self - cfg.p_insert
        add(i, n + i, cfg.p_insert, 0.0)
        if kmax:
            w = weights / weights.sum() * forward_mass
            add(i, i, cfg.p_self, 0.0)
            for k in range(1, kmax + 1):
                add(i, i + k, w[k - 1], float(onsets[i + k] - onsets[i]))
        else:
            add(i, i, cfg.p_self + forward_mass, 0.0)
        # from the insertion state
        ins_forward = 1.0 - cfg.p_self
        if kmax:
            w = weights / weights.sum() * ins_forward
            add(n + i, n + i, cfg.p_self, 0.0)
            for k in range(1, kmax + 1):
                add(n + i, i + k, w[k - 1], float(onsets[i + k] - onsets[i]))
        else:
            add(n + i, n + i, 1.0, 0.0)

    return (
        np.array(src, dtype=np.intp),
        np.array(dst, dtype=np.intp),
        np.array(prob),
        np.array(span),
    )


def hmm_init(score: Score, config: HmmConfig | None = None, initial_bpm: float | None = None) -> HmmState:
    """Belief concentrated on the first onset; beat period from the score tempo."""
    config = config or HmmConfig()
    if not score.solo_notes:
        raise HmmError("score has no solo notes")
    grid = build_onset_grid(score, SOLO)
    chords = part_chords(score, SOLO)
    masks = np.zeros((len(grid), N_PITCHES), dtype=bool)
    for i, chord in enumerate(chords):
        for p in chord.pitches:
            masks[i, p] = True

    bpm = initial_bpm if initial_bpm is not None else (score.initial_bpm or 120.0)
    if bpm <= 0:
        raise HmmError("initial bpm must be positive")

    n_states = 2 * len(grid)
    belief = np.full(n_states, config.epsilon / max(n_states - 1, 1))
    belief[0] = 1.0 - config.epsilon if n_states > 1 else 1.0
    belief /= belief.sum()

    src, dst, prob, span = _build_transitions(grid.onsets, config)
    return HmmState(
        config=config,
        onsets=grid.onsets,
        pitch_masks=masks,
        belief=belief,
        kalman_mean=60.0 / bpm,
        kalman_var=config.kalman_initial_variance,
        trans_src=src,
        trans_dst=dst,
        trans_prob=prob,
        trans_span=span,
    )


def _gaussian_pdf(x, mean, sigma):
    z = (x - mean) / sigma
    return np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))


def _pitch_likelihoods(state: HmmState, sounding: np.ndarray) -> np.ndarray:
    """Per-state window likelihood under the per-pitch Bernoulli model."""
    cfg = state.config
    lqm, l1qm = math.log(cfg.q_match), math.log(1.0 - cfg.q_match)
    lqs, l1qs = math.log(cfg.q_spur), math.log(1.0 - cfg.q_spur)
    n_sound = int(sounding.sum())
    expected_count = state.pitch_masks.sum(axis=1)
    hits = state.pitch_masks[:, sounding].sum(axis=1)
    misses = expected_count - hits
    spurious = n_sound - hits
    silent_rest = N_PITCHES - expected_count - spurious
    ll_match = hits * lqm + misses * l1qm + spurious * lqs + silent_rest * l1qs
    ll_insert = n_sound * lqs + (N_PITCHES - n_sound) * l1qs
    out = np.empty(2 * state.n_onsets)
    out[: state.n_onsets] = np.exp(ll_match)
    out[state.n_onsets :] = math.exp(ll_insert)
    return np.maximum(out, LIKELIHOOD_FLOOR)


def hmm_step(state: HmmState, window: InputWindow) -> tuple[HmmState, ScorePositionEstimate]:
    """Advance the follower by one non-empty window.

    Order per step: propagate the belief through the transition model
    weighted by the IOI likelihood (Gaussian around the tempo-predicted
    interval for each transition's score span), reweight by the pitch
    likelihood, renormalize, take the MAP match state, update the Kalman
    beat period with the MAP state's score IOI, and report the MAP onset
    clamped to be non-decreasing.
    """
    if window.empty:
        raise HmmError("empty windows bypass the probabilistic follower")
    cfg = state.config
    t = window.window_end_sec

    contrib = state.belief[state.trans_src] * state.trans_prob
    if state.last_window_end_sec is not None:
        delta_perf = t - state.last_window_end_sec
        mean = state.kalman_mean * state.trans_span
        sigma = cfg.ioi_sigma_rel * mean + cfg.ioi_sigma_min
        contrib = contrib * np.maximum(_gaussian_pdf(delta_perf, mean, sigma), LIKELIHOOD_FLOOR)

    alpha = np.zeros_like(state.belief)
    np.add.at(alpha, state.trans_dst, contrib)

    sounding = np.zeros(N_PITCHES, dtype=bool)
    for p, _ in window.pitches:
        sounding[p] = True
    alpha *= _pitch_likelihoods(state, sounding)
    alpha = np.maximum(alpha, LIKELIHOOD_FLOOR)
    alpha /= alpha.sum()
    state.belief = alpha

    map_new = int(np.argmax(alpha[: state.n_onsets]))

    # hard-assignment beat-period update on a MAP advance
    if state.last_advance_time is None:
        state.last_advance_time = t
    elif map_new > state.map_index:
        span = float(state.onsets[map_new] - state.onsets[state.map_index])
        delta = t - state.last_advance_time
        v = state.kalman_var + cfg.kalman_process_noise
        gain = v * span / (v * span * span + cfg.kalman_obs_noise)
        state.kalman_mean += gain * (delta - state.kalman_mean * span)
        state.kalman_var = (1.0 - gain * span) * v
        state.last_advance_time = t
    state.map_index = map_new
    state.last_window_end_sec = t

    reported = max(map_new, state.last_reported_onset_index)
    state.last_reported_onset_index = reported
    estimate = ScorePositionEstimate(
        position_beats=float(state.onsets[reported]),
        confidence=float(alpha[map_new]),
        timestamp_sec=t,
    )
    return state, estimate


class HmmFollower:
    """Pipeline wrapper: skips empty windows, repeating the last estimate."""

    def __init__(self, score: Score, config: HmmConfig | None = None, initial_bpm: float | None = None):
        self.state = hmm_init(score, config, initial_bpm)
        self.last_estimate: ScorePositionEstimate | None = None

    def process(self, window: InputWindow) -> ScorePositionEstimate | None:
        if window.empty:
            return self.last_estimate
        _, estimate = hmm_step(self.state, window)
        self.last_estimate = estimate
        return estimate
