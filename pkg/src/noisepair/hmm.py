"""Unsupervised two-state labeler over per-frame sound levels.

A Gaussian HMM with two states is fitted to a level series; decoding the
most probable state path and taking maximal runs of the louder state yields
proposed event segments (start/end times). Audibility grading of segments
is a listening step outside this artifact.
"""

import math
from dataclasses import dataclass

import numpy as np

from .events import EventLabel
from .frontend import LevelSeries

STD_FLOOR_DB = 0.5


@dataclass
class Hmm2:
    """Two-state HMM with univariate Gaussian emissions on dB levels."""

    initial: np.ndarray  # [2]
    transition: np.ndarray  # [2, 2], rows sum to 1
    means: np.ndarray  # [2] dB
    stds: np.ndarray  # [2] dB, > 0

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=np.float64)
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.stds = np.asarray(self.stds, dtype=np.float64)
        if abs(self.initial.sum() - 1.0) > 1e-9:
            raise ValueError("initial probabilities must sum to 1")
        if np.any(np.abs(self.transition.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("transition rows must sum to 1")
        if np.any(self.stds <= 0):
            raise ValueError("emission stds must be positive")

    @property
    def event_state(self) -> int:
        """The louder state; impulsive events sit above the background."""
        return int(self.means.argmax())


@dataclass
class HmmFit:
    hmm: Hmm2
    log_likelihood: float
    history: list  # per-iteration log-likelihood


def _emission_probs(x: np.ndarray, means: np.ndarray, stds: np.ndarray) -> np.ndarray:
    """Gaussian densities b[t, i], floored away from exact zero."""
    z = (x[:, None] - means[None, :]) / stds[None, :]
    b = np.exp(-0.5 * z**2) / (math.sqrt(2 * math.pi) * stds[None, :])
    return np.maximum(b, 1e-300)


def _forward_backward(x, pi, a, means, stds):
    """Scaled forward-backward pass; returns gamma, xi sums and log-likelihood."""
    b = _emission_probs(x, means, stds)
    n = len(x)
    alpha = np.empty((n, 2))
    scale = np.empty(n)

    alpha[0] = pi * b[0]
    scale[0] = alpha[0].sum()
    alpha[0] /= scale[0]
    for t in range(1, n):
        alpha[t] = (alpha[t - 1] @ a) * b[t]
        scale[t] = alpha[t].sum()
        alpha[t] /= scale[t]

    beta = np.empty((n, 2))
    beta[-1] = 1.0
    for t in range(n - 2, -1, -1):
        beta[t] = (a @ (b[t + 1] * beta[t + 1])) / scale[t + 1]

    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)

    # xi summed over t: expected transition counts
    xi_sum = np.zeros((2, 2))
    for t in range(n - 1):
        xi = (alpha[t][:, None] * a) * (b[t + 1] * beta[t + 1])[None, :] / scale[t + 1]
        xi_sum += xi

    return gamma, xi_sum, float(np.log(scale).sum())


def fit(levels: LevelSeries, tol: float = 1e-6, max_iter: int = 100, seed: int = 0) -> HmmFit:
    """Baum-Welch EM on a level series.

    Initialization puts the state means at the 10th/90th percentiles with a
    small seeded jitter; stds are floored at 0.5 dB to avoid variance
    collapse. The log-likelihood is nondecreasing across iterations (within
    1e-8); iteration stops when the improvement drops below tol.
    """
    x = np.asarray(levels.values, dtype=np.float64)
    if len(x) < 4:
        raise ValueError("degenerate level series: need at least 4 frames")
    if np.ptp(x) == 0:
        raise ValueError("degenerate level series: constant levels")

    rng = np.random.default_rng(seed)
    means = np.percentile(x, [10.0, 90.0]) + rng.normal(0.0, 0.01, 2)
    if means[0] == means[1]:
        means[1] += STD_FLOOR_DB
    stds = np.full(2, max(float(x.std()), STD_FLOOR_DB))
    pi = np.array([0.5, 0.5])
    a = np.array([[0.9, 0.1], [0.1, 0.9]])

    history = []
    for _ in range(max_iter):
        gamma, xi_sum, loglik = _forward_backward(x, pi, a, means, stds)
        history.append(loglik)

        pi = gamma[0] / gamma[0].sum()
        a = xi_sum / np.maximum(xi_sum.sum(axis=1, keepdims=True), 1e-300)
        weights = gamma.sum(axis=0)
        means = (gamma * x[:, None]).sum(axis=0) / weights
        var = (gamma * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / weights
        stds = np.maximum(np.sqrt(var), STD_FLOOR_DB)

        if len(history) > 1 and history[-1] - history[-2] < tol:
            break

    hmm = Hmm2(initial=pi, transition=a, means=means, stds=stds)
    _, _, final = _forward_backward(x, pi, a, means, stds)
    return HmmFit(hmm=hmm, log_likelihood=final, history=history)


def decode(hmm: Hmm2, levels: LevelSeries) -> np.ndarray:
    """Viterbi: the most probable state path for a level series."""
    x = np.asarray(levels.values, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("empty level series")
    log_b = np.log(_emission_probs(x, hmm.means, hmm.stds))
    log_a = np.log(np.maximum(hmm.transition, 1e-300))
    log_pi = np.log(np.maximum(hmm.initial, 1e-300))

    n = len(x)
    score = np.empty((n, 2))
    back = np.zeros((n, 2), dtype=np.int64)
    score[0] = log_pi + log_b[0]
    for t in range(1, n):
        cand = score[t - 1][:, None] + log_a
        back[t] = cand.argmax(axis=0)
        score[t] = cand[back[t], [0, 1]] + log_b[t]

    path = np.empty(n, dtype=np.int64)
    path[-1] = score[-1].argmax()
    for t in range(n - 2, -1, -1):
        path[t] = back[t + 1, path[t + 1]]
    return path


def segments(
    states: np.ndarray,
    frame_period_s: float,
    event_state: int = 1,
    start_time_s: float = 0.0,
) -> list[EventLabel]:
    """Maximal runs of the event state as [start, end) spans.

    Audibility is left unset; grading segments is the manual step.
    """
    states = np.asarray(states)
    spans = []
    run_start = None
    for t, s in enumerate(states):
        if s == event_state and run_start is None:
            run_start = t
        elif s != event_state and run_start is not None:
            spans.append((run_start, t))
            run_start = None
    if run_start is not None:
        spans.append((run_start, len(states)))
    return [
        EventLabel(
            start_s=start_time_s + lo * frame_period_s,
            end_s=start_time_s + hi * frame_period_s,
        )
        for lo, hi in spans
    ]


def label_stream(levels: LevelSeries, tol: float = 1e-6, max_iter: int = 100,
                 seed: int = 0) -> list[EventLabel]:
    """Fit, decode and segment in one step; the usual labeling entry point."""
    result = fit(levels, tol=tol, max_iter=max_iter, seed=seed)
    states = decode(result.hmm, levels)
    return segments(
        states,
        levels.frame_period_s,
        event_state=result.hmm.event_state,
        start_time_s=levels.start_time_s,
    )
