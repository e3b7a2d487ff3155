"""Origin decision over paired prediction series.

Both devices' prediction series are tiled into overlapping 26 s windows and
each window is scored by a three-branch rule:

1. no activity at the source (max prediction <= threshold_source): the
   window cannot contain a source-originated event, score 0;
2. the receiver is confident (max prediction > threshold_receiver): that
   maximum is the score;
3. otherwise the normalized cross-correlation maximum between the two
   series, searched over lags up to the clock-drift bound, is the score.

Device clocks may disagree by up to max_drift_s, so the receiver slice
handed to a window is padded by that bound on both sides: a drifted event
near the window edge stays in view and the lag search absorbs the offset.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from .detector import PredictionSeries

STEP_S = 0.375


class Branch(str, enum.Enum):
    NO_SOURCE_ACTIVITY = "no_source_activity"
    RECEIVER_CONFIDENT = "receiver_confident"
    CROSS_CORRELATION = "cross_correlation"
    CAPTION_MAX = "caption_max"


@dataclass(frozen=True)
class FusionConfig:
    window_s: float = 26.0
    window_hop_s: float = 13.0
    threshold_source: float = 0.8
    threshold_receiver: float = 0.6
    max_drift_s: float = 10.0
    # Alternative aggregation: after the source gate, score the window with
    # the larger of the two series maxima instead of branches 2/3. Kept as a
    # documented variant, off by default.
    caption_max_aggregation: bool = False

    def __post_init__(self):
        if not (0 < self.threshold_source < 1 and 0 < self.threshold_receiver < 1):
            raise ValueError("thresholds must lie strictly in (0, 1)")
        if self.window_hop_s <= 0:
            raise ValueError("window_hop_s must be positive")
        if self.max_drift_s > self.window_s / 2:
            raise ValueError("max_drift_s must not exceed half the window")

    @property
    def max_lag_steps(self) -> int:
        return round(self.max_drift_s / STEP_S)


@dataclass
class FusionVerdict:
    window_start_s: float
    score: float
    branch: Branch
    best_lag_s: float | None = None

    def __post_init__(self):
        if self.branch == Branch.NO_SOURCE_ACTIVITY and self.score != 0.0:
            raise ValueError("gated verdicts must score 0")


def _lag_preference(max_lag: int):
    """Lags ordered by |lag| with the negative one first: 0, -1, +1, -2, ..."""
    yield 0
    for k in range(1, max_lag + 1):
        yield -k
        yield k


def xcorr_max(a, b, max_lag_steps: int) -> tuple[float, int]:
    """Lag-bounded maximum of the normalized cross-correlation.

    value = max over |lag| <= max_lag_steps of sum_t a[t] * b[t + lag],
    divided by ||a|| * ||b||; the sum runs over the overlapping support.
    Ties go to the smaller |lag|, then to the negative lag. If either
    window is all zero the result is (0.0, 0) by definition.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if max_lag_steps < 0:
        raise ValueError("max_lag_steps must be >= 0")
    norm = math.sqrt(float(a @ a)) * math.sqrt(float(b @ b))
    if norm == 0.0:
        return 0.0, 0

    best_val, best_lag = -math.inf, 0
    for lag in _lag_preference(max_lag_steps):
        t_lo = max(0, -lag)
        t_hi = min(len(a), len(b) - lag)
        val = float(a[t_lo:t_hi] @ b[t_lo + lag : t_hi + lag]) / norm if t_hi > t_lo else 0.0
        if val > best_val:
            best_val, best_lag = val, lag
    return best_val, best_lag


def _aligned_xcorr(src: PredictionSeries, rcv: PredictionSeries, max_lag_steps: int):
    """xcorr_max between two slices whose start times may differ.

    Lags are measured in nominal time: lag L means the receiver content
    matches the source when shifted back by L steps, so a receiver clock
    running `delta` ahead peaks near round(delta / step). The receiver slice
    may be longer than the source window (drift padding).
    """
    a = src.probs
    b = rcv.probs
    if a.size == 0 or b.size == 0:
        return 0.0, 0
    base = round((rcv.t0 - src.t0) / STEP_S)
    norm = math.sqrt(float(a @ a)) * math.sqrt(float(b @ b))
    if norm == 0.0:
        return 0.0, 0

    best_val, best_lag = -math.inf, 0
    for lag in _lag_preference(max_lag_steps):
        shift = lag - base  # index into b of the sample aligned with a[0] + lag
        t_lo = max(0, -shift)
        t_hi = min(len(a), len(b) - shift)
        val = float(a[t_lo:t_hi] @ b[t_lo + shift : t_hi + shift]) / norm if t_hi > t_lo else 0.0
        if val > best_val:
            best_val, best_lag = val, lag
    return best_val, best_lag


def _check_compatible(src: PredictionSeries, rcv: PredictionSeries) -> None:
    if len(src) > 1 and len(rcv) > 1 and abs(src.step_s - rcv.step_s) > 1e-6:
        raise ValueError("incompatible prediction series: different steps")


def fuse_window(
    src: PredictionSeries,
    rcv: PredictionSeries,
    cfg: FusionConfig = FusionConfig(),
    window_start: float | None = None,
) -> FusionVerdict:
    """Score one window; src covers the nominal span, rcv may carry padding.

    The receiver-confidence check (branch 2) looks only at receiver points
    inside the nominal source span; the cross-correlation fallback searches
    the full (padded) receiver slice over lags up to the drift bound.
    """
    _check_compatible(src, rcv)
    if window_start is None:
        window_start = src.t0 if len(src) else rcv.t0

    max_src = float(src.probs.max()) if len(src) else 0.0
    if max_src <= cfg.threshold_source:
        return FusionVerdict(window_start, 0.0, Branch.NO_SOURCE_ACTIVITY)

    rcv_nominal = rcv.slice_time(window_start, window_start + cfg.window_s)
    max_rcv = float(rcv_nominal.probs.max()) if len(rcv_nominal) else 0.0

    if cfg.caption_max_aggregation:
        return FusionVerdict(window_start, max(max_src, max_rcv), Branch.CAPTION_MAX)

    if max_rcv > cfg.threshold_receiver:
        return FusionVerdict(window_start, max_rcv, Branch.RECEIVER_CONFIDENT)

    value, lag = _aligned_xcorr(src, rcv, cfg.max_lag_steps)
    return FusionVerdict(
        window_start, value, Branch.CROSS_CORRELATION, best_lag_s=lag * STEP_S
    )


def fuse_stream(
    src: PredictionSeries, rcv: PredictionSeries, cfg: FusionConfig = FusionConfig()
) -> list[FusionVerdict]:
    """Tile the common span into overlapping windows and score each one.

    Windows start at the later series start and advance by window_hop_s; a
    span shorter than one window yields a single truncated window.
    """
    if len(src) == 0 or len(rcv) == 0:
        raise ValueError("no predictions")
    _check_compatible(src, rcv)

    t0 = max(src.t0, rcv.t0)
    t1 = min(src.t_end, rcv.t_end)
    n = max(1, int(math.floor((t1 - t0 - cfg.window_s) / cfg.window_hop_s)) + 1)

    verdicts = []
    for i in range(n):
        w = t0 + i * cfg.window_hop_s
        src_win = src.slice_time(w, w + cfg.window_s)
        rcv_win = rcv.slice_time(w - cfg.max_drift_s, w + cfg.window_s + cfg.max_drift_s)
        if len(src_win) == 0:
            verdicts.append(FusionVerdict(w, 0.0, Branch.NO_SOURCE_ACTIVITY))
            continue
        verdicts.append(fuse_window(src_win, rcv_win, cfg, window_start=w))
    return verdicts


@dataclass(frozen=True)
class BundleSpec:
    """Pairing of per-device spectrogram representations for a fused model."""

    name: str
    receiver_order: int
    source_order: int


def bundle(receiver_stack_order: int, source_stack_order: int) -> BundleSpec:
    """Named pairing of stack orders; (0,3) and (1,3) are the shipped bundles."""
    for order in (receiver_stack_order, source_stack_order):
        if order not in (0, 1, 2, 3):
            raise ValueError("unsupported stack order: must be in 0..3")
    names = {(0, 3): "bundled_one", (1, 3): "bundled_two"}
    name = names.get((receiver_stack_order, source_stack_order), "custom")
    return BundleSpec(
        name=name,
        receiver_order=receiver_stack_order,
        source_order=source_stack_order,
    )


BUNDLED_ONE = bundle(0, 3)
BUNDLED_TWO = bundle(1, 3)


def bundle_by_name(name: str) -> BundleSpec:
    aliases = {"one": BUNDLED_ONE, "bundled_one": BUNDLED_ONE,
               "two": BUNDLED_TWO, "bundled_two": BUNDLED_TWO}
    if name not in aliases:
        raise ValueError(f"unknown bundle name: {name!r} (use one|two)")
    return aliases[name]
