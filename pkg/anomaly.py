"""
Abrupt-change detection on boundary-data increments.

Three threshold schemes share one verdict rule, |dy| > TH: a static threshold
computed once over a whole series, a sliding-window threshold, and the
recursive EWMA threshold whose smoothing factor adapts to the deviation of
each new increment.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Iterable, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class InsufficientDataError(ValueError):
    """Raised when a statistic is requested over no data."""


class Detector(str, Enum):
    """Threshold scheme."""

    STATIC = "static"
    MOVING_WINDOW = "window"
    EWMA = "ewma"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str) and value.lower() == "moving_window":
            return cls.MOVING_WINDOW
        return None


@dataclass(frozen=True)
class AnomalyVerdict:
    """Outcome of testing one increment."""

    is_outlier: bool
    delta: float
    threshold: float


@dataclass
class ThresholdState:
    """Running statistics and current threshold for one boundary variable."""

    scheme: Detector = Detector.EWMA
    mu: float = 0.0
    sigma2: float = 0.0
    capacity: int = 100
    window: Deque[float] = field(default_factory=deque)
    alpha_cap: float = 0.01
    c: float = 3.0
    epsilon: float = 1e-6
    warmup_remaining: int = 10
    th: float = 0.0
    static_th: Optional[float] = None

    def __post_init__(self):
        self.scheme = Detector(self.scheme)
        if self.capacity < 1:
            raise ValueError(f"window capacity must be positive, got {self.capacity}")
        if self.scheme is Detector.STATIC and self.static_th is not None:
            self.th = self.static_th


def _threshold(mu: float, sigma2: float) -> float:
    # |mu| keeps the band symmetric while the mean itself is negative
    return abs(mu) + 3.0 * math.sqrt(sigma2)


def _verdict(state: ThresholdState, delta: float, threshold: float) -> AnomalyVerdict:
    if state.warmup_remaining > 0:
        state.warmup_remaining -= 1
        return AnomalyVerdict(False, delta, threshold)
    return AnomalyVerdict(abs(delta) > threshold, delta, threshold)


def static_threshold(deltas: Sequence[float]) -> float:
    """
    Time-invariant threshold over a complete increment series.

    Args:
        deltas: Every increment of the observation period

    Returns:
        |mean| + 3 * population standard deviation
    """
    arr = np.asarray(deltas, dtype=float)
    if arr.size == 0:
        raise InsufficientDataError("static threshold needs at least one increment")
    return _threshold(float(arr.mean()), float(arr.var()))


def static_update(state: ThresholdState, delta: float) -> Tuple[ThresholdState, AnomalyVerdict]:
    """Test an increment against the precomputed static threshold."""
    if state.static_th is None:
        raise InsufficientDataError("static detector has not been calibrated")
    state.th = state.static_th
    return state, _verdict(state, delta, state.th)


def window_update(state: ThresholdState, delta: float) -> Tuple[ThresholdState, AnomalyVerdict]:
    """
    Slide the window by one increment, refresh the threshold, then test.

    Args:
        state: Moving-window detector state
        delta: New increment

    Returns:
        Updated state and the verdict for delta
    """
    state.window.append(delta)
    while len(state.window) > state.capacity:
        state.window.popleft()
    n = len(state.window)
    mu = math.fsum(state.window) / n
    sigma2 = math.fsum((d - mu) ** 2 for d in state.window) / n
    state.mu, state.sigma2 = mu, sigma2
    state.th = _threshold(mu, sigma2)
    return state, _verdict(state, delta, state.th)


def ewma_update(state: ThresholdState, delta: float) -> Tuple[ThresholdState, AnomalyVerdict]:
    """
    Recursive EWMA update with an adaptive smoothing factor.

    The verdict uses the threshold from before this increment so that a
    spike cannot raise its own bar.

    Args:
        state: EWMA detector state
        delta: New increment

    Returns:
        Updated state and the verdict for delta
    """
    th_prev = state.th
    sigma_prev = math.sqrt(state.sigma2)
    alpha = min(state.alpha_cap, abs(delta - state.mu) / (state.c * sigma_prev + state.epsilon))
    mu = alpha * delta + (1.0 - alpha) * state.mu
    sigma2 = alpha * (delta - mu) ** 2 + (1.0 - alpha) * state.sigma2
    state.mu, state.sigma2 = mu, sigma2
    state.th = _threshold(mu, sigma2)
    return state, _verdict(state, delta, th_prev)


_UPDATERS = {
    Detector.STATIC: static_update,
    Detector.MOVING_WINDOW: window_update,
    Detector.EWMA: ewma_update,
}


def update(state: ThresholdState, delta: float) -> Tuple[ThresholdState, AnomalyVerdict]:
    """Dispatch to the scheme's update rule."""
    return _UPDATERS[state.scheme](state, delta)


def stability_metric(verdicts: Iterable[AnomalyVerdict]) -> float:
    """Share of increments that were not flagged."""
    total = 0
    outliers = 0
    for v in verdicts:
        total += 1
        outliers += v.is_outlier
    if total == 0:
        raise InsufficientDataError("stability metric needs at least one verdict")
    return 1.0 - outliers / total


def rate_limit(prev_output: float, candidate: float, max_step: float) -> float:
    """Clamp candidate to within max_step of prev_output."""
    if max_step < 0:
        raise ValueError(f"max_step must be non-negative, got {max_step}")
    return min(max(candidate, prev_output - max_step), prev_output + max_step)
