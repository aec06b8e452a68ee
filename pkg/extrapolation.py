"""
Rate-transition predictors for boundary voltage magnitude and phase angle.

Coarse transmission samples arrive every T_T; the distribution side needs a
value every T_D. Four predictors fill the gap: zero-order hold, a first-order
low-pass filter on the held input, linear extrapolation over the last two
samples and quadratic (three-point Lagrange) extrapolation.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
BUFFER_SIZE = 3


class MonotonicityError(ValueError):
    """Raised when a sample does not advance the buffer clock."""


class DegenerateNodesError(ValueError):
    """Raised when interpolation nodes coincide."""


class NotPrimedError(RuntimeError):
    """Raised when a prediction is requested from an empty buffer."""


class Method(str, Enum):
    """Rate-transition method."""

    HOLD = "hold"
    LPF = "lpf"
    LINEAR = "linear"
    QUADRATIC = "quadratic"


@dataclass(frozen=True)
class BoundarySample:
    """Voltage magnitude (pu) and unwrapped phase angle (rad) at a coarse instant."""

    t: float
    v_mag: float
    theta: float


def wrap_angle(angle: float) -> float:
    """Map an angle onto [-pi, pi]."""
    return math.remainder(angle, TWO_PI)


def unwrap_angle(prev_unwrapped: float, new_wrapped: float) -> float:
    """
    Return the representative of new_wrapped (mod 2*pi) nearest to prev_unwrapped.

    Args:
        prev_unwrapped: Last accepted angle of the stream, unwrapped (rad)
        new_wrapped: Incoming angle in [-pi, pi] (rad)

    Returns:
        Unwrapped angle within pi of prev_unwrapped
    """
    turns = round((prev_unwrapped - new_wrapped) / TWO_PI)
    return new_wrapped + TWO_PI * turns


def lagrange_weights(t_tau: float, t_nodes: Sequence[float]) -> Tuple[float, float, float]:
    """
    Three-point Lagrange basis weights evaluated at t_tau.

    Args:
        t_tau: Evaluation time (s)
        t_nodes: Node times [t_{t-2}, t_{t-1}, t_t] (s), strictly increasing

    Returns:
        Weights applied to (y_{t-2}, y_{t-1}, y_t)
    """
    t0, t1, t2 = t_nodes
    if t0 == t1 or t1 == t2 or t0 == t2:
        raise DegenerateNodesError(f"duplicate interpolation nodes: {t0}, {t1}, {t2}")
    d0 = t_tau - t0
    d1 = t_tau - t1
    d2 = t_tau - t2
    w0 = (d1 * d2) / ((t0 - t1) * (t0 - t2))
    w1 = (d0 * d2) / ((t1 - t0) * (t1 - t2))
    w2 = (d0 * d1) / ((t2 - t0) * (t2 - t1))
    return w0, w1, w2


@dataclass
class ExtrapolatorState:
    """History buffer and filter memory for one boundary variable."""

    variable: str = "v_mag"
    method: Method = Method.QUADRATIC
    lpf_alpha: float = 0.01
    strict_refill: bool = True
    times: Deque[float] = field(default_factory=lambda: deque(maxlen=BUFFER_SIZE))
    values: Deque[float] = field(default_factory=lambda: deque(maxlen=BUFFER_SIZE))
    lpf_prev: Optional[float] = None
    refill_count: int = 0
    # Refreshed on every push and reset; constant over one coarse interval
    active: Optional[Method] = field(default=None, repr=False)
    coeffs: Tuple[float, float] = field(default=(0.0, 0.0), repr=False)

    def __post_init__(self):
        self.method = Method(self.method)
        if not 0.0 < self.lpf_alpha <= 1.0:
            raise ValueError(f"lpf_alpha must lie in (0, 1], got {self.lpf_alpha}")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def newest(self) -> float:
        if not self.values:
            raise NotPrimedError(f"{self.variable} buffer is empty")
        return self.values[-1]

    @property
    def refilling(self) -> bool:
        """True until three samples have been accepted since the last reset."""
        return self.refill_count < BUFFER_SIZE

    def active_method(self) -> Method:
        """Method actually used for the next prediction, given the buffer fill."""
        n = len(self.values)
        if n == 0:
            raise NotPrimedError(f"{self.variable} buffer is empty")
        if self.method in (Method.HOLD, Method.LPF):
            if self.method is Method.LPF and self.refilling and self.strict_refill:
                return Method.HOLD
            return self.method
        if self.strict_refill:
            return self.method if not self.refilling else Method.HOLD
        if n == 1:
            return Method.HOLD
        if n == 2:
            return Method.LINEAR
        return self.method


def _slope_and_curvature(times: Sequence[float], values: Sequence[float], method: Method) -> Tuple[float, float]:
    """
    Coefficients (a, b) of y_t + a*d + b*d**2 with d measured from the newest node.

    For the quadratic this is the three-point Lagrange polynomial regrouped
    around y_t, so constant buffers give (0, 0) exactly.
    """
    y_t = values[-1]
    t_now = times[-1]
    if method is Method.LINEAR:
        return (y_t - values[-2]) / (t_now - times[-2]), 0.0
    h0 = times[0] - t_now
    h1 = times[1] - t_now
    if h0 == 0.0 or h1 == 0.0 or h0 == h1:
        raise DegenerateNodesError(f"duplicate interpolation nodes: {list(times)}")
    g0 = (values[0] - y_t) / ((h0 - h1) * h0)
    g1 = (values[1] - y_t) / ((h1 - h0) * h1)
    return -(g0 * h1 + g1 * h0), g0 + g1


def _refresh(state: ExtrapolatorState):
    if not state.values:
        state.active = None
        return
    state.active = state.active_method()
    if state.active in (Method.LINEAR, Method.QUADRATIC):
        state.coeffs = _slope_and_curvature(state.times, state.values, state.active)


def push(state: ExtrapolatorState, t: float, value: float) -> ExtrapolatorState:
    """Append one (t, value) pair, evicting the oldest beyond three."""
    if state.times and t <= state.times[-1]:
        raise MonotonicityError(
            f"{state.variable}: sample at t={t} does not follow t={state.times[-1]}"
        )
    state.times.append(t)
    state.values.append(value)
    state.refill_count += 1
    _refresh(state)
    return state


def push_sample(state: ExtrapolatorState, s: BoundarySample) -> ExtrapolatorState:
    """Push the field of a boundary sample that this state tracks."""
    return push(state, s.t, getattr(s, state.variable))


def reset_buffer(state: ExtrapolatorState) -> ExtrapolatorState:
    """Empty the history; the filter memory survives."""
    state.times.clear()
    state.values.clear()
    state.refill_count = 0
    _refresh(state)
    return state


def predict(state: ExtrapolatorState, t_tau: float, held_input: Optional[float] = None) -> float:
    """
    Predict the variable at fine time t_tau.

    Args:
        state: Extrapolator state (LPF memory is updated in place)
        t_tau: Prediction time, not earlier than the newest buffered sample
        held_input: Coarse value currently held at the fine rate; defaults
            to the newest buffered value

    Returns:
        Predicted value
    """
    method = state.active
    if method is None:
        raise NotPrimedError(f"{state.variable} buffer is empty")
    y_t = state.values[-1]

    if method is Method.HOLD:
        if state.method is Method.LPF:
            state.lpf_prev = y_t
        return y_t

    if method is Method.LPF:
        x = y_t if held_input is None else held_input
        prev = x if state.lpf_prev is None else state.lpf_prev
        out = state.lpf_alpha * x + (1.0 - state.lpf_alpha) * prev
        state.lpf_prev = out
        return out

    # Linear and quadratic share the form; b is zero for linear
    a, b = state.coeffs
    d = t_tau - state.times[-1]
    return y_t + d * (a + b * d)
