"""
Three-phase waveform synthesis and a synchronous-reference-frame PLL.
"""

import math
from dataclasses import dataclass
from typing import Tuple

TWO_PI = 2.0 * math.pi
PHASE_SHIFT = TWO_PI / 3.0
SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class ThreePhaseSample:
    """Instantaneous per-unit phase voltages."""

    va: float
    vb: float
    vc: float


@dataclass
class PllState:
    """SRF-PLL loop state.

    Gains are the fixed auto-tuned values (about 30 Hz bandwidth); the
    output passes through a first-order filter with time constant
    f_filter_tau.
    """

    kp: float = 180.0
    ki: float = 3200.0
    omega0: float = TWO_PI * 60.0
    integrator: float = 0.0
    theta_hat: float = 0.0
    omega_hat: float = TWO_PI * 60.0
    f_filter_state: float = 60.0
    f_filter_tau: float = 0.01
    amplitude_floor: float = 0.1

    def __post_init__(self):
        if self.kp <= 0 or self.ki <= 0:
            raise ValueError(f"PLL gains must be positive, got kp={self.kp}, ki={self.ki}")
        if self.f_filter_tau < 0:
            raise ValueError(f"filter time constant must be non-negative, got {self.f_filter_tau}")

    @classmethod
    def locked(cls, theta0: float, f0: float = 60.0, **kwargs) -> "PllState":
        """A loop already locked to a nominal-frequency input with angle theta0."""
        omega0 = TWO_PI * f0
        return cls(omega0=omega0, theta_hat=theta0, omega_hat=omega0, f_filter_state=f0, **kwargs)


def synthesize_abc(v_mag: float, theta: float, omega0: float, tau: float) -> ThreePhaseSample:
    """
    Balanced three-phase voltages for a boundary phasor at time tau.

    Args:
        v_mag: Peak-normalised magnitude (pu)
        theta: Phasor angle relative to the nominal rotating frame (rad)
        omega0: Nominal angular frequency (rad/s)
        tau: Time (s)

    Returns:
        Phase a, b, c instantaneous voltages
    """
    phi = omega0 * tau + theta
    return ThreePhaseSample(
        v_mag * math.cos(phi),
        v_mag * math.cos(phi - PHASE_SHIFT),
        v_mag * math.cos(phi + PHASE_SHIFT),
    )


def clarke(sample: ThreePhaseSample) -> Tuple[float, float]:
    """Amplitude-invariant abc -> alpha/beta transform."""
    v_alpha = (2.0 * sample.va - sample.vb - sample.vc) / 3.0
    v_beta = (sample.vb - sample.vc) / SQRT3
    return v_alpha, v_beta


def pll_step(state: PllState, sample: ThreePhaseSample, dt: float) -> Tuple[PllState, float]:
    """
    Advance the loop by one sample.

    Args:
        state: Loop state, updated in place
        sample: Phase voltages at the current instant
        dt: Sample interval (s)

    Returns:
        The state and the filtered frequency estimate (Hz)
    """
    v_alpha, v_beta = clarke(sample)
    cos_t = math.cos(state.theta_hat)
    sin_t = math.sin(state.theta_hat)
    vd = v_alpha * cos_t + v_beta * sin_t
    vq = -v_alpha * sin_t + v_beta * cos_t

    amplitude = max(math.hypot(vd, vq), state.amplitude_floor)
    err = vq / amplitude

    state.integrator += state.ki * err * dt
    state.omega_hat = state.omega0 + state.kp * err + state.integrator
    state.theta_hat += state.omega_hat * dt

    f_raw = state.omega_hat / TWO_PI
    gain = dt / (state.f_filter_tau + dt)
    state.f_filter_state += gain * (f_raw - state.f_filter_state)
    return state, state.f_filter_state
