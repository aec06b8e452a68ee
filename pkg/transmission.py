"""
Reduced-order transmission surrogate: swing dynamics, governor droop, AGC,
event injection and the boundary-bus voltage phasor.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

from extrapolation import BoundarySample

if TYPE_CHECKING:
    from config import AgcConfig, GeneratorConfig, TransmissionConfig

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


class CollapseError(RuntimeError):
    """Raised when no generator is left online."""


class ParticipationError(ValueError):
    """Raised when AGC participation factors do not form a partition."""


class EventKind(str, Enum):
    """Grid event types."""

    THREE_PHASE_FAULT = "three_phase_fault"
    FAULT_CLEAR = "fault_clear"
    GEN_TRIP = "gen_trip"
    LOAD_STEP = "load_step"


@dataclass(frozen=True)
class GridEvent:
    """A scheduled disturbance.

    magnitude is the residual boundary voltage (pu) for a fault and MW for
    a load step or a trip; a trip with no target takes the online unit whose
    dispatch is nearest to magnitude.
    """

    kind: EventKind
    t: float
    magnitude: float = 0.0
    target: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))
        if self.t < 0:
            raise ValueError(f"event time must be non-negative, got {self.t}")
        if self.kind is EventKind.THREE_PHASE_FAULT and not 0.0 <= self.magnitude < 1.0:
            raise ValueError(f"fault residual voltage must lie in [0, 1), got {self.magnitude}")


@dataclass
class GeneratorState:
    """One machine on its own MVA base (per unit)."""

    name: str
    rating_mw: float
    inertia_m: float
    damping_d: float
    droop_r: float
    governor_tg: float
    swing_coupling: float
    boundary_weight: float = 1.0
    omega: float = 1.0
    pm: float = 0.0
    pe: float = 0.0
    pm_ref: float = 0.0
    p_agc: float = 0.0
    delta: float = 0.0
    online: bool = True

    def __post_init__(self):
        if self.inertia_m <= 0 or self.droop_r <= 0 or self.omega <= 0:
            raise ValueError(f"generator {self.name}: inertia, droop and speed must be positive")

    @classmethod
    def from_config(cls, cfg: "GeneratorConfig", swing_coupling: float) -> "GeneratorState":
        return cls(
            name=cfg.name,
            rating_mw=cfg.rating_mw,
            inertia_m=cfg.inertia_m,
            damping_d=cfg.damping_d,
            droop_r=cfg.droop_r,
            governor_tg=cfg.governor_tg,
            swing_coupling=swing_coupling,
            boundary_weight=cfg.boundary_weight,
        )

    @property
    def dispatch_mw(self) -> float:
        return self.pm * self.rating_mw


@dataclass
class AgcState:
    """Secondary control: bias, PI gains, ACE integral and participation."""

    bias_b: float
    kp_agc: float
    ki_agc: float
    participation: List[float]
    resources: List[str] = field(default_factory=list)
    ace_integral: float = 0.0

    def __post_init__(self):
        _check_participation(self.participation)

    @classmethod
    def from_config(cls, cfg: "AgcConfig") -> "AgcState":
        names = list(cfg.participation)
        return cls(
            bias_b=cfg.bias_b,
            kp_agc=cfg.kp,
            ki_agc=cfg.ki,
            participation=[cfg.participation[n] for n in names],
            resources=names,
        )


@dataclass(frozen=True)
class TxOutput:
    """What the transmission side publishes at one exchange."""

    sample: BoundarySample
    p_sfr_request_kw: float
    f_sys: float
    ace: float
    p_sfr_total: float


def _check_participation(participation: Sequence[float]):
    if any(b < 0 for b in participation):
        raise ParticipationError(f"participation factors must be non-negative: {list(participation)}")
    if abs(math.fsum(participation) - 1.0) > 1e-9:
        raise ParticipationError(f"participation factors must sum to 1: {list(participation)}")


def system_frequency(gens: Sequence[GeneratorState], f0: float = 60.0) -> float:
    """Mean electrical frequency (Hz) of the online generators."""
    online = [g for g in gens if g.online]
    if not online:
        raise CollapseError("no generator online")
    return math.fsum(g.omega * f0 for g in online) / len(online)


def ace(f_sys: float, f0: float, bias_b: float) -> float:
    """Area control error (MW) for a bias given in MW per 0.1 Hz."""
    return 10.0 * bias_b * (f_sys - f0)


def agc_step(agc: AgcState, ace_now: float, dt: float) -> Tuple[AgcState, float]:
    """
    Integrate the ACE and return the total SFR request.

    Under-frequency (negative ACE) produces a positive generation request.

    Args:
        agc: AGC state, updated in place
        ace_now: Current ACE (MW)
        dt: Dispatch interval (s)

    Returns:
        The state and the total SFR request (MW)
    """
    agc.ace_integral += ace_now * dt
    return agc, -(agc.kp_agc * ace_now + agc.ki_agc * agc.ace_integral)


def allocate_sfr(p_sfr_total: float, participation: Sequence[float]) -> List[float]:
    """Split a total SFR request by participation factor."""
    _check_participation(participation)
    return [beta * p_sfr_total for beta in participation]


class TransmissionSurrogate:
    """Coarse-timestep transmission model feeding one boundary bus."""

    def __init__(
        self,
        cfg: "TransmissionConfig",
        events: Sequence[GridEvent],
        t_t: float,
        initial_feedback_kw: float = 0.0,
        seed: int = 0,
    ):
        """
        Build the surrogate at its equilibrium for the given feeder feedback.

        Args:
            cfg: Transmission parameters
            events: Scheduled disturbances
            t_t: Exchange interval (s)
            initial_feedback_kw: Feeder-head active power at t=0 (kW)
            seed: Seed for the optional measurement noise
        """
        self.cfg = cfg
        self.f0 = cfg.f0
        self.omega_b = TWO_PI * cfg.f0
        self.t_t = t_t
        self.n_sub = max(1, math.ceil(t_t / cfg.max_integration_step - 1e-9))
        self.h = t_t / self.n_sub
        self.gens = [GeneratorState.from_config(g, cfg.swing_coupling) for g in cfg.generators]
        self.agc = AgcState.from_config(cfg.agc) if cfg.agc.enabled else None

        self.k = 0
        self.m = 0
        self.load_step_mw = 0.0
        self.lost_gen_mw = 0.0
        self.fault_active = False
        self.fault_residual = 1.0
        self.theta_drift = 0.0
        self.fb0_mw = initial_feedback_kw / 1000.0
        self.fb_mw = self.fb0_mw
        self.p_sfr_total = 0.0
        self.p_sfr_dpv_mw = 0.0
        self.last_ace = 0.0

        indexed = [(self._index_of(e.t), i, e) for i, e in enumerate(events)]
        self._pending = sorted(indexed, key=lambda item: (item[0], item[1]))
        self._rng = np.random.default_rng(seed)

        online = self.online()
        self._electrical_power(online)
        for g in online:
            g.pm = g.pe
            g.pm_ref = g.pe
        logger.debug("surrogate ready: %d units, %d sub-steps of %.3g s", len(online), self.n_sub, self.h)

    def _index_of(self, t: float) -> int:
        return math.ceil(t / self.h - 1e-9)

    def online(self) -> List[GeneratorState]:
        return [g for g in self.gens if g.online]

    def _load_mw(self) -> float:
        p = self.cfg.base_load_mw + self.load_step_mw + self.fb_mw
        if self.fault_active:
            p *= 1.0 - self.cfg.fault_load_fraction * (1.0 - self.fault_residual ** 2)
        return p

    def _electrical_power(self, online: List[GeneratorState]):
        s_total = math.fsum(g.rating_mw for g in online)
        delta_coi = math.fsum(g.rating_mw * g.delta for g in online) / s_total
        share = self._load_mw() / s_total
        for g in online:
            g.pe = share + g.swing_coupling * (g.delta - delta_coi)

    def _trip_target(self, event: GridEvent) -> GeneratorState:
        online = self.online()
        if event.target is not None:
            for g in online:
                if g.name == event.target:
                    return g
            raise CollapseError(f"trip target {event.target} is not online")
        if not online:
            raise CollapseError("no generator online")
        return min(online, key=lambda g: abs(g.dispatch_mw - event.magnitude))

    def _apply_events(self):
        while self._pending and self._pending[0][0] <= self.m:
            _, _, event = self._pending.pop(0)
            if event.kind is EventKind.THREE_PHASE_FAULT:
                self.fault_active = True
                self.fault_residual = event.magnitude
            elif event.kind is EventKind.FAULT_CLEAR:
                self.fault_active = False
            elif event.kind is EventKind.GEN_TRIP:
                g = self._trip_target(event)
                lost = g.dispatch_mw
                g.online = False
                self.lost_gen_mw += lost
                logger.info("t=%.4f s: %s tripped, %.2f MW lost", self.m * self.h, g.name, lost)
            elif event.kind is EventKind.LOAD_STEP:
                self.load_step_mw += event.magnitude
            logger.info("t=%.4f s: applied %s", self.m * self.h, event.kind.value)
        if not self.online():
            raise CollapseError(f"all generators tripped at t={self.m * self.h:.4f} s")

    def _local_frequency_deviation(self, online: List[GeneratorState]) -> float:
        weight = math.fsum(g.boundary_weight for g in online)
        return self.f0 * math.fsum(g.boundary_weight * (g.omega - 1.0) for g in online) / weight

    def _substep(self):
        self._apply_events()
        online = self.online()
        self._electrical_power(online)
        h = self.h
        df_local = self._local_frequency_deviation(online)
        for g in online:
            dev = g.omega - 1.0
            domega = (g.pm - g.pe - g.damping_d * dev) / g.inertia_m
            dpm = (g.pm_ref + g.p_agc - dev / g.droop_r - g.pm) / g.governor_tg
            g.delta += self.omega_b * dev * h
            g.omega += domega * h
            g.pm += dpm * h
        self.theta_drift += TWO_PI * df_local * h
        self.m += 1

    def _dispatch_agc(self, f_sys: float):
        ace_now = ace(f_sys, self.f0, self.agc.bias_b)
        _, total = agc_step(self.agc, ace_now, self.t_t)
        shares = allocate_sfr(total, self.agc.participation)
        by_name = dict(zip(self.agc.resources, shares))
        for g in self.gens:
            g.p_agc = by_name.get(g.name, 0.0) / g.rating_mw
        self.p_sfr_dpv_mw = by_name.get("dpv", 0.0)
        self.p_sfr_total = total
        self.last_ace = ace_now

    def boundary_voltage(self) -> float:
        if self.fault_active:
            return self.fault_residual
        drop = self.load_step_mw + self.lost_gen_mw + (self.fb_mw - self.fb0_mw)
        return max(self.cfg.v_nominal - self.cfg.voltage_sensitivity_pu_per_mw * drop, 0.0)

    def boundary_angle(self) -> float:
        offset_deg = self.cfg.theta_offset_deg - self.cfg.trip_angle_deg_per_mw * self.lost_gen_mw
        if self.fault_active:
            offset_deg += self.cfg.fault_angle_deg
        return math.radians(offset_deg) + self.theta_drift

    def tx_step(self, feedback_p_kw: Optional[float] = None) -> TxOutput:
        """
        Advance one exchange interval and publish the boundary state.

        The first call publishes the t=0 equilibrium without integrating.

        Args:
            feedback_p_kw: Feeder-head active power latched from the
                previous interval (kW); ignored on the first call

        Returns:
            Boundary sample, SFR request for the feeder, f_sys, ACE and total SFR
        """
        if self.k > 0:
            if feedback_p_kw is not None:
                self.fb_mw = feedback_p_kw / 1000.0
            for _ in range(self.n_sub):
                self._substep()
        self._apply_events()

        f_sys = system_frequency(self.gens, self.f0)
        if self.agc is not None:
            self._dispatch_agc(f_sys)

        v = self.boundary_voltage()
        theta = self.boundary_angle()
        if self.cfg.measurement_noise_pu > 0:
            v = max(v + self._rng.normal(0.0, self.cfg.measurement_noise_pu), 0.0)
        if self.cfg.measurement_noise_deg > 0:
            theta += math.radians(self._rng.normal(0.0, self.cfg.measurement_noise_deg))

        sample = BoundarySample(self.k * self.t_t, v, theta)
        self.k += 1
        return TxOutput(
            sample=sample,
            p_sfr_request_kw=self.p_sfr_dpv_mw * 1000.0,
            f_sys=f_sys,
            ace=self.last_ace,
            p_sfr_total=self.p_sfr_total,
        )
