"""
Fine-timestep feeder-head model: lumped load plus DPV plants providing
primary (droop) and secondary (AGC) frequency response.
"""

import bisect
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

if TYPE_CHECKING:
    from config import DistributionConfig, PlantConfig

logger = logging.getLogger(__name__)

# Droop is sized so the whole reserve deploys at this deviation (Hz)
FULL_RESERVE_DEVIATION_HZ = 0.3


class FrequencySource(str, Enum):
    """Where the plants read their frequency from."""

    PLL = "pll"
    SYSTEM = "system"


def _interpolate_profile(profile: Sequence[Tuple[float, float]], t: float) -> float:
    times = [p[0] for p in profile]
    i = bisect.bisect_right(times, t)
    if i == 0:
        return profile[0][1]
    if i == len(profile):
        return profile[-1][1]
    (t0, y0), (t1, y1) = profile[i - 1], profile[i]
    return y0 + (y1 - y0) * (t - t0) / (t1 - t0)


@dataclass
class DpvPlant:
    """A curtailed PV plant holding reserve for frequency response (kW)."""

    name: str
    p_mpp: float
    reserve: float
    p_min: float = 0.0
    droop_d: Optional[float] = None
    db_uf: float = 0.036
    db_of: float = 0.036
    f0: float = 60.0
    mpp_profile: Optional[List[Tuple[float, float]]] = None

    def __post_init__(self):
        if self.droop_d is None:
            self.droop_d = self.reserve * self.f0 / (FULL_RESERVE_DEVIATION_HZ - self.db_uf)
        if self.reserve < 0 or self.droop_d < 0 or self.db_uf < 0 or self.db_of < 0:
            raise ValueError(f"plant {self.name}: reserve, droop and deadbands must be non-negative")
        lowest = min(y for _, y in self.mpp_profile) if self.mpp_profile else self.p_mpp
        if not 0.0 <= self.p_min <= lowest - self.reserve:
            raise ValueError(
                f"plant {self.name}: need 0 <= p_min <= p_mpp - reserve, "
                f"got p_min={self.p_min}, p_mpp={lowest}, reserve={self.reserve}"
            )

    @classmethod
    def from_config(cls, cfg: "PlantConfig", f0: float) -> "DpvPlant":
        profile = None
        p_mpp = cfg.p_mpp
        if isinstance(p_mpp, (list, tuple)):
            profile = [(float(t), float(y)) for t, y in p_mpp]
            p_mpp = profile[0][1]
        return cls(
            name=cfg.name,
            p_mpp=float(p_mpp),
            reserve=cfg.reserve,
            p_min=cfg.p_min,
            droop_d=cfg.droop_d,
            db_uf=cfg.db_uf,
            db_of=cfg.db_of,
            f0=f0,
            mpp_profile=profile,
        )

    @property
    def p_base(self) -> float:
        return self.p_mpp - self.reserve

    def at(self, t: float) -> "DpvPlant":
        """Move the maximum power point along its profile, if one is set."""
        if self.mpp_profile:
            self.p_mpp = _interpolate_profile(self.mpp_profile, t)
        return self


@dataclass
class FeederState:
    """Lumped constant-impedance feeder load and its DPV plants."""

    p_load: float
    q_load: float
    plants: List[DpvPlant] = field(default_factory=list)
    f0: float = 60.0
    frequency_source: FrequencySource = FrequencySource.PLL

    def __post_init__(self):
        self.frequency_source = FrequencySource(self.frequency_source)
        if self.p_load < 0:
            raise ValueError(f"feeder load must be non-negative, got {self.p_load}")

    @classmethod
    def from_config(cls, cfg: "DistributionConfig", f0: float) -> "FeederState":
        return cls(
            p_load=cfg.p_load_kw,
            q_load=cfg.q_load_kvar,
            plants=[DpvPlant.from_config(p, f0) for p in cfg.plants],
            f0=f0,
            frequency_source=cfg.frequency_source,
        )

    @property
    def reserve_shares(self) -> List[float]:
        total = sum(p.reserve for p in self.plants)
        if total == 0:
            return [1.0 / len(self.plants)] * len(self.plants) if self.plants else []
        return [p.reserve / total for p in self.plants]


@dataclass(frozen=True)
class FeederResult:
    """Feeder-head feedback plus the DPV breakdown at one fine step."""

    p_kw: float
    q_kvar: float
    p_avail_kw: float
    p_dpv: float
    p_pfr: float
    p_sfr: float
    p_sfr_requested: float = 0.0
    p_dpv_plants: Tuple[float, ...] = ()


def dpv_pfr(f_pcc: float, plant: DpvPlant, f0: float = 60.0) -> float:
    """
    Droop response outside the deadband.

    Args:
        f_pcc: Frequency seen at the point of common coupling (Hz)
        plant: Plant supplying droop gain and deadbands
        f0: Nominal frequency (Hz)

    Returns:
        Power change request (kW), positive under-frequency
    """
    low = f0 - plant.db_uf
    high = f0 + plant.db_of
    if f_pcc < low:
        return (low - f_pcc) / f0 * plant.droop_d
    if f_pcc > high:
        return (high - f_pcc) / f0 * plant.droop_d
    return 0.0


def dpv_reference(plant: DpvPlant, p_pfr: float, p_sfr: float) -> float:
    """Power reference, floored at the plant minimum."""
    return max(plant.p_base + p_pfr + p_sfr, plant.p_min)


def dpv_output(p_ref: float, plant: DpvPlant) -> float:
    """Clamp the reference to [p_min, p_mpp]."""
    return max(min(p_ref, plant.p_mpp), plant.p_min)


def sfr_headroom(plant: DpvPlant, p_sfr: float) -> float:
    """SFR the plant can deliver, clamped to its up and down headroom."""
    return min(max(p_sfr, -(plant.p_base - plant.p_min)), plant.p_mpp - plant.p_base)


def feeder_step(
    state: FeederState,
    v_mag: float,
    f_pcc: float,
    p_sfr_request: float,
    t: float = 0.0,
) -> FeederResult:
    """
    Compute plant outputs and feeder-head feedback at one fine step.

    SFR takes priority inside the headroom; PFR gets what remains.

    Args:
        state: Feeder and plants
        v_mag: Boundary voltage magnitude (pu)
        f_pcc: Frequency used for droop (Hz)
        p_sfr_request: Feeder share of the AGC request (kW)
        t: Simulation time, for MPP profiles (s)

    Returns:
        Feedback powers and the DPV breakdown
    """
    p_dpv_plants = []
    pfr_total = 0.0
    sfr_total = 0.0
    requested = 0.0
    avail = 0.0
    for plant, share in zip(state.plants, state.reserve_shares):
        plant.at(t)
        share_kw = share * p_sfr_request
        p_sfr = sfr_headroom(plant, share_kw)
        p_pfr = dpv_pfr(f_pcc, plant, state.f0)
        p_dpv = dpv_output(dpv_reference(plant, p_pfr, p_sfr), plant)
        p_dpv_plants.append(p_dpv)
        sfr_total += p_sfr
        requested += share_kw
        pfr_total += p_dpv - plant.p_base - p_sfr
        avail += plant.p_mpp - p_dpv

    p_dpv_total = sum(p_dpv_plants)
    v2 = v_mag * v_mag
    return FeederResult(
        p_kw=state.p_load * v2 - p_dpv_total,
        q_kvar=state.q_load * v2,
        p_avail_kw=avail,
        p_dpv=p_dpv_total,
        p_pfr=pfr_total,
        p_sfr=sfr_total,
        p_sfr_requested=requested,
        p_dpv_plants=tuple(p_dpv_plants),
    )
