"""
Two-rate lockstep co-simulation: the boundary bridge between the coarse
transmission stream and the fine distribution consumer, the run loop,
ground-truth comparison metrics and the bridge overhead benchmark.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from anomaly import (
    AnomalyVerdict,
    Detector,
    ThresholdState,
    rate_limit,
    static_threshold,
    stability_metric,
    update,
)
from config import ScenarioConfig
from distribution import FeederResult, FeederState, FrequencySource, feeder_step
from extrapolation import (
    BoundarySample,
    ExtrapolatorState,
    Method,
    predict,
    push_sample,
    reset_buffer,
    unwrap_angle,
    wrap_angle,
)
from pll import PllState, pll_step, synthesize_abc
from transmission import CollapseError, TransmissionSurrogate, TxOutput

logger = logging.getLogger(__name__)

VARIABLES = ("v_mag", "theta")
COARSE_COLUMNS = ("t", "v", "theta", "f_sys", "ace", "p_sfr_total", "p_fb_used")
FINE_COLUMNS = (
    "t", "v_hat", "theta_hat", "f_pcc", "p_dpv", "p_pfr", "p_sfr",
    "p_fb", "q_fb", "p_avail", "p_sfr_request",
)
VERDICT_COLUMNS = ("delta_v", "th_v", "outlier_v", "delta_theta", "th_theta", "outlier_theta", "reset")


class MetricError(ValueError):
    """Raised when an error metric is undefined for the given series."""


# ---------------------------------------------------------------------------
# Boundary bridge
# ---------------------------------------------------------------------------


@dataclass
class BridgeState:
    """Extrapolators, detectors and last outputs for both boundary variables."""

    extrap_v: ExtrapolatorState
    extrap_th: ExtrapolatorState
    det_v: ThresholdState
    det_th: ThresholdState
    t_t: float
    t_d: float
    rate_limit_enabled: bool = True
    prev_v: Optional[float] = None
    prev_th: Optional[float] = None
    held_v: float = 0.0
    held_th: float = 0.0
    out_v: Optional[float] = None
    out_th: Optional[float] = None
    reset_count: int = 0
    passthrough: bool = field(default=False, init=False)

    def __post_init__(self):
        self.passthrough = int(round(self.t_t / self.t_d)) == 1


@dataclass(frozen=True)
class ExchangeOutcome:
    reset: bool
    verdict_v: AnomalyVerdict
    verdict_th: AnomalyVerdict


def new_bridge(config: ScenarioConfig, static_thresholds: Optional[Dict[str, float]] = None) -> BridgeState:
    """Fresh bridge for a scenario; the static detector needs its thresholds up front."""
    if config.detector is Detector.STATIC and static_thresholds is None:
        raise ValueError("static detector requires calibrated thresholds")

    def extrapolator(variable):
        return ExtrapolatorState(
            variable=variable,
            method=config.method,
            lpf_alpha=config.lpf_alpha,
            strict_refill=config.strict_refill,
        )

    def detector(variable):
        return ThresholdState(
            scheme=config.detector,
            capacity=config.window_capacity,
            alpha_cap=config.alpha_cap,
            c=config.c,
            epsilon=config.epsilon,
            warmup_remaining=config.warmup,
            static_th=static_thresholds[variable] if static_thresholds else None,
        )

    return BridgeState(
        extrap_v=extrapolator("v_mag"),
        extrap_th=extrapolator("theta"),
        det_v=detector("v_mag"),
        det_th=detector("theta"),
        t_t=config.t_t,
        t_d=config.t_d,
        rate_limit_enabled=config.rate_limit_enabled,
    )


def bridge_on_exchange(bridge: BridgeState, sample: BoundarySample) -> Tuple[BridgeState, ExchangeOutcome]:
    """
    Test a new coarse sample and maintain the extrapolation buffers.

    An outlier on either variable empties both buffers; the triggering
    sample then opens the refill. Detector statistics are never reset.

    Args:
        bridge: Bridge state, updated in place
        sample: Boundary sample at the current exchange (theta unwrapped)

    Returns:
        The bridge and the exchange outcome
    """
    if bridge.prev_v is None:
        dv = dth = 0.0
    else:
        dv = sample.v_mag - bridge.prev_v
        dth = sample.theta - bridge.prev_th
    _, verdict_v = update(bridge.det_v, dv)
    _, verdict_th = update(bridge.det_th, dth)
    logger.debug(
        "t=%.4f dv=%.3g th_v=%.3g dth=%.3g th_theta=%.3g",
        sample.t, dv, verdict_v.threshold, dth, verdict_th.threshold,
    )

    reset = (verdict_v.is_outlier or verdict_th.is_outlier) and not bridge.passthrough
    if reset:
        reset_buffer(bridge.extrap_v)
        reset_buffer(bridge.extrap_th)
        bridge.reset_count += 1
        logger.info("t=%.4f s: boundary discontinuity, extrapolation buffers reset", sample.t)
    push_sample(bridge.extrap_v, sample)
    push_sample(bridge.extrap_th, sample)

    bridge.prev_v, bridge.prev_th = sample.v_mag, sample.theta
    bridge.held_v, bridge.held_th = sample.v_mag, sample.theta
    return bridge, ExchangeOutcome(reset, verdict_v, verdict_th)


def _limited(bridge: BridgeState, extrap: ExtrapolatorState, det: ThresholdState, prev, value):
    if (
        prev is None
        or extrap.method is Method.HOLD
        or not extrap.refilling
    ):
        return value
    return rate_limit(prev, value, det.th * bridge.t_d / bridge.t_t)


def bridge_fine_step(bridge: BridgeState, t_tau: float) -> Tuple[float, float]:
    """
    Boundary voltage magnitude and angle for one fine step.

    Args:
        bridge: Bridge state (LPF memory and last outputs updated in place)
        t_tau: Fine-step time within the current coarse interval (s)

    Returns:
        (v_hat, theta_hat)
    """
    if bridge.passthrough:
        return bridge.held_v, bridge.held_th

    v = predict(bridge.extrap_v, t_tau, bridge.held_v)
    th = predict(bridge.extrap_th, t_tau, bridge.held_th)
    if bridge.rate_limit_enabled:
        v = _limited(bridge, bridge.extrap_v, bridge.det_v, bridge.out_v, v)
        th = _limited(bridge, bridge.extrap_th, bridge.det_th, bridge.out_th, th)
    if v < 0.0:
        v = 0.0
    bridge.out_v, bridge.out_th = v, th
    return v, th


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------


@dataclass
class RunTrace:
    """Preallocated coarse, fine and verdict series of one run."""

    t_t: float
    t_d: float
    ratio: int
    plant_names: List[str]
    coarse: Dict[str, np.ndarray]
    fine: Dict[str, np.ndarray]
    verdicts: Dict[str, np.ndarray]
    p_dpv_plants: np.ndarray
    status: str = "ok"
    error: Optional[str] = None
    n_coarse: int = 0
    n_fine: int = 0
    n_verdicts: int = 0
    meta: Dict[str, object] = field(default_factory=dict)

    @classmethod
    def allocate(cls, config: ScenarioConfig) -> "RunTrace":
        n = config.n_exchanges
        n_fine = n * config.ratio
        names = [p.name for p in config.distribution.plants]
        return cls(
            t_t=config.t_t,
            t_d=config.t_d,
            ratio=config.ratio,
            plant_names=names,
            coarse={c: np.full(n, np.nan) for c in COARSE_COLUMNS},
            fine={c: np.full(n_fine, np.nan) for c in FINE_COLUMNS},
            verdicts={c: np.zeros(n) for c in VERDICT_COLUMNS},
            p_dpv_plants=np.full((n_fine, len(names)), np.nan),
            meta={
                "method": config.method.value,
                "detector": config.detector.value,
                "lpf_alpha": config.lpf_alpha,
                "duration": config.duration,
            },
        )

    def record_coarse(self, k: int, out: TxOutput, p_fb_used: float):
        row = self.coarse
        s = out.sample
        row["t"][k] = s.t
        row["v"][k] = s.v_mag
        row["theta"][k] = s.theta
        row["f_sys"][k] = out.f_sys
        row["ace"][k] = out.ace
        row["p_sfr_total"][k] = out.p_sfr_total
        row["p_fb_used"][k] = p_fb_used
        self.n_coarse = k + 1

    def record_verdicts(self, k: int, outcome: ExchangeOutcome):
        row = self.verdicts
        row["delta_v"][k] = outcome.verdict_v.delta
        row["th_v"][k] = outcome.verdict_v.threshold
        row["outlier_v"][k] = outcome.verdict_v.is_outlier
        row["delta_theta"][k] = outcome.verdict_th.delta
        row["th_theta"][k] = outcome.verdict_th.threshold
        row["outlier_theta"][k] = outcome.verdict_th.is_outlier
        row["reset"][k] = outcome.reset
        self.n_verdicts = k + 1

    def record_fine(self, i: int, t: float, v: float, th: float, f_pcc: float, fb: FeederResult):
        row = self.fine
        row["t"][i] = t
        row["v_hat"][i] = v
        row["theta_hat"][i] = th
        row["f_pcc"][i] = f_pcc
        row["p_dpv"][i] = fb.p_dpv
        row["p_pfr"][i] = fb.p_pfr
        row["p_sfr"][i] = fb.p_sfr
        row["p_fb"][i] = fb.p_kw
        row["q_fb"][i] = fb.q_kvar
        row["p_avail"][i] = fb.p_avail_kw
        row["p_sfr_request"][i] = fb.p_sfr_requested
        self.p_dpv_plants[i, :] = fb.p_dpv_plants
        self.n_fine = i + 1

    def fail(self, exc: BaseException):
        self.status = "error"
        self.error = f"{type(exc).__name__}: {exc}"
        logger.warning("run ended early, partial trace kept: %s", self.error)

    def finish(self) -> "RunTrace":
        """Trim every series to what was actually recorded."""
        self.coarse = {k: v[: self.n_coarse] for k, v in self.coarse.items()}
        self.fine = {k: v[: self.n_fine] for k, v in self.fine.items()}
        self.verdicts = {k: v[: self.n_verdicts] for k, v in self.verdicts.items()}
        self.p_dpv_plants = self.p_dpv_plants[: self.n_fine]
        return self

    def verdict_list(self, variable: str) -> List[AnomalyVerdict]:
        suffix = "v" if variable == "v_mag" else "theta"
        v = self.verdicts
        return [
            AnomalyVerdict(bool(o), float(d), float(th))
            for d, th, o in zip(v[f"delta_{suffix}"], v[f"th_{suffix}"], v[f"outlier_{suffix}"])
        ]

    def outlier_count(self, variable: str) -> int:
        suffix = "v" if variable == "v_mag" else "theta"
        return int(self.verdicts[f"outlier_{suffix}"].sum())

    @property
    def reset_count(self) -> int:
        return int(self.verdicts["reset"].sum())


# ---------------------------------------------------------------------------
# Nodes
# ---------------------------------------------------------------------------


class TransmissionNode:
    """Transmission half of the lockstep loop."""

    def __init__(self, config: ScenarioConfig, initial_feedback_kw: float):
        self.config = config
        self.surrogate = TransmissionSurrogate(
            config.transmission, config.events, config.t_t, initial_feedback_kw, seed=config.seed
        )
        self.last_feedback_kw = initial_feedback_kw

    def step(self, feedback_kw: Optional[float]) -> TxOutput:
        if feedback_kw is not None:
            self.last_feedback_kw = feedback_kw
        return self.surrogate.tx_step(feedback_kw)


def feeder_initial_feedback(config: ScenarioConfig) -> FeederResult:
    """Feeder-head feedback at nominal voltage and frequency with no SFR request."""
    f0 = config.transmission.f0
    feeder = FeederState.from_config(config.distribution, f0)
    return feeder_step(feeder, config.transmission.v_nominal, f0, 0.0, 0.0)


class DistributionNode:
    """Distribution half: bridge, waveform synthesis, PLL and feeder."""

    def __init__(self, config: ScenarioConfig, static_thresholds: Optional[Dict[str, float]] = None):
        self.config = config
        self.ratio = config.ratio
        self.f0 = config.transmission.f0
        self.omega0 = 2.0 * math.pi * self.f0
        self.bridge = new_bridge(config, static_thresholds)
        self.feeder = FeederState.from_config(config.distribution, self.f0)
        self.pll: Optional[PllState] = None
        self.theta_unwrapped: Optional[float] = None
        self.k = 0

    @property
    def initial_feedback(self) -> FeederResult:
        return feeder_step(self.feeder, self.config.transmission.v_nominal, self.f0, 0.0, 0.0)

    def _ingest(self, t: float, v_mag: float, theta_wrapped: float) -> BoundarySample:
        prev = 0.0 if self.theta_unwrapped is None else self.theta_unwrapped
        self.theta_unwrapped = unwrap_angle(prev, theta_wrapped)
        if self.pll is None:
            pll_cfg = self.config.distribution.pll
            self.pll = PllState.locked(
                self.theta_unwrapped,
                self.f0,
                kp=pll_cfg.kp,
                ki=pll_cfg.ki,
                f_filter_tau=pll_cfg.f_filter_tau,
                amplitude_floor=pll_cfg.amplitude_floor,
            )
        return BoundarySample(t, v_mag, self.theta_unwrapped)

    def on_exchange(
        self,
        t: float,
        v_mag: float,
        theta_wrapped: float,
        p_sfr_request_kw: float,
        f_sys: float,
        trace: Optional[RunTrace] = None,
    ) -> FeederResult:
        """
        Consume one coarse sample and run the R fine steps of its interval.

        Returns:
            Feeder result at the last fine step, latched as feedback
        """
        sample = self._ingest(t, v_mag, theta_wrapped)
        _, outcome = bridge_on_exchange(self.bridge, sample)
        if trace is not None:
            trace.record_verdicts(self.k, outcome)

        t_d = self.config.t_d
        use_system = self.feeder.frequency_source is FrequencySource.SYSTEM
        result = None
        base = self.k * self.ratio
        for j in range(self.ratio):
            t_tau = t + j * t_d
            v_hat, th_hat = bridge_fine_step(self.bridge, t_tau)
            abc = synthesize_abc(v_hat, th_hat, self.omega0, t_tau)
            _, f_est = pll_step(self.pll, abc, t_d)
            f_pcc = f_sys if use_system else f_est
            result = feeder_step(self.feeder, v_hat, f_pcc, p_sfr_request_kw, t_tau)
            if trace is not None:
                trace.record_fine(base + j, t_tau, v_hat, th_hat, f_pcc, result)
        self.k += 1
        return result


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


def calibrate_static_thresholds(config: ScenarioConfig) -> Dict[str, float]:
    """
    Static thresholds from a transmission-only pass with frozen feedback.

    Args:
        config: Scenario to calibrate for

    Returns:
        Threshold per boundary variable
    """
    fb0 = feeder_initial_feedback(config).p_kw
    surrogate = TransmissionSurrogate(config.transmission, config.events, config.t_t, fb0, seed=config.seed)
    deltas = {"v_mag": [0.0], "theta": [0.0]}
    prev_v = prev_th = None
    theta = 0.0
    try:
        for _ in range(config.n_exchanges):
            out = surrogate.tx_step(fb0)
            theta = unwrap_angle(theta, wrap_angle(out.sample.theta))
            if prev_v is not None:
                deltas["v_mag"].append(out.sample.v_mag - prev_v)
                deltas["theta"].append(theta - prev_th)
            prev_v, prev_th = out.sample.v_mag, theta
    except CollapseError as exc:
        logger.warning("static calibration stopped early: %s", exc)
    thresholds = {var: static_threshold(d) for var, d in deltas.items()}
    logger.info("static thresholds: v_mag=%.4g pu, theta=%.4g rad", thresholds["v_mag"], thresholds["theta"])
    return thresholds


def run(config: ScenarioConfig, static_thresholds: Optional[Dict[str, float]] = None) -> RunTrace:
    """
    Run one scenario in a single process.

    A transmission collapse ends the run with status "error" and the
    partial trace.

    Args:
        config: Validated scenario
        static_thresholds: Precomputed static thresholds; calibrated on
            demand when the static detector is selected

    Returns:
        The run trace
    """
    if config.detector is Detector.STATIC and static_thresholds is None:
        static_thresholds = calibrate_static_thresholds(config)

    logger.info(
        "run start: %s/%s, t_t=%g s, t_d=%g s, %d exchanges",
        config.method.value, config.detector.value, config.t_t, config.t_d, config.n_exchanges,
    )
    trace = RunTrace.allocate(config)
    dx = DistributionNode(config, static_thresholds)
    feedback = dx.initial_feedback
    try:
        tx = TransmissionNode(config, feedback.p_kw)
        for k in range(config.n_exchanges):
            out = tx.step(feedback.p_kw if k > 0 else None)
            trace.record_coarse(k, out, tx.last_feedback_kw)
            s = out.sample
            feedback = dx.on_exchange(s.t, s.v_mag, wrap_angle(s.theta), out.p_sfr_request_kw, out.f_sys, trace)
    except CollapseError as exc:
        trace.fail(exc)
    logger.info("run end: %s, %d resets", trace.status, dx.bridge.reset_count)
    return trace.finish()


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _pair(actual: Sequence[float], predicted: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(actual, dtype=float)
    y_hat = np.asarray(predicted, dtype=float)
    if y.shape != y_hat.shape:
        raise MetricError(f"series lengths differ: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise MetricError("metric needs at least one point")
    return y, y_hat


def mape(actual: Sequence[float], predicted: Sequence[float]) -> float:
    """Mean absolute percentage error (%)."""
    y, y_hat = _pair(actual, predicted)
    if np.any(y == 0):
        raise MetricError("MAPE undefined: actual series contains zeros")
    return float(np.mean(np.abs(y - y_hat) / np.abs(y)) * 100.0)


def nmae(actual: Sequence[float], predicted: Sequence[float]) -> float:
    """Mean absolute error normalised by max|actual| (fraction)."""
    y, y_hat = _pair(actual, predicted)
    scale = np.max(np.abs(y))
    if scale == 0:
        raise MetricError("nMAE undefined: actual series is all zeros")
    return float(np.mean(np.abs(y - y_hat)) / scale)


def improvement(baseline_error: float, method_error: float) -> float:
    """Error reduction of a method relative to a baseline (%)."""
    if baseline_error == 0:
        raise MetricError("improvement undefined for a zero baseline error")
    return (1.0 - method_error / baseline_error) * 100.0


def _safe(metric, actual, predicted) -> Optional[float]:
    try:
        return metric(actual, predicted)
    except MetricError as exc:
        logger.warning("%s: %s", metric.__name__, exc)
        return None


def sfr_tracking_error(trace: RunTrace) -> Optional[float]:
    """nMAE between requested and delivered SFR within one run; None without requests."""
    return _safe(nmae, trace.fine["p_sfr_request"], trace.fine["p_sfr"])


def compare_runs(reference: RunTrace, candidate: RunTrace) -> Dict[str, Optional[float]]:
    """
    Score a run against a ground-truth reference on the shared fine grid.

    Args:
        reference: Matched-timestep run
        candidate: Run to score (same t_d)

    Returns:
        Error metrics (None where undefined), outlier counts and stability
    """
    if not math.isclose(reference.t_d, candidate.t_d):
        raise MetricError(f"fine timesteps differ: {reference.t_d} vs {candidate.t_d}")
    n = min(reference.n_fine, candidate.n_fine)
    ref = {k: v[:n] for k, v in reference.fine.items()}
    cand = {k: v[:n] for k, v in candidate.fine.items()}
    summary: Dict[str, Optional[float]] = {
        "mape_v": _safe(mape, ref["v_hat"], cand["v_hat"]),
        "mape_theta": _safe(mape, np.degrees(ref["theta_hat"]), np.degrees(cand["theta_hat"])),
        "mape_f": _safe(mape, ref["f_pcc"], cand["f_pcc"]),
        "nmae_f": _safe(nmae, ref["f_pcc"], cand["f_pcc"]),
        "nmae_p_dpv": _safe(nmae, ref["p_dpv"], cand["p_dpv"]),
        "nmae_pfr": _safe(nmae, ref["p_pfr"], cand["p_pfr"]),
        "nmae_sfr": _safe(nmae, ref["p_sfr"], cand["p_sfr"]),
    }
    summary.update(run_statistics(candidate))
    return summary


def run_statistics(trace: RunTrace) -> Dict[str, Optional[float]]:
    """Outlier counts, stability metric and reset count of one run."""
    stats: Dict[str, Optional[float]] = {}
    for var in VARIABLES:
        stats[f"outliers_{var}"] = trace.outlier_count(var)
        verdicts = trace.verdict_list(var)
        stats[f"stability_{var}"] = stability_metric(verdicts) if verdicts else None
    stats["resets"] = trace.reset_count
    stats["sfr_tracking_nmae"] = sfr_tracking_error(trace)
    return stats


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


def _swing_samples(config: ScenarioConfig, n_exchanges: int) -> List[BoundarySample]:
    t_t = config.t_t
    return [
        BoundarySample(
            k * t_t,
            1.0 + 0.01 * math.sin(2.0 * math.pi * 0.5 * k * t_t),
            -0.32 + 0.05 * math.sin(2.0 * math.pi * k * t_t),
        )
        for k in range(n_exchanges)
    ]


def _time_variable(config: ScenarioConfig, static, variable: str, samples: List[BoundarySample]) -> float:
    """Seconds spent detecting, buffering and extrapolating one variable alone."""
    bridge = new_bridge(config, static)
    extrap = bridge.extrap_v if variable == "v_mag" else bridge.extrap_th
    det = bridge.det_v if variable == "v_mag" else bridge.det_th
    ratio, t_d = config.ratio, config.t_d
    prev = None
    start = time.perf_counter()
    for s in samples:
        y = getattr(s, variable)
        _, verdict = update(det, 0.0 if prev is None else y - prev)
        if verdict.is_outlier:
            reset_buffer(extrap)
        push_sample(extrap, s)
        prev = y
        for j in range(ratio):
            predict(extrap, s.t + j * t_d, y)
    return time.perf_counter() - start


def bench_bridge(config: ScenarioConfig, n_exchanges: int = 500) -> Dict[str, float]:
    """
    Time the bridge on a synthetic swinging boundary signal.

    The full bridge is timed first, then each boundary variable's
    detector and extrapolator on their own.

    Args:
        config: Supplies method, detector and timesteps
        n_exchanges: Coarse exchanges to time

    Returns:
        Microseconds per fine step (total and per variable) and the share
        of the t_d budget the full bridge uses
    """
    static = {"v_mag": 1e-3, "theta": 1e-3} if config.detector is Detector.STATIC else None
    samples = _swing_samples(config, n_exchanges)
    n_fine = n_exchanges * config.ratio
    t_d = config.t_d

    bridge = new_bridge(config, static)
    start = time.perf_counter()
    for s in samples:
        bridge_on_exchange(bridge, s)
        for j in range(config.ratio):
            bridge_fine_step(bridge, s.t + j * t_d)
    elapsed = time.perf_counter() - start

    per_step_us = elapsed / n_fine * 1e6
    report: Dict[str, float] = {
        "method": config.method.value,
        "detector": config.detector.value,
        "us_per_fine_step": per_step_us,
        "budget_share": per_step_us / (t_d * 1e6),
    }
    for var in VARIABLES:
        report[f"us_{var}"] = _time_variable(config, static, var, samples) / n_fine * 1e6
    return report
