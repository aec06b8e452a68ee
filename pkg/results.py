"""
Writing run traces to CSV/JSON and loading finished run directories.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from cosim import RunTrace

logger = logging.getLogger(__name__)

CSV_OPTIONS = dict(index=False, float_format="%.12g", lineterminator="\n")

FINE_HEADER = ["t", "v_hat", "theta_hat", "f_pcc", "p_dpv", "p_pfr", "p_sfr", "p_fb", "q_fb", "p_avail"]
COARSE_HEADER = ["t", "v", "theta", "f_sys", "ace", "p_sfr_total"]
VERDICT_HEADER = ["t", "var", "delta", "th", "outlier", "reset"]

SUMMARY_FIELDS = [
    ("mape_v", "MAPE V (%)"),
    ("mape_theta", "MAPE theta (%)"),
    ("mape_f", "MAPE f_pcc (%)"),
    ("nmae_f", "nMAE f_pcc (%)"),
    ("nmae_p_dpv", "nMAE P_dpv (%)"),
    ("nmae_pfr", "nMAE PFR (%)"),
    ("nmae_sfr", "nMAE SFR (%)"),
    ("sfr_tracking_nmae", "SFR tracking nMAE (%)"),
    ("outliers_v_mag", "Outliers V"),
    ("outliers_theta", "Outliers theta"),
    ("stability_v_mag", "Stability V"),
    ("stability_theta", "Stability theta"),
    ("resets", "Buffer resets"),
]


def fine_frame(trace: RunTrace) -> pd.DataFrame:
    """Fine series, angles in degrees."""
    df = pd.DataFrame({c: trace.fine[c] for c in FINE_HEADER})
    df["theta_hat"] = np.degrees(df["theta_hat"])
    return df


def coarse_frame(trace: RunTrace) -> pd.DataFrame:
    df = pd.DataFrame({c: trace.coarse[c] for c in COARSE_HEADER})
    df["theta"] = np.degrees(df["theta"])
    return df


def verdict_frame(trace: RunTrace) -> pd.DataFrame:
    """Verdict log in long form: one row per exchange and variable."""
    v = trace.verdicts
    t = np.arange(trace.n_verdicts) * trace.t_t
    frames = []
    for var, suffix in (("v_mag", "v"), ("theta", "theta")):
        frames.append(pd.DataFrame({
            "t": t,
            "var": var,
            "delta": v[f"delta_{suffix}"],
            "th": v[f"th_{suffix}"],
            "outlier": v[f"outlier_{suffix}"].astype(bool),
            "reset": v["reset"].astype(bool),
        }))
    df = pd.concat(frames, ignore_index=True)
    return df.sort_values(["t", "var"], kind="stable").reset_index(drop=True)[VERDICT_HEADER]


def _as_percent(summary: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(summary)
    for key in ("nmae_f", "nmae_p_dpv", "nmae_pfr", "nmae_sfr", "sfr_tracking_nmae"):
        if out.get(key) is not None:
            out[key] = out[key] * 100.0
    return out


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    return f"{value:.6g}" if isinstance(value, float) else str(value)


def format_summary(summary: Dict[str, Any]) -> str:
    """Plain-text summary table; nMAE values are shown in percent."""
    shown = _as_percent(summary)
    lines = []
    for key, label in SUMMARY_FIELDS:
        if key not in shown:
            continue
        lines.append(f"{label:<24} {_fmt(shown[key])}")
    return "\n".join(lines) + "\n"


def write_run(trace: RunTrace, out_dir: Union[str, Path], summary: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write fine/coarse/verdict CSVs and the summary report for one run.

    Args:
        trace: Finished run trace
        out_dir: Target directory, created if needed
        summary: Metrics to report (from compare_runs or run_statistics)

    Returns:
        The run directory
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fine_frame(trace).to_csv(out / "fine.csv", **CSV_OPTIONS)
    coarse_frame(trace).to_csv(out / "coarse.csv", **CSV_OPTIONS)
    verdict_frame(trace).to_csv(out / "verdicts.csv", **CSV_OPTIONS)
    if trace.plant_names:
        plants = pd.DataFrame(trace.p_dpv_plants, columns=trace.plant_names)
        plants.insert(0, "t", trace.fine["t"])
        plants.to_csv(out / "plants.csv", **CSV_OPTIONS)

    report = {
        "status": trace.status,
        "error": trace.error,
        **trace.meta,
        "t_t": trace.t_t,
        "t_d": trace.t_d,
        "exchanges": trace.n_coarse,
        **(summary or {}),
    }
    (out / "summary.json").write_text(json.dumps(report, indent=2, default=float) + "\n", encoding="utf-8")
    header = f"status: {trace.status}" + (f" ({trace.error})" if trace.error else "") + "\n"
    (out / "summary.txt").write_text(header + format_summary(summary or {}), encoding="utf-8")
    logger.info("wrote run results to %s", out)
    return out


def list_runs(root: Union[str, Path]) -> List[Path]:
    """Run directories (those holding a summary.json) under root, sorted by name."""
    root = Path(root)
    if not root.exists():
        return []
    return sorted(p.parent for p in root.glob("**/summary.json"))


class RunResultsLoader:
    """Loads and slices the files of one finished run directory."""

    def __init__(self, run_dir: Union[str, Path]):
        """Initialize the loader with the run directory path."""
        self.run_dir = Path(run_dir)
        self.fine: Optional[pd.DataFrame] = None
        self.coarse: Optional[pd.DataFrame] = None
        self.verdicts: Optional[pd.DataFrame] = None
        self.summary: Dict[str, Any] = {}
        self._load_data()

    def _load_data(self):
        """Load the CSVs and summary into DataFrames."""
        summary_path = self.run_dir / "summary.json"
        if not summary_path.exists():
            raise FileNotFoundError(f"Run summary not found: {summary_path}")
        self.summary = json.loads(summary_path.read_text(encoding="utf-8"))
        self.fine = pd.read_csv(self.run_dir / "fine.csv")
        self.coarse = pd.read_csv(self.run_dir / "coarse.csv")
        self.verdicts = pd.read_csv(self.run_dir / "verdicts.csv")

    @property
    def label(self) -> str:
        s = self.summary
        return f"{self.run_dir.name} ({s.get('method', '?')}/{s.get('detector', '?')}, {s.get('status', '?')})"

    def downsample(self, columns: List[str], max_points: int = 2000) -> pd.DataFrame:
        """
        Fine series thinned to at most max_points rows, indexed by time.

        Args:
            columns: Fine columns to keep
            max_points: Row budget for plotting

        Returns:
            DataFrame indexed by t
        """
        step = max(1, -(-len(self.fine) // max_points))
        return self.fine.iloc[::step].set_index("t")[columns]

    def outliers(self) -> pd.DataFrame:
        """Verdict rows flagged as outliers or resets."""
        mask = self.verdicts["outlier"].astype(bool) | self.verdicts["reset"].astype(bool)
        return self.verdicts[mask].copy()

    def metrics_table(self) -> pd.DataFrame:
        shown = _as_percent(self.summary)
        rows = [(label, _fmt(shown[key])) for key, label in SUMMARY_FIELDS if key in shown]
        return pd.DataFrame(rows, columns=["metric", "value"])
