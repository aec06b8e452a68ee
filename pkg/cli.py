"""
Command-line entry point: single runs, method comparisons, timestep-ratio
sweeps, bridge benchmarks and the two-process node commands.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from anomaly import Detector
from config import (
    ConfigError,
    ScenarioConfig,
    env_log_level,
    env_workers,
    ground_truth,
    load_scenario,
    with_agc,
    with_noise,
    with_overrides,
)
from cosim import RunTrace, bench_bridge, compare_runs, improvement, run, run_statistics
from extrapolation import Method
from results import format_summary, write_run
from wire import HandshakeRejected, run_dx_node, run_tx_node

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _csv_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _float_list(text: str) -> List[float]:
    return [float(x) for x in _csv_list(text)]


def _int_list(text: str) -> List[int]:
    return [int(x) for x in _csv_list(text)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdcosim", description="Two-rate T&D co-simulation")
    parser.add_argument("--log-level", default=None, help="logging level (default TDCOSIM_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p):
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--duration", type=float, default=None, help="override the run length (s)")
        agc = p.add_mutually_exclusive_group()
        agc.add_argument("--agc", dest="agc", action="store_true", default=None, help="enable AGC")
        agc.add_argument("--no-agc", dest="agc", action="store_false", help="disable AGC")
        p.add_argument("--out", default=None, help="output directory")

    p_run = sub.add_parser("run", help="run one scenario")
    scenario_args(p_run)
    p_run.add_argument("--method", choices=[m.value for m in Method], default=None)
    p_run.add_argument("--detector", choices=[d.value for d in Detector] + ["moving_window"], default=None)
    p_run.add_argument("--ground-truth", action="store_true", help="force t_t = t_d")
    p_run.add_argument("--noise", type=_float_list, default=None, metavar="PU,DEG",
                       help="measurement noise std devs for V (pu) and theta (deg)")
    p_run.add_argument("--no-reference", action="store_true", help="skip the ground-truth comparison")

    p_cmp = sub.add_parser("compare", help="rank methods against the ground truth")
    scenario_args(p_cmp)
    p_cmp.add_argument("--methods", type=_csv_list, default=["hold", "lpf", "linear", "quadratic"])
    p_cmp.add_argument("--detectors", type=_csv_list, default=["ewma"])
    p_cmp.add_argument("--lpf-alphas", type=_float_list, default=None, help="LPF smoothing sweep")
    p_cmp.add_argument("--ratios", type=_int_list, default=None, help="t_t/t_d sweep at fixed t_t (t_d = t_t / ratio)")
    p_cmp.add_argument("--bench", action="store_true", help="time the bridge per method instead")
    p_cmp.add_argument("--workers", type=int, default=None, help="parallel runs (default TDCOSIM_WORKERS)")

    for name, helptext in (("serve-tx", "run the transmission node"), ("serve-dx", "run the distribution node")):
        p = sub.add_parser(name, help=helptext)
        scenario_args(p)
        p.add_argument("--host", default="127.0.0.1")
        p.add_argument("--port", type=int, default=5720)
        p.add_argument("--timeout", type=float, default=60.0)
    return parser


def _scenario(args) -> ScenarioConfig:
    config = load_scenario(args.scenario)
    if args.duration is not None:
        config = with_overrides(config, duration=args.duration)
    if args.agc is not None:
        config = with_agc(config, args.agc)
    return config


def _out_dir(args, config: ScenarioConfig, name: str) -> Path:
    return Path(args.out) if args.out else Path(config.output_dir) / name


def cmd_run(args) -> int:
    config = _scenario(args)
    if args.method:
        config = with_overrides(config, method=args.method)
    if args.detector:
        config = with_overrides(config, detector=args.detector)
    if args.noise is not None:
        if len(args.noise) != 2:
            raise ConfigError("--noise takes two values: PU,DEG")
        config = with_noise(config, *args.noise)

    if args.ground_truth:
        config = ground_truth(config)
        trace = run(config)
        summary = run_statistics(trace)
        name = "ground_truth"
    else:
        trace = run(config)
        if args.no_reference:
            summary = run_statistics(trace)
        else:
            summary = compare_runs(run(ground_truth(config)), trace)
        name = f"{config.method.value}_{config.detector.value}"

    out = write_run(trace, _out_dir(args, config, name), summary)
    print(f"status: {trace.status}")
    print(format_summary(summary), end="")
    print(f"results: {out}")
    return EXIT_OK if trace.status == "ok" else EXIT_FAILURE


def _job(item: Tuple[str, ScenarioConfig]) -> Tuple[str, RunTrace]:
    key, config = item
    return key, run(config)


def run_all(jobs: Dict[str, ScenarioConfig], workers: int) -> Dict[str, RunTrace]:
    """Run independent scenarios, in parallel when workers > 1; keyed results in input order."""
    items = list(jobs.items())
    if workers <= 1 or len(items) <= 1:
        done = dict(_job(item) for item in items)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = dict(pool.map(_job, items))
    return {key: done[key] for key, _ in items}


def _ratio_bases(config: ScenarioConfig, ratios: Optional[List[int]]) -> Dict[str, ScenarioConfig]:
    """Scenario per ratio group; the coarse step stays fixed and the fine step shrinks."""
    if not ratios:
        return {"": config}
    return {f"R{r}": with_overrides(config, t_d=config.t_t / r) for r in ratios}


def reference_jobs(config: ScenarioConfig, args) -> Dict[str, ScenarioConfig]:
    """Ground truth per ratio group, each on its group's fine grid."""
    return {group: ground_truth(base) for group, base in _ratio_bases(config, args.ratios).items()}


def comparison_jobs(config: ScenarioConfig, args) -> Dict[str, ScenarioConfig]:
    jobs: Dict[str, ScenarioConfig] = {}
    for group, base in _ratio_bases(config, args.ratios).items():
        tag = f"{group}/" if group else ""
        for detector in args.detectors:
            for method in args.methods:
                if method == Method.LPF.value and args.lpf_alphas:
                    for alpha in args.lpf_alphas:
                        jobs[f"{tag}lpf(a={alpha:g})/{detector}"] = with_overrides(
                            base, method=method, detector=detector, lpf_alpha=alpha
                        )
                else:
                    jobs[f"{tag}{method}/{detector}"] = with_overrides(base, method=method, detector=detector)
    return jobs


def comparison_table(references: Dict[str, RunTrace], traces: Dict[str, RunTrace]) -> pd.DataFrame:
    """
    Metrics per run with improvement over the Hold run of the same group.

    Args:
        references: Ground-truth trace per ratio group ("" without a sweep)
        traces: Candidate traces keyed "[R<n>/]method/detector"

    Returns:
        One row per candidate
    """
    rows = []
    for key, trace in traces.items():
        row = {"run": key, "status": trace.status, **compare_runs(references[_group(key)], trace)}
        rows.append(row)
    df = pd.DataFrame(rows).set_index("run")
    for metric in ("mape_f", "nmae_p_dpv"):
        gains = []
        for key in df.index:
            hold_key = _hold_key(key)
            baseline = df.at[hold_key, metric] if hold_key in df.index else None
            value = df.at[key, metric]
            if pd.isna(baseline) or pd.isna(value) or baseline == 0:
                gains.append(None)
            else:
                gains.append(improvement(baseline, value))
        df[f"improvement_{metric}"] = gains
    return df


def _group(key: str) -> str:
    parts = key.split("/")
    return parts[0] if len(parts) == 3 else ""


def _hold_key(key: str) -> str:
    parts = key.split("/")
    parts[-2] = Method.HOLD.value
    return "/".join(parts)


def cmd_compare(args) -> int:
    config = _scenario(args)
    out = _out_dir(args, config, "compare")
    out.mkdir(parents=True, exist_ok=True)

    if args.bench:
        rows = [bench_bridge(with_overrides(config, method=m, detector=d)) for d in args.detectors for m in args.methods]
        table = pd.DataFrame(rows)
        table.to_csv(out / "bench.csv", index=False, float_format="%.12g", lineterminator="\n")
        print(table.to_string(index=False))
        return EXIT_OK

    workers = args.workers or env_workers()
    jobs = comparison_jobs(config, args)
    logger.info("comparing %d runs on %d worker(s)", len(jobs), workers)
    references = run_all(reference_jobs(config, args), workers)
    traces = run_all(jobs, workers)
    table = comparison_table(references, traces)
    table.to_csv(out / "compare.csv", float_format="%.12g", lineterminator="\n")
    (out / "compare.json").write_text(table.reset_index().to_json(orient="records", indent=2) + "\n", encoding="utf-8")
    print(table.to_string(float_format=lambda x: f"{x:.6g}"))
    failed = [k for k, t in traces.items() if t.status != "ok"]
    failed += [f"ground truth {g}" for g, t in references.items() if t.status != "ok"]
    return EXIT_FAILURE if failed else EXIT_OK


def cmd_serve_tx(args) -> int:
    config = _scenario(args)
    trace = run_tx_node(config, args.host, args.port, timeout=args.timeout)
    write_run(trace, _out_dir(args, config, "tx_node"), {})
    print(f"tx node: {trace.status}")
    return EXIT_OK if trace.status == "ok" else EXIT_FAILURE


def cmd_serve_dx(args) -> int:
    config = _scenario(args)
    trace = run_dx_node(config, args.host, args.port, timeout=args.timeout)
    summary = run_statistics(trace)
    write_run(trace, _out_dir(args, config, "dx_node"), summary)
    print(f"dx node: {trace.status}")
    return EXIT_OK if trace.status == "ok" else EXIT_FAILURE


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "serve-tx": cmd_serve_tx,
    "serve-dx": cmd_serve_dx,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        logging.basicConfig(
            level=(args.log_level or env_log_level()).upper(),
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HandshakeRejected as exc:
        print(f"handshake rejected: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:
        logger.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
