import argparse
import json
import socket
from concurrent.futures import ThreadPoolExecutor

import pandas as pd
import pytest

from cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, _hold_key, comparison_jobs, main, reference_jobs
from conftest import SCENARIOS

STANDARD = str(SCENARIOS / "standard.json")


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.mark.parametrize(
    "argv",
    [[], ["run"], ["run", "--scenario", "nowhere.json"], ["frobnicate"], ["run", "--scenario", STANDARD, "--method", "cubic"]],
    ids=["no-command", "no-scenario", "missing-file", "unknown-command", "bad-choice"],
)
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "serve-tx" in capsys.readouterr().out


def test_invalid_scenario(tmp_path):
    data = json.loads((SCENARIOS / "standard.json").read_text(encoding="utf-8"))
    data["timesteps"]["t_d"] = 0.00015
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    assert main(["run", "--scenario", str(path)]) == EXIT_USAGE


def test_plant_reserve_above_rating_is_a_usage_error(tmp_path):
    data = json.loads((SCENARIOS / "standard.json").read_text(encoding="utf-8"))
    data["distribution"]["plants"][0]["reserve"] = 900.0
    path = tmp_path / "bad_plant.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    assert main(["run", "--scenario", str(path), "--duration", "0.1"]) == EXIT_USAGE


def test_noise_needs_two_values(tmp_path):
    argv = ["run", "--scenario", STANDARD, "--duration", "0.1", "--noise", "0.001", "--out", str(tmp_path)]
    assert main(argv) == EXIT_USAGE


def test_run_writes_results(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--scenario", STANDARD, "--duration", "0.3", "--out", str(out)]) == EXIT_OK
    printed = capsys.readouterr().out
    assert "status: ok" in printed
    assert "MAPE V (%)" in printed
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["mape_v"] == 0.0
    assert summary["exchanges"] == 30


def test_ground_truth_run(tmp_path):
    out = tmp_path / "gt"
    assert main(["run", "--scenario", STANDARD, "--duration", "0.05", "--ground-truth", "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["t_t"] == summary["t_d"]
    assert summary["method"] == "hold"


def test_compare_writes_table(tmp_path, capsys):
    argv = [
        "compare", "--scenario", STANDARD, "--duration", "0.3",
        "--methods", "hold,quadratic", "--workers", "1", "--out", str(tmp_path),
    ]
    assert main(argv) == EXIT_OK
    table = pd.read_csv(tmp_path / "compare.csv", index_col="run")
    assert list(table.index) == ["hold/ewma", "quadratic/ewma"]
    assert "improvement_mape_f" in table.columns
    assert (tmp_path / "compare.json").exists()
    assert "quadratic/ewma" in capsys.readouterr().out


def test_compare_ratio_sweep(tmp_path):
    argv = [
        "compare", "--scenario", STANDARD, "--duration", "0.3", "--ratios", "10,50",
        "--methods", "hold,quadratic", "--workers", "1", "--out", str(tmp_path),
    ]
    assert main(argv) == EXIT_OK
    table = pd.read_csv(tmp_path / "compare.csv", index_col="run")
    assert list(table.index) == ["R10/hold/ewma", "R10/quadratic/ewma", "R50/hold/ewma", "R50/quadratic/ewma"]
    assert (table["status"] == "ok").all()
    assert (table["mape_v"] == 0.0).all()


def test_compare_bench(tmp_path):
    argv = ["compare", "--scenario", STANDARD, "--bench", "--methods", "hold,quadratic", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    bench = pd.read_csv(tmp_path / "bench.csv")
    assert bench["method"].tolist() == ["hold", "quadratic"]
    assert (bench["us_per_fine_step"] > 0).all()


def test_comparison_jobs_cover_sweeps(standard_config):
    args = argparse.Namespace(
        methods=["hold", "lpf", "quadratic"], detectors=["ewma"], lpf_alphas=[0.01, 0.1], ratios=[10, 50]
    )
    jobs = comparison_jobs(standard_config, args)
    assert list(jobs) == [
        "R10/hold/ewma", "R10/lpf(a=0.01)/ewma", "R10/lpf(a=0.1)/ewma", "R10/quadratic/ewma",
        "R50/hold/ewma", "R50/lpf(a=0.01)/ewma", "R50/lpf(a=0.1)/ewma", "R50/quadratic/ewma",
    ]
    assert jobs["R50/quadratic/ewma"].ratio == 50
    assert jobs["R50/quadratic/ewma"].t_t == standard_config.t_t
    assert jobs["R50/quadratic/ewma"].t_d == pytest.approx(0.0002)
    assert jobs["R10/lpf(a=0.1)/ewma"].lpf_alpha == 0.1

    refs = reference_jobs(standard_config, args)
    assert list(refs) == ["R10", "R50"]
    assert all(ref.ratio == 1 for ref in refs.values())
    assert refs["R50"].t_d == jobs["R50/hold/ewma"].t_d
    assert list(reference_jobs(standard_config, argparse.Namespace(ratios=None))) == [""]


@pytest.mark.parametrize(
    "key, expected",
    [("quadratic/ewma", "hold/ewma"), ("R10/linear/static", "R10/hold/static"), ("lpf(a=0.1)/ewma", "hold/ewma")],
)
def test_hold_key(key, expected):
    assert _hold_key(key) == expected


def test_serve_dx_without_peer_fails(tmp_path):
    argv = [
        "serve-dx", "--scenario", STANDARD, "--duration", "0.1",
        "--port", str(free_port()), "--timeout", "2", "--out", str(tmp_path),
    ]
    assert main(argv) == EXIT_FAILURE


def test_serve_tx_and_dx_pair(tmp_path):
    port = str(free_port())
    common = ["--scenario", STANDARD, "--duration", "0.3", "--port", port, "--timeout", "30"]
    with ThreadPoolExecutor(max_workers=1) as pool:
        tx = pool.submit(main, ["serve-tx", *common, "--out", str(tmp_path / "tx")])
        assert main(["serve-dx", *common, "--out", str(tmp_path / "dx")]) == EXIT_OK
        assert tx.result(60) == EXIT_OK
    single = tmp_path / "single"
    argv = ["run", "--scenario", STANDARD, "--duration", "0.3", "--no-reference", "--out", str(single)]
    assert main(argv) == EXIT_OK
    assert (tmp_path / "dx" / "fine.csv").read_bytes() == (single / "fine.csv").read_bytes()
    assert (tmp_path / "tx" / "coarse.csv").read_bytes() == (single / "coarse.csv").read_bytes()
