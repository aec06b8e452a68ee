"""
End-to-end checks on the full 60 s standard scenario.

These runs take minutes; deselect them with ``-m "not slow"``.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from config import ground_truth, with_overrides
from cosim import bench_bridge, compare_runs, improvement, run, sfr_tracking_error
from transmission import GridEvent
from wire import run_dx_node, run_tx_node
from test_wire import TIMEOUT, _start_tx

pytestmark = pytest.mark.slow

METRICS = ("mape_v", "mape_theta", "mape_f", "nmae_f", "nmae_p_dpv", "nmae_pfr", "nmae_sfr")


@pytest.fixture(scope="module")
def scores(standard_runs, standard_reference):
    return {m: compare_runs(standard_reference, standard_runs(method=m)) for m in ("hold", "lpf", "linear", "quadratic")}


def test_reference_completes(standard_reference):
    assert standard_reference.status == "ok"
    assert standard_reference.n_fine == 600000


def test_method_ranking(scores):
    f = {m: s["mape_f"] for m, s in scores.items()}
    assert f["quadratic"] < f["linear"] < f["hold"]
    assert f["quadratic"] < f["lpf"] < f["hold"]


def test_quadratic_improves_frequency_error(scores):
    assert improvement(scores["hold"]["mape_f"], scores["quadratic"]["mape_f"]) >= 90.0


def test_quadratic_improves_dpv_error(scores):
    assert scores["hold"]["nmae_p_dpv"] >= 10.0 * scores["quadratic"]["nmae_p_dpv"]


def test_ewma_resets_only_at_events(standard_runs):
    trace = standard_runs()
    assert np.flatnonzero(trace.verdicts["reset"]).tolist() == [2000, 2008, 4000]


def test_ewma_outliers_and_stability(scores):
    s = scores["quadratic"]
    assert s["outliers_v_mag"] <= 15
    assert s["outliers_theta"] <= 15
    assert s["stability_v_mag"] >= 0.997
    assert s["stability_theta"] >= 0.997


def test_static_detector_resets_on_the_fault(standard_runs):
    trace = standard_runs(detector="static")
    assert trace.status == "ok"
    assert {2000, 2008} <= set(np.flatnonzero(trace.verdicts["reset"]).tolist())


def test_window_flags_no_fewer_than_ewma(standard_runs):
    window = standard_runs(detector="window")
    ewma = standard_runs()
    assert window.outlier_count("theta") >= ewma.outlier_count("theta")


def test_reference_scores_zero_against_itself(standard_reference):
    summary = compare_runs(standard_reference, standard_reference)
    for key in METRICS:
        assert summary[key] in (0.0, None), key


def test_agc_request_tracked_exactly(agc_config):
    trace = run(agc_config)
    assert trace.status == "ok"
    assert np.abs(trace.fine["p_sfr"]).max() > 0.0
    assert sfr_tracking_error(trace) == 0.0


def test_two_node_run_matches_on_standard_scenario(standard_config, standard_runs):
    with ThreadPoolExecutor(max_workers=1) as pool:
        future, port = _start_tx(pool, standard_config)
        dx_trace = run_dx_node(standard_config, "127.0.0.1", port, TIMEOUT)
        tx_trace = future.result(TIMEOUT)
    single = standard_runs()
    assert dx_trace.status == tx_trace.status == "ok"
    for name, values in single.fine.items():
        assert np.array_equal(dx_trace.fine[name], values), name
    for name, values in single.coarse.items():
        assert np.array_equal(tx_trace.coarse[name], values), name


@pytest.fixture(scope="module")
def trip_only(standard_config):
    return with_overrides(standard_config, duration=8.0, events=[GridEvent("gen_trip", 4.0, 40.0, "G3")])


RATIOS = (10, 50, 100, 200)


@pytest.fixture(scope="module")
def quadratic_mape_f_by_ratio(trip_only):
    """Quadratic frequency MAPE per t_t/t_d at fixed t_t, each against its own ground truth."""
    scores = {}
    for ratio in RATIOS:
        base = with_overrides(trip_only, t_d=trip_only.t_t / ratio)
        reference = run(ground_truth(base))
        scores[ratio] = compare_runs(reference, run(with_overrides(base, method="quadratic")))["mape_f"]
    return scores


@pytest.mark.parametrize("ratio", RATIOS)
def test_frequency_error_stays_flat_across_ratios(quadratic_mape_f_by_ratio, ratio):
    assert quadratic_mape_f_by_ratio[10] > 0.0
    assert quadratic_mape_f_by_ratio[ratio] <= 5.0 * quadratic_mape_f_by_ratio[10]


def test_bridge_fits_the_fine_step_budget(standard_config):
    report = bench_bridge(standard_config)
    assert 0.0 < report["budget_share"] < 0.05
    assert report["us_v_mag"] + report["us_theta"] > 0.0
