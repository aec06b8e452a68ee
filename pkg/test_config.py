import copy
import json

import pytest

from anomaly import Detector
from config import (
    ConfigError,
    env_output_dir,
    env_workers,
    ground_truth,
    load_scenario,
    scenario_from_dict,
    scenario_hash,
    with_agc,
    with_noise,
    with_overrides,
)
from conftest import SCENARIOS
from extrapolation import Method


@pytest.fixture
def raw():
    return json.loads((SCENARIOS / "standard.json").read_text(encoding="utf-8"))


def test_standard_scenario_loads(standard_config):
    assert standard_config.ratio == 100
    assert standard_config.n_exchanges == 6000
    assert standard_config.window_capacity == 100
    assert standard_config.method is Method.QUADRATIC
    assert standard_config.detector is Detector.EWMA
    assert standard_config.strict_refill
    assert not standard_config.rate_limit_enabled
    assert [e.t for e in standard_config.events] == [20.0, 20.08, 40.0]
    assert not standard_config.transmission.agc.enabled


def test_agc_scenario_enables_agc(agc_config):
    assert agc_config.transmission.agc.enabled
    assert agc_config.transmission.agc.participation["dpv"] == 0.002


def test_method_may_be_a_bare_name(raw):
    raw["method"] = "hold"
    raw["detector"] = "window"
    config = scenario_from_dict(raw)
    assert config.method is Method.HOLD
    assert config.detector is Detector.MOVING_WINDOW


@pytest.mark.parametrize("name", ["window", "moving_window", "MOVING_WINDOW"])
def test_window_detector_names(raw, standard_config, name):
    raw["detector"]["name"] = name
    assert scenario_from_dict(raw).detector is Detector.MOVING_WINDOW
    assert with_overrides(standard_config, detector=name).detector is Detector.MOVING_WINDOW


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.update(extra=1),
        lambda d: d["method"].update(order=2),
        lambda d: d["transmission"]["generators"][0].update(speed=1.0),
        lambda d: d["distribution"]["plants"][0].update(colour="blue"),
        lambda d: d["events"][0].update(phase="a"),
        lambda d: d["timesteps"].update(t_x=1.0),
        lambda d: d.pop("transmission"),
    ],
    ids=["top", "method", "generator", "plant", "event", "timesteps", "missing-section"],
)
def test_rejects_malformed_sections(raw, mutate):
    mutate(raw)
    with pytest.raises(ConfigError):
        scenario_from_dict(raw)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d["timesteps"].update(t_d=0.00015),
        lambda d: d["timesteps"].update(t_t=0.00005),
        lambda d: d["method"].update(name="cubic"),
        lambda d: d["method"].update(lpf_alpha=0.0),
        lambda d: d["detector"].update(name="isolation_forest"),
        lambda d: d["transmission"]["agc"].update(enabled=True, participation={"G1": 0.6, "G2": 0.3}),
        lambda d: d["transmission"]["agc"].update(enabled=True, participation={"G1": 0.5, "G7": 0.5}),
        lambda d: d["events"][2].update(target="G9"),
        lambda d: d["events"][0].update(magnitude=1.2),
        lambda d: d["transmission"]["generators"][2].update(governor_tg=0.0005),
        lambda d: d["distribution"].update(frequency_source="gps"),
        lambda d: d["distribution"]["plants"][0].update(reserve=900.0),
        lambda d: d["distribution"]["plants"][0].update(reserve=-1.0),
        lambda d: d["distribution"]["plants"][0].update(droop_d=-10.0),
        lambda d: d["distribution"]["plants"][1].update(db_of=-0.01),
        lambda d: d["distribution"]["plants"][1].update(db_uf=0.4),
        lambda d: d["distribution"]["plants"][2].update(p_min=260.0),
        lambda d: d["distribution"]["plants"][2].update(p_mpp=[[0.0, 300.0], [0.0, 280.0]]),
    ],
    ids=[
        "fractional-ratio",
        "tt-below-td",
        "method",
        "alpha",
        "detector",
        "participation-sum",
        "participation-name",
        "trip-target",
        "fault-residual",
        "integration-step",
        "frequency-source",
        "reserve-above-mpp",
        "negative-reserve",
        "negative-droop",
        "negative-deadband",
        "deadband-swallows-droop",
        "p-min-above-base",
        "profile-time",
    ],
)
def test_rejects_inconsistent_settings(raw, mutate):
    mutate(raw)
    with pytest.raises(ConfigError):
        scenario_from_dict(raw)


def test_disabled_agc_skips_participation_check(raw):
    raw["transmission"]["agc"]["participation"] = {"G1": 0.2}
    assert not scenario_from_dict(raw).transmission.agc.enabled


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_scenario(SCENARIOS / "nowhere.json")


def test_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{ not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_scenario(path)


def test_output_dir_from_environment(raw, monkeypatch):
    monkeypatch.setenv("TDCOSIM_OUTPUT_DIR", "/tmp/tdcosim-runs")
    assert env_output_dir() == "/tmp/tdcosim-runs"
    raw.pop("output")
    assert scenario_from_dict(raw).output_dir == "/tmp/tdcosim-runs"


@pytest.mark.parametrize("value, expected", [("4", 4), ("0", 1), ("many", 1)])
def test_env_workers(monkeypatch, value, expected):
    monkeypatch.setenv("TDCOSIM_WORKERS", value)
    assert env_workers() == expected


def test_ground_truth_matches_timesteps(standard_config):
    gt = ground_truth(standard_config)
    assert gt.t_t == gt.t_d == standard_config.t_d
    assert gt.ratio == 1
    assert gt.method is Method.HOLD
    assert gt.detector is Detector.EWMA
    assert gt.events == standard_config.events


def test_overrides_are_revalidated(standard_config):
    assert with_overrides(standard_config, method="linear").method is Method.LINEAR
    with pytest.raises(ConfigError):
        with_overrides(standard_config, t_t=0.01005)


def test_with_agc_and_noise(standard_config):
    assert with_agc(standard_config, True).transmission.agc.enabled
    assert not standard_config.transmission.agc.enabled
    noisy = with_noise(standard_config, 0.001, 0.05)
    assert noisy.transmission.measurement_noise_pu == 0.001
    assert noisy.transmission.measurement_noise_deg == 0.05


def test_scenario_hash(standard_config):
    h = scenario_hash(standard_config)
    assert 0 <= h < 2**48
    assert float(h) == h
    assert scenario_hash(with_overrides(standard_config, output_dir="elsewhere")) == h
    assert scenario_hash(with_overrides(standard_config, seed=1)) != h
    assert scenario_hash(copy.deepcopy(standard_config)) == h
