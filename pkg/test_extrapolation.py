import math

import numpy as np
import pytest

from extrapolation import (
    BoundarySample,
    DegenerateNodesError,
    ExtrapolatorState,
    Method,
    MonotonicityError,
    NotPrimedError,
    lagrange_weights,
    predict,
    push,
    push_sample,
    reset_buffer,
    unwrap_angle,
    wrap_angle,
)


def state_with(method, points, **kwargs):
    state = ExtrapolatorState(method=method, **kwargs)
    for t, y in points:
        push(state, t, y)
    return state


# --- angles ---------------------------------------------------------------


def test_unwrap_examples():
    assert unwrap_angle(3.10, -3.10) == pytest.approx(3.1832, abs=1e-4)
    assert unwrap_angle(0.0, 0.5) == 0.5
    assert unwrap_angle(-3.10, 3.10) == pytest.approx(-3.1832, abs=1e-4)


def test_unwrap_stays_within_pi_of_previous():
    rng = np.random.default_rng(7)
    for prev, new in zip(rng.uniform(-50, 50, 2000), rng.uniform(-math.pi, math.pi, 2000)):
        assert abs(unwrap_angle(prev, new) - prev) <= math.pi + 1e-12


def test_unwrap_round_trip():
    rng = np.random.default_rng(11)
    for prev, new in zip(rng.uniform(-50, 50, 2000), rng.uniform(-3.1, 3.1, 2000)):
        assert wrap_angle(unwrap_angle(prev, new)) == pytest.approx(new, abs=1e-12)


def test_wrap_angle_range():
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert wrap_angle(-0.3229) == -0.3229


# --- buffer ---------------------------------------------------------------


def test_push_into_empty_buffer():
    state = ExtrapolatorState()
    push_sample(state, BoundarySample(0.0, 1.0, -0.3))
    assert list(state.values) == [1.0]
    assert state.refill_count == 1


def test_push_evicts_oldest():
    state = state_with(Method.QUADRATIC, [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0)])
    assert list(state.times) == [1.0, 2.0, 3.0]
    assert list(state.values) == [1.0, 2.0, 3.0]


def test_push_tracks_its_variable():
    state = ExtrapolatorState(variable="theta")
    push_sample(state, BoundarySample(0.0, 1.0, -0.3))
    assert state.newest == -0.3


def test_push_rejects_non_monotone_time():
    state = state_with(Method.HOLD, [(0.01, 1.0)])
    with pytest.raises(MonotonicityError):
        push(state, 0.01, 2.0)
    with pytest.raises(MonotonicityError):
        push(state, 0.0, 2.0)


def test_predict_on_empty_buffer():
    with pytest.raises(NotPrimedError):
        predict(ExtrapolatorState(), 0.0)


def test_reset_buffer_keeps_filter_memory():
    state = state_with(Method.LPF, [(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)])
    state.lpf_prev = 0.7
    reset_buffer(state)
    assert len(state) == 0
    assert state.refill_count == 0
    assert state.lpf_prev == 0.7


def test_reset_then_one_push_holds():
    state = state_with(Method.QUADRATIC, [(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)])
    reset_buffer(state)
    push(state, 3.0, 0.2)
    assert state.active_method() is Method.HOLD
    assert predict(state, 3.5) == 0.2


def test_reset_then_three_pushes_restores_quadratic():
    state = state_with(Method.QUADRATIC, [(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)])
    reset_buffer(state)
    for t in (3.0, 4.0, 5.0):
        push(state, t, 0.2)
        expected = Method.QUADRATIC if t == 5.0 else Method.HOLD
        assert state.active_method() is expected


def test_graduated_ladder_without_strict_refill():
    state = ExtrapolatorState(method=Method.QUADRATIC, strict_refill=False)
    push(state, 0.0, 1.0)
    assert state.active_method() is Method.HOLD
    push(state, 1.0, 2.0)
    assert state.active_method() is Method.LINEAR
    push(state, 2.0, 3.0)
    assert state.active_method() is Method.QUADRATIC


# --- weights --------------------------------------------------------------


def test_lagrange_weights_worked_example():
    w = lagrange_weights(0.025, [0.0, 0.010, 0.020])
    assert w == pytest.approx((0.375, -1.25, 1.875), abs=1e-12)


@pytest.mark.parametrize(
    "t_tau, expected",
    [(0.020, (0.0, 0.0, 1.0)), (0.010, (0.0, 1.0, 0.0)), (0.0, (1.0, 0.0, 0.0))],
)
def test_lagrange_weights_at_nodes(t_tau, expected):
    assert lagrange_weights(t_tau, [0.0, 0.010, 0.020]) == pytest.approx(expected, abs=1e-12)


def test_lagrange_weights_reject_duplicate_nodes():
    with pytest.raises(DegenerateNodesError):
        lagrange_weights(0.5, [0.0, 0.01, 0.01])


def test_lagrange_weights_partition_of_unity():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        t0 = rng.uniform(-10, 10)
        t1 = t0 + rng.uniform(0.1, 1.0)
        t2 = t1 + rng.uniform(0.1, 1.0)
        t_tau = t2 + rng.uniform(0.0, 1.0)
        assert math.fsum(lagrange_weights(t_tau, [t0, t1, t2])) == pytest.approx(1.0, abs=1e-12)


# --- predictions ----------------------------------------------------------


def test_quadratic_worked_example_degrees():
    points = [(0.0, math.radians(-18.5)), (0.010, math.radians(-18.3)), (0.020, math.radians(-18.0))]
    state = state_with(Method.QUADRATIC, points)
    predicted = math.degrees(predict(state, 0.025))
    assert predicted == pytest.approx(-17.8125, abs=1e-9)
    assert predicted == pytest.approx(-17.81, abs=0.01)


def test_linear_example():
    state = state_with(Method.LINEAR, [(0.0, 1.0), (0.010, 2.0)], strict_refill=False)
    assert predict(state, 0.015) == pytest.approx(2.5, abs=1e-12)


def test_lpf_example():
    state = state_with(Method.LPF, [(0.0, 1.0)], strict_refill=False)
    state.lpf_prev = 0.0
    assert predict(state, 0.0, held_input=1.0) == pytest.approx(0.01)
    assert state.lpf_prev == pytest.approx(0.01)


def test_lpf_alpha_one_passes_input():
    state = state_with(Method.LPF, [(0.0, 0.4), (1.0, 0.6), (2.0, 0.9)], lpf_alpha=1.0)
    state.lpf_prev = 123.0
    assert predict(state, 2.5, held_input=0.9) == 0.9


def test_lpf_holds_during_strict_refill():
    state = state_with(Method.LPF, [(0.0, 0.4)])
    assert predict(state, 0.5, held_input=0.4) == 0.4
    assert state.lpf_prev == 0.4


def test_hold_returns_newest():
    state = state_with(Method.HOLD, [(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)])
    assert predict(state, 2.7) == 3.0


def test_quadratic_constant_buffer():
    c = -0.32288591161895097
    state = state_with(Method.QUADRATIC, [(0.0, c), (0.01, c), (0.02, c)])
    for t_tau in (0.02, 0.0213, 0.0299):
        assert predict(state, t_tau) == c


def test_quadratic_exact_at_exchange_instant():
    state = state_with(Method.QUADRATIC, [(0.0, 0.3), (0.01, 0.7), (0.02, -0.11)])
    assert predict(state, 0.02) == -0.11


def test_quadratic_reproduces_quadratics():
    rng = np.random.default_rng(5)
    for _ in range(200):
        a, b, c = rng.uniform(-5, 5, 3)
        nodes = np.sort(rng.uniform(0, 1, 3)) + np.array([0.0, 0.05, 0.1])
        state = state_with(Method.QUADRATIC, [(t, a * t * t + b * t + c) for t in nodes])
        t_tau = nodes[-1] + rng.uniform(0, 0.5)
        exact = a * t_tau * t_tau + b * t_tau + c
        assert predict(state, t_tau) == pytest.approx(exact, rel=1e-9, abs=1e-9)


def test_quadratic_agrees_with_lagrange_weights():
    rng = np.random.default_rng(21)
    for _ in range(500):
        nodes = np.cumsum(rng.uniform(0.005, 0.02, 3))
        values = rng.uniform(-2.0, 2.0, 3)
        state = state_with(Method.QUADRATIC, zip(nodes, values))
        t_tau = nodes[-1] + rng.uniform(0.0, 0.02)
        expected = float(np.dot(lagrange_weights(t_tau, nodes), values))
        assert predict(state, t_tau) == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_linear_reproduces_affine_signals():
    rng = np.random.default_rng(9)
    for _ in range(200):
        a, b = rng.uniform(-5, 5, 2)
        t0 = rng.uniform(0, 1)
        t1 = t0 + rng.uniform(0.01, 0.1)
        state = state_with(Method.LINEAR, [(t0, a * t0 + b), (t1, a * t1 + b)], strict_refill=False)
        t_tau = t1 + rng.uniform(0, 0.1)
        assert predict(state, t_tau) == pytest.approx(a * t_tau + b, abs=1e-12)


def _max_sine_error(spacing):
    worst = 0.0
    for t_n in np.linspace(0.1, 1.1, 51):
        nodes = [t_n - 2 * spacing, t_n - spacing, t_n]
        state = state_with(Method.QUADRATIC, [(t, math.sin(2 * math.pi * t)) for t in nodes])
        for t_tau in np.linspace(t_n, t_n + spacing, 11):
            worst = max(worst, abs(predict(state, t_tau) - math.sin(2 * math.pi * t_tau)))
    return worst


def test_quadratic_error_is_third_order():
    errors = [_max_sine_error(h) for h in (0.020, 0.010, 0.005, 0.0025)]
    for coarse, fine in zip(errors, errors[1:]):
        assert 6.0 <= coarse / fine <= 10.0
