import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bdsde.coefficients import TerminalCondition
from bdsde.drivers import TimeGrid, simulate_drivers
from bdsde.envelope import (SearchBoxError, SearchSpec, bounding_solutions, envelope_solve, inf_convolution,
                            search_radius, sup_convolution)
from bdsde.families import affine_family, sqrt_drift_family, zero_family

from conftest import empty_spaces


def _args(y):
    y = np.atleast_1d(np.asarray(y, float))
    return y, np.zeros((y.size, 1)), np.zeros((y.size, 0))


def _dense_inf(f, y, n, lo=-6.0, hi=6.0, m=400_001):
    x = np.concatenate([np.linspace(lo, hi, m), [y, 0.0]])
    return float(np.min(f(x) + n * np.abs(x - y)))


def _sqrt_core(x):
    return np.minimum(np.sqrt(np.abs(x)), 1.0 + np.abs(x))


@pytest.fixture(scope="module")
def sp():
    return empty_spaces()


@pytest.mark.parametrize("y,n", [(0.01, 1.0), (0.3, 1.0), (-0.5, 2.0), (2.0, 4.0)])
def test_inf_matches_dense_grid(sp, y, n):
    c = sqrt_drift_family(sp)
    got = inf_convolution(c, n, spaces=sp)(0.0, *_args(y))[0]
    assert got == pytest.approx(_dense_inf(_sqrt_core, y, n), abs=1e-6)


def test_inf_near_zero(sp):
    # moving to the kink at 0 costs 0.01, far less than sqrt(0.01)
    got = inf_convolution(sqrt_drift_family(sp), 1.0, spaces=sp)(0.0, *_args(0.01))[0]
    assert got == pytest.approx(0.01, abs=1e-9)


def test_sup_at_origin(sp):
    # sup_x sqrt(x) - x is attained at x = 1/4
    got = sup_convolution(sqrt_drift_family(sp), 1.0, spaces=sp)(0.0, *_args(0.0))[0]
    assert got == pytest.approx(0.25, abs=1e-8)


def test_sup_capped_by_shifted_base(sp):
    c = sqrt_drift_family(sp, K=1.0)
    s = sup_convolution(c, 1.0, spaces=sp)
    y = np.linspace(-3, 3, 41)
    assert np.all(s(0.0, *_args(y)) <= _sqrt_core(y) + 1.0 + 1e-12)
    assert np.all(s.convolved(0.0, *_args(y)) >= s(0.0, *_args(y)) - 1e-12)


def test_lipschitz_base_reproduced(sp):
    c = affine_family(sp, beta_c=0.2, beta_y=0.7)
    y = np.linspace(-2, 2, 9)
    base = 0.2 + 0.7 * y
    for conv in (inf_convolution(c, 1.0, spaces=sp), sup_convolution(c, 1.0, spaces=sp)):
        np.testing.assert_allclose(conv(0.0, *_args(y)), base, atol=1e-8)


def test_level_below_growth_rejected(sp):
    with pytest.raises(ValueError):
        inf_convolution(sqrt_drift_family(sp, K=2.0), 1.0, spaces=sp)
    conv = sup_convolution(sqrt_drift_family(sp), 1.0, spaces=sp)
    with pytest.raises(ValueError):
        type(conv)(1.0, "mid", conv.base, 1.0)


def test_search_box_error(sp):
    # -3y is steeper than the level so the infimum escapes every box
    c = affine_family(sp, beta_y=-3.0)
    conv = inf_convolution(c, 1.0, K=1.0, spaces=sp, search=SearchSpec(radius=1.0, max_enlarge=2))
    with pytest.raises(SearchBoxError):
        conv(0.0, *_args([0.0, 1.0]))


def test_search_radius_formula():
    assert search_radius(1.0, 0.0, 1.0) == pytest.approx(2 * (2 * math.e - 2) + 1)


def _bound_drivers(K_steps=20):
    return simulate_drivers(TimeGrid.uniform(1.0, K_steps), empty_spaces(), 20, seed=0)


@pytest.mark.parametrize("c", [0.0, 1.5])
def test_bounding_equations_closed_form(c):
    d = _bound_drivers()
    up, lo = bounding_solutions(1.0, zero_family(d.spaces), TerminalCondition.constant(c), d)
    dt = 1 / 20
    # implicit steps: (Y_k + 2)(1 - K dt) = Y_{k+1} + 2
    assert up.Y[0, 0] == pytest.approx((c + 2) * (1 - dt) ** -20 - 2, rel=1e-8)
    assert abs(up.Y[0, 0] - ((c + 2) * math.e - 2)) < 10 * dt * (c + 2) * math.e
    if c == 0.0:
        # below zero |y| = -y, so the lower solution mirrors the upper one
        assert lo.Y[0, 0] == pytest.approx(-up.Y[0, 0], rel=1e-8)


def test_bounds_widen_with_K():
    d = _bound_drivers()
    zero = TerminalCondition.constant(0.0)
    u1, l1 = bounding_solutions(0.5, zero_family(d.spaces), zero, d)
    u2, l2 = bounding_solutions(1.0, zero_family(d.spaces), zero, d)
    assert np.all(u2.Y >= u1.Y) and np.all(l2.Y <= l1.Y)
    assert u2.Y[0, 0] > u1.Y[0, 0] > 0


@pytest.fixture(scope="module")
def sqrt_report():
    d = simulate_drivers(TimeGrid.uniform(1.0, 8), empty_spaces(), 200, seed=4, scenario_size=20)
    return envelope_solve(sqrt_drift_family(d.spaces), TerminalCondition.constant(0.0), d, (1.0, 2.0, 4.0))


def test_envelope_chain_monotone(sqrt_report):
    assert sqrt_report.monotone, sqrt_report.chain_violations
    assert len(sqrt_report.levels) == 3


def test_envelope_brackets_extremal_solutions(sqrt_report):
    # zero is the minimal solution; the maximal one is (T - t)^2 / 4
    np.testing.assert_allclose(sqrt_report.Y_I0, 0.0, atol=1e-9)
    ys = np.asarray(sqrt_report.Y_S0)
    assert np.all(np.diff(ys) <= 1e-12)
    assert ys[-1] > 0.2


def test_envelope_csv(sqrt_report, tmp_path):
    sqrt_report.to_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "level,Y_I0_mean,Y_S0_mean,bracket_width,cauchy_Z,cauchy_zeta"
    assert len(lines) == 4


def test_zero_drift_envelope_is_trivial():
    d = simulate_drivers(TimeGrid.uniform(1.0, 4), empty_spaces(), 40, seed=1)
    rep = envelope_solve(zero_family(d.spaces), TerminalCondition.constant(0.5), d, (1.0, 2.0), K=1.0)
    lo, hi = rep.limits
    np.testing.assert_allclose(lo, 0.5, atol=1e-12)
    np.testing.assert_allclose(hi, 0.5, atol=1e-12)
    assert rep.monotone


def test_levels_validated():
    d = simulate_drivers(TimeGrid.uniform(1.0, 2), empty_spaces(), 10, seed=1)
    c = sqrt_drift_family(d.spaces)
    with pytest.raises(ValueError):
        envelope_solve(c, TerminalCondition.constant(0.0), d, (2.0, 1.0))
    with pytest.raises(ValueError):
        envelope_solve(c, TerminalCondition.constant(0.0), d, (0.5, 1.0))


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3))
def test_convolution_chain_property(y):
    sp = empty_spaces()
    c = sqrt_drift_family(sp)
    args = _args(y)
    i1, i2 = inf_convolution(c, 1.0, spaces=sp)(0.0, *args)[0], inf_convolution(c, 2.0, spaces=sp)(0.0, *args)[0]
    s1, s2 = sup_convolution(c, 1.0, spaces=sp)(0.0, *args)[0], sup_convolution(c, 2.0, spaces=sp)(0.0, *args)[0]
    base = _sqrt_core(np.array([y]))[0]
    tol = 1e-9
    assert i1 <= i2 + tol <= base + 2 * tol
    assert base <= s2 + tol <= s1 + 2 * tol


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_inf_convolution_is_level_lipschitz(a, b):
    sp = empty_spaces()
    conv = inf_convolution(sqrt_drift_family(sp), 2.0, spaces=sp)
    va, vb = conv(0.0, *_args([a, b]))
    assert abs(va - vb) <= 2.0 * abs(a - b) + 1e-7
