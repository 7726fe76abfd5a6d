"""Acceptance criteria, one test (or group) per criterion.

Each test carries a ``criterion`` marker; ``conftest.py`` prints one
pass/fail line per criterion at the end of the session.
"""

import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from bdsde.calculus import IntegrandField, backward_integral, brownian_ito_study
from bdsde.coefficients import TerminalCondition, brownian_terminal, estimate_lipschitz, make_cloud
from bdsde.comparison import calibrate_slack, compare_pair, nonpositivity_check
from bdsde.config import load_config
from bdsde.drivers import TimeGrid, simulate_drivers
from bdsde.envelope import envelope_solve, inf_convolution, sup_convolution
from bdsde.families import affine_family, sqrt_drift_family, sqrt_holder_family, trig_family, zero_family
from bdsde.markspace import DiscreteMeasureSpace
from bdsde.solver import Projector, RegressionSpec, picard_solve, uniqueness_gap, zero_triple

from conftest import empty_spaces, suite_spaces

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"

C1 = "trivial fixed point in one iteration"
C2 = "linear drift matches exp(-1) within 0.01"
C3 = "backward white-noise integral variance within 5%"
C4 = "Ito residual halves within 30% per step doubling; linear residual < 1e-10"
C5 = "Picard contraction ratios < 1 and <= a_hat + 0.1"
C6 = "uniqueness gap <= 2 tol from different initial triples"
C7 = "comparison calibration and ordered-pair suites"
C8 = "non-positivity examples"
C9 = "convolution chain and Lipschitz quotients on a 1000-point cloud"
C10 = "envelope sandwich and Lipschitz bracket width"
C11 = "byte-identical reruns across thread counts"


def _drivers_for(cfg):
    d = cfg.drivers
    return simulate_drivers(cfg.grid(), cfg.build_spaces(), d.n_paths, seed=d.seed,
                            scenario_size=d.scenario_size, form=d.form)


class _Clock:
    def __init__(self, budget):
        self.budget = budget

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.budget, f"took {self.elapsed:.1f}s, budget {self.budget}s"


@pytest.mark.criterion(1, C1)
def test_trivial_fixed_point():
    with _Clock(1.0):
        d = simulate_drivers(TimeGrid.uniform(1.0, 8), suite_spaces(), 200, seed=1)
        sol, diag = picard_solve(zero_family(d.spaces), TerminalCondition.constant(0.75), d)
    assert diag.converged and diag.iterations_used == 1
    assert np.max(np.abs(sol.Y - 0.75)) < 1e-12
    assert np.all(sol.Z == 0) and np.all(sol.zeta == 0)


@pytest.mark.criterion(2, C2)
def test_linear_drift_closed_form():
    cfg = load_config(CONFIGS / "linear_decay.cfg")
    assert (cfg.K, cfg.drivers.n_paths, cfg.regression.mode) == (100, 10_000, "lsmc")
    with _Clock(30.0):
        d = _drivers_for(cfg)
        sol, diag = picard_solve(cfg.family.build(d.spaces), cfg.terminal.build(), d, cfg.regression)
    assert diag.converged
    assert abs(sol.mean_Y()[0] - np.exp(-1.0)) <= 0.01


@pytest.mark.criterion(3, C3)
def test_backward_integral_variance():
    sp = empty_spaces()
    sp["E"] = DiscreteMeasureSpace.from_atoms([("a", 0.3, 0.5), ("b", 0.8, 1.0)])
    T, sigma = 2.0, 0.7
    with _Clock(10.0):
        d = simulate_drivers(TimeGrid.uniform(T, 20), sp, 10_000, seed=3)
        field = IntegrandField(np.full((21, d.n_paths, 2), sigma), "backward")
        out = backward_integral(field, d, "white_noise")
    expected = T * sigma ** 2 * sp["E"].total_mass
    assert abs(out.var() / expected - 1) <= 0.05


@pytest.mark.criterion(4, C4)
def test_ito_formula_convergence():
    with _Clock(60.0):
        study = brownian_ito_study(empty_spaces(), (16, 32, 64), 10_000, seed=0)
    print(f"ito ratios {study.ratios} linear residual {study.linear_max_residual:.3g}")
    assert study.linear_max_residual < 1e-10
    # "halves within 30%": each ratio in [0.35, 0.65]
    assert np.all((study.ratios >= 0.35) & (study.ratios <= 0.65)), study.ratios


@pytest.mark.criterion(5, C5)
def test_picard_contraction():
    cfg = load_config(CONFIGS / "trig_contraction.cfg")
    with _Clock(120.0):
        d = _drivers_for(cfg)
        coeffs = trig_family(d.spaces)
        est = estimate_lipschitz(coeffs, make_cloud(d.spaces, 3000, seed=1), d.spaces)
        _, diag = picard_solve(coeffs, cfg.terminal.build(), d, cfg.regression, tol=1e-8, max_iter=60,
                               C=est.C_hat, alpha=est.alpha_hat)
    nw = diag.constants
    a_hat = nw.a * est.C_hat + est.alpha_hat + nw.b * est.alpha_hat
    assert diag.theoretical_bound == pytest.approx(a_hat)
    assert diag.converged and diag.contraction_ratio
    assert all(r < 1 for r in diag.contraction_ratio)
    assert max(diag.contraction_ratio) <= a_hat + 0.1


@pytest.mark.criterion(6, C6)
def test_uniqueness_from_two_starts():
    tol = 1e-6
    with _Clock(10.0):
        d = simulate_drivers(TimeGrid.uniform(1.0, 5), empty_spaces(), 1, seed=0, form="enumeration")
        proj = Projector(d, RegressionSpec(mode="exact_tree"))
        coeffs = trig_family(d.spaces)
        term = brownian_terminal("sin")
        s0, d0 = picard_solve(coeffs, term, d, tol=tol, projector=proj, initial=zero_triple(d, 0.0))
        s5, d5 = picard_solve(coeffs, term, d, tol=tol, projector=proj, initial=zero_triple(d, 5.0))
    assert d0.converged and d5.converged
    assert uniqueness_gap(s0, s5).sup_Y_gap <= 2 * tol


def _pair_from_config(name, **family_overrides):
    cfg = load_config(CONFIGS / name)
    d = _drivers_for(cfg)
    proj = Projector(d, cfg.regression)
    cal = calibrate_slack(d, projector=proj)
    c1 = cfg.family.build(d.spaces) if not family_overrides else None
    c2 = cfg.family2.build(d.spaces) if not family_overrides else None
    return cfg, d, proj, cal, c1, c2


@pytest.mark.criterion(7, C7)
def test_comparison_calibration_and_suites():
    with _Clock(300.0):
        cfg, d, proj, cal, c1, c2 = _pair_from_config("thm41_pair.cfg")
        assert (d.n_paths, d.K) == (10_000, 32)
        assert cal.error < 1e-10
        term = cfg.terminal.build()
        rep41, _, _ = compare_pair(c1, c2, "thm41a", term, term, d, projector=proj, delta=cal.slack)
        print(rep41.verdict())

        cfg43 = load_config(CONFIGS / "thm43_pair.cfg")
        d43 = _drivers_for(cfg43)
        proj43 = Projector(d43, cfg43.regression)
        cal43 = calibrate_slack(d43, projector=proj43)
        assert cal43.error < 1e-10
        one = cfg43.terminal.build()
        rep43, _, _ = compare_pair(cfg43.family.build(d43.spaces), cfg43.family2.build(d43.spaces), "thm43a",
                                   one, one, d43, projector=proj43, delta=cal43.slack, holder=True)
        print(rep43.verdict())

        # square-root noise together with monotone jump maps
        sp = d43.spaces
        j1 = sqrt_holder_family(sp, beta_c=0.5, g0_y=-1.0, g1_y=-0.5)
        j2 = sqrt_holder_family(sp, beta_c=1.0, g0_y=-1.0, g1_y=-0.5)
        rep43j, _, _ = compare_pair(j1, j2, "thm43a", one, one, d43, projector=proj43, delta=cal43.slack,
                                    holder=True)
        print(rep43j.verdict())
    for rep in (rep41, rep43, rep43j):
        assert not rep.forced
        assert rep.violation_fraction <= 0.01


def _nonpos_examples():
    e = empty_spaces()
    e["E"] = DiscreteMeasureSpace.from_atoms([("e", 0.5, 1.0)])
    j = suite_spaces()
    return [
        (e, affine_family(e, sigma_y=1.0), TerminalCondition.constant(-0.5)),
        (empty_spaces(), affine_family(empty_spaces(), beta_y=-1.0), brownian_terminal("neg_abs")),
        (j, affine_family(j, beta_y=-0.5, g0_y=-0.5, g1_y=-0.5), brownian_terminal("neg_abs")),
    ]


@pytest.mark.criterion(8, C8)
def test_nonpositivity_examples():
    reports = []
    with _Clock(120.0):
        for sp, coeffs, term in _nonpos_examples():
            d = simulate_drivers(TimeGrid.uniform(1.0, 32), sp, 10_000, seed=13, scenario_size=100)
            rep, _, _ = nonpositivity_check(coeffs, term, d)
            reports.append(rep)
            print(rep.verdict())
    assert all(not r.forced and r.violation_fraction <= 0.01 for r in reports)


@pytest.mark.criterion(9, C9)
def test_convolution_chain():
    sp = empty_spaces()
    base = sqrt_drift_family(sp, K=1.0)
    rng = np.random.default_rng(9)
    y = np.sort(rng.uniform(-5.0, 5.0, 1000))
    z, zeta = np.zeros((1000, 1)), np.zeros((1000, 0))
    beta = np.minimum(np.sqrt(np.abs(y)), 1 + np.abs(y))
    tol = 1e-3
    with _Clock(60.0):
        vals = {}
        for n in (2, 3, 4, 5, 8, 9):
            vals["I", n] = inf_convolution(base, n, spaces=sp)(0.0, y, z, zeta)
            vals["S", n] = sup_convolution(base, n, spaces=sp)(0.0, y, z, zeta)
    far = np.diff(y) >= 1e-3
    for n in (2, 4, 8):
        assert np.all(vals["I", n] <= vals["I", n + 1] + tol)
        assert np.all(vals["I", n + 1] <= beta + tol)
        assert np.all(beta <= vals["S", n + 1] + tol)
        assert np.all(vals["S", n + 1] <= vals["S", n] + tol)
        assert np.all(vals["S", n] <= beta + base.growth_K + tol)
        for kind in ("I", "S"):
            q = np.abs(np.diff(vals[kind, n]))[far] / np.diff(y)[far]
            assert q.max() <= n + 1e-2, (kind, n, q.max())


@pytest.mark.criterion(10, C10)
def test_envelope_sandwich():
    with _Clock(600.0):
        cfg = load_config(CONFIGS / "envelope_sqrt.cfg")
        d = _drivers_for(cfg)
        rep = envelope_solve(cfg.family.build(d.spaces), cfg.terminal.build(), d,
                             [float(v) for v in cfg.option("levels")], cfg.regression, max_iter=200)
        print({k: v for k, v in rep.chain_violations.items()}, rep.Y_I0, rep.Y_S0)

        tol = 1e-8
        sp = suite_spaces()
        dl = simulate_drivers(TimeGrid.uniform(1.0, 16), sp, 2000, seed=5, scenario_size=100)
        lip = envelope_solve(trig_family(sp, a_z=0.0), brownian_terminal("sin"), dl, (1.0, 2.0, 4.0), tol=tol)
    assert rep.monotone, rep.chain_violations
    assert {"lower_bound<=inf", "sup<=upper_bound"} <= set(rep.chain_violations)
    assert lip.monotone
    assert max(lip.width0) <= 3 * tol


def _solve_in_subprocess(cfg, out, threads):
    env = dict(os.environ, OMP_NUM_THREADS=str(threads), OPENBLAS_NUM_THREADS=str(threads),
               MKL_NUM_THREADS=str(threads))
    env.pop("BDSDE_SEED", None)
    r = subprocess.run([sys.executable, "-m", "bdsde", "solve", "--config", str(cfg), "--out", str(out)],
                       env=env, capture_output=True, text=True)
    assert r.returncode == 0, r.stderr


@pytest.mark.criterion(11, C11)
def test_determinism(tmp_path):
    cfg = CONFIGS / "trig_contraction.cfg"
    runs = [(tmp_path / "a", 1), (tmp_path / "b", 1), (tmp_path / "c", 4)]
    for out, threads in runs:
        _solve_in_subprocess(cfg, out, threads)
    for name in ("solution.csv", "picard.csv", "convergence.dat"):
        ref = (tmp_path / "a" / name).read_bytes()
        assert (tmp_path / "b" / name).read_bytes() == ref
        assert (tmp_path / "c" / name).read_bytes() == ref
    g = TimeGrid.uniform(1.0, 16)
    one = simulate_drivers(g, suite_spaces(), 2000, seed=3, scenario_size=100, workers=1)
    many = simulate_drivers(g, suite_spaces(), 2000, seed=3, scenario_size=100, workers=4)
    for name in ("brownian", "white_noise", "jumps_n0", "jumps_n1", "jumps_m"):
        assert np.array_equal(getattr(one, name), getattr(many, name))
