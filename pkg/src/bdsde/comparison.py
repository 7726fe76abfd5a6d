"""Monte Carlo checks of non-positivity and comparison statements.

Both solutions of a pair are computed on the same :class:`DriverPaths`
object; ordering is then a pathwise statement checked at every
``(node, path)`` pair up to a slack ``delta``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .coefficients import (ClauseResult, CoefficientSet, SampleCloud, TerminalCondition, drift_ordering,
                           make_cloud, shared_noise, validate_comparison_structure)
from .drivers import DriverPaths
from .families import affine_family
from .solver import Projector, RegressionSpec, SolutionTriple, picard_solve

DEFAULT_CEILING = 0.01
# the slack is never reported as exactly zero for regression-based runs
MIN_SLACK = 1e-12


class PreconditionError(ValueError):
    pass


@dataclass
class ComparisonReport:
    violation_fraction: float
    max_positive_gap: float
    slack: float
    gap: np.ndarray
    times: np.ndarray
    mean_gap: np.ndarray
    max_gap: np.ndarray
    violation_count: np.ndarray
    ceiling: float = DEFAULT_CEILING
    checks: List[ClauseResult] = field(default_factory=list)
    forced: bool = False
    label: str = ""

    @property
    def passed(self) -> bool:
        return self.violation_fraction <= self.ceiling

    def verdict(self) -> str:
        return ("verdict=%s label=%s violation_fraction=%.6g max_positive_gap=%.6g delta=%.6g ceiling=%.6g forced=%d"
                % ("PASS" if self.passed else "FAIL", self.label or "-", self.violation_fraction,
                   self.max_positive_gap, self.slack, self.ceiling, int(self.forced)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mean_gap", "max_gap", "violation_count"])
            for row in zip(self.times, self.mean_gap, self.max_gap, self.violation_count):
                w.writerow(["%.17g" % row[0], "%.17g" % row[1], "%.17g" % row[2], int(row[3])])


def gap_report(gap: np.ndarray, drivers: DriverPaths, delta: float, ceiling: float = DEFAULT_CEILING,
               label: str = "", checks=None, forced: bool = False) -> ComparisonReport:
    """Summarize a gap field ``(K+1, P)`` whose ordering claim is ``gap <= delta``."""
    if not 0 <= delta:
        raise ValueError("slack must be nonnegative")
    w = drivers.path_weights
    viol = gap > delta
    frac = float(np.sum(viol @ w) / gap.shape[0])
    return ComparisonReport(
        violation_fraction=min(1.0, max(0.0, frac)),
        max_positive_gap=float(max(0.0, gap.max())),
        slack=float(delta), gap=gap, times=drivers.grid.nodes.copy(),
        mean_gap=gap @ w, max_gap=gap.max(axis=1), violation_count=viol.sum(axis=1),
        ceiling=ceiling, checks=list(checks or []), forced=forced, label=label)


@dataclass
class Calibration:
    error: float
    slack: float
    gap: np.ndarray


def calibrate_slack(drivers: DriverPaths, regression: RegressionSpec = None, terminal=None,
                    projector: Optional[Projector] = None, factor: float = 3.0) -> Calibration:
    """Scheme error on the pair ``beta1 = -1``, ``beta2 = +1``.

    The exact gap ``Y2 - Y1`` is ``2 (T - t)``; the slack is ``factor`` times
    the largest observed deviation, floored at a tiny positive value.
    """
    regression = regression or RegressionSpec()
    projector = projector or Projector(drivers, regression)
    terminal = terminal or TerminalCondition.constant(0.0)
    sp = drivers.spaces
    s1, _ = picard_solve(affine_family(sp, beta_c=-1.0), terminal, drivers, tol=1e-13, projector=projector)
    s2, _ = picard_solve(affine_family(sp, beta_c=1.0), terminal, drivers, tol=1e-13, projector=projector)
    exact = 2.0 * (drivers.grid.horizon - drivers.grid.nodes)
    gap = s2.Y - s1.Y
    err = float(np.max(np.abs(gap - exact[:, None])))
    return Calibration(error=err, slack=max(factor * err, MIN_SLACK), gap=gap)


def _terminal_values(terminal, drivers):
    return terminal.evaluate(drivers) if isinstance(terminal, TerminalCondition) else np.asarray(terminal, float)


def _fail_or_force(checks: List[ClauseResult], force: bool, what: str):
    bad = [c for c in checks if not c.passed]
    if bad and not force:
        first = bad[0]
        raise PreconditionError(f"{what}: clause {first.name!r} failed ({first.detail}); sample {first.sample}")


def nonpositivity_check(coeffs: CoefficientSet, terminal, drivers: DriverPaths, regression: RegressionSpec = None,
                        delta: Optional[float] = None, cloud: Optional[SampleCloud] = None, force: bool = False,
                        ceiling: float = DEFAULT_CEILING, tol: float = 1e-8, max_iter: int = 60,
                        projector: Optional[Projector] = None):
    """Solve and report violations of ``Y <= delta``.

    Returns ``(report, solution, diagnostics)``.
    """
    regression = regression or RegressionSpec()
    projector = projector or Projector(drivers, regression)
    cloud = cloud if cloud is not None else make_cloud(drivers.spaces, 3000, horizon=drivers.grid.horizon)
    report = validate_comparison_structure(coeffs, drivers.spaces, "lemma41", cloud)
    checks = list(report.clauses)
    yT = _terminal_values(terminal, drivers)
    checks.append(ClauseResult("terminal_nonpositive", bool(np.all(yT <= 0)), "Y_T <= 0 on every path"))
    _fail_or_force(checks, force, "non-positivity hypotheses")
    if delta is None:
        delta = calibrate_slack(drivers, regression, projector=projector).slack
    sol, diag = picard_solve(coeffs, yT, drivers, tol=tol, max_iter=max_iter, force=force, projector=projector)
    if not diag.converged:
        raise RuntimeError(f"Picard iteration did not converge in {max_iter} steps")
    rep = gap_report(sol.Y, drivers, delta, ceiling, label="nonpos", checks=checks,
                     forced=force and not all(c.passed for c in checks))
    return rep, sol, diag


def _solve_pair(coeffs1, coeffs2, yT1, yT2, drivers, projector, tol, max_iter, force):
    s1, d1 = picard_solve(coeffs1, yT1, drivers, tol=tol, max_iter=max_iter, force=force, projector=projector)
    s2, d2 = picard_solve(coeffs2, yT2, drivers, tol=tol, max_iter=max_iter, force=force, projector=projector)
    if not (s1.drivers is drivers and s2.drivers is drivers):
        raise AssertionError("the two solutions were not driven by the same driver paths")
    for d in (d1, d2):
        if not d.converged:
            raise RuntimeError(f"Picard iteration did not converge in {max_iter} steps")
    return s1, s2


def compare_pair(coeffs1: CoefficientSet, coeffs2: CoefficientSet, hypothesis: str, terminal1, terminal2,
                 drivers: DriverPaths, regression: RegressionSpec = None, delta: Optional[float] = None,
                 cloud: Optional[SampleCloud] = None, force: bool = False, ceiling: float = DEFAULT_CEILING,
                 tol: float = 1e-8, max_iter: int = 60, projector: Optional[Projector] = None, holder: bool = False):
    """Solve the coupled pair and report violations of ``Y1 - Y2 <= delta``.

    ``hypothesis`` ending in ``a`` puts the drift-structure conditions on the
    first set, ending in ``b`` on the second. Returns
    ``(report, solution1, solution2)``.
    """
    allowed = ("thm43a", "thm43b") if holder else ("thm41a", "thm41b")
    if hypothesis not in allowed:
        raise ValueError(f"hypothesis must be one of {allowed}")
    regression = regression or RegressionSpec()
    projector = projector or Projector(drivers, regression)
    sp = drivers.spaces
    cloud = cloud if cloud is not None else make_cloud(sp, 3000, horizon=drivers.grid.horizon)
    checks = [drift_ordering(coeffs1, coeffs2, cloud, sp), shared_noise(coeffs1, coeffs2, cloud, sp)]
    structured = coeffs1 if hypothesis.endswith("a") else coeffs2
    checks += validate_comparison_structure(structured, sp, hypothesis, cloud).clauses
    yT1, yT2 = _terminal_values(terminal1, drivers), _terminal_values(terminal2, drivers)
    checks.append(ClauseResult("terminal_order", bool(np.all(yT1 <= yT2)), "Y1_T <= Y2_T on every path"))
    _fail_or_force(checks, force, f"{hypothesis} hypotheses")
    if delta is None:
        delta = calibrate_slack(drivers, regression, projector=projector).slack
    # Hölder coefficients are outside the Lipschitz setting by design
    s1, s2 = _solve_pair(coeffs1, coeffs2, yT1, yT2, drivers, projector, tol, max_iter, force or holder)
    rep = gap_report(s1.Y - s2.Y, drivers, delta, ceiling, label=hypothesis, checks=checks,
                     forced=force and not all(c.passed for c in checks))
    return rep, s1, s2


def compare_pair_holder(coeffs1: CoefficientSet, coeffs2: CoefficientSet, hypothesis: str, terminal1, terminal2,
                        drivers: DriverPaths, **kwargs):
    """:func:`compare_pair` under the half-Hölder hypotheses ``thm43a`` / ``thm43b``."""
    return compare_pair(coeffs1, coeffs2, hypothesis, terminal1, terminal2, drivers, holder=True, **kwargs)
