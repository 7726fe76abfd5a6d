"""Inf/sup convolutions of a linear-growth drift and the min/max solution bracket.

For ``n >= K``

* ``inf_n(y, z) = inf_{y', z'} beta(y', z') + n|y - y'| + n|z - z'|``
* ``sup_n(y, z) = min(beta(y, z) + K, sup_{y', z'} beta(y', z') - n|y - y'| - n|z - z'|)``

are ``n``-Lipschitz, monotone in ``n`` and sandwich ``beta``. When the drift
has the form ``h + int kernel zeta nu`` only ``h`` is convolved; the
``zeta`` term does not involve ``(y', z')``. The extrema are found by a
coarse grid over ``[y - R, y + R]`` (and ``[z - R, z + R]`` when ``h``
depends on ``z``) followed by shrinking local grids.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .coefficients import CoefficientSet, DriftStructure, SampleCloud, TerminalCondition, make_cloud
from .comparison import calibrate_slack
from .drivers import DriverPaths
from .solver import PicardDiagnostics, Projector, RegressionSpec, SolutionTriple, picard_solve


class SearchBoxError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchSpec:
    radius: float = 10.0
    coarse: int = 64
    rounds: int = 12
    local: int = 9
    shrink: float = 4.0
    kinks: Tuple[float, ...] = (0.0,)
    max_enlarge: int = 3


def search_radius(K: float, terminal_bound: float, horizon: float) -> float:
    """``2 * (a-priori bound on |Y*|) + 1`` with ``|Y*| <= (|Y_T| + 2) e^{KT} - 2``."""
    return 2.0 * ((terminal_bound + 2.0) * math.exp(K * horizon) - 2.0) + 1.0


def _extremum_1d(obj: Callable, y: np.ndarray, spec: SearchSpec, radius: float):
    """Minimize ``obj(points)`` over ``[y - R, y + R]`` per row; returns (value, argmin, on_boundary)."""
    offs = np.linspace(-1.0, 1.0, spec.coarse)
    pts = y[:, None] + radius * offs[None, :]
    extra = [y[:, None]] + [np.full((y.size, 1), k) for k in spec.kinks]
    extra = np.concatenate(extra, axis=1)
    extra = np.where(np.abs(extra - y[:, None]) <= radius, extra, y[:, None])
    vals = obj(pts)
    j = np.argmin(vals, axis=1)
    rows = np.arange(y.size)
    best_x, best_v = pts[rows, j], vals[rows, j]
    boundary = (j == 0) | (j == spec.coarse - 1)
    ev = obj(extra)
    je = np.argmin(ev, axis=1)
    better = ev[rows, je] < best_v
    best_x = np.where(better, extra[rows, je], best_x)
    best_v = np.where(better, ev[rows, je], best_v)
    boundary &= ~better
    h = 2.0 * radius / (spec.coarse - 1)
    loc = np.linspace(-1.0, 1.0, spec.local)
    for _ in range(spec.rounds):
        lp = np.clip(best_x[:, None] + h * loc[None, :], (y - radius)[:, None], (y + radius)[:, None])
        lv = obj(lp)
        jl = np.argmin(lv, axis=1)
        improve = lv[rows, jl] < best_v
        best_x = np.where(improve, lp[rows, jl], best_x)
        best_v = np.where(improve, lv[rows, jl], best_v)
        h /= spec.shrink
    return best_v, best_x, boundary


def _extremum_2d(obj: Callable, y: np.ndarray, z: np.ndarray, spec: SearchSpec, radius: float):
    offs = radius * np.linspace(-1.0, 1.0, spec.coarse)
    gy, gz = np.meshgrid(offs, offs, indexing="ij")
    py = y[:, None] + gy.ravel()[None, :]
    pz = z[:, None] + gz.ravel()[None, :]
    py = np.concatenate([py, y[:, None]], axis=1)
    pz = np.concatenate([pz, z[:, None]], axis=1)
    vals = obj(py, pz)
    rows = np.arange(y.size)
    j = np.argmin(vals, axis=1)
    by, bz, bv = py[rows, j], pz[rows, j], vals[rows, j]
    on_edge = (np.abs(np.abs(by - y) - radius) < 1e-12 * (1 + radius)) | (np.abs(np.abs(bz - z) - radius) < 1e-12 * (1 + radius))
    h = 2.0 * radius / (spec.coarse - 1)
    loc = np.linspace(-1.0, 1.0, spec.local)
    ly, lz = np.meshgrid(loc, loc, indexing="ij")
    ly, lz = ly.ravel(), lz.ravel()
    for _ in range(spec.rounds):
        qy = np.clip(by[:, None] + h * ly[None, :], (y - radius)[:, None], (y + radius)[:, None])
        qz = np.clip(bz[:, None] + h * lz[None, :], (z - radius)[:, None], (z + radius)[:, None])
        lv = obj(qy, qz)
        jl = np.argmin(lv, axis=1)
        improve = lv[rows, jl] < bv
        by = np.where(improve, qy[rows, jl], by)
        bz = np.where(improve, qz[rows, jl], bz)
        bv = np.where(improve, lv[rows, jl], bv)
        h /= spec.shrink
    return bv, by, on_edge


@dataclass
class ConvolutionApproximant:
    """Evaluable ``inf_n`` or ``sup_n`` regularization of a drift."""

    level: float
    kind: str
    base: CoefficientSet
    K: float
    search: SearchSpec = field(default_factory=SearchSpec)
    depends_on_z: bool = True
    nu: Optional[object] = None

    def __post_init__(self):
        if self.kind not in ("inf", "sup"):
            raise ValueError(f"kind must be 'inf' or 'sup', got {self.kind!r}")
        if self.level < self.K:
            raise ValueError(f"level {self.level} is below the growth constant K={self.K}")

    def _core(self, s, y, z, zeta):
        """The part of the drift that is convolved, as a function of (y', z')."""
        struct = self.base.drift_structure
        if struct is not None:
            return lambda yy, zz: struct.h(s, yy, zz)
        beta = self.base.beta
        return lambda yy, zz, _zeta=zeta: beta(s, yy, zz, _zeta)

    def _zeta_term(self, s, zeta):
        struct = self.base.drift_structure
        if struct is None or self.nu is None or self.nu.n_atoms == 0:
            return 0.0
        c = np.asarray(struct.kernel(s, self.nu.coords), dtype=float) * self.nu.weights
        return zeta @ c

    def convolved(self, s, y, z, zeta):
        """The bare inf/sup value of the convolved part, without the ``+K`` cap."""
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        n = self.level
        sign = 1.0 if self.kind == "inf" else -1.0
        struct = self.base.drift_structure
        out = np.empty(y.shape[0])
        radius = self.search.radius
        todo = np.arange(y.shape[0])
        for attempt in range(self.search.max_enlarge + 1):
            yy, zz = y[todo], z[todo]
            zt = None if struct is not None else np.asarray(zeta, float)[todo]

            def f(py, pz=None, _yy=yy, _zz=zz, _zt=zt):
                m = py.shape[1]
                flat_y = py.ravel()
                if pz is None:
                    flat_z = np.repeat(_zz, m, axis=0)
                    dz = 0.0
                else:
                    flat_z = np.repeat(_zz, m, axis=0).copy()
                    flat_z[:, 0] = pz.ravel()
                    dz = np.abs(pz - _zz[:, :1])
                if struct is not None:
                    core = struct.h(s, flat_y, flat_z)
                else:
                    core = self.base.beta(s, flat_y, flat_z, np.repeat(_zt, m, axis=0))
                core = np.asarray(core, dtype=float).reshape(py.shape)
                return sign * core + n * np.abs(py - _yy[:, None]) + n * dz

            if self.depends_on_z:
                v, _, edge = _extremum_2d(f, yy, zz[:, 0], self.search, radius)
            else:
                v, _, edge = _extremum_1d(f, yy, self.search, radius)
            out[todo] = sign * v
            if not np.any(edge):
                return out
            todo = todo[edge]
            radius *= 2.0
        raise SearchBoxError(f"{todo.size} extremum searches still hit the box boundary at radius {radius / 2:g}")

    def __call__(self, s, y, z, zeta):
        val = self.convolved(s, y, z, zeta)
        if self.kind == "sup":
            struct = self.base.drift_structure
            if struct is not None:
                base_core = np.asarray(struct.h(s, np.asarray(y, float), np.asarray(z, float)), dtype=float)
            else:
                base_core = np.asarray(self.base.beta(s, y, z, zeta), dtype=float)
            val = np.minimum(base_core + self.K, val)
        return val + self._zeta_term(s, np.asarray(zeta, dtype=float))

    def coefficient_set(self) -> CoefficientSet:
        base = self.base
        C = max(2.0 * self.level ** 2 + _kernel_l2(base), base.lipschitz_C)
        return CoefficientSet(beta=self, sigma=base.sigma, g0=base.g0, g1=base.g1, lipschitz_C=C,
                              lipschitz_alpha=base.lipschitz_alpha, compliant=False,
                              name=f"{base.name}:{self.kind}{self.level:g}")


def _kernel_l2(coeffs: CoefficientSet) -> float:
    return 0.0 if coeffs.drift_structure is None else float(coeffs.drift_structure.K)


def _drift_uses_z(coeffs: CoefficientSet, spaces, seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    y = rng.uniform(-3, 3, 64)
    z1 = rng.uniform(-3, 3, (64, 1))
    z2 = rng.uniform(-3, 3, (64, 1))
    zeta = np.zeros((64, spaces["F"].n_atoms))
    b1 = coeffs.beta(0.0, y, z1, zeta)
    b2 = coeffs.beta(0.0, y, z2, zeta)
    return not np.allclose(b1, b2, rtol=0, atol=1e-12)


def inf_convolution(base: CoefficientSet, n: float, search: SearchSpec = SearchSpec(), K: Optional[float] = None,
                    spaces=None, depends_on_z: Optional[bool] = None) -> ConvolutionApproximant:
    K = base.growth_K if K is None else K
    if K is None:
        raise ValueError("the base drift has no declared growth constant")
    if depends_on_z is None:
        depends_on_z = True if spaces is None else _drift_uses_z(base, spaces)
    return ConvolutionApproximant(n, "inf", base, K, search, depends_on_z, None if spaces is None else spaces["F"])


def sup_convolution(base: CoefficientSet, n: float, K: Optional[float] = None, search: SearchSpec = SearchSpec(),
                    spaces=None, depends_on_z: Optional[bool] = None) -> ConvolutionApproximant:
    K = base.growth_K if K is None else K
    if K is None:
        raise ValueError("the base drift has no declared growth constant")
    if depends_on_z is None:
        depends_on_z = True if spaces is None else _drift_uses_z(base, spaces)
    return ConvolutionApproximant(n, "sup", base, K, search, depends_on_z, None if spaces is None else spaces["F"])


def bounding_coefficients(K: float, base: CoefficientSet, spaces, sign: float) -> CoefficientSet:
    """Drift ``sign * K (2 + |y| + |z|) + int kernel zeta nu`` with the noise of ``base``."""
    if not K > 0:
        raise ValueError("K must be positive")
    struct = base.drift_structure
    kernel = struct.kernel if struct is not None else (lambda s, u: np.zeros(np.shape(u)))
    kl2 = float(np.sum(np.asarray(kernel(0.0, spaces["F"].coords), float) ** 2 * spaces["F"].weights))

    def h(s, y, z):
        return sign * K * (2.0 + np.abs(y) + np.sqrt(np.sum(z * z, axis=1)))

    new = DriftStructure(h, kernel, max(K, kl2))
    C = max(3.0 * K ** 2 + 3.0 * kl2, base.lipschitz_C)
    return CoefficientSet.from_structure(new, spaces["F"], sigma=base.sigma, g0=base.g0, g1=base.g1,
                                         lipschitz_C=C, lipschitz_alpha=base.lipschitz_alpha,
                                         compliant=base.lipschitz_alpha < 1,
                                         name=f"bound{'+' if sign > 0 else '-'}{K:g}")


def bounding_solutions(K: float, base: CoefficientSet, terminal, drivers: DriverPaths,
                       regression: RegressionSpec = None, tol: float = 1e-8, max_iter: int = 200,
                       projector: Optional[Projector] = None):
    """Solutions with the drifts ``+-K(2 + |y| + |z|) + int kernel zeta nu``; returns (upper, lower)."""
    projector = projector or Projector(drivers, regression or RegressionSpec())
    out = []
    for sign in (1.0, -1.0):
        coeffs = bounding_coefficients(K, base, drivers.spaces, sign)
        sol, diag = picard_solve(coeffs, terminal, drivers, tol=tol, max_iter=max_iter, force=True,
                                 projector=projector)
        if not diag.converged:
            raise RuntimeError(f"bounding equation with sign {sign:+g} did not converge")
        out.append(sol)
    return out[0], out[1]


@dataclass
class EnvelopeLevel:
    level: float
    lower: SolutionTriple
    upper: SolutionTriple
    lower_diag: PicardDiagnostics
    upper_diag: PicardDiagnostics


@dataclass
class EnvelopeReport:
    levels: List[EnvelopeLevel]
    upper_bound: SolutionTriple
    lower_bound: SolutionTriple
    slack: float
    chain_violations: Dict[str, float]
    Y_I0: List[float]
    Y_S0: List[float]
    width0: List[float]
    cauchy_Z: List[float]
    cauchy_zeta: List[float]

    @property
    def monotone(self) -> bool:
        return all(v == 0.0 for v in self.chain_violations.values())

    @property
    def limits(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.levels[-1].lower.Y, self.levels[-1].upper.Y

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "Y_I0_mean", "Y_S0_mean", "bracket_width", "cauchy_Z", "cauchy_zeta"])
            for i, lv in enumerate(self.levels):
                cz = self.cauchy_Z[i - 1] if i else float("nan")
                cze = self.cauchy_zeta[i - 1] if i else float("nan")
                w.writerow(["%.17g" % lv.level, "%.17g" % self.Y_I0[i], "%.17g" % self.Y_S0[i],
                            "%.17g" % self.width0[i], "%.17g" % cz, "%.17g" % cze])


def _violation(lo: np.ndarray, hi: np.ndarray, w: np.ndarray, delta: float) -> float:
    """Weighted share of (node, path) pairs with ``lo > hi + delta``."""
    return float(np.sum((lo > hi + delta) @ w) / lo.shape[0])


def _l2(a: np.ndarray, b: np.ndarray, drivers: DriverPaths, weights=None) -> float:
    diff = (a - b)[:-1] ** 2
    if weights is not None:
        diff = diff * weights
    per = diff.reshape(diff.shape[0], diff.shape[1], -1).sum(axis=2) @ drivers.path_weights
    return math.sqrt(float(np.sum(drivers.grid.steps * per)))


def envelope_solve(coeffs: CoefficientSet, terminal, drivers: DriverPaths, levels: Sequence[float],
                   regression: RegressionSpec = None, K: Optional[float] = None, delta: Optional[float] = None,
                   search: Optional[SearchSpec] = None, tol: float = 1e-8, max_iter: int = 200,
                   projector: Optional[Projector] = None) -> EnvelopeReport:
    """Solve with ``inf_n`` and ``sup_n`` drifts for each level and check the bracket."""
    levels = list(levels)
    K = coeffs.growth_K if K is None else K
    if K is None:
        raise ValueError("the drift has no declared growth constant")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be increasing")
    if levels[0] < K:
        raise ValueError(f"levels must be at least K={K}")
    projector = projector or Projector(drivers, regression or RegressionSpec())
    yT = terminal.evaluate(drivers) if isinstance(terminal, TerminalCondition) else np.asarray(terminal, float)
    if search is None:
        search = SearchSpec(radius=search_radius(K, float(np.max(np.abs(yT))), drivers.grid.horizon))
    if delta is None:
        delta = calibrate_slack(drivers, projector=projector).slack
    uses_z = _drift_uses_z(coeffs, drivers.spaces)
    upper, lower = bounding_solutions(K, coeffs, yT, drivers, tol=tol, max_iter=max_iter, projector=projector)
    out: List[EnvelopeLevel] = []
    for n in levels:
        sols = []
        for kind in ("inf", "sup"):
            approx = ConvolutionApproximant(n, kind, coeffs, K, search, uses_z, drivers.spaces["F"])
            sol, diag = picard_solve(approx.coefficient_set(), yT, drivers, tol=tol, max_iter=max_iter,
                                     force=True, projector=projector)
            if not diag.converged:
                raise RuntimeError(f"{kind}-convolution level {n} did not converge")
            sols.append((sol, diag))
        out.append(EnvelopeLevel(n, sols[0][0], sols[1][0], sols[0][1], sols[1][1]))
    w = drivers.path_weights
    chain = {"lower_bound<=inf": _violation(lower.Y, out[0].lower.Y, w, delta),
             "sup<=upper_bound": _violation(out[0].upper.Y, upper.Y, w, delta)}
    for a, b in zip(out, out[1:]):
        chain[f"inf{a.level:g}<=inf{b.level:g}"] = _violation(a.lower.Y, b.lower.Y, w, delta)
        chain[f"sup{b.level:g}<=sup{a.level:g}"] = _violation(b.upper.Y, a.upper.Y, w, delta)
    for lv in out:
        chain[f"inf{lv.level:g}<=sup{lv.level:g}"] = _violation(lv.lower.Y, lv.upper.Y, w, delta)
    nu = drivers.spaces["F"].weights
    y_i0 = [float(lv.lower.Y[0] @ w) for lv in out]
    y_s0 = [float(lv.upper.Y[0] @ w) for lv in out]
    width = [float(np.max(np.abs(lv.upper.Y[0] - lv.lower.Y[0]))) for lv in out]
    cz, cze = [], []
    for a, b in zip(out, out[1:]):
        cz.append(max(_l2(a.lower.Z, b.lower.Z, drivers), _l2(a.upper.Z, b.upper.Z, drivers)))
        cze.append(max(_l2(a.lower.zeta, b.lower.zeta, drivers, nu), _l2(a.upper.zeta, b.upper.zeta, drivers, nu)))
    return EnvelopeReport(out, upper, lower, delta, chain, y_i0, y_s0, width, cz, cze)
