"""Grid solver: exogenous-coefficient base case and Picard iteration.

Conditional expectations given the node-``k`` information are replaced by
projections. Paths are split into contiguous groups that share the whole
reversed-noise history, and the projection is done inside each group:

* ``exact_tree``: the groups are the prefix classes of the enumeration tree
  and the projection is the probability-weighted group mean (exact);
* ``lsmc`` with ``feature_set="grouped"``: the groups are backward-noise
  scenarios and the projection is a ridge least-squares fit on polynomials of
  the forward state (``B_{t_k}`` and accumulated compensated ``M`` counts);
* ``lsmc`` with ``feature_set="pooled"``: one group holding every path, with
  the reversed-noise sums over ``[t_k, T]`` added to the features.

Discretization: with ``I_k`` the reversed-noise part of cell ``k`` (backward
coefficients at the right node ``k + 1``),
``Xi_k = Y_T + sum_{j >= k} (beta_j dt_j + I_j)``, ``Y_k = E_k[Xi_k]``,
``Z_k = E_k[(Ybar - E_k Ybar) dB_k] / dt_k`` and
``zeta_k(a) = E_k[(Ybar - E_k Ybar) dM~_k(a)] / Var dM~_k(a)`` with
``Ybar = Y_{k+1} + I_k``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .coefficients import CoefficientSet, TerminalCondition
from .drivers import DriverPaths, brownian_state, cumulative_m

COND_LIMIT = 1e14
PINV_CUTOFF = 1e-7


class SingularRegressionError(np.linalg.LinAlgError):
    pass


class ComplianceError(ValueError):
    pass


@dataclass(frozen=True)
class RegressionSpec:
    mode: str = "lsmc"
    basis_degree: int = 2
    ridge: float = 1e-8
    feature_set: str = "auto"
    max_tree_steps: int = 8

    def __post_init__(self):
        if self.mode not in ("lsmc", "exact_tree"):
            raise ValueError(f"unknown regression mode {self.mode!r}")
        if self.basis_degree < 1:
            raise ValueError("basis_degree must be at least 1")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        if self.feature_set not in ("auto", "grouped", "pooled"):
            raise ValueError(f"unknown feature set {self.feature_set!r}")


def _monomial_index(m0: int, degree: int) -> List[Tuple[int, ...]]:
    out = [()]
    for d in range(1, degree + 1):
        out += list(itertools.combinations_with_replacement(range(m0), d))
    return out


def _anchored_mean(w: np.ndarray, tg: np.ndarray) -> np.ndarray:
    """Weighted group mean computed around the first sample, so constant groups come out exact."""
    t0 = tg[:, 0, :]
    return t0 + np.einsum("gs,gsr->gr", w, tg - t0[:, None, :])


class Projector:
    """Node-wise conditional expectation operator for one set of drivers."""

    def __init__(self, drivers: DriverPaths, regression: RegressionSpec):
        self.drivers = drivers
        self.regression = regression
        K, P = drivers.K, drivers.n_paths
        if regression.mode == "exact_tree":
            if drivers.form != "enumeration":
                raise ValueError("exact_tree mode needs drivers simulated in enumeration form")
            if K > regression.max_tree_steps:
                raise ValueError(f"exact_tree mode allows at most {regression.max_tree_steps} steps, got {K}")
            R = drivers.branching
            self.group_sizes = [R ** (K - k) for k in range(K + 1)]
            self.feature_set = "tree"
        else:
            fs = regression.feature_set
            if fs == "auto":
                fs = "grouped" if drivers.scenario_size > 1 else "pooled"
            if fs == "grouped":
                if drivers.scenario_size < 2 or P % drivers.scenario_size:
                    raise ValueError("grouped regression needs scenarios of at least 2 paths dividing n_paths")
                self.group_sizes = [drivers.scenario_size] * (K + 1)
            else:
                self.group_sizes = [P] * (K + 1)
            self.feature_set = fs
            self._build_lsmc()
        self._weights = []
        for k in range(K + 1):
            w = drivers.path_weights.reshape(-1, self.group_sizes[k])
            self._weights.append(w / w.sum(axis=1, keepdims=True))

    def _features(self, k: int) -> np.ndarray:
        d = self.drivers
        cols = [self._B[k], self._M[k]]
        if self.feature_set == "pooled":
            cols += [self._bw_tail[k]]
        return np.concatenate(cols, axis=1)

    def _build_lsmc(self):
        d = self.drivers
        self._B = brownian_state(d)
        self._M = cumulative_m(d)
        if self.feature_set == "pooled":
            K, P = d.K, d.n_paths
            inc = np.concatenate([d.reversed_white_noise().reshape(K, P, -1),
                                  d.reversed_n0().astype(float), d.reversed_n1().astype(float)], axis=2)
            tail = np.zeros((K + 1, P, inc.shape[2]))
            tail[:-1] = np.cumsum(inc[::-1], axis=0)[::-1]
            self._bw_tail = tail
        self._nodes = []
        for k in range(d.K + 1):
            self._nodes.append(self._node_system(k))

    def _node_system(self, k: int):
        spec = self.regression
        S = self.group_sizes[k]
        F = self._features(k)
        P, m0 = F.shape
        w = self.drivers.path_weights.reshape(-1, S)
        w = w / w.sum(axis=1, keepdims=True)
        Fg = F.reshape(-1, S, m0)
        mu = np.einsum("gs,gsi->gi", w, Fg)
        cen = Fg - mu[:, None, :]
        sd = np.sqrt(np.einsum("gs,gsi->gi", w, cen * cen))
        degenerate = sd <= 1e-12 * (1.0 + np.abs(mu))
        Fs = np.where(degenerate[:, None, :], 0.0, cen / np.where(degenerate, 1.0, sd)[:, None, :])
        monos = _monomial_index(m0, spec.basis_degree)
        G = Fg.shape[0]
        m = len(monos) - 1
        X = np.ones((G, S, m))
        dead = np.zeros((G, m), dtype=bool)
        for j, mono in enumerate(monos[1:]):
            for i in mono:
                X[:, :, j] *= Fs[:, :, i]
                dead[:, j] |= degenerate[:, i]
        # centre and scale each basis column inside its group; the intercept
        # then decouples and is the weighted group mean
        X -= np.einsum("gs,gsj->gj", w, X)[:, None, :]
        sdx = np.sqrt(np.einsum("gs,gsj->gj", w, X * X))
        dead |= sdx <= 1e-10
        X = np.where(dead[:, None, :], 0.0, X / np.where(dead, 1.0, sdx)[:, None, :])
        A = np.einsum("gs,gsi,gsj->gij", w, X, X) + spec.ridge * np.eye(m)
        idx = np.arange(m)
        A[:, idx, idx] = np.where(dead, 1.0, A[:, idx, idx])
        if spec.ridge == 0.0 and m:
            cond = np.linalg.cond(A)
            if not np.all(np.isfinite(cond)) or np.max(cond) > COND_LIMIT:
                raise SingularRegressionError(
                    f"regression normal equations at node {k} are singular (condition {np.max(cond):.3g}); "
                    "use a positive ridge or exact_tree mode")
        # pseudo-inverse: directions that are collinear to rounding (for
        # example powers of a two-valued jump count) are dropped
        evals, evecs = np.linalg.eigh(A)
        keep = evals > PINV_CUTOFF * np.maximum(evals[:, -1:], 1.0)
        inv_e = np.where(keep, 1.0 / np.where(keep, evals, 1.0), 0.0)
        Ainv = np.einsum("gij,gj,gkj->gik", evecs, inv_e, evecs)
        return X, w, Ainv

    def project(self, k: int, targets: np.ndarray) -> np.ndarray:
        """``E_k[target]`` per path for targets of shape (P,) or (P, r)."""
        t = np.asarray(targets, dtype=float)
        squeeze = t.ndim == 1
        if squeeze:
            t = t[:, None]
        S = self.group_sizes[k]
        r = t.shape[1]
        tg = t.reshape(-1, S, r)
        if self.feature_set == "tree":
            w = self._weights[k]
            mean = _anchored_mean(w, tg)
            out = np.broadcast_to(mean[:, None, :], tg.shape)
        else:
            X, w, Ainv = self._nodes[k]
            mean = _anchored_mean(w, tg)
            rhs = np.einsum("gs,gsi,gsr->gir", w, X, tg - mean[:, None, :])
            coef = np.einsum("gij,gjr->gir", Ainv, rhs)
            out = mean[:, None, :] + np.einsum("gsi,gir->gsr", X, coef)
        out = out.reshape(-1, r)
        return out[:, 0] if squeeze else out

    def fit_residual(self, k: int, targets: np.ndarray) -> float:
        fitted = self.project(k, targets)
        return float(np.sqrt(np.sum(self.drivers.path_weights * (np.asarray(targets) - fitted) ** 2)))


@dataclass
class SolutionTriple:
    """``Y (K+1, P)``, ``Z (K+1, P, n)``, ``zeta (K+1, P, A_F)``; rows K of Z, zeta are 0."""

    Y: np.ndarray
    Z: np.ndarray
    zeta: np.ndarray
    drivers: DriverPaths

    @property
    def grid(self):
        return self.drivers.grid

    def mean_Y(self) -> np.ndarray:
        return self.Y @ self.drivers.path_weights

    def to_csv(self, path) -> None:
        d = self.drivers
        n, a = self.Z.shape[2], self.zeta.shape[2]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t", "p", "Y"] + [f"Z_{i}" for i in range(n)] + [f"zeta_{j}" for j in range(a)])
            for k in range(d.K + 1):
                t = _fmt(d.grid.nodes[k])
                for p in range(d.n_paths):
                    w.writerow([k, t, p, _fmt(self.Y[k, p])] + [_fmt(v) for v in self.Z[k, p]]
                               + [_fmt(v) for v in self.zeta[k, p]])


def _fmt(x) -> str:
    return "%.17g" % float(x)


def zero_triple(drivers: DriverPaths, y_value: float = 0.0) -> SolutionTriple:
    K, P, n = drivers.K, drivers.n_paths, drivers.brownian_dim
    return SolutionTriple(np.full((K + 1, P), float(y_value)), np.zeros((K + 1, P, n)),
                          np.zeros((K + 1, P, drivers.spaces["F"].n_atoms)), drivers)


def backward_cell_terms(sigma, g0, g1, drivers: DriverPaths) -> np.ndarray:
    """Reversed-noise part ``I_k`` of each cell, shape (K, P), right-node coefficients."""
    inc = np.einsum("kpan,kpan->kp", np.asarray(sigma, float)[1:], drivers.reversed_white_noise())
    inc += np.einsum("kpa,kpa->kp", np.asarray(g0, float)[1:], drivers.compensated_reversed_n0())
    inc += np.einsum("kpa,kpa->kp", np.asarray(g1, float)[1:], drivers.reversed_n1().astype(float))
    return inc


def solve_simple(terminal, beta, sigma, g0, g1, drivers: DriverPaths, regression: RegressionSpec = None,
                 projector: Optional[Projector] = None) -> SolutionTriple:
    """Solve the equation whose coefficients are given per-node fields.

    ``terminal`` is a :class:`TerminalCondition` or per-path values;
    ``beta (K+1, P)``, ``sigma (K+1, P, A_E, n)``, ``g0 (K+1, P, A_U0)``,
    ``g1 (K+1, P, A_U1)``.
    """
    if projector is None:
        projector = Projector(drivers, regression or RegressionSpec())
    K, P = drivers.K, drivers.n_paths
    yT = terminal.evaluate(drivers) if isinstance(terminal, TerminalCondition) else np.asarray(terminal, float)
    if yT.shape != (P,):
        raise ValueError(f"terminal has shape {yT.shape}, expected ({P},)")
    beta = np.broadcast_to(np.asarray(beta, float), (K + 1, P))
    dt = drivers.grid.steps
    bw = backward_cell_terms(sigma, g0, g1, drivers)
    cell = beta[:-1] * dt[:, None] + bw
    xi = yT + np.cumsum(cell[::-1], axis=0)[::-1]
    dB = drivers.brownian
    dM = drivers.compensated_m()
    var_m = drivers.m_variance()
    n, A = drivers.brownian_dim, dM.shape[2]
    Y = np.empty((K + 1, P))
    Z = np.zeros((K + 1, P, n))
    zeta = np.zeros((K + 1, P, A))
    Y[K] = yT
    for k in range(K - 1, -1, -1):
        ybar = Y[k + 1] + bw[k]
        both = projector.project(k, np.stack([xi[k], ybar], axis=1))
        Y[k] = both[:, 0]
        dev = (ybar - both[:, 1])[:, None]
        prods = np.concatenate([dev * dB[k], dev * dM[k]], axis=1)
        proj = projector.project(k, prods)
        Z[k] = proj[:, :n] / dt[k]
        if A:
            with np.errstate(divide="ignore", invalid="ignore"):
                zeta[k] = np.where(var_m[k] > 0, proj[:, n:] / np.where(var_m[k] > 0, var_m[k], 1.0), 0.0)
    return SolutionTriple(Y, Z, zeta, drivers)


@dataclass
class NormWeights:
    a: float
    b: float
    lam: float
    a_hat: float
    C: float
    alpha: float

    @property
    def y_factor(self) -> float:
        return self.lam - 1.0 / self.a - 1.0 / self.b


def norm_constants(C: float, alpha: float, a: Optional[float] = None, b: Optional[float] = None,
                   lam: Optional[float] = None) -> NormWeights:
    """Pick ``(a, b, lambda)`` for the weighted contraction norm.

    Defaults: ``a C = b alpha = (1 - alpha) / 4`` when ``alpha > 0``, so that
    ``a C + b alpha + alpha = (1 + alpha) / 2``; with ``alpha = 0``,
    ``a C = 1/2`` and ``b = 1``. ``lambda`` exceeds
    ``1/a + 1/b + (a + b + 1) C / a_hat`` by one.
    """
    if a is None:
        a = (1 - alpha) / (4 * C) if (C > 0 and alpha > 0) else (0.5 / C if C > 0 else 1.0)
    if b is None:
        b = (1 - alpha) / (4 * alpha) if alpha > 0 else 1.0
    a_hat = a * C + b * alpha + alpha
    if lam is None:
        lam = 1.0 / a + 1.0 / b + 1.0
        if a_hat > 0:
            lam += (a + b + 1) * C / a_hat
    return NormWeights(a=a, b=b, lam=lam, a_hat=a_hat, C=C, alpha=alpha)


@dataclass
class PicardDiagnostics:
    norms: List[float] = field(default_factory=list)
    y_norms: List[float] = field(default_factory=list)
    z_norms: List[float] = field(default_factory=list)
    zeta_norms: List[float] = field(default_factory=list)
    stop_norms: List[float] = field(default_factory=list)
    contraction_ratio: List[float] = field(default_factory=list)
    theoretical_bound: float = float("nan")
    constants: Optional[NormWeights] = None
    iterations_used: int = 0
    converged: bool = False

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "weighted_norm", "y_part", "z_part", "zeta_part", "stop_norm",
                        "contraction_ratio"])
            for i, nrm in enumerate(self.norms):
                ratio = self.contraction_ratio[i - 1] if i >= 1 else float("nan")
                w.writerow([i + 1, _fmt(nrm), _fmt(self.y_norms[i]), _fmt(self.z_norms[i]),
                            _fmt(self.zeta_norms[i]), _fmt(self.stop_norms[i]), _fmt(ratio)])


def _difference_norms(new: SolutionTriple, old: SolutionTriple, nw: NormWeights):
    d = new.drivers
    w = d.path_weights
    dt = d.grid.steps
    t = d.grid.nodes[:-1]
    expo = np.exp(nw.lam * (t - d.grid.horizon)) * dt
    nu = d.spaces["F"].weights
    dy = ((new.Y - old.Y)[:-1] ** 2) @ w
    dz = np.sum((new.Z - old.Z)[:-1] ** 2, axis=2) @ w
    dzeta = np.sum((new.zeta - old.zeta)[:-1] ** 2 * nu, axis=2) @ w
    y_part = float(np.sum(expo * dy)) * nw.y_factor
    z_part = float(np.sum(expo * dz))
    zeta_part = float(np.sum(expo * dzeta))
    stop = max(float(np.max(np.abs(new.Y - old.Y))), math.sqrt(float(np.sum(dt * dz))),
               math.sqrt(float(np.sum(dt * dzeta))))
    return y_part + z_part + zeta_part, y_part, z_part, zeta_part, stop


def evaluate_fields(coeffs: CoefficientSet, sol: SolutionTriple):
    """Coefficients at every node of a triple: beta, sigma, g0, g1."""
    d = sol.drivers
    K, P, n = d.K, d.n_paths, d.brownian_dim
    sp = d.spaces
    beta = np.zeros((K + 1, P))
    sigma = np.zeros((K + 1, P, sp["E"].n_atoms, n))
    g0 = np.zeros((K + 1, P, sp["U0"].n_atoms))
    g1 = np.zeros((K + 1, P, sp["U1"].n_atoms))
    for k in range(K + 1):
        v = coeffs.evaluate(float(d.grid.nodes[k]), sol.Y[k], sol.Z[k], sol.zeta[k], sp)
        beta[k], sigma[k], g0[k], g1[k] = v["beta"], v["sigma"], v["g0"], v["g1"]
    return beta, sigma, g0, g1


def picard_solve(coeffs: CoefficientSet, terminal, drivers: DriverPaths, regression: RegressionSpec = None,
                 tol: float = 1e-8, max_iter: int = 50, initial: Optional[SolutionTriple] = None,
                 C: Optional[float] = None, alpha: Optional[float] = None, a: Optional[float] = None,
                 b: Optional[float] = None, force: bool = False,
                 projector: Optional[Projector] = None) -> Tuple[SolutionTriple, PicardDiagnostics]:
    """Picard iteration from the zero triple (or ``initial``).

    Each step evaluates the coefficients at the previous iterate and calls
    :func:`solve_simple`. It stops once the sup of the ``Y`` difference and
    the L2 norms of the ``Z`` and ``zeta`` differences are all at most
    ``tol``. ``iterations_used`` counts the steps needed to reach the
    accepted iterate; the final confirming step is not counted.
    """
    if not coeffs.compliant and not force:
        raise ComplianceError(f"coefficient set {coeffs.name!r} is not declared Lipschitz-compliant; pass force=True")
    if projector is None:
        projector = Projector(drivers, regression or RegressionSpec())
    nw = norm_constants(coeffs.lipschitz_C if C is None else C,
                        coeffs.lipschitz_alpha if alpha is None else alpha, a, b)
    diag = PicardDiagnostics(theoretical_bound=nw.a_hat, constants=nw)
    yT = terminal.evaluate(drivers) if isinstance(terminal, TerminalCondition) else np.asarray(terminal, float)
    current = initial if initial is not None else zero_triple(drivers)
    if current.drivers is not drivers:
        raise ValueError("the initial triple must share the drivers object")
    for it in range(1, max_iter + 1):
        fields = evaluate_fields(coeffs, current)
        new = solve_simple(yT, *fields, drivers=drivers, projector=projector)
        total, yp, zp, zep, stop = _difference_norms(new, current, nw)
        if diag.norms:
            prev = diag.norms[-1]
            diag.contraction_ratio.append(total / prev if prev > 0 else (0.0 if total == 0 else float("inf")))
        diag.norms.append(total)
        diag.y_norms.append(yp)
        diag.z_norms.append(zp)
        diag.zeta_norms.append(zep)
        diag.stop_norms.append(stop)
        current = new
        if stop <= tol:
            diag.converged = True
            diag.iterations_used = max(1, it - 1)
            break
    else:
        diag.iterations_used = max_iter
    return current, diag


@dataclass
class UniquenessGap:
    sup_Y_gap: float
    L2_Z_gap: float
    L2_zeta_gap: float


def uniqueness_gap(sol1: SolutionTriple, sol2: SolutionTriple) -> UniquenessGap:
    if sol1.Y.shape != sol2.Y.shape or sol1.Z.shape != sol2.Z.shape or sol1.zeta.shape != sol2.zeta.shape:
        raise ValueError("solutions have different shapes")
    d = sol1.drivers
    if d.grid.K != sol2.drivers.grid.K or not np.array_equal(d.grid.nodes, sol2.drivers.grid.nodes):
        raise ValueError("solutions live on different grids")
    w = d.path_weights
    dt = d.grid.steps
    nu = d.spaces["F"].weights
    dz = np.sum((sol1.Z - sol2.Z)[:-1] ** 2, axis=2) @ w
    dzeta = np.sum((sol1.zeta - sol2.zeta)[:-1] ** 2 * nu, axis=2) @ w
    return UniquenessGap(sup_Y_gap=float(np.max(np.abs(sol1.Y - sol2.Y))),
                         L2_Z_gap=math.sqrt(float(np.sum(dt * dz))),
                         L2_zeta_gap=math.sqrt(float(np.sum(dt * dzeta))))
