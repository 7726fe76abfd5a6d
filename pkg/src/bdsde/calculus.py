"""Discrete forward and backward stochastic integrals and an Itô residual.

Forward integrals (against ``dB`` and the compensated ``M``) sample the
integrand at the left node of each cell; backward integrals (against the
reversed ``W``, ``N0``, ``N1``) sample it at the right node. Each choice keeps
the martingale property in its own filtration.

Fields are indexed by node: ``values[k]`` is the integrand at ``t_k`` and the
leading axis has length ``K + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .drivers import DriverPaths, TimeGrid, brownian_state, simulate_drivers

FORWARD_KINDS = ("brownian", "compensated_M")
BACKWARD_KINDS = ("white_noise", "compensated_N0", "raw_N1")


class TagError(ValueError):
    pass


@dataclass(frozen=True)
class IntegrandField:
    values: np.ndarray
    tag: str

    def __post_init__(self):
        if self.tag not in ("forward", "backward"):
            raise TagError(f"unknown adaptedness tag {self.tag!r}")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


def _increments(drivers: DriverPaths, kind: str) -> np.ndarray:
    if kind == "brownian":
        return drivers.brownian
    if kind == "compensated_M":
        return drivers.compensated_m()
    if kind == "white_noise":
        return drivers.reversed_white_noise()
    if kind == "compensated_N0":
        return drivers.compensated_reversed_n0()
    if kind == "raw_N1":
        return drivers.reversed_n1()
    raise ValueError(f"unknown driver kind {kind!r}")


def _contract(values: np.ndarray, inc: np.ndarray) -> np.ndarray:
    """Per (k, p) product summed over all trailing axes.

    Missing trailing axes of ``values`` broadcast, so a scalar field per
    ``(k, p)`` multiplies every component of the increment.
    """
    if values.ndim < inc.ndim:
        values = values.reshape(values.shape + (1,) * (inc.ndim - values.ndim))
    prod = np.broadcast_to(values, np.broadcast_shapes(values.shape, inc.shape)) * inc
    return prod.reshape(prod.shape[0], prod.shape[1], -1).sum(axis=2)


def _check_shape(values: np.ndarray, drivers: DriverPaths) -> None:
    if values.ndim < 2 or values.shape[0] != drivers.K + 1:
        raise ValueError(f"integrand must have {drivers.K + 1} nodes on its leading axis, got shape {values.shape}")


def forward_ito_integral(field: IntegrandField, drivers: DriverPaths, driver_kind: str, start: int = 0) -> np.ndarray:
    """``sum_{k >= start} field[t_k] * increment_k`` per path."""
    if field.tag != "forward":
        raise TagError("forward integrals need a forward-tagged field")
    if driver_kind not in FORWARD_KINDS:
        raise ValueError(f"{driver_kind!r} is not a forward driver")
    _check_shape(field.values, drivers)
    inc = _increments(drivers, driver_kind)
    return _contract(field.values[:-1][start:], inc[start:]).sum(axis=0)


def backward_integral(field: IntegrandField, drivers: DriverPaths, driver_kind: str, start: int = 0) -> np.ndarray:
    """``sum_{k >= start} field[t_{k+1}] * reversed increment_k`` per path.

    ``compensated_N0`` subtracts ``dt * weight``; ``raw_N1`` is left
    uncompensated.
    """
    if field.tag != "backward":
        raise TagError("backward integrals need a backward-tagged field")
    if driver_kind not in BACKWARD_KINDS:
        raise ValueError(f"{driver_kind!r} is not a backward driver")
    _check_shape(field.values, drivers)
    inc = _increments(drivers, driver_kind)
    return _contract(field.values[1:][start:], inc[start:]).sum(axis=0)


@dataclass(frozen=True)
class TestFunction:
    """A scalar C^2 function of a scalar state with its derivatives."""

    f: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    name: str = "f"

    __test__ = False


def linear_function(slope: float = 1.0, intercept: float = 0.0) -> TestFunction:
    return TestFunction(lambda x: slope * x + intercept, lambda x: np.full_like(x, slope),
                        lambda x: np.zeros_like(x), name="linear")


def square_function() -> TestFunction:
    return TestFunction(lambda x: x * x, lambda x: 2.0 * x, lambda x: np.full_like(x, 2.0), name="square")


ITO_TERMS = ("terminal", "b", "a", "gamma0", "gamma1", "Z", "zeta")


@dataclass(frozen=True)
class ItoProcess:
    """Integrand fields of a scalar process written in backward form.

    Shapes: ``terminal (P,)``, ``b (K+1, P)``, ``a (K+1, P, A_E, n)``,
    ``gamma0 (K+1, P, A_U0)``, ``gamma1 (K+1, P, A_U1)``, ``Z (K+1, P, n)``,
    ``zeta (K+1, P, A_F)``. Every field must be given, zero if inactive.
    """

    terminal: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    a: Optional[np.ndarray] = None
    gamma0: Optional[np.ndarray] = None
    gamma1: Optional[np.ndarray] = None
    Z: Optional[np.ndarray] = None
    zeta: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, drivers: DriverPaths, **fields) -> "ItoProcess":
        K, P, n = drivers.K, drivers.n_paths, drivers.brownian_dim
        sp = drivers.spaces
        base = dict(
            terminal=np.zeros(P), b=np.zeros((K + 1, P)),
            a=np.zeros((K + 1, P, sp["E"].n_atoms, n)),
            gamma0=np.zeros((K + 1, P, sp["U0"].n_atoms)),
            gamma1=np.zeros((K + 1, P, sp["U1"].n_atoms)),
            Z=np.zeros((K + 1, P, n)), zeta=np.zeros((K + 1, P, sp["F"].n_atoms)),
        )
        base.update(fields)
        return cls(**base)

    def require(self) -> None:
        for name in ITO_TERMS:
            if getattr(self, name) is None:
                raise ValueError(f"missing integrand field for the {name!r} term")

    def path(self, drivers: DriverPaths) -> np.ndarray:
        """The process at every node, built from the terminal value backwards."""
        self.require()
        inc = _step_increments(self, drivers)
        X = np.empty((drivers.K + 1, drivers.n_paths))
        X[-1] = self.terminal
        X[:-1] = self.terminal + np.cumsum(inc[::-1], axis=0)[::-1]
        return X


def _step_increments(proc: ItoProcess, drivers: DriverPaths) -> np.ndarray:
    dt = drivers.grid.steps[:, None]
    b = np.asarray(proc.b, dtype=float)
    inc = b[:-1] * dt
    inc = inc + _contract(np.asarray(proc.a, float)[1:], drivers.reversed_white_noise())
    inc = inc + _contract(np.asarray(proc.gamma0, float)[1:], drivers.compensated_reversed_n0())
    inc = inc + _contract(np.asarray(proc.gamma1, float)[1:], drivers.reversed_n1())
    inc = inc - _contract(np.asarray(proc.Z, float)[:-1], drivers.brownian)
    inc = inc - _contract(np.asarray(proc.zeta, float)[:-1], drivers.compensated_m())
    return inc


def ito_residual(f: TestFunction, x_process: ItoProcess, drivers: DriverPaths, t: int = 0) -> np.ndarray:
    """``f(X_t)`` minus the discretized right-hand side of the Itô formula.

    The state is scalar. Terms driven forward in time use the left node
    ``X_j``; terms driven by reversed noise use the right node ``X_{j+1}``.
    The white-noise and Brownian trace terms carry the factor one half.
    """
    x_process.require()
    K = drivers.K
    if not 0 <= t <= K:
        raise ValueError(f"node {t} outside 0..{K}")
    X = x_process.path(drivers)
    dt = drivers.grid.steps
    sp = drivers.spaces
    a = np.asarray(x_process.a, float)
    g0 = np.asarray(x_process.gamma0, float)
    g1 = np.asarray(x_process.gamma1, float)
    Z = np.asarray(x_process.Z, float)
    zeta = np.asarray(x_process.zeta, float)
    b = np.asarray(x_process.b, float)

    XL, XR = X[:-1], X[1:]
    aR, g0R, g1R = a[1:], g0[1:], g1[1:]
    ZL, zL, bL = Z[:-1], zeta[:-1], b[:-1]
    dfL, dfR = f.grad(XL), f.grad(XR)
    d2fL, d2fR = f.hess(XL), f.hess(XR)
    fL, fR = f.f(XL), f.f(XR)
    wn = drivers.reversed_white_noise()
    dN0 = drivers.compensated_reversed_n0()
    dN1 = drivers.reversed_n1()
    dM = drivers.compensated_m()
    col = dt[:, None]

    terms = bL * dfL * col
    terms += dfR * _contract(aR, wn)
    terms += 0.5 * d2fR * np.sum(aR ** 2 * sp["E"].weights[:, None], axis=(2, 3)) * col
    jump0 = f.f(XR[..., None] + g0R) - fR[..., None]
    terms += _contract(jump0, dN0)
    terms += np.sum((jump0 - dfR[..., None] * g0R) * sp["U0"].weights, axis=2) * col
    terms += _contract(f.f(XR[..., None] + g1R) - fR[..., None], dN1)
    terms -= dfL * _contract(ZL, drivers.brownian)
    terms -= 0.5 * d2fL * np.sum(ZL ** 2, axis=2) * col
    jumpm = f.f(XL[..., None] + zL) - fL[..., None]
    terms -= _contract(jumpm, dM)
    terms -= np.sum((jumpm - dfL[..., None] * zL) * sp["F"].weights, axis=2) * col
    rhs = f.f(X[-1]) + terms[t:].sum(axis=0)
    return f.f(X[t]) - rhs


def brownian_process(drivers: DriverPaths) -> ItoProcess:
    """``X = B`` (first component) written in backward form: ``X_T = B_T``, ``Z = 1``."""
    B = brownian_state(drivers)[..., 0]
    Z = np.zeros((drivers.K + 1, drivers.n_paths, drivers.brownian_dim))
    Z[..., 0] = 1.0
    return ItoProcess.zeros(drivers, terminal=B[-1], Z=Z)


@dataclass
class ItoStudy:
    steps: tuple
    mean_abs_residual: np.ndarray
    ratios: np.ndarray
    linear_max_residual: float


def brownian_ito_study(spaces, steps=(16, 32, 64), n_paths: int = 10_000, seed: int = 0, horizon: float = 1.0,
                       f: Optional[TestFunction] = None) -> ItoStudy:
    """Mean ``|residual|`` of the Itô formula for ``f(B)`` on a sequence of grids.

    ``ratios[i]`` is the residual at ``steps[i + 1]`` over that at ``steps[i]``.
    The linear-function residual is recorded on the finest grid.
    """
    f = f or square_function()
    out = []
    lin = 0.0
    for K in steps:
        d = simulate_drivers(TimeGrid.uniform(horizon, int(K)), spaces, n_paths, seed=seed)
        proc = brownian_process(d)
        out.append(float(np.mean(np.abs(ito_residual(f, proc, d)))))
        lin = float(np.max(np.abs(ito_residual(linear_function(1.7, -0.3), proc, d))))
    res = np.asarray(out)
    return ItoStudy(tuple(int(k) for k in steps), res, res[1:] / res[:-1], lin)
