"""Noise simulation on a shared time grid and the time-reversal view.

Forward drivers (Brownian motion ``B`` and the Poisson measure ``M`` on ``F``)
are stored in equation time: slot ``k`` is the increment over
``[t_k, t_{k+1}]``. The backward drivers (white noise ``W`` on ``E`` and the
Poisson measures ``N0``, ``N1``) are stored in their own time, as increments
of ``W`` itself. Their reversed versions satisfy
``W^T([T - t, T] x A) = W([0, t] x A)``, so the reversed increment in slot
``k`` is the own-time increment in slot ``K - 1 - k``. Own-time slot ``j``
lives on the mirrored cell ``[T - t_{K-j}, T - t_{K-1-j}]``, whose length is
``dt[K - 1 - j]``.

Random numbers come from counter-based Philox streams. Forward noise of path
``p`` uses key ``(seed, p)``; backward noise of scenario ``s`` uses key
``(seed, 2**62 + s)``. Paths ``p`` with equal ``p // scenario_size`` share
their backward noise, which lets the solver condition on a whole backward
history by regressing within a scenario.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional

import numpy as np

from .markspace import DiscreteMeasureSpace

ROLES = ("E", "U0", "U1", "F")
_BACKWARD_KEY = 1 << 62
SEED_ENV = "BDSDE_SEED"
DEFAULT_MAX_LEAVES = 1 << 16


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1)
        if nodes.size < 2:
            raise ValueError("a time grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError("the first node must be 0")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, horizon: float, steps: int) -> "TimeGrid":
        if steps < 1 or not horizon > 0:
            raise ValueError("need horizon > 0 and at least one step")
        nodes = np.linspace(0.0, float(horizon), steps + 1)
        nodes[-1] = float(horizon)
        return cls(nodes)

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def K(self) -> int:
        return self.nodes.size - 1

    def reversal_map(self) -> np.ndarray:
        return self.K - 1 - np.arange(self.K)


def _check_spaces(spaces: Mapping[str, DiscreteMeasureSpace]) -> Dict[str, DiscreteMeasureSpace]:
    missing = [r for r in ROLES if r not in spaces]
    if missing:
        raise ValueError(f"missing mark spaces for roles {missing}")
    return {r: spaces[r] for r in ROLES}


@dataclass(frozen=True)
class DriverPaths:
    """Simulated increments of all five drivers.

    Shapes: ``brownian (K, P, n)``, ``white_noise (K, P, A_E, n)``,
    ``jumps_n0 (K, P, A_U0)``, ``jumps_n1 (K, P, A_U1)``,
    ``jumps_m (K, P, A_F)``. ``orientation`` says how the backward arrays
    are stored: ``"own"`` (as increments of W, N0, N1) or ``"reversed"``.
    """

    grid: TimeGrid
    spaces: Dict[str, DiscreteMeasureSpace]
    brownian: np.ndarray
    white_noise: np.ndarray
    jumps_n0: np.ndarray
    jumps_n1: np.ndarray
    jumps_m: np.ndarray
    seed: int
    scenario_size: int = 1
    form: str = "gaussian"
    path_weights: Optional[np.ndarray] = None
    orientation: str = "own"
    # exact_tree only: number of forward outcomes per step
    branching: int = 0

    def __post_init__(self):
        K, P = self.brownian.shape[:2]
        expected = {
            "white_noise": (K, P, self.spaces["E"].n_atoms, self.brownian_dim),
            "jumps_n0": (K, P, self.spaces["U0"].n_atoms),
            "jumps_n1": (K, P, self.spaces["U1"].n_atoms),
            "jumps_m": (K, P, self.spaces["F"].n_atoms),
        }
        if K != self.grid.K:
            raise ValueError("driver arrays do not match the grid")
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.path_weights is None:
            object.__setattr__(self, "path_weights", np.full(P, 1.0 / P))
        for name in ("brownian", "white_noise", "jumps_n0", "jumps_n1", "jumps_m", "path_weights"):
            getattr(self, name).setflags(write=False)

    @property
    def n_paths(self) -> int:
        return self.brownian.shape[1]

    @property
    def brownian_dim(self) -> int:
        return self.brownian.shape[2]

    @property
    def K(self) -> int:
        return self.grid.K

    @property
    def reversal_map(self) -> np.ndarray:
        return self.grid.reversal_map()

    @property
    def scenario_index(self) -> np.ndarray:
        return np.arange(self.n_paths) // self.scenario_size

    def _equation_time(self, arr: np.ndarray) -> np.ndarray:
        return arr[::-1] if self.orientation == "own" else arr

    def reversed_white_noise(self) -> np.ndarray:
        """Increments of ``W^T`` over ``[t_k, t_{k+1}]``, shape (K, P, A_E, n)."""
        return self._equation_time(self.white_noise)

    def reversed_n0(self) -> np.ndarray:
        return self._equation_time(self.jumps_n0)

    def reversed_n1(self) -> np.ndarray:
        return self._equation_time(self.jumps_n1)

    def compensated_m(self) -> np.ndarray:
        dt = self.grid.steps[:, None, None]
        return self.jumps_m - dt * self.spaces["F"].weights

    def compensated_reversed_n0(self) -> np.ndarray:
        dt = self.grid.steps[:, None, None]
        return self.reversed_n0() - dt * self.spaces["U0"].weights

    def m_variance(self) -> np.ndarray:
        """Per-step variance of one compensated M cell, shape (K, A_F)."""
        lam = self.grid.steps[:, None] * self.spaces["F"].weights
        if self.form == "enumeration":
            return lam * (1.0 - lam)
        return lam

    def to_csv(self, path) -> None:
        """One row per (k, p); backward columns are reversed increments."""
        wn, n0, n1 = self.reversed_white_noise(), self.reversed_n0(), self.reversed_n1()
        n = self.brownian_dim
        header = ["k", "t", "p"] + [f"dB_{i}" for i in range(n)]
        header += [f"dWT_{a}_{i}" for a in range(wn.shape[2]) for i in range(n)]
        header += [f"N0T_{a}" for a in range(n0.shape[2])]
        header += [f"N1T_{a}" for a in range(n1.shape[2])]
        header += [f"M_{a}" for a in range(self.jumps_m.shape[2])]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(self.K):
                for p in range(self.n_paths):
                    row = [k, _fmt(self.grid.nodes[k]), p]
                    row += [_fmt(v) for v in self.brownian[k, p]]
                    row += [_fmt(v) for v in wn[k, p].reshape(-1)]
                    row += [int(v) for v in n0[k, p]]
                    row += [int(v) for v in n1[k, p]]
                    row += [int(v) for v in self.jumps_m[k, p]]
                    writer.writerow(row)


def _fmt(x) -> str:
    return "%.17g" % float(x)


def reverse_view(drivers: DriverPaths) -> DriverPaths:
    """Flip the backward drivers along time; an involution.

    The forward drivers ``B`` and ``M`` are left alone.
    """
    flipped = "reversed" if drivers.orientation == "own" else "own"
    return replace(
        drivers,
        white_noise=drivers.white_noise[::-1],
        jumps_n0=drivers.jumps_n0[::-1],
        jumps_n1=drivers.jumps_n1[::-1],
        orientation=flipped,
    )


def resolve_seed(seed: Optional[int]) -> int:
    """Use the explicit seed, else the environment override, else 0."""
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV)
    return int(env) if env else 0


def _stream(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, index], dtype=np.uint64)))


@dataclass
class _Shapes:
    K: int
    n: int
    dt: np.ndarray
    mirrored_dt: np.ndarray
    w_e: np.ndarray
    w_u0: np.ndarray
    w_u1: np.ndarray
    w_f: np.ndarray


def _forward_gaussian(shp: _Shapes, seed: int, p: int):
    rng = _stream(seed, p)
    db = rng.standard_normal((shp.K, shp.n)) * np.sqrt(shp.dt)[:, None]
    m = rng.poisson(shp.dt[:, None] * shp.w_f[None, :]) if shp.w_f.size else np.zeros((shp.K, 0), np.int64)
    return db, m


def _backward_gaussian(shp: _Shapes, seed: int, s: int):
    rng = _stream(seed, _BACKWARD_KEY + s)
    dtm = shp.mirrored_dt
    wn = rng.standard_normal((shp.K, shp.w_e.size, shp.n)) * np.sqrt(dtm[:, None, None] * shp.w_e[None, :, None])
    n0 = rng.poisson(dtm[:, None] * shp.w_u0[None, :]) if shp.w_u0.size else np.zeros((shp.K, 0), np.int64)
    n1 = rng.poisson(dtm[:, None] * shp.w_u1[None, :]) if shp.w_u1.size else np.zeros((shp.K, 0), np.int64)
    return wn, n0, n1


def _backward_enumeration(shp: _Shapes, seed: int, s: int):
    rng = _stream(seed, _BACKWARD_KEY + s)
    dtm = shp.mirrored_dt
    signs = np.where(rng.random((shp.K, shp.w_e.size, shp.n)) < 0.5, -1.0, 1.0)
    wn = signs * np.sqrt(dtm[:, None, None] * shp.w_e[None, :, None])
    n0 = (rng.random((shp.K, shp.w_u0.size)) < dtm[:, None] * shp.w_u0).astype(np.int64)
    n1 = (rng.random((shp.K, shp.w_u1.size)) < dtm[:, None] * shp.w_u1).astype(np.int64)
    return wn, n0, n1


def _run_chunks(fn, items, workers: int):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def simulate_drivers(
    grid: TimeGrid,
    spaces: Mapping[str, DiscreteMeasureSpace],
    n_paths: int,
    seed: Optional[int] = None,
    scenario_size: int = 1,
    brownian_dim: int = 1,
    form: str = "gaussian",
    workers: int = 1,
    max_leaves: int = DEFAULT_MAX_LEAVES,
) -> DriverPaths:
    """Simulate all drivers.

    With ``form="gaussian"`` there are ``n_paths`` paths, grouped into
    scenarios of ``scenario_size`` consecutive paths that share backward
    noise. With ``form="enumeration"`` Brownian increments are ``+-sqrt(dt)``
    coin flips and jump counts are Bernoulli; ``n_paths`` then counts
    backward scenarios and each scenario carries the full tree of forward
    outcomes, weighted by their probabilities.
    """
    spaces = _check_spaces(spaces)
    seed = resolve_seed(seed)
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    if scenario_size < 1:
        raise ValueError("scenario_size must be at least 1")
    dt = grid.steps
    shp = _Shapes(
        K=grid.K, n=int(brownian_dim), dt=dt, mirrored_dt=dt[::-1].copy(),
        w_e=np.asarray(spaces["E"].weights), w_u0=np.asarray(spaces["U0"].weights),
        w_u1=np.asarray(spaces["U1"].weights), w_f=np.asarray(spaces["F"].weights),
    )
    if form == "gaussian":
        return _simulate_gaussian(grid, spaces, shp, n_paths, seed, scenario_size, workers)
    if form == "enumeration":
        return _simulate_enumeration(grid, spaces, shp, n_paths, seed, max_leaves)
    raise ValueError(f"unknown driver form {form!r}")


def _simulate_gaussian(grid, spaces, shp, n_paths, seed, scenario_size, workers):
    n_scen = -(-n_paths // scenario_size)
    fwd = _run_chunks(lambda p: _forward_gaussian(shp, seed, p), range(n_paths), workers)
    bwd = _run_chunks(lambda s: _backward_gaussian(shp, seed, s), range(n_scen), workers)
    scen = np.arange(n_paths) // scenario_size
    brownian = np.stack([f[0] for f in fwd], axis=1)
    jumps_m = np.stack([f[1] for f in fwd], axis=1).astype(np.int64)
    wn = np.stack([b[0] for b in bwd], axis=1)[:, scen]
    n0 = np.stack([b[1] for b in bwd], axis=1)[:, scen].astype(np.int64)
    n1 = np.stack([b[2] for b in bwd], axis=1)[:, scen].astype(np.int64)
    return DriverPaths(grid=grid, spaces=spaces, brownian=brownian, white_noise=wn,
                       jumps_n0=n0, jumps_n1=n1, jumps_m=jumps_m, seed=seed,
                       scenario_size=scenario_size, form="gaussian")


def _forward_outcomes(shp: _Shapes):
    """All single-step forward outcomes: sign patterns and jump patterns."""
    n, a = shp.n, shp.w_f.size
    r = 2 ** (n + a)
    bits = (np.arange(r)[:, None] >> np.arange(n + a)[None, :]) & 1
    signs = np.where(bits[:, :n] == 1, 1.0, -1.0)
    jumps = bits[:, n:].astype(np.int64)
    return signs, jumps


def _simulate_enumeration(grid, spaces, shp, n_scen, seed, max_leaves):
    K = shp.K
    signs, jumps = _forward_outcomes(shp)
    R = signs.shape[0]
    leaves = R ** K
    if n_scen * leaves > max_leaves:
        raise ValueError(
            f"enumeration needs {n_scen} x {R}^{K} = {n_scen * leaves} paths, above the cap {max_leaves}")
    lam_f = shp.dt[:, None] * shp.w_f[None, :]
    for lam in (lam_f, shp.mirrored_dt[:, None] * shp.w_u0, shp.mirrored_dt[:, None] * shp.w_u1):
        if np.any(lam > 1):
            raise ValueError("enumeration needs dt * weight <= 1 for every jump atom")
    leaf = np.arange(leaves)
    # digit of step k, with step 0 the most significant
    digits = np.stack([(leaf // R ** (K - 1 - k)) % R for k in range(K)])
    brownian_leaf = signs[digits] * np.sqrt(shp.dt)[:, None, None]
    jumps_leaf = jumps[digits]
    prob = np.ones(leaves)
    for k in range(K):
        pk = np.where(jumps_leaf[k] == 1, lam_f[k], 1.0 - lam_f[k])
        prob *= np.prod(pk, axis=1) * 0.5 ** shp.n
    bwd = [_backward_enumeration(shp, seed, s) for s in range(n_scen)]
    P = n_scen * leaves
    scen = np.arange(P) // leaves
    brownian = np.tile(brownian_leaf, (1, n_scen, 1))
    jumps_m = np.tile(jumps_leaf, (1, n_scen, 1))
    wn = np.stack([b[0] for b in bwd], axis=1)[:, scen]
    n0 = np.stack([b[1] for b in bwd], axis=1)[:, scen]
    n1 = np.stack([b[2] for b in bwd], axis=1)[:, scen]
    weights = np.tile(prob, n_scen) / n_scen
    return DriverPaths(grid=grid, spaces=spaces, brownian=brownian, white_noise=wn,
                       jumps_n0=n0, jumps_n1=n1, jumps_m=jumps_m, seed=seed,
                       scenario_size=leaves, form="enumeration", path_weights=weights,
                       branching=R)


def brownian_state(drivers: DriverPaths) -> np.ndarray:
    """``B_{t_k}`` at every node, shape (K+1, P, n)."""
    out = np.zeros((drivers.K + 1,) + drivers.brownian.shape[1:])
    np.cumsum(drivers.brownian, axis=0, out=out[1:])
    return out


def cumulative_m(drivers: DriverPaths) -> np.ndarray:
    """Compensated ``M`` counts accumulated up to each node, shape (K+1, P, A_F)."""
    inc = drivers.compensated_m()
    out = np.zeros((drivers.K + 1,) + inc.shape[1:])
    np.cumsum(inc, axis=0, out=out[1:])
    return out
