"""Coefficient sets, terminal conditions and sampled hypothesis checks.

The state is scalar. Coefficient maps are vectorized over a batch of ``P``
inputs:

* ``beta(s, y, z, zeta)`` with ``y (P,)``, ``z (P, n)``, ``zeta (P, A_F)``
  returns ``(P,)``;
* ``sigma(s, y, z, u)`` with ``u`` the atom coordinates of ``E`` returns an
  array broadcastable to ``(P, A_E, n)``;
* ``g0(s, y, z, u)`` and ``g1(s, y, z, u)`` return arrays broadcastable to
  ``(P, A_U0)`` and ``(P, A_U1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from .drivers import DriverPaths, brownian_state
from .markspace import DiscreteMeasureSpace

HYPOTHESES = ("lemma41", "thm41a", "thm41b", "thm43a", "thm43b", "prop41", "rem41_4prime")
# relative slack for sampled inequality checks, to absorb rounding
CHECK_TOL = 1e-9


def zero_beta(s, y, z, zeta):
    return np.zeros_like(y)


def zero_mark_map(s, y, z, u):
    return np.zeros((y.shape[0],) + np.shape(u))


def zero_sigma(s, y, z, u):
    return np.zeros((y.shape[0], np.size(u), z.shape[1]))


@dataclass(frozen=True)
class DriftStructure:
    """``beta = h(s, y, z) + sum_u kernel(s, u) * zeta(u) * nu(u)``."""

    h: Callable
    kernel: Callable
    K: float

    def beta(self, nu: DiscreteMeasureSpace) -> Callable:
        h, kernel = self.h, self.kernel
        coords, weights = nu.coords, nu.weights

        def beta(s, y, z, zeta):
            return h(s, y, z) + zeta @ (np.asarray(kernel(s, coords), dtype=float) * weights)

        return beta


@dataclass(frozen=True)
class CoefficientSet:
    beta: Callable = zero_beta
    sigma: Callable = zero_sigma
    g0: Callable = zero_mark_map
    g1: Callable = zero_mark_map
    lipschitz_C: float = 0.0
    lipschitz_alpha: float = 0.0
    drift_structure: Optional[DriftStructure] = None
    growth_K: Optional[float] = None
    compliant: bool = True
    name: str = "custom"
    params: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lipschitz_C < 0:
            raise ValueError("lipschitz_C must be nonnegative")
        if not 0 <= self.lipschitz_alpha <= 1:
            raise ValueError("lipschitz_alpha must lie in [0, 1]")
        if self.compliant and self.lipschitz_alpha >= 1:
            raise ValueError("a Lipschitz-compliant set needs lipschitz_alpha < 1")

    @classmethod
    def from_structure(cls, structure: DriftStructure, nu: DiscreteMeasureSpace, **kwargs) -> "CoefficientSet":
        return cls(beta=structure.beta(nu), drift_structure=structure, **kwargs)

    def evaluate(self, s: float, y, z, zeta, spaces: Mapping[str, DiscreteMeasureSpace]):
        """All four maps on one batch, broadcast to full shapes."""
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        zeta = np.asarray(zeta, dtype=float)
        P, n = y.shape[0], z.shape[1]
        out = {}
        for name, shape, args in (
            ("beta", (P,), (zeta,)),
            ("sigma", (P, spaces["E"].n_atoms, n), (spaces["E"].coords,)),
            ("g0", (P, spaces["U0"].n_atoms), (spaces["U0"].coords,)),
            ("g1", (P, spaces["U1"].n_atoms), (spaces["U1"].coords,)),
        ):
            try:
                val = np.asarray(getattr(self, name)(s, y, z, *args), dtype=float)
                out[name] = np.broadcast_to(val, shape)
            except Exception as exc:
                raise ValueError(f"evaluating {name} of {self.name!r} failed: {exc}") from exc
        return out


@dataclass(frozen=True)
class TerminalCondition:
    """Terminal value ``Y_T`` as a function of the drivers.

    ``kind`` is ``constant`` (``value``), ``brownian`` (``fn`` applied to the
    first component of ``B_T``), ``jump_indicator`` (``min(1, M count on
    [0, T])``) or ``scripted`` (explicit per-path ``values``).
    """

    kind: str
    value: float = 0.0
    fn: Optional[Callable] = None
    values: Optional[np.ndarray] = None
    name: str = ""

    @classmethod
    def constant(cls, c: float) -> "TerminalCondition":
        return cls("constant", value=float(c), name=f"constant({c})")

    @classmethod
    def brownian(cls, fn: Callable, name: str = "brownian") -> "TerminalCondition":
        return cls("brownian", fn=fn, name=name)

    @classmethod
    def jump_indicator(cls) -> "TerminalCondition":
        return cls("jump_indicator", name="jump_indicator")

    @classmethod
    def scripted(cls, values) -> "TerminalCondition":
        return cls("scripted", values=np.asarray(values, dtype=float), name="scripted")

    def evaluate(self, drivers: DriverPaths) -> np.ndarray:
        P = drivers.n_paths
        if self.kind == "constant":
            return np.full(P, self.value)
        if self.kind == "brownian":
            return np.asarray(self.fn(brownian_state(drivers)[-1, :, 0]), dtype=float).reshape(P)
        if self.kind == "jump_indicator":
            return np.minimum(1.0, drivers.jumps_m.sum(axis=(0, 2))).astype(float)
        if self.kind == "scripted":
            if self.values.shape != (P,):
                raise ValueError(f"scripted terminal has {self.values.shape[0]} values for {P} paths")
            return self.values.copy()
        raise ValueError(f"unknown terminal kind {self.kind!r}")


_BROWNIAN_TERMINALS = {
    "identity": lambda x: x,
    "sin": np.sin,
    "neg_abs": lambda x: -np.abs(x),
    "abs": np.abs,
    "square": lambda x: x * x,
}


def brownian_terminal(name: str, scale: float = 1.0, shift: float = 0.0) -> TerminalCondition:
    """``scale * fn(B_T) + shift`` for a named ``fn``."""
    if name not in _BROWNIAN_TERMINALS:
        raise ValueError(f"unknown terminal function {name!r}; known: {sorted(_BROWNIAN_TERMINALS)}")
    fn = _BROWNIAN_TERMINALS[name]
    return TerminalCondition.brownian(lambda x: scale * fn(x) + shift, name=f"{scale}*{name}+{shift}")


@dataclass(frozen=True)
class SampleCloud:
    """Pairs of inputs ``(y, z, zeta)`` and ``(y2, z2, zeta2)`` at times ``s``.

    ``kind`` marks each pair: ``Y_ONLY`` pairs vary only ``y``, ``ZZ_ONLY``
    pairs vary only ``(z, zeta)`` and ``JOINT`` pairs vary everything.
    """

    s: np.ndarray
    y: np.ndarray
    z: np.ndarray
    zeta: np.ndarray
    y2: np.ndarray
    z2: np.ndarray
    zeta2: np.ndarray
    kind: np.ndarray

    def __len__(self):
        return self.y.shape[0]

    def concat(self, other: "SampleCloud") -> "SampleCloud":
        return SampleCloud(*(np.concatenate([getattr(self, f), getattr(other, f)]) for f in
                             ("s", "y", "z", "zeta", "y2", "z2", "zeta2", "kind")))


Y_ONLY, ZZ_ONLY, JOINT = 0, 1, 2


def make_cloud(spaces, n_pairs: int, box: float = 3.0, horizon: float = 1.0, seed: int = 0,
               brownian_dim: int = 1) -> SampleCloud:
    if n_pairs < 1:
        raise ValueError("a cloud needs at least one pair")
    rng = np.random.default_rng(seed)
    a_f = spaces["F"].n_atoms
    kind = np.arange(n_pairs) % 3
    s = rng.choice(np.linspace(0.0, horizon, 5), size=n_pairs)
    y = rng.uniform(-box, box, n_pairs)
    z = rng.uniform(-box, box, (n_pairs, brownian_dim))
    zeta = rng.uniform(-box, box, (n_pairs, a_f))
    y2 = np.where(kind == ZZ_ONLY, y, rng.uniform(-box, box, n_pairs))
    z2 = np.where((kind == Y_ONLY)[:, None], z, rng.uniform(-box, box, (n_pairs, brownian_dim)))
    zeta2 = np.where((kind == Y_ONLY)[:, None], zeta, rng.uniform(-box, box, (n_pairs, a_f)))
    return SampleCloud(s, y, z, zeta, y2, z2, zeta2, kind)


def _eval_cloud(coeffs: CoefficientSet, cloud: SampleCloud, spaces, second: bool = False):
    """Evaluate on the cloud, grouping by time so each map sees a scalar ``s``."""
    y = cloud.y2 if second else cloud.y
    z = cloud.z2 if second else cloud.z
    zeta = cloud.zeta2 if second else cloud.zeta
    P, n = y.shape[0], z.shape[1]
    out = {"beta": np.empty(P), "sigma": np.empty((P, spaces["E"].n_atoms, n)),
           "g0": np.empty((P, spaces["U0"].n_atoms)), "g1": np.empty((P, spaces["U1"].n_atoms))}
    for s in np.unique(cloud.s):
        idx = np.flatnonzero(cloud.s == s)
        vals = coeffs.evaluate(float(s), y[idx], z[idx], zeta[idx], spaces)
        for key in out:
            out[key][idx] = vals[key]
    return out


def _ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))
    return r


@dataclass
class LipschitzEstimate:
    C_hat: float
    alpha_hat: float
    worst_pair: Dict
    drift_ratio: float
    noise_y_ratio: float


def _pair_norms(coeffs, cloud, spaces):
    a = _eval_cloud(coeffs, cloud, spaces)
    b = _eval_cloud(coeffs, cloud, spaces, second=True)
    nu = spaces["F"].weights
    dy2 = (cloud.y - cloud.y2) ** 2
    dz2 = np.sum((cloud.z - cloud.z2) ** 2, axis=1)
    dzeta2 = np.sum((cloud.zeta - cloud.zeta2) ** 2 * nu, axis=1)
    dbeta2 = (a["beta"] - b["beta"]) ** 2
    dsig2 = np.sum((a["sigma"] - b["sigma"]) ** 2 * spaces["E"].weights[:, None], axis=(1, 2))
    dg0 = np.sum((a["g0"] - b["g0"]) ** 2 * spaces["U0"].weights, axis=1)
    dg1 = np.sum((a["g1"] - b["g1"]) ** 2 * spaces["U1"].weights, axis=1)
    return dict(a=a, b=b, dy2=dy2, dz2=dz2, dzeta2=dzeta2, dbeta2=dbeta2, dsig2=dsig2, dg0=dg0, dg1=dg1)


def estimate_lipschitz(coeffs: CoefficientSet, cloud: SampleCloud, spaces) -> LipschitzEstimate:
    """Empirical suprema of the drift and noise Lipschitz ratios.

    ``C_hat`` is the larger of the drift ratio
    ``|dbeta|^2 / (|dy|^2 + |dz|^2 + |dzeta|_nu^2)`` over all pairs and the
    noise ratio ``(|dsigma|_pi^2 + |dg0|^2 + |dg1|^2) / |dy|^2`` over the
    pairs that vary only ``y``. ``alpha_hat`` is the noise ratio against
    ``|dz|^2 + |dzeta|_nu^2`` over the pairs that keep ``y`` fixed. Both are
    lower bounds of the true constants.
    """
    if len(cloud) == 0:
        raise ValueError("the cloud is empty")
    m = _pair_norms(coeffs, cloud, spaces)
    noise = m["dsig2"] + m["dg0"] + m["dg1"]
    drift_r = _ratio(m["dbeta2"], m["dy2"] + m["dz2"] + m["dzeta2"])
    noise_y = np.where(cloud.kind == Y_ONLY, _ratio(noise, m["dy2"]), 0.0)
    noise_z = np.where(cloud.kind == ZZ_ONLY, _ratio(noise, m["dz2"] + m["dzeta2"]), 0.0)
    d_max, ny_max = float(drift_r.max()), float(noise_y.max())
    C_hat = max(d_max, ny_max)
    worst = int(np.argmax(drift_r)) if d_max >= ny_max else int(np.argmax(noise_y))
    worst_pair = dict(index=worst, s=float(cloud.s[worst]), y=float(cloud.y[worst]), y2=float(cloud.y2[worst]),
                      z=cloud.z[worst].tolist(), z2=cloud.z2[worst].tolist(),
                      zeta=cloud.zeta[worst].tolist(), zeta2=cloud.zeta2[worst].tolist())
    return LipschitzEstimate(C_hat=C_hat, alpha_hat=float(noise_z.max()), worst_pair=worst_pair,
                             drift_ratio=d_max, noise_y_ratio=ny_max)


@dataclass
class ClauseResult:
    name: str
    passed: bool
    detail: str = ""
    sample: Optional[Dict] = None


@dataclass
class ValidationReport:
    hypothesis: str
    clauses: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    @property
    def first_violation(self) -> Optional[ClauseResult]:
        return next((c for c in self.clauses if not c.passed), None)

    def summary(self) -> str:
        if self.passed:
            return f"{self.hypothesis}: pass ({len(self.clauses)} clauses)"
        bad = self.first_violation
        return f"{self.hypothesis}: FAIL at {bad.name}: {bad.detail}"


def _sample_at(cloud: SampleCloud, i: int) -> Dict:
    return dict(s=float(cloud.s[i]), y=float(cloud.y[i]), y2=float(cloud.y2[i]),
                z=cloud.z[i].tolist(), z2=cloud.z2[i].tolist())


def _le(lhs, rhs, name, cloud, detail, mask=None):
    """Clause ``lhs <= rhs`` on the cloud (restricted to ``mask``)."""
    slack = CHECK_TOL * (1.0 + np.abs(rhs))
    bad = lhs > rhs + slack
    if mask is not None:
        bad &= mask
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        return ClauseResult(name, False, f"{detail}: {float(lhs[i]):.6g} > {float(rhs[i]):.6g}", _sample_at(cloud, i))
    return ClauseResult(name, True, detail)


def _kernel_clauses(struct: DriftStructure, spaces, cloud, lo, hi, norm: str):
    coords, w = spaces["F"].coords, spaces["F"].weights
    out = []
    for s in np.unique(cloud.s):
        c = np.asarray(struct.kernel(float(s), coords), dtype=float) * np.ones_like(coords)
        if lo is not None and np.any(c < lo - CHECK_TOL):
            a = int(np.flatnonzero(c < lo - CHECK_TOL)[0])
            return [ClauseResult("kernel_range", False, f"kernel {c[a]:.6g} < {lo} at atom {spaces['F'].labels[a]!r}",
                                 dict(s=float(s), atom=spaces["F"].labels[a]))]
        if hi is not None and np.any(c > hi + CHECK_TOL):
            a = int(np.flatnonzero(c > hi + CHECK_TOL)[0])
            return [ClauseResult("kernel_range", False, f"kernel {c[a]:.6g} > {hi} at atom {spaces['F'].labels[a]!r}",
                                 dict(s=float(s), atom=spaces["F"].labels[a]))]
        integral = float(np.sum(c ** 2 * w)) if norm == "l2" else float(np.sum(np.abs(c) * w))
        if integral > struct.K * (1 + CHECK_TOL):
            return [ClauseResult("kernel_integral", False, f"kernel {norm} integral {integral:.6g} > K={struct.K}",
                                 dict(s=float(s)))]
    out.append(ClauseResult("kernel_range", True, f"kernel within [{lo}, {hi}]"))
    out.append(ClauseResult("kernel_integral", True, f"kernel {norm} integral <= K"))
    return out


def _structure_clauses(coeffs, spaces, cloud, ev, lipschitz_h: bool, h_has_z: bool):
    struct = coeffs.drift_structure
    if struct is None:
        return [ClauseResult("drift_structure", False, "no drift structure h + kernel * zeta declared")]
    out = []
    rebuilt = np.empty(len(cloud))
    h1 = np.empty(len(cloud))
    h2 = np.empty(len(cloud))
    kv = struct.kernel
    for s in np.unique(cloud.s):
        idx = np.flatnonzero(cloud.s == s)
        c = np.asarray(kv(float(s), spaces["F"].coords), dtype=float) * spaces["F"].weights
        h1[idx] = struct.h(float(s), cloud.y[idx], cloud.z[idx])
        h2[idx] = struct.h(float(s), cloud.y2[idx], cloud.z2[idx])
        rebuilt[idx] = h1[idx] + cloud.zeta[idx] @ c
    out.append(_le(np.abs(ev["beta"] - rebuilt), 1e-9 * (1 + np.abs(rebuilt)), "structure_matches_beta", cloud,
                   "beta equals h + kernel integral"))
    dy = np.abs(cloud.y - cloud.y2)
    dz = np.sqrt(np.sum((cloud.z - cloud.z2) ** 2, axis=1))
    if lipschitz_h:
        rhs = struct.K * (dy + dz) if h_has_z else struct.K * dy
        mask = None if h_has_z else (cloud.kind == Y_ONLY)
        out.append(_le(np.abs(h1 - h2), rhs, "h_lipschitz", cloud, "|h - h'| <= K(|dy| + |dz|)", mask))
    else:
        rhs = struct.K * (np.abs(cloud.y) + np.sqrt(np.sum(cloud.z ** 2, axis=1)))
        out.append(_le(np.abs(h1), rhs, "h_growth", cloud, "|h| <= K(|y| + |z|)"))
    return out


def _independence_clause(coeffs, spaces, cloud, names, what):
    """Maps in ``names`` must not change on pairs that keep ``y`` fixed."""
    a = _eval_cloud(coeffs, cloud, spaces)
    b = _eval_cloud(coeffs, cloud, spaces, second=True)
    mask = cloud.kind == ZZ_ONLY
    for name in names:
        diff = np.abs(a[name] - b[name]).reshape(len(cloud), -1).max(axis=1, initial=0.0)
        bad = (diff > CHECK_TOL) & mask
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            return ClauseResult(f"{name}_independent_of_{what}", False, f"{name} changes with {what}", _sample_at(cloud, i))
    return ClauseResult(f"independent_of_{what}", True, f"{', '.join(names)} ignore {what}")


def _beta_ignores_z(coeffs, spaces, cloud):
    swapped = SampleCloud(cloud.s, cloud.y, cloud.z, cloud.zeta, cloud.y, cloud.z2, cloud.zeta, cloud.kind)
    a = _eval_cloud(coeffs, swapped, spaces)["beta"]
    b = _eval_cloud(coeffs, swapped, spaces, second=True)["beta"]
    bad = np.abs(a - b) > CHECK_TOL * (1 + np.abs(a))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        return ClauseResult("beta_independent_of_z", False, "beta changes with z", _sample_at(swapped, i))
    return ClauseResult("beta_independent_of_z", True, "beta ignores z")


def _monotone_clause(coeffs, spaces, cloud, ev1, ev2):
    mask = cloud.kind != ZZ_ONLY
    hi = np.maximum(cloud.y, cloud.y2)
    lo_ = np.minimum(cloud.y, cloud.y2)
    first_is_hi = cloud.y >= cloud.y2
    for name in ("g0", "g1"):
        g_hi = np.where(first_is_hi[:, None], ev1[name], ev2[name])
        g_lo = np.where(first_is_hi[:, None], ev2[name], ev1[name])
        drop = (lo_[:, None] + g_lo) - (hi[:, None] + g_hi)
        worst = drop.max(axis=1, initial=-np.inf)
        bad = (worst > CHECK_TOL * (1 + np.abs(hi))) & mask
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            return ClauseResult(f"{name}_monotone", False, f"y + {name}(y) decreases in y", _sample_at(cloud, i))
    return ClauseResult("jump_maps_monotone", True, "y + g_i(y) nondecreasing")


def validate_comparison_structure(coeffs: CoefficientSet, spaces, hypothesis: str, cloud: SampleCloud) -> ValidationReport:
    """Sampled check of the hypotheses of a comparison statement.

    The report lists each clause with pass/fail and, on failure, the first
    violating sample. Passing is evidence, not proof.
    """
    if hypothesis not in HYPOTHESES:
        raise ValueError(f"unknown hypothesis {hypothesis!r}; known: {HYPOTHESES}")
    if len(cloud) == 0:
        raise ValueError("the cloud is empty")
    ev1 = _eval_cloud(coeffs, cloud, spaces)
    ev2 = _eval_cloud(coeffs, cloud, spaces, second=True)
    C, alpha = coeffs.lipschitz_C, coeffs.lipschitz_alpha
    wE, w0, w1 = spaces["E"].weights, spaces["U0"].weights, spaces["U1"].weights
    dy = np.abs(cloud.y - cloud.y2)
    dz2 = np.sum((cloud.z - cloud.z2) ** 2, axis=1)
    clauses = []
    struct = coeffs.drift_structure

    if hypothesis in ("lemma41", "prop41"):
        nonpos = cloud.y <= 0
        for name in ("g0", "g1"):
            clauses.append(_le((cloud.y[:, None] + ev1[name]).max(axis=1, initial=-np.inf), np.zeros(len(cloud)),
                               f"{name}_keeps_nonpositive", cloud, f"y + {name}(y) <= 0 for y <= 0", nonpos))
        size = (np.sum(ev1["sigma"] ** 2 * wE[:, None], axis=(1, 2)) + np.sum(ev1["g0"] ** 2 * w0, axis=1)
                + np.sum(ev1["g1"] ** 2 * w1, axis=1))
        rhs = C * cloud.y ** 2 + alpha * np.sum(cloud.z ** 2, axis=1)
        clauses.append(_le(size, rhs, "noise_size", cloud, "|sigma|^2 + |g0|^2 + |g1|^2 <= C y^2 + alpha |z|^2"))
        clauses.append(ClauseResult("alpha_below_one", alpha < 1, f"alpha = {alpha}"))
        if hypothesis == "lemma41":
            clauses += _structure_clauses(coeffs, spaces, cloud, ev1, lipschitz_h=False, h_has_z=True)
            if struct is not None:
                clauses += _kernel_clauses(struct, spaces, cloud, -1.0, None, "l2")
        else:
            if struct is None:
                clauses.append(ClauseResult("drift_structure", False, "K and kernel must be declared"))
            else:
                clauses += _kernel_clauses(struct, spaces, cloud, 0.0, 1.0, "l2")
                c = _kernel_on_cloud(struct, spaces, cloud)
                bound = struct.K * (np.abs(cloud.y) + np.sqrt(np.sum(cloud.z ** 2, axis=1)))
                bound = bound + np.sum(c * np.abs(cloud.zeta) * spaces["F"].weights, axis=1)
                clauses.append(_le(np.abs(ev1["beta"]), bound, "beta_bound", cloud,
                                   "|beta| <= K(|y| + |z|) + int C |zeta| nu"))

    elif hypothesis in ("thm41a", "thm41b", "rem41_4prime"):
        clauses.append(_monotone_clause(coeffs, spaces, cloud, ev1, ev2))
        clauses.append(_independence_clause(coeffs, spaces, cloud, ("g0", "g1"), "z"))
        noise = (np.sum((ev1["sigma"] - ev2["sigma"]) ** 2 * wE[:, None], axis=(1, 2))
                 + np.sum((ev1["g0"] - ev2["g0"]) ** 2 * w0, axis=1)
                 + np.sum((ev1["g1"] - ev2["g1"]) ** 2 * w1, axis=1))
        clauses.append(_le(noise, C * dy ** 2 + alpha * dz2, "noise_lipschitz", cloud,
                           "|dsigma|^2 + |dg0|^2 + |dg1|^2 <= C dy^2 + alpha |dz|^2"))
        if hypothesis == "rem41_4prime":
            if struct is None:
                clauses.append(ClauseResult("drift_structure", False, "K and kernel must be declared"))
            else:
                clauses += _kernel_clauses(struct, spaces, cloud, 0.0, 1.0, "l2")
                c = _kernel_on_cloud(struct, spaces, cloud)
                bound = struct.K * (dy + np.sqrt(dz2))
                bound = bound + np.sum(c * np.abs(cloud.zeta - cloud.zeta2) * spaces["F"].weights, axis=1)
                clauses.append(_le(np.abs(ev1["beta"] - ev2["beta"]), bound, "beta_increment_bound", cloud,
                                   "|dbeta| <= K(|dy| + |dz|) + int C |dzeta| nu"))
        else:
            clauses += _structure_clauses(coeffs, spaces, cloud, ev1, lipschitz_h=True, h_has_z=True)
            if struct is not None:
                lo, hi = (-1.0, None) if hypothesis == "thm41a" else (None, 1.0)
                clauses += _kernel_clauses(struct, spaces, cloud, lo, hi, "l2")

    else:  # thm43a, thm43b
        clauses.append(_beta_ignores_z(coeffs, spaces, cloud))
        clauses.append(_independence_clause(coeffs, spaces, cloud, ("g0", "g1"), "z"))
        clauses.append(_monotone_clause(coeffs, spaces, cloud, ev1, ev2))
        jumps = (np.sum((ev1["g0"] - ev2["g0"]) ** 2 * w0, axis=1)
                 + np.sum(np.abs(ev1["g1"] - ev2["g1"]) * w1, axis=1))
        clauses.append(_le(jumps, C * dy, "jump_holder", cloud, "int |dg0|^2 mu0 + int |dg1| mu1 <= C |dy|"))
        sig = np.sum((ev1["sigma"] - ev2["sigma"]) ** 2 * wE[:, None], axis=(1, 2))
        clauses.append(_le(sig, C * dy + alpha * dz2, "sigma_holder", cloud,
                           "int |dsigma|^2 pi <= C |dy| + alpha |dz|^2"))
        clauses += _structure_clauses(coeffs, spaces, cloud, ev1, lipschitz_h=True, h_has_z=False)
        if struct is not None:
            lo, hi = (-1.0, 0.0) if hypothesis == "thm43a" else (0.0, 1.0)
            clauses += _kernel_clauses(struct, spaces, cloud, lo, hi, "l1")
    return ValidationReport(hypothesis, clauses)


def _kernel_on_cloud(struct, spaces, cloud):
    out = np.empty((len(cloud), spaces["F"].n_atoms))
    for s in np.unique(cloud.s):
        idx = cloud.s == s
        out[idx] = np.asarray(struct.kernel(float(s), spaces["F"].coords), dtype=float)
    return out


def drift_ordering(coeffs1: CoefficientSet, coeffs2: CoefficientSet, cloud: SampleCloud, spaces) -> ClauseResult:
    """``beta1 <= beta2`` at both ends of every cloud pair."""
    for second in (False, True):
        b1 = _eval_cloud(coeffs1, cloud, spaces, second)["beta"]
        b2 = _eval_cloud(coeffs2, cloud, spaces, second)["beta"]
        res = _le(b1, b2, "drift_order", cloud, "beta1 <= beta2")
        if not res.passed:
            return res
    return ClauseResult("drift_order", True, "beta1 <= beta2 on the cloud")


def shared_noise(coeffs1: CoefficientSet, coeffs2: CoefficientSet, cloud: SampleCloud, spaces) -> ClauseResult:
    """Both sets must use the same sigma, g0, g1 (checked on the cloud)."""
    a = _eval_cloud(coeffs1, cloud, spaces)
    b = _eval_cloud(coeffs2, cloud, spaces)
    for name in ("sigma", "g0", "g1"):
        if not np.allclose(a[name], b[name], rtol=0, atol=CHECK_TOL):
            return ClauseResult("shared_noise", False, f"{name} differs between the two sets")
    return ClauseResult("shared_noise", True, "sigma, g0, g1 shared")
