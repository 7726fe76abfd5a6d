"""Named built-in coefficient families, selectable from experiment configs.

Every factory takes the mark spaces and keyword parameters and returns a
:class:`CoefficientSet` with its declared constants filled in. New families
are added with :func:`register_family`.
"""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np

from .coefficients import CoefficientSet, DriftStructure

FAMILIES: Dict[str, Callable[..., CoefficientSet]] = {}


def register_family(name: str):
    def deco(fn):
        FAMILIES[name] = fn
        return fn
    return deco


def make_family(name: str, spaces, **params) -> CoefficientSet:
    if name not in FAMILIES:
        raise KeyError(f"unknown coefficient family {name!r}; known: {sorted(FAMILIES)}")
    return FAMILIES[name](spaces, **params)


def _const_kernel(value: float):
    def kernel(s, u):
        return np.full(np.shape(u), float(value))
    return kernel


def _mark_factor(u, use_mark: bool):
    u = np.asarray(u, dtype=float)
    return np.nan_to_num(u, nan=1.0) if use_mark else np.ones_like(u)


def _jump_maps(g0_y: float, g1_y: float, mark_scaled: bool):
    """``g_i(y, u) = g_i_y * y * u`` (or without ``u`` when not mark scaled)."""
    def g0(s, y, z, u):
        return g0_y * y[:, None] * _mark_factor(u, mark_scaled)[None, :]

    def g1(s, y, z, u):
        return g1_y * y[:, None] * _mark_factor(u, mark_scaled)[None, :]

    return g0, g1


def _jump_lipschitz(spaces, g0_y, g1_y, mark_scaled):
    f0 = _mark_factor(spaces["U0"].coords, mark_scaled)
    f1 = _mark_factor(spaces["U1"].coords, mark_scaled)
    return g0_y ** 2 * float(np.sum(f0 ** 2 * spaces["U0"].weights)) + \
        g1_y ** 2 * float(np.sum(f1 ** 2 * spaces["U1"].weights))


@register_family("zero")
def zero_family(spaces) -> CoefficientSet:
    return CoefficientSet(drift_structure=DriftStructure(lambda s, y, z: np.zeros_like(y), _const_kernel(0.0), 0.0),
                          name="zero")


@register_family("affine")
def affine_family(spaces, beta_c=0.0, beta_y=0.0, beta_z=0.0, kernel=0.0, sigma_c=0.0, sigma_y=0.0,
                  g0_y=0.0, g1_y=0.0, mark_scaled=True, K=None, compliant=True) -> CoefficientSet:
    """``beta = c + a_y y + a_z z + int kernel zeta nu``, ``sigma = s_c + s_y y``.

    Jump maps are ``g_i = g_i_y * y * u``. ``K`` defaults to the smallest
    constant covering ``|h - h'| <= K(|dy| + |dz|)``, the growth of ``h``
    and the kernel integral.
    """
    nu = spaces["F"]

    def h(s, y, z):
        return beta_c + beta_y * y + beta_z * z[:, 0]

    kern_l2 = kernel ** 2 * nu.total_mass
    if K is None:
        K = max(abs(beta_y), abs(beta_z), kern_l2, abs(beta_c) if beta_c else 0.0, 1e-12)
    structure = DriftStructure(h, _const_kernel(kernel), float(K))

    def sigma(s, y, z, u):
        return np.broadcast_to((sigma_c + sigma_y * y)[:, None, None], (y.shape[0], np.size(u), z.shape[1]))

    g0, g1 = _jump_maps(g0_y, g1_y, mark_scaled)
    n = 1
    C_drift = beta_y ** 2 + beta_z ** 2 + kern_l2
    C_noise = sigma_y ** 2 * spaces["E"].total_mass * n + _jump_lipschitz(spaces, g0_y, g1_y, mark_scaled)
    return CoefficientSet.from_structure(
        structure, nu, sigma=sigma, g0=g0, g1=g1, lipschitz_C=max(C_drift, C_noise), lipschitz_alpha=0.0,
        growth_K=float(K), compliant=compliant, name="affine",
        params=dict(beta_c=beta_c, beta_y=beta_y, beta_z=beta_z, kernel=kernel, sigma_c=sigma_c,
                    sigma_y=sigma_y, g0_y=g0_y, g1_y=g1_y))


@register_family("trig")
def trig_family(spaces, a_y=1.0, a_z=1.0, amp=0.3, kernel=0.0) -> CoefficientSet:
    """``beta = a_y sin y + a_z cos z + int kernel zeta nu``, ``sigma = amp sin y``."""
    nu = spaces["F"]

    def h(s, y, z):
        return a_y * np.sin(y) + a_z * np.cos(z[:, 0])

    def sigma(s, y, z, u):
        return np.broadcast_to((amp * np.sin(y))[:, None, None], (y.shape[0], np.size(u), z.shape[1]))

    kern_l2 = kernel ** 2 * nu.total_mass
    C = max(a_y ** 2 + a_z ** 2 + kern_l2, amp ** 2 * spaces["E"].total_mass)
    structure = DriftStructure(h, _const_kernel(kernel), max(abs(a_y), abs(a_z), kern_l2, 1e-12))
    return CoefficientSet.from_structure(structure, nu, sigma=sigma, lipschitz_C=C, lipschitz_alpha=0.0,
                                         growth_K=max(abs(a_y), abs(a_z)), name="trig",
                                         params=dict(a_y=a_y, a_z=a_z, amp=amp, kernel=kernel))


@register_family("sqrt_holder")
def sqrt_holder_family(spaces, beta_c=0.5, beta_y=-1.0, amp=1.0, kernel=0.0, g0_y=0.0, g1_y=0.0,
                       box=3.0) -> CoefficientSet:
    """Half-Hölder noise: ``sigma = amp sqrt(y+)``, drift ``c + a_y y + int kernel zeta nu``.

    ``lipschitz_C`` holds the constant of the Hölder bounds
    ``int |dsigma|^2 pi <= C |dy|`` and ``int |dg0|^2 mu0 + int |dg1| mu1 <= C |dy|``;
    the squared jump term is only linear in ``|dy|`` on ``|dy| <= 2 box``.
    """
    nu = spaces["F"]

    def h(s, y, z):
        return beta_c + beta_y * y

    def sigma(s, y, z, u):
        return np.broadcast_to((amp * np.sqrt(np.maximum(y, 0.0)))[:, None, None],
                               (y.shape[0], np.size(u), z.shape[1]))

    g0, g1 = _jump_maps(g0_y, g1_y, True)
    f0 = _mark_factor(spaces["U0"].coords, True)
    f1 = _mark_factor(spaces["U1"].coords, True)
    jump_c = 2 * box * g0_y ** 2 * float(np.sum(f0 ** 2 * spaces["U0"].weights)) + \
        abs(g1_y) * float(np.sum(np.abs(f1) * spaces["U1"].weights))
    C = max(amp ** 2 * spaces["E"].total_mass, jump_c, 1e-12)
    kern_l1 = abs(kernel) * nu.total_mass
    structure = DriftStructure(h, _const_kernel(kernel), max(abs(beta_y), kern_l1, 1e-12))
    return CoefficientSet.from_structure(structure, nu, sigma=sigma, g0=g0, g1=g1, lipschitz_C=C,
                                         lipschitz_alpha=0.0, compliant=False, name="sqrt_holder",
                                         params=dict(beta_c=beta_c, beta_y=beta_y, amp=amp, kernel=kernel,
                                                     g0_y=g0_y, g1_y=g1_y))


@register_family("sqrt_drift")
def sqrt_drift_family(spaces, sigma_y=0.0, K=1.0) -> CoefficientSet:
    """Linear-growth, non-Lipschitz drift ``beta = min(sqrt|y|, 1 + |y|)``."""
    nu = spaces["F"]

    def h(s, y, z):
        return np.minimum(np.sqrt(np.abs(y)), 1.0 + np.abs(y))

    def sigma(s, y, z, u):
        return np.broadcast_to((sigma_y * y)[:, None, None], (y.shape[0], np.size(u), z.shape[1]))

    structure = DriftStructure(h, _const_kernel(0.0), float(K))
    return CoefficientSet.from_structure(structure, nu, sigma=sigma,
                                         lipschitz_C=sigma_y ** 2 * spaces["E"].total_mass,
                                         lipschitz_alpha=0.0, growth_K=float(K), compliant=False,
                                         name="sqrt_drift", params=dict(sigma_y=sigma_y, K=K))


@register_family("constant")
def constant_family(spaces, value=0.0) -> CoefficientSet:
    return affine_family(spaces, beta_c=value)


@register_family("linear_decay")
def linear_decay_family(spaces, rate=1.0) -> CoefficientSet:
    """``beta = -rate * y``."""
    return affine_family(spaces, beta_y=-rate)


@register_family("jump_contraction")
def jump_contraction_family(spaces, beta_c=0.0, rate=1.0, a_z=0.5, kernel=-0.5, amp=0.3, g0_y=-1.0,
                            g1_y=-0.5) -> CoefficientSet:
    """``beta = c - rate y + a_z sin z + int kernel zeta nu``, ``sigma = amp sin y``, ``g_i = g_i_y y u``.

    With ``g_i_y`` in ``[-1, 0]`` and marks in ``[0, 1]`` the maps ``y + g_i``
    are nondecreasing, as the comparison hypotheses require.
    """
    nu = spaces["F"]

    def h(s, y, z):
        return beta_c - rate * y + a_z * np.sin(z[:, 0])

    def sigma(s, y, z, u):
        return np.broadcast_to((amp * np.sin(y))[:, None, None], (y.shape[0], np.size(u), z.shape[1]))

    g0, g1 = _jump_maps(g0_y, g1_y, True)
    kern_l2 = kernel ** 2 * nu.total_mass
    C = max(2.0 * (rate ** 2 + a_z ** 2 + kern_l2),
            amp ** 2 * spaces["E"].total_mass + _jump_lipschitz(spaces, g0_y, g1_y, True))
    structure = DriftStructure(h, _const_kernel(kernel), max(abs(rate), abs(a_z), kern_l2, 1e-12))
    return CoefficientSet.from_structure(structure, nu, sigma=sigma, g0=g0, g1=g1, lipschitz_C=C,
                                         lipschitz_alpha=0.0, growth_K=max(abs(rate), abs(a_z)) + abs(beta_c),
                                         name="jump_contraction",
                                         params=dict(beta_c=beta_c, rate=rate, a_z=a_z, kernel=kernel, amp=amp,
                                                     g0_y=g0_y, g1_y=g1_y))
