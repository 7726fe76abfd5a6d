"""Experiment configuration: an INI file read with :mod:`configparser`.

Grammar (all sections optional except ``[grid]``; values are Python
literals, bare words are read as strings)::

    [experiment]
    name = demo

    [grid]
    T = 1.0
    K = 32

    [space.F]                  ; one section per role E, U0, U1, F
    kind = power               ; uniform | power | atoms
    support = (0.0, inf)
    n_atoms = 2
    exponent = -2.0            ; power only
    scale = 1.0
    truncation = 2             ; optional level n of F_n = [1/n, n]
    atoms = (("a", 0.5, 1.0),) ; atoms only: (label, coord, weight) or (label, weight)

    [drivers]
    n_paths = 10000
    seed = 3
    scenario_size = 100
    form = gaussian            ; gaussian | enumeration

    [coefficients]             ; [coefficients2] for the second set of a pair
    family = affine            ; every other key is a family parameter
    beta_y = -1.0

    [terminal]                 ; [terminal2] likewise
    kind = brownian            ; constant | brownian | jump_indicator
    function = sin
    scale = 1.0
    shift = 0.0

    [regression]
    mode = lsmc
    basis_degree = 2
    ridge = 1e-8
    feature_set = auto

    [options]                  ; subcommand options: tol, max_iter, hypothesis,
    tol = 1e-8                 ; delta, ceiling, levels, ito_steps, cloud_size

Roles without a section get the empty (zero-mass) space.
"""

from __future__ import annotations

import ast
import configparser
import hashlib
import io
import math
import re
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Optional, Tuple

from .coefficients import CoefficientSet, TerminalCondition, brownian_terminal
from .drivers import ROLES, TimeGrid
from .families import FAMILIES, make_family
from .markspace import (DiscreteMeasureSpace, discretize_measure, power_density, truncate_measure,
                        uniform_density)
from .solver import RegressionSpec


class ConfigError(ValueError):
    pass


def _literal(text: str) -> Any:
    text = text.strip()
    if text in ("inf", "+inf"):
        return math.inf
    if text == "-inf":
        return -math.inf
    try:
        return ast.literal_eval(re.sub(r"\binf\b", "1e999", text))
    except (ValueError, SyntaxError):
        return text


def _render(value: Any) -> str:
    return repr(value)


@dataclass(frozen=True)
class MeasureSpec:
    kind: str = "atoms"
    support: Optional[Tuple[float, float]] = None
    n_atoms: int = 1
    scale: float = 1.0
    exponent: float = 0.0
    truncation: Optional[int] = None
    atoms: Tuple = ()

    def build(self) -> DiscreteMeasureSpace:
        if self.kind == "atoms":
            return DiscreteMeasureSpace.from_atoms(list(self.atoms)) if self.atoms else DiscreteMeasureSpace.empty()
        if self.kind == "uniform":
            density = uniform_density(self.scale)
        elif self.kind == "power":
            density = power_density(self.exponent, self.scale)
        else:
            raise ConfigError(f"unknown measure kind {self.kind!r}")
        if self.support is None:
            raise ConfigError(f"{self.kind} measure needs a support")
        if self.truncation is not None:
            return truncate_measure(density, self.support, int(self.truncation), int(self.n_atoms))
        return discretize_measure(density, self.support, int(self.n_atoms))


@dataclass(frozen=True)
class DriverSpec:
    n_paths: int = 1000
    seed: Optional[int] = None
    scenario_size: int = 1
    form: str = "gaussian"
    brownian_dim: int = 1


@dataclass(frozen=True)
class FamilySpec:
    name: str = "zero"
    params: Tuple[Tuple[str, Any], ...] = ()

    def build(self, spaces) -> CoefficientSet:
        return make_family(self.name, spaces, **dict(self.params))


TERMINAL_KINDS = ("constant", "brownian", "jump_indicator")


@dataclass(frozen=True)
class TerminalSpec:
    kind: str = "constant"
    value: float = 0.0
    function: str = "identity"
    scale: float = 1.0
    shift: float = 0.0

    def build(self) -> TerminalCondition:
        if self.kind == "constant":
            return TerminalCondition.constant(self.value)
        if self.kind == "brownian":
            return brownian_terminal(self.function, self.scale, self.shift)
        if self.kind == "jump_indicator":
            return TerminalCondition.jump_indicator()
        raise ConfigError(f"unknown terminal kind {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    T: float = 1.0
    K: int = 32
    spaces: Tuple[Tuple[str, MeasureSpec], ...] = ()
    drivers: DriverSpec = field(default_factory=DriverSpec)
    family: FamilySpec = field(default_factory=FamilySpec)
    family2: Optional[FamilySpec] = None
    terminal: TerminalSpec = field(default_factory=TerminalSpec)
    terminal2: Optional[TerminalSpec] = None
    regression: RegressionSpec = field(default_factory=RegressionSpec)
    options: Tuple[Tuple[str, Any], ...] = ()

    def option(self, key: str, default=None):
        return dict(self.options).get(key, default)

    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.T, self.K)

    def build_spaces(self) -> Dict[str, DiscreteMeasureSpace]:
        specs = dict(self.spaces)
        return {role: specs[role].build() if role in specs else DiscreteMeasureSpace.empty() for role in ROLES}

    def validate(self) -> None:
        for fam in (self.family, self.family2):
            if fam is not None and fam.name not in FAMILIES:
                raise ConfigError(f"unknown coefficient family {fam.name!r}; known: {sorted(FAMILIES)}")
        for role, _ in self.spaces:
            if role not in ROLES:
                raise ConfigError(f"unknown measure role {role!r}")
        if self.K < 1 or not self.T > 0:
            raise ConfigError("grid needs T > 0 and K >= 1")
        for term in (self.terminal, self.terminal2):
            if term is not None and term.kind not in TERMINAL_KINDS:
                raise ConfigError(f"unknown terminal kind {term.kind!r}; known: {list(TERMINAL_KINDS)}")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def _section_kwargs(cls, section: Dict[str, Any], where: str) -> Dict[str, Any]:
    names = {f.name for f in fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in [{where}]")
    return dict(section)


def _read_section(cp: configparser.ConfigParser, name: str) -> Dict[str, Any]:
    return {k: _literal(v) for k, v in cp.items(name)}


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    kw: Dict[str, Any] = {}
    spaces = []
    for sec in cp.sections():
        body = _read_section(cp, sec)
        if sec == "experiment":
            kw["name"] = str(body.get("name", "experiment"))
        elif sec == "grid":
            kw["T"] = float(body.get("T", 1.0))
            kw["K"] = int(body.get("K", 32))
        elif sec.startswith("space."):
            if "support" in body and body["support"] is not None:
                body["support"] = tuple(float(v) for v in body["support"])
            if "atoms" in body:
                body["atoms"] = tuple(tuple(a) for a in body["atoms"])
            spaces.append((sec[len("space."):], MeasureSpec(**_section_kwargs(MeasureSpec, body, sec))))
        elif sec == "drivers":
            kw["drivers"] = DriverSpec(**_section_kwargs(DriverSpec, body, sec))
        elif sec in ("coefficients", "coefficients2"):
            name = str(body.pop("family", "zero"))
            spec = FamilySpec(name, tuple(sorted(body.items())))
            kw["family" if sec == "coefficients" else "family2"] = spec
        elif sec in ("terminal", "terminal2"):
            kw[sec] = TerminalSpec(**_section_kwargs(TerminalSpec, body, sec))
        elif sec == "regression":
            try:
                kw["regression"] = RegressionSpec(**_section_kwargs(RegressionSpec, body, sec))
            except TypeError as exc:
                raise ConfigError(str(exc)) from exc
        elif sec == "options":
            kw["options"] = tuple(sorted(body.items()))
        else:
            raise ConfigError(f"unknown section [{sec}]")
    kw["spaces"] = tuple(sorted(spaces))
    try:
        cfg = ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config(serialize_config(c)) == c``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["experiment"] = {"name": cfg.name}
    cp["grid"] = {"T": _render(cfg.T), "K": _render(cfg.K)}
    for role, spec in cfg.spaces:
        cp[f"space.{role}"] = {f.name: _render(getattr(spec, f.name)) for f in fields(spec)}
    cp["drivers"] = {f.name: _render(getattr(cfg.drivers, f.name)) for f in fields(cfg.drivers)}
    for sec, fam in (("coefficients", cfg.family), ("coefficients2", cfg.family2)):
        if fam is not None:
            cp[sec] = {"family": fam.name, **{k: _render(v) for k, v in fam.params}}
    for sec, term in (("terminal", cfg.terminal), ("terminal2", cfg.terminal2)):
        if term is not None:
            cp[sec] = {f.name: _render(getattr(term, f.name)) for f in fields(term)}
    cp["regression"] = {f.name: _render(getattr(cfg.regression, f.name)) for f in fields(cfg.regression)}
    if cfg.options:
        cp["options"] = {k: _render(v) for k, v in cfg.options}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical text with ``\\n`` line endings."""
    return hashlib.sha256(serialize_config(cfg).replace("\r\n", "\n").encode("utf-8")).hexdigest()
