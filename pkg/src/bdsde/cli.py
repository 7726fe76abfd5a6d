"""Command-line experiment runner.

``bdsde SUBCOMMAND --config FILE [--seed N] [--paths N] [--steps K]
[--out DIR] [--force] [--mode lsmc|exact_tree]``

Subcommands: ``simulate``, ``solve``, ``ito-check``, ``compare``,
``nonpos``, ``envelope``. Exit status is 0 on success, 2 when a verdict
fails and 1 on a usage or configuration error. Every run writes
``manifest.json`` into the output directory, listing all files it wrote.

Plot data files (``*.dat``) are whitespace-delimited columns with a single
``#``-prefixed header line:

* ``gap-profile``: ``t mean_gap max_gap violation_count``
* ``convergence``: ``iteration weighted_norm stop_norm contraction_ratio``
* ``envelope``: ``level Y_I0 Y_S0 bracket_width``
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .calculus import brownian_ito_study
from .coefficients import make_cloud
from .comparison import ComparisonReport, compare_pair, nonpositivity_check
from .config import ConfigError, ExperimentConfig, config_hash, load_config
from .drivers import SEED_ENV, simulate_drivers
from .envelope import EnvelopeReport, envelope_solve
from .solver import PicardDiagnostics, Projector, picard_solve

SUBCOMMANDS = ("simulate", "solve", "ito-check", "compare", "nonpos", "envelope")
EXIT_OK, EXIT_USAGE, EXIT_VERDICT = 0, 1, 2


def _fmt(x) -> str:
    return "%.17g" % float(x)


def emit_plotdata(report, style: str, path) -> str:
    """Write a report as whitespace-delimited columns; returns the path."""
    if style == "gap-profile":
        if not isinstance(report, ComparisonReport):
            raise TypeError("gap-profile needs a ComparisonReport")
        header = "t mean_gap max_gap violation_count"
        rows = [(_fmt(t), _fmt(m), _fmt(x), str(int(c)))
                for t, m, x, c in zip(report.times, report.mean_gap, report.max_gap, report.violation_count)]
    elif style == "convergence":
        if not isinstance(report, PicardDiagnostics):
            raise TypeError("convergence needs PicardDiagnostics")
        header = "iteration weighted_norm stop_norm contraction_ratio"
        rows = []
        for i, nrm in enumerate(report.norms):
            ratio = report.contraction_ratio[i - 1] if i else float("nan")
            rows.append((str(i + 1), _fmt(nrm), _fmt(report.stop_norms[i]), _fmt(ratio)))
    elif style == "envelope":
        if not isinstance(report, EnvelopeReport):
            raise TypeError("envelope needs an EnvelopeReport")
        header = "level Y_I0 Y_S0 bracket_width"
        rows = [(_fmt(lv.level), _fmt(a), _fmt(b), _fmt(w))
                for lv, a, b, w in zip(report.levels, report.Y_I0, report.Y_S0, report.width0)]
    else:
        raise ValueError(f"unknown plot style {style!r}")
    with open(path, "w") as fh:
        fh.write("# " + header + "\n")
        for r in rows:
            fh.write(" ".join(r) + "\n")
    return str(path)


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    version: str
    subcommand: str
    wall_time: float = 0.0
    outputs: List[str] = field(default_factory=list)
    verdicts: Dict[str, str] = field(default_factory=dict)

    def write(self, out_dir: str) -> str:
        """Atomic write: temp file in the same directory, then rename."""
        path = os.path.join(out_dir, "manifest.json")
        body = dict(self.__dict__, outputs=sorted(set(self.outputs) | {"manifest.json"}))
        fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".manifest.", suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            json.dump(body, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
        return path


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bdsde", description="Simulate and solve BDSDEs; check ordering and envelope claims.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (INI)")
        p.add_argument("--seed", type=int, default=None, help=f"master seed; also env {SEED_ENV}")
        p.add_argument("--paths", type=int, default=None, help="override n_paths")
        p.add_argument("--steps", type=int, default=None, help="override the number of time steps K")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--force", action="store_true", help="run even when hypothesis validation fails")
        p.add_argument("--mode", choices=("lsmc", "exact_tree"), default=None)
    return parser


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    """Seed precedence: --seed, then the environment variable, then the config."""
    drivers = cfg.drivers
    seed = args.seed
    if seed is None and os.environ.get(SEED_ENV):
        seed = int(os.environ[SEED_ENV])
    if seed is None:
        seed = drivers.seed if drivers.seed is not None else 0
    drivers = replace(drivers, seed=int(seed))
    if args.paths is not None:
        drivers = replace(drivers, n_paths=args.paths)
    kw = dict(drivers=drivers)
    if args.steps is not None:
        kw["K"] = args.steps
    if args.mode is not None:
        kw["regression"] = replace(cfg.regression, mode=args.mode)
        if args.mode == "exact_tree":
            kw["drivers"] = replace(drivers, form="enumeration")
    return cfg.with_overrides(**kw)


class _Run:
    def __init__(self, cfg: ExperimentConfig, out: str, force: bool):
        self.cfg, self.out, self.force = cfg, out, force
        self.outputs: List[str] = []
        self.verdicts: Dict[str, str] = {}
        self.spaces = cfg.build_spaces()
        self._drivers = None

    def path(self, name: str) -> str:
        self.outputs.append(name)
        return os.path.join(self.out, name)

    @property
    def drivers(self):
        if self._drivers is None:
            d = self.cfg.drivers
            self._drivers = simulate_drivers(self.cfg.grid(), self.spaces, d.n_paths, seed=d.seed,
                                             scenario_size=d.scenario_size, brownian_dim=d.brownian_dim, form=d.form)
        return self._drivers

    def cloud(self):
        return make_cloud(self.spaces, int(self.cfg.option("cloud_size", 3000)), horizon=self.cfg.T,
                          seed=int(self.cfg.drivers.seed or 0))

    def kw(self):
        return dict(tol=float(self.cfg.option("tol", 1e-8)), max_iter=int(self.cfg.option("max_iter", 60)))


def _cmd_simulate(run: _Run) -> int:
    run.drivers.to_csv(run.path("drivers.csv"))
    return EXIT_OK


def _cmd_solve(run: _Run) -> int:
    cfg = run.cfg
    coeffs = cfg.family.build(run.spaces)
    sol, diag = picard_solve(coeffs, cfg.terminal.build(), run.drivers, cfg.regression, force=run.force, **run.kw())
    sol.to_csv(run.path("solution.csv"))
    diag.to_csv(run.path("picard.csv"))
    emit_plotdata(diag, "convergence", run.path("convergence.dat"))
    run.verdicts["solve"] = "PASS" if diag.converged else "FAIL"
    print(f"verdict={run.verdicts['solve']} iterations={diag.iterations_used} Y0_mean={_fmt(sol.mean_Y()[0])}")
    return EXIT_OK if diag.converged else EXIT_VERDICT


def _cmd_ito(run: _Run) -> int:
    cfg = run.cfg
    steps = tuple(cfg.option("ito_steps", (16, 32, 64)))
    lo, hi = cfg.option("ito_ratio_band", (0.35, 0.65))
    study = brownian_ito_study(run.spaces, steps, cfg.drivers.n_paths, seed=cfg.drivers.seed, horizon=cfg.T)
    with open(run.path("ito.csv"), "w") as fh:
        fh.write("K,mean_abs_residual,ratio\n")
        for i, (K, r) in enumerate(zip(study.steps, study.mean_abs_residual)):
            ratio = study.ratios[i - 1] if i else float("nan")
            fh.write(f"{K},{_fmt(r)},{_fmt(ratio)}\n")
    ok = bool(np.all((study.ratios >= lo) & (study.ratios <= hi))) and study.linear_max_residual < 1e-10
    run.verdicts["ito-check"] = "PASS" if ok else "FAIL"
    print(f"verdict={run.verdicts['ito-check']} ratios={' '.join(_fmt(r) for r in study.ratios)} "
          f"band=[{lo},{hi}] linear_residual={_fmt(study.linear_max_residual)}")
    return EXIT_OK if ok else EXIT_VERDICT


def _report_outputs(run: _Run, rep: ComparisonReport, name: str) -> int:
    rep.to_csv(run.path(f"{name}.csv"))
    emit_plotdata(rep, "gap-profile", run.path(f"{name}.dat"))
    run.verdicts[name] = "PASS" if rep.passed else "FAIL"
    for c in rep.checks:
        if not c.passed:
            print(f"hypothesis clause failed: {c.name}: {c.detail}", file=sys.stderr)
    print(rep.verdict())
    return EXIT_OK if rep.passed else EXIT_VERDICT


def _cmd_compare(run: _Run) -> int:
    cfg = run.cfg
    if cfg.family2 is None:
        raise ConfigError("compare needs a [coefficients2] section")
    hyp = str(cfg.option("hypothesis", "thm41a"))
    c1, c2 = cfg.family.build(run.spaces), cfg.family2.build(run.spaces)
    t2 = cfg.terminal2 or cfg.terminal
    delta = cfg.option("delta")
    rep, _, _ = compare_pair(c1, c2, hyp, cfg.terminal.build(), t2.build(), run.drivers, cfg.regression,
                             delta=None if delta is None else float(delta), cloud=run.cloud(), force=run.force,
                             ceiling=float(cfg.option("ceiling", 0.01)), holder=hyp.startswith("thm43"), **run.kw())
    return _report_outputs(run, rep, "gap")


def _cmd_nonpos(run: _Run) -> int:
    cfg = run.cfg
    delta = cfg.option("delta")
    rep, _, _ = nonpositivity_check(cfg.family.build(run.spaces), cfg.terminal.build(), run.drivers, cfg.regression,
                                    delta=None if delta is None else float(delta), cloud=run.cloud(),
                                    force=run.force, ceiling=float(cfg.option("ceiling", 0.01)), **run.kw())
    return _report_outputs(run, rep, "nonpos")


def _cmd_envelope(run: _Run) -> int:
    cfg = run.cfg
    coeffs = cfg.family.build(run.spaces)
    levels = [float(v) for v in cfg.option("levels", (2, 4, 8))]
    delta = cfg.option("delta")
    growth = cfg.option("growth_K")
    rep = envelope_solve(coeffs, cfg.terminal.build(), run.drivers, levels, cfg.regression,
                         K=None if growth is None else float(growth),
                         delta=None if delta is None else float(delta),
                         max_iter=int(cfg.option("max_iter", 200)), tol=float(cfg.option("tol", 1e-8)))
    rep.to_csv(run.path("envelope.csv"))
    emit_plotdata(rep, "envelope", run.path("envelope.dat"))
    run.verdicts["envelope"] = "PASS" if rep.monotone else "FAIL"
    bad = {k: v for k, v in rep.chain_violations.items() if v > 0}
    print(f"verdict={run.verdicts['envelope']} delta={_fmt(rep.slack)} width0={_fmt(rep.width0[-1])} "
          f"violations={bad or 'none'}")
    return EXIT_OK if rep.monotone else EXIT_VERDICT


_COMMANDS = {"simulate": _cmd_simulate, "solve": _cmd_solve, "ito-check": _cmd_ito, "compare": _cmd_compare,
             "nonpos": _cmd_nonpos, "envelope": _cmd_envelope}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    start = time.perf_counter()
    try:
        cfg = apply_overrides(load_config(args.config), args)
        os.makedirs(args.out, exist_ok=True)
        run = _Run(cfg, args.out, args.force)
        status = _COMMANDS[args.command](run)
    except (ConfigError, OSError, KeyError) as exc:
        parser.print_usage(sys.stderr)
        print(f"bdsde: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # precondition rejections (failed hypothesis clauses, bad parameters)
        print(f"bdsde: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest = RunManifest(config_hash(cfg), int(cfg.drivers.seed), __version__, args.command,
                           wall_time=time.perf_counter() - start, outputs=run.outputs, verdicts=run.verdicts)
    manifest.write(args.out)
    return status


if __name__ == "__main__":
    sys.exit(main())
