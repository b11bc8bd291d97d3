"""Command-line driver: ``pia-qlc {solve,baseline,validate} --config run.json --out DIR``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import analysis
from .fdm_solver import SCHEMES
from .mc_oracle import McConfig, McError, estimate_value
from .pia import PiaConfig, PiaError, run_pia, solve_linear_baseline
from .problem import ProblemError, make_example_problem

log = logging.getLogger("pia_qlc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
REFERENCE_LINEAR_COUNT = 24_541_704
MC_BIAS_ALLOWANCE = 0.02


class ConfigError(ValueError):
    pass


@dataclass
class McBlock:
    n_paths: int = 100_000
    dt: float = 1e-4
    seed: int = 0
    max_time: float = 500.0
    bridge: bool = True
    workers: int = 1
    probes: List[Tuple[float, float]] = field(default_factory=lambda: [(1.25, 1.25)])


@dataclass
class RunConfig:
    """Run parameters; the defaults are the reference configuration.

    ``n`` counts nodes per axis including both edges, so 101 nodes give 100
    mesh intervals.
    """

    sigma: float = 2.0
    eta: float = 0.2
    alpha: float = 0.03
    x_min: float = 0.5
    x_max: float = 2.0
    y_min: float = 0.5
    y_max: float = 2.0
    n: int = 101
    tol1: float = 1e-5
    tol2: float = 1e-3
    scheme: str = "gauss_seidel"
    max_pia_steps: int = 50
    max_sweeps: int = 1_000_000
    output_dir: Optional[str] = None
    mc: Optional[McBlock] = None

    @property
    def bounds(self):
        return (self.x_min, self.x_max, self.y_min, self.y_max)


_SYMBOL = {"sigma": "σ", "eta": "η", "alpha": "α"}


def _positive(key, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"config key '{key}': expected a finite number, got {value!r}")
    if not value > 0:
        raise ConfigError(f"config key '{key}': {_SYMBOL.get(key, key)} must be positive, got {value}")
    return value


def _integer(key, value, minimum):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"config key '{key}': expected an integer >= {minimum}, got {value!r}")
    return value


def _parse_mc(raw) -> McBlock:
    if not isinstance(raw, dict):
        raise ConfigError("config key 'mc': expected an object")
    known = {f.name for f in fields(McBlock)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"config key 'mc.{unknown[0]}': unknown key")
    block = McBlock(**raw)
    _integer("mc.n_paths", block.n_paths, 1)
    _positive("mc.dt", block.dt)
    _positive("mc.max_time", block.max_time)
    _integer("mc.seed", block.seed, 0)
    _integer("mc.workers", block.workers, 1)
    if not isinstance(block.bridge, bool):
        raise ConfigError("config key 'mc.bridge': expected true or false")
    try:
        block.probes = [(float(p[0]), float(p[1])) for p in block.probes]
        if any(len(p) != 2 for p in raw.get("probes", [])):
            raise TypeError
    except (TypeError, IndexError, ValueError):
        raise ConfigError("config key 'mc.probes': expected a list of [x, y] pairs") from None
    return block


def parse_config(raw: dict) -> RunConfig:
    """Validate a decoded JSON document. Unknown keys are errors."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"config key '{unknown[0]}': unknown key")
    raw = dict(raw)
    mc_raw = raw.pop("mc", None)
    cfg = RunConfig(**raw)
    for key in ("sigma", "eta", "alpha", "tol1", "tol2"):
        _positive(key, getattr(cfg, key))
    for key in ("x_min", "x_max", "y_min", "y_max"):
        _positive(key, getattr(cfg, key))
    if not (cfg.x_min < cfg.x_max and cfg.y_min < cfg.y_max):
        raise ConfigError("config keys 'x_min'/'x_max'/'y_min'/'y_max': need x_min < x_max and y_min < y_max")
    _integer("n", cfg.n, 3)
    _integer("max_pia_steps", cfg.max_pia_steps, 1)
    _integer("max_sweeps", cfg.max_sweeps, 1)
    if cfg.scheme not in SCHEMES:
        raise ConfigError(f"config key 'scheme': expected one of {SCHEMES}, got {cfg.scheme!r}")
    if mc_raw is not None:
        cfg.mc = _parse_mc(mc_raw)
    return cfg


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    try:
        return parse_config(raw)
    except TypeError as exc:
        raise ConfigError(f"{p}: {exc}") from None


def _fmt(v) -> str:
    return "" if v is None else f"{v:.8f}"


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir or "out")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"config key 'output_dir': cannot create {out} ({exc})") from None
    return out


def _write_manifest(out: Path, files: Sequence[str], complete: bool, note: str = "") -> None:
    lines = [f"status: {'complete' if complete else 'incomplete'}"]
    if note:
        lines.append(f"note: {note}")
    lines += [f"file: {f}" for f in files]
    (out / "MANIFEST").write_text("\n".join(lines) + "\n")


def write_convergence(out: Path, records) -> None:
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "max_dpi", "max_dv", "point_updates", "wall_ms"])
        for r in records:
            w.writerow([r.step, _fmt(r.max_dpi), _fmt(r.max_dv), r.point_updates,
                        f"{1000 * r.wall_time:.0f}"])
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "wall_ms"])
        for r in records:
            w.writerow([r.step, f"{1000 * r.wall_time:.0f}"])


def _print_table(records) -> None:
    print(f"{'step':>4}  {'max|dpi|':>12}  {'max|dV|':>12}  {'updates':>12}  {'sweeps':>7}  {'time':>8}")
    for r in records:
        dv = "" if r.max_dv is None else f"{r.max_dv:.8f}"
        print(f"{r.step:>4}  {r.max_dpi:>12.8f}  {dv:>12}  {r.point_updates:>12,}  "
              f"{r.sweeps:>7}  {r.wall_time:>7.2f}s")


def _print_qlc(reports, residuals, semilinear) -> None:
    sup = reports["sup"]
    nu_lo, nu_hi = sup.ellipticity
    print(f"\nellipticity of a = s^2/2: [{nu_lo:.6g}, {nu_hi:.6g}]   reward concavity: {sup.concavity:.6g}")
    print(f"noise floor: {sup.noise_floor:.1e}")
    for kind, rep in reports.items():
        parts = []
        for e in rep.entries[1:]:
            tag = " (floor)" if e.flagged else ""
            parts.append("-" if e.ratio is None else f"{e.ratio:.4g}{tag}")
        C = rep.empirical_C
        print(f"  {kind:>4} ratios C_i: {', '.join(parts) or '-'}   empirical C: "
              f"{'-' if C is None else f'{C:.4g}'}")
    for i, rr in enumerate(residuals, start=1):
        print(f"  W_{i} equation residual {rr.max_w_pde_residual:.3e}   max R_{i} {rr.max_abs_R:.3e}")
    print(f"  HJB residual of final V: {semilinear:.3e}")


def _make_problem(cfg: RunConfig):
    try:
        problem = make_example_problem(cfg.sigma, cfg.eta, cfg.alpha, cfg.bounds)
    except ProblemError as exc:
        raise ConfigError(str(exc)) from None
    return problem, problem.grid(cfg.n)


def _pia_config(cfg: RunConfig) -> PiaConfig:
    return PiaConfig(cfg.tol1, cfg.tol2, cfg.max_pia_steps, cfg.scheme, cfg.max_sweeps)


def cmd_solve(cfg: RunConfig) -> int:
    problem, grid = _make_problem(cfg)
    out = _out_dir(cfg)
    try:
        result = run_pia(problem, grid, _pia_config(cfg))
    except PiaError as exc:
        files = []
        part = exc.partial
        if part is not None and part.records:
            write_convergence(out, part.records)
            files += ["convergence.csv", "timing.csv"]
            if part.values:
                part.values[-1].to_csv(out / "value.csv")
                files.append("value.csv")
        _write_manifest(out, files, False, str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    write_convergence(out, result.records)
    result.V.to_csv(out / "value.csv")
    result.policy.to_csv(out / "policy.csv")
    files = ["convergence.csv", "timing.csv", "value.csv", "policy.csv"]
    _print_table(result.records)
    if len(result.w_fields) >= 2:
        reports = analysis.qlc_reports(problem, result.w_fields, 10 * cfg.tol1)
        analysis.write_qlc_csv(out / "qlc_report.csv", reports)
        files.append("qlc_report.csv")
        residuals = analysis.residual_report(problem, result)
        _print_qlc(reports, residuals, analysis.semilinear_residual(problem, result.V))
    else:
        print("\nfewer than two value differences: no convergence-rate report")
    _write_manifest(out, files, True)
    return EXIT_OK


def cmd_baseline(cfg: RunConfig) -> int:
    problem, grid = _make_problem(cfg)
    out = _out_dir(cfg)
    V, stats = solve_linear_baseline(problem, grid, cfg.tol1, cfg.scheme, cfg.max_sweeps)
    V.to_csv(out / "linear_value.csv")
    if not stats.converged:
        _write_manifest(out, ["linear_value.csv"], False, "linear solve hit max_sweeps")
        print(f"error: no convergence after {stats.sweeps} sweeps", file=sys.stderr)
        return EXIT_NUMERIC
    _write_manifest(out, ["linear_value.csv"], True)
    print(f"scheme: {cfg.scheme}   sweeps: {stats.sweeps}")
    print(f"point updates: {stats.point_updates:,}   reference: {REFERENCE_LINEAR_COUNT:,}   "
          f"ratio: {stats.point_updates / REFERENCE_LINEAR_COUNT:.4f}")
    return EXIT_OK


def compare(fdm: float, est, allowance: float = MC_BIAS_ALLOWANCE) -> Tuple[float, bool]:
    """z-score of the Monte Carlo gap after subtracting the relative bias allowance."""
    excess = max(abs(est.mean - fdm) - allowance * abs(fdm), 0.0)
    if est.std_error == 0:
        z = 0.0 if excess == 0 else math.inf
    else:
        z = excess / est.std_error
    return z, z > 3.0


def cmd_validate(cfg: RunConfig) -> int:
    if cfg.mc is None:
        raise ConfigError("config key 'mc': required by validate")
    problem, grid = _make_problem(cfg)
    for x, y in cfg.mc.probes:
        if not grid.contains(x, y):
            raise ConfigError(f"config key 'mc.probes': probe-outside-domain ({x}, {y})")
    out = _out_dir(cfg)
    try:
        result = run_pia(problem, grid, _pia_config(cfg))
    except PiaError as exc:
        _write_manifest(out, [], False, str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    mc = McConfig(cfg.mc.n_paths, cfg.mc.dt, cfg.mc.seed, cfg.mc.max_time, cfg.mc.bridge)
    cases = [("zero", result.values[0], 0.0), ("converged", result.V, result.evaluated_policy)]
    rows = []
    n_flagged = 0
    for x, y in cfg.mc.probes:
        for label, V, policy in cases:
            fdm = V.interpolate(x, y)
            est = estimate_value(problem, policy, (x, y), mc, workers=cfg.mc.workers)
            z, flagged = compare(fdm, est)
            n_flagged += flagged
            rows.append([f"{x:.8f}", f"{y:.8f}", label, f"{fdm:.8f}", f"{est.mean:.8f}",
                         f"{est.std_error:.8f}", f"{z:.4f}", int(flagged)])
            print(f"({x}, {y}) {label:>9}: FDM {fdm:.6f}  MC {est.mean:.6f} ± {est.std_error:.6f}  "
                  f"z {z:.2f}{'  FLAGGED' if flagged else ''}")
    with open(out / "mc_check.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "policy", "fdm_value", "mc_mean", "std_error", "z_score", "flagged"])
        w.writerows(rows)
    _write_manifest(out, ["mc_check.csv"], True)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "baseline": cmd_baseline, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pia-qlc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration (default: reference parameters)")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--scheme", choices=SCHEMES, help="override the sweep scheme")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.output_dir = args.out
        if args.scheme:
            cfg.scheme = args.scheme
        return COMMANDS[args.command](cfg)
    except (ConfigError, McError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
