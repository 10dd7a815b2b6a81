"""Command-line front end.

Every command reads a YAML walk/run configuration and writes
``<command>.csv`` plus ``summary.json`` into the output directory.
Green's-function tables use the header ``t,x,y,value,method`` with floats
printed to 17 significant digits.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .bessel import FreeGreen, scaled_bessel_table
from .convergence import convergence_study
from .coord_ops import L1Vector, RateField, build_walk_generator, perturbation_from
from .laplace import InversionScheme, greens_exact_many
from .oracle import BoundaryLeakWarning, oracle_paths
from .volterra import TimeGrid, solve_backward, solve_forward

COMMANDS = ("solve", "laplace", "oracle", "compare", "convergence", "bessel")
METHODS = ("volterra", "laplace", "oracle", "all")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


@dataclass(frozen=True)
class RunConfig:
    rates: RateField
    t_max: float = 5.0
    h: float = 0.01
    targets: tuple = ((0, 0),)
    times: tuple | None = None
    window: int = 80
    inversion: InversionScheme = field(default_factory=InversionScheme)
    tolerance: float = 1e-3
    method: str = "all"
    radii: tuple = (0,)
    q0: tuple = ((0, 1.0),)
    action: str = "forward"
    bessel_orders: int = 10
    bessel_args: tuple = (0.5, 1.0, 2.0, 5.0)
    source: dict = field(default_factory=dict)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.covering(self.t_max, self.h)

    def report_times(self) -> np.ndarray:
        """Output times, each snapped to a grid node."""
        grid = self.grid
        if self.times is None:
            step = max(1, round(0.5 / self.h))
            ks = list(range(step, grid.count + 1, step)) or [grid.count]
        else:
            ks = [grid.index(t) for t in self.times]
        return grid.nodes[ks]


def _num(value, where, positive=False, nonneg=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"{where}: must be finite")
    if positive and not value > 0:
        raise ConfigError(f"{where}: must be > 0")
    if nonneg and value < 0:
        raise ConfigError(f"{where}: must be >= 0")
    return int(value) if integer else float(value)


def _walk(raw, where="walk") -> RateField:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    bl = _num(raw.get("background_lambda", 1.0), f"{where}.background_lambda", nonneg=True)
    bm = _num(raw.get("background_mu", 1.0), f"{where}.background_mu", nonneg=True)
    defects = {}
    items = raw.get("defects") or []
    if not isinstance(items, list):
        raise ConfigError(f"{where}.defects: expected a list")
    for i, d in enumerate(items):
        w = f"{where}.defects[{i}]"
        if not isinstance(d, dict):
            raise ConfigError(f"{w}: expected a mapping with site, lambda, mu")
        for key in ("site", "lambda", "mu"):
            if key not in d:
                raise ConfigError(f"{w}.{key}: missing")
        site = _num(d["site"], f"{w}.site", integer=True)
        if site in defects:
            raise ConfigError(f"{w}.site: duplicate site {site}")
        defects[site] = (
            _num(d["lambda"], f"{w}.lambda", nonneg=True),
            _num(d["mu"], f"{w}.mu", nonneg=True),
        )
    return RateField(bl, bm, defects)


def _pairs(raw, where):
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{where}: expected a nonempty list of [x, y] pairs")
    out = []
    for i, p in enumerate(raw):
        if not isinstance(p, (list, tuple)) or len(p) != 2:
            raise ConfigError(f"{where}[{i}]: expected [x, y]")
        out.append(tuple(_num(v, f"{where}[{i}]", integer=True) for v in p))
    return tuple(out)


def parse_config(raw: dict) -> RunConfig:
    """Validate a decoded YAML document into a :class:`RunConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a mapping")
    known = {
        "walk", "t_max", "h", "targets", "times", "window", "inversion",
        "tolerance", "method", "convergence", "bessel",
    }
    for key in raw:
        if key not in known:
            raise ConfigError(f"{key}: unknown field")
    kw = {"rates": _walk(raw.get("walk", {})), "source": raw}
    if "t_max" in raw:
        kw["t_max"] = _num(raw["t_max"], "t_max", positive=True)
    if "h" in raw:
        kw["h"] = _num(raw["h"], "h", positive=True)
    if "targets" in raw:
        kw["targets"] = _pairs(raw["targets"], "targets")
    if raw.get("times") is not None:
        if not isinstance(raw["times"], list) or not raw["times"]:
            raise ConfigError("times: expected a nonempty list")
        kw["times"] = tuple(_num(t, f"times[{i}]", positive=True) for i, t in enumerate(raw["times"]))
    if "window" in raw:
        kw["window"] = _num(raw["window"], "window", positive=True, integer=True)
    if "tolerance" in raw:
        kw["tolerance"] = _num(raw["tolerance"], "tolerance", positive=True)
    if "method" in raw:
        if raw["method"] not in METHODS:
            raise ConfigError(f"method: expected one of {METHODS}")
        kw["method"] = raw["method"]
    if "inversion" in raw:
        inv = raw["inversion"]
        if not isinstance(inv, dict):
            raise ConfigError("inversion: expected a mapping")
        try:
            kw["inversion"] = InversionScheme(
                str(inv.get("method", "talbot")), _num(inv.get("M", 32), "inversion.M", integer=True)
            )
        except ValueError as exc:
            raise ConfigError(f"inversion: {exc}") from None
    conv = raw.get("convergence") or {}
    if not isinstance(conv, dict):
        raise ConfigError("convergence: expected a mapping")
    if "radii" in conv:
        radii = conv["radii"]
        if not isinstance(radii, list) or not radii:
            raise ConfigError("convergence.radii: expected a nonempty list")
        radii = [_num(r, f"convergence.radii[{i}]", nonneg=True, integer=True) for i, r in enumerate(radii)]
        if radii != sorted(radii):
            raise ConfigError("convergence.radii: must be sorted ascending")
        kw["radii"] = tuple(radii)
    if "q0" in conv:
        q0 = conv["q0"]
        if not isinstance(q0, dict) or not q0:
            raise ConfigError("convergence.q0: expected a nonempty mapping site -> weight")
        kw["q0"] = tuple(
            (_num(s, "convergence.q0 site", integer=True), _num(v, f"convergence.q0[{s}]"))
            for s, v in q0.items()
        )
    if "action" in conv:
        if conv["action"] not in ("forward", "backward"):
            raise ConfigError("convergence.action: expected 'forward' or 'backward'")
        kw["action"] = conv["action"]
    bes = raw.get("bessel") or {}
    if not isinstance(bes, dict):
        raise ConfigError("bessel: expected a mapping")
    if "n_max" in bes:
        kw["bessel_orders"] = _num(bes["n_max"], "bessel.n_max", nonneg=True, integer=True)
    if "x" in bes:
        xs = bes["x"]
        if not isinstance(xs, list) or not xs:
            raise ConfigError("bessel.x: expected a nonempty list")
        kw["bessel_args"] = tuple(_num(v, f"bessel.x[{i}]", nonneg=True) for i, v in enumerate(xs))
    cfg = RunConfig(**kw)
    _check_consistency(cfg)
    return cfg


def _check_consistency(cfg: RunConfig):
    if cfg.h > cfg.t_max:
        raise ConfigError("h: must not exceed t_max")
    steps = cfg.t_max / cfg.h
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigError(f"t_max: {cfg.t_max} is not a multiple of h={cfg.h}")
    if cfg.times is not None:
        for i, t in enumerate(cfg.times):
            if t > cfg.t_max + 1e-12:
                raise ConfigError(f"times[{i}]: beyond t_max")
            try:
                cfg.grid.index(t)
            except ValueError:
                raise ConfigError(f"times[{i}]: {t} is not a multiple of h={cfg.h}") from None
    for i, (x, y) in enumerate(cfg.targets):
        if 2 * max(abs(x), abs(y)) > cfg.window:
            raise ConfigError(f"targets[{i}]: |x|, |y| must be <= window/2 = {cfg.window / 2:g}")


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "parse"
        raise ConfigError(f"{where}: {getattr(exc, 'problem', exc)}") from None
    return parse_config(raw if raw is not None else {})


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _perturbation(rates: RateField):
    A0 = build_walk_generator(RateField(rates.background_lambda, rates.background_mu))
    return perturbation_from(build_walk_generator(rates), A0)


def _rows(times, pairs, values, method):
    for p, (x, y) in enumerate(pairs):
        for k, t in enumerate(times):
            yield (t, x, y, values[p, k], method)


def method_tables(cfg: RunConfig, methods) -> dict[str, np.ndarray]:
    """Values ``(len(targets), len(report_times))`` for every requested method."""
    times = cfg.report_times()
    grid = cfg.grid
    ks = [grid.index(t) for t in times]
    D = _perturbation(cfg.rates)
    pairs = list(cfg.targets)
    out = {}
    if "volterra" in methods:
        green0 = FreeGreen(cfg.rates.background)
        out["volterra-backward"] = solve_backward(green0, D, pairs, grid).values[:, ks]
        out["volterra-forward"] = solve_forward(green0, D, pairs, grid).values[:, ks]
    if "laplace" in methods:
        out["laplace"] = greens_exact_many(D, pairs, times, cfg.inversion, cfg.rates.background)
    if "oracle" in methods:
        out["oracle"] = oracle_paths(cfg.rates, pairs, times, cfg.window)
    return out


def _write_green_csv(path: Path, cfg: RunConfig, tables: dict):
    times = cfg.report_times()
    lines = ["t,x,y,value,method"]
    for method, values in tables.items():
        for t, x, y, v, m in _rows(times, cfg.targets, values, method):
            lines.append(f"{_fmt(t)},{x},{y},{_fmt(v)},{m}")
    path.write_text("\n".join(lines) + "\n")


def _discrepancies(tables: dict) -> dict[str, float]:
    names = list(tables)
    out = {}
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            out[f"{a} vs {b}"] = float(np.max(np.abs(tables[a] - tables[b])))
    return out


def run(command: str, cfg: RunConfig, out_dir) -> int:
    """Execute ``command``; writes outputs and returns the exit status."""
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    summary = {
        "command": command,
        "config": cfg.source,
        "effective": {
            "h": cfg.h,
            "t_max": cfg.t_max,
            "window": cfg.window,
            "method": cfg.method,
            "inversion": {"method": cfg.inversion.method, "M": cfg.inversion.M},
        },
        "tolerance": cfg.tolerance,
        "status": "ok",
        "partial": False,
    }
    status = 0
    try:
        if command == "bessel":
            lines = ["n,x,value"]
            for x in cfg.bessel_args:
                table = scaled_bessel_table(cfg.bessel_orders, x)
                lines.extend(f"{n},{_fmt(x)},{_fmt(v)}" for n, v in enumerate(table))
            (out_dir / "bessel.csv").write_text("\n".join(lines) + "\n")
        elif command == "convergence":
            q0 = L1Vector(dict(cfg.q0))
            report = convergence_study(cfg.rates, q0, cfg.t_max, cfg.grid, cfg.radii, cfg.action)
            cols = ["radius", "bn_norm", "error", "integral_bound", "W_n", "gronwall", "gronwall_t"]
            lines = [",".join(cols)]
            for row in report.rows:
                d = row.as_dict()
                lines.append(",".join(str(d[c]) if c == "radius" else _fmt(d[c]) for c in cols))
            (out_dir / "convergence.csv").write_text("\n".join(lines) + "\n")
            summary["report"] = report.as_dict()
        else:
            methods = {
                "solve": ("volterra",),
                "laplace": ("laplace",),
                "oracle": ("oracle",),
                "compare": ("volterra", "laplace", "oracle") if cfg.method == "all" else (cfg.method,),
            }[command]
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", BoundaryLeakWarning)
                tables = method_tables(cfg, methods)
            leaks = [str(w.message) for w in caught if issubclass(w.category, BoundaryLeakWarning)]
            if leaks:
                summary["warnings"] = leaks
            _write_green_csv(out_dir / f"{command}.csv", cfg, tables)
            if command == "compare":
                disc = _discrepancies(tables)
                worst = max(disc.values(), default=0.0)
                summary["max_discrepancies"] = disc
                summary["max_discrepancy"] = worst
                summary["status"] = "pass" if worst <= cfg.tolerance else "fail"
                if summary["status"] == "fail":
                    status = 1
    except (ArithmeticError, FloatingPointError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        summary["status"] = "error"
        summary["partial"] = True
        summary["error"] = f"{type(exc).__name__}: {exc}"
        status = EXIT_NUMERIC
    summary["wall_time_s"] = time.perf_counter() - started
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semipert",
        description="Transition probabilities of finitely perturbed walks on Z.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--out", default="out", help="output directory (default: ./out)")
    parser.add_argument("--method", choices=METHODS, help="methods used by 'compare'")
    parser.add_argument("--h", type=float, help="time step of the perturbation solver")
    parser.add_argument("--t-max", type=float, help="time horizon")
    parser.add_argument("--window", type=int, help="oracle window radius N")
    parser.add_argument("--talbot-m", type=int, help="number of Talbot contour nodes")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        changes = {}
        if args.h is not None:
            changes["h"] = _num(args.h, "--h", positive=True)
        if args.t_max is not None:
            changes["t_max"] = _num(args.t_max, "--t-max", positive=True)
        if args.window is not None:
            changes["window"] = _num(args.window, "--window", positive=True, integer=True)
        if args.method is not None:
            changes["method"] = args.method
        if args.talbot_m is not None:
            try:
                changes["inversion"] = InversionScheme("talbot", args.talbot_m)
            except ValueError as exc:
                raise ConfigError(f"--talbot-m: {exc}") from None
        if changes:
            cfg = replace(cfg, **changes)
            _check_consistency(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status = run(args.command, cfg, args.out)
    if status == EXIT_NUMERIC:
        print(f"{args.command}: numerical failure, see {Path(args.out) / 'summary.json'}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
