"""Command-line interface: ``simulate``, ``estimate`` and ``tstats``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .core import CoheritError, RegressionSample, RngStream, ZeroColumnError
from .functionals import METHODS, FDEConfig, TraitModel, fde_estimate, pairwise_estimates
from .simulation import (
    PRESETS,
    ExperimentConfig,
    default_threads,
    marginal_t_stats,
    preset_settings,
    run_settings,
)

EXIT_CONFIG = 2
EXIT_FAILURES = 3
EXIT_DATA = 4

log = logging.getLogger("coherit")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- file input


@dataclasses.dataclass
class Table:
    header: list
    values: np.ndarray
    path: str


def read_table(path: str) -> Table:
    """Read a header-plus-reals CSV; every cell must parse as a finite float."""
    if not os.path.isfile(path):
        raise CliError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CliError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    data = [r for r in rows[1:] if r]
    if not data:
        raise CliError(f"{path}: no data rows")
    out = np.empty((len(data), len(header)))
    for i, row in enumerate(data):
        line = i + 2
        if len(row) != len(header):
            raise CliError(f"{path}: line {line} has {len(row)} cells, header has {len(header)}", EXIT_DATA)
        for j, cell in enumerate(row):
            try:
                value = float(cell)
            except ValueError:
                value = math.nan
            if not math.isfinite(value):
                raise CliError(
                    f"{path}: non-numeric cell {cell.strip()!r} at line {line}, column {j + 1} ({header[j]})",
                    EXIT_DATA,
                )
            out[i, j] = value
    return Table(header, out, path)


def _trait(table: Table, label: str) -> np.ndarray:
    if table.values.shape[1] != 1:
        raise CliError(f"{table.path}: {label} file must have exactly one column")
    return table.values[:, 0]


def _prepare_response(y: np.ndarray, center: bool, normalize: bool) -> np.ndarray:
    if center:
        y = y - y.mean()
    if normalize:
        sd = float(np.std(y, ddof=1))
        if sd > 0.0:
            y = y / sd
    return y


def _sample(design: Table, y: np.ndarray, args) -> RegressionSample:
    if y.shape[0] != design.values.shape[0]:
        raise CliError(f"{design.path} has {design.values.shape[0]} rows but the trait has {y.shape[0]}")
    X = design.values - design.values.mean(axis=0) if args.center else design.values
    return RegressionSample(X, _prepare_response(y, args.center, args.normalize))


# ---------------------------------------------------------------- output


def _num(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(float(x), ".17g")


def _write(path: str | None, text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _check_output(path: str | None):
    if path is None or path == "-":
        return
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise CliError(f"output directory {parent} does not exist")


# ---------------------------------------------------------------- config


SIM_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"label", "kind"}
SIM_KEYS |= {"preset", "seed", "threads"}


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    if not os.path.isfile(path):
        raise CliError(f"config file {path} does not exist")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}: line {lineno} is not key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _coerce(key: str, value, kind):
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            return _BOOL[str(value).lower()]
        if kind is tuple:
            items = value if isinstance(value, (list, tuple)) else str(value).split(",")
            return tuple(str(v).strip() for v in items if str(v).strip())
        return kind(value)
    except (KeyError, ValueError, TypeError):
        raise CliError(f"invalid value {value!r} for {key}") from None


def _field_types() -> dict:
    types = {}
    defaults = ExperimentConfig()
    for f in dataclasses.fields(ExperimentConfig):
        types[f.name] = type(getattr(defaults, f.name))
    types.update(preset=str, seed=int, threads=int)
    return types


def effective_simulation_config(args) -> dict:
    """Merge preset defaults, the config file and flags (flags win)."""
    merged = {}
    if args.config:
        merged.update(read_config_file(args.config))
    for key in merged:
        if key not in SIM_KEYS:
            raise CliError(f"unknown config key {key!r}")
    for key in ("preset", "reps", "seed", "b", "split", "threads", "methods"):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    types = _field_types()
    return {k: _coerce(k, v, types[k]) for k, v in merged.items()}


def build_settings(eff: dict) -> list:
    eff = dict(eff)
    preset = eff.pop("preset", None)
    eff.pop("threads", None)
    if "seed" in eff:
        eff["master_seed"] = eff.pop("seed")
    if "reps" in eff and eff["reps"] < 1:
        raise CliError("reps must be ≥ 1")
    try:
        if preset is not None:
            return preset_settings(preset, **eff)
        return [ExperimentConfig(**{**eff, "label": "custom"})]
    except KeyError as exc:
        raise CliError(str(exc.args[0])) from None
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from None


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    eff = effective_simulation_config(args)
    settings = build_settings(eff)
    threads = eff.get("threads", default_threads())
    if threads < 1:
        raise CliError("threads must be ≥ 1")
    _check_output(args.out)
    name = eff.get("preset", "custom")
    column = PRESETS[name][0] if name in PRESETS else ""
    report = run_settings(settings, name, column, threads)
    header = {"version": __version__, **{k: v for k, v in sorted(eff.items())}}
    header.setdefault("seed", settings[0].master_seed)
    header.setdefault("reps", settings[0].reps)
    _write(args.out, report.to_csv(header))
    table = report.to_table()
    if args.out and args.out != "-":
        _write(os.path.splitext(args.out)[0] + ".txt", table)
    else:
        sys.stderr.write(table)
    for res in report.settings:
        cfg = res.config
        first = cfg.methods[0]
        target = cfg.targets[0]
        status = "ABORTED" if res.aborted else "ok"
        print(
            f"{name} {cfg.label}: reps_used={res.reps_used} failures={res.failures} "
            f"mse[{target},{first}]={res.mse(target, first):.4g} {status}",
            file=sys.stderr,
        )
    return EXIT_FAILURES if report.aborted else 0


def _fde_config(args) -> FDEConfig:
    return FDEConfig(b=args.b if args.b is not None else FDEConfig.b, split_seed=args.seed or 0)


def _fit_trait(job):
    sample, config = job
    m = TraitModel(sample, config)
    m.quadratic()
    return m


def cmd_estimate(args) -> int:
    if not args.x:
        raise CliError("--x is required")
    if args.traits and (args.y or args.w or args.z):
        raise CliError("--traits cannot be combined with --y, --z or --w")
    _check_output(args.out)
    config = _fde_config(args)
    X = read_table(args.x)
    if args.traits:
        traits = read_table(args.traits)
        samples = [_sample(X, traits.values[:, j], args) for j in range(traits.values.shape[1])]
        models = _map(_fit_trait, [(s, config) for s in samples], args.threads)
        values, ratios = pairwise_estimates(models)
        _write(args.out, format_pairwise(traits.header, values, ratios))
        return 0
    if not args.y or not args.w:
        raise CliError("one pair needs --y and --w (or use --traits)")
    Z = read_table(args.z) if args.z else X
    if Z.header != X.header:
        raise CliError(f"marker headers of {X.path} and {Z.path} do not match")
    sx = _sample(X, _trait(read_table(args.y), "--y"), args)
    sz = _sample(Z, _trait(read_table(args.w), "--w"), args)
    est = estimate_pair(sx, sz, config, args.split)
    lines = ["quantity,value"]
    for key, value in zip(("inner", "quad_beta", "quad_gamma", "ratio"), est.as_tuple()):
        lines.append(f"{key},{_num(value)}")
    _write(args.out, "\n".join(lines) + "\n")
    return 0


def estimate_pair(sx: RegressionSample, sz: RegressionSample, config: FDEConfig, split: bool = False):
    """The library call behind ``coherit estimate`` for one pair."""
    a, b = TraitModel(sx, config), TraitModel(sz, config)
    return fde_estimate(a, b, split, config, RngStream(config.split_seed))


def format_pairwise(names, values, ratios) -> str:
    """Two rows per trait: inner products and quadratic value, then normalised values."""
    buf = []
    buf.append(",".join(["trait", "row"] + list(names)))
    k = len(names)
    for i in range(k):
        top = [""] * k
        bottom = [""] * k
        for j in range(i, k):
            top[j] = _num(values[i, j])
            bottom[j] = _num(ratios[i, j])
        buf.append(",".join([names[i], "value"] + top))
        buf.append(",".join([names[i], "ratio"] + bottom))
    return "\n".join(buf) + "\n"


def cmd_tstats(args) -> int:
    if not args.x or not args.y:
        raise CliError("tstats needs --x and --y")
    _check_output(args.out)
    X = read_table(args.x)
    sample = _sample(X, _trait(read_table(args.y), "--y"), args)
    t, perfect = marginal_t_stats(sample)
    if perfect.any():
        log.warning("%d markers fit the trait exactly; their t is reported as inf", int(perfect.sum()))
    lines = ["marker,t"] + [f"{name},{_num(v)}" for name, v in zip(X.header, t)]
    _write(args.out, "\n".join(lines) + "\n")
    return 0


def _map(fn, jobs, threads):
    threads = default_threads() if threads is None else threads
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coherit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--b", type=float, help="penalty multiplier b in b*sqrt(2.01 log p)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--threads", type=int, help="worker processes (default $COHERIT_THREADS or 1)")
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    sim = sub.add_parser("simulate", parents=[common], help="run a simulation preset")
    sim.add_argument("--preset", choices=sorted(PRESETS))
    sim.add_argument("--reps", type=int)
    sim.add_argument("--config", help="flat key=value file; flags take precedence")
    sim.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    sim.add_argument("--split", dest="split", action="store_true", default=None,
                     help="include the split variant (default)")
    sim.add_argument("--no-split", dest="split", action="store_false")
    sim.set_defaults(func=cmd_simulate)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--x", help="design CSV for the first sample")
    data.add_argument("--y", help="trait CSV for the first sample")
    data.add_argument("--no-normalize", dest="normalize", action="store_false",
                      help="keep traits on their own scale instead of unit variance")
    data.add_argument("--center", action="store_true", help="center markers and traits first")

    est = sub.add_parser("estimate", parents=[common, data], help="estimate from CSV data")
    est.add_argument("--z", help="design CSV for the second sample (default: --x)")
    est.add_argument("--w", help="trait CSV for the second sample")
    est.add_argument("--traits", help="multi-column trait CSV sharing the --x design")
    est.add_argument("--split", dest="split", action="store_true", default=False,
                     help="split the quadratic terms (default: no split)")
    est.add_argument("--no-split", dest="split", action="store_false")
    est.set_defaults(func=cmd_estimate)

    ts = sub.add_parser("tstats", parents=[common, data], help="marginal t statistics")
    ts.set_defaults(func=cmd_tstats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "reps", None) is not None and args.reps < 1:
        print("error: reps must be ≥ 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ZeroColumnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CoheritError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
