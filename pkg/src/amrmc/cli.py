"""Command-line front end.

Usage::

    amrmc SUBCOMMAND [--config PATH] [--out PATH] [--threads N] [--seed U64]
                     [--param KEY=JSON ...] [--show-config] [--progress]

Each subcommand reads a JSON document of parameters (``--config``; ``-`` for
standard input) whose keys are checked strictly. ``--param`` sets or
overrides single keys, with the value parsed as JSON when possible. Tables
(sweep, moments) are written as CSV, structured results (price, bounds, check)
as JSON and ``critical`` as plain numbers.

Exit codes: 0 success, 1 invalid configuration or parameters, 2 Gram matrix
conditioning failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass
from typing import Any, Callable

from . import experiments as ex
from .basis import BasisFamily, BasisSpec
from .moments import (
    GramConditioningError,
    critical_curve,
    expected_mse_closed_form,
    first_cross_moment_normal,
    fourth_cross_moment_normal,
    gram_analysis,
    lognormal_moments,
    theorem3_bound,
    worst_case_bounds_normal,
)
from .paths import ExerciseGrid, ProcessKind, SeedCoordinates
from .regression import PAYOFF_KINDS, PayoffSpec, check_assumptions, price_bermudan

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
SUBCOMMANDS = ("price", "sweep", "moments", "bounds", "critical", "check")
REQUIRED = object()


class ConfigError(ValueError):
    """Every problem found in a configuration document."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------------------
# field validators: each returns the normalized value or raises ValueError


def _int(lo=None):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, int):
            if isinstance(v, float) and v.is_integer():
                v = int(v)
            else:
                raise ValueError("must be an integer")
        if lo is not None and v < lo:
            raise ValueError(f"must be >= {lo}")
        return v
    return check


def _float(positive=False, lo=None):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValueError("must be a number")
        v = float(v)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        if positive and v <= 0:
            raise ValueError("must be positive")
        if lo is not None and v < lo:
            raise ValueError(f"must be >= {lo}")
        return v
    return check


def _choice(*options):
    def check(v):
        if v not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return v
    return check


def _list(item):
    def check(v):
        if not isinstance(v, list) or not v:
            raise ValueError("must be a nonempty list")
        return [item(x) for x in v]
    return check


def _bool(v):
    if not isinstance(v, bool):
        raise ValueError("must be true or false")
    return v


def _seed(v):
    v = _int(0)(v)
    if v >= 1 << 64:
        raise ValueError("must fit in 64 bits")
    return v


def _threads(v):
    if v == "auto":
        return v
    return _int(1)(v)


def _n_paths(v):
    if isinstance(v, list):
        return _list(_int(1))(v)
    return _int(1)(v)


def _basis(v):
    if not isinstance(v, dict):
        raise ValueError("must be an object with keys family, K")
    unknown = set(v) - {"family", "K"}
    if unknown:
        raise ValueError(f"unknown key(s) {sorted(unknown)}")
    if "K" not in v:
        raise ValueError("needs K")
    return {"family": BasisFamily.parse(v.get("family", "hermite")).value, "K": _int(0)(v["K"])}


_PAYOFF_KEYS = {"kind", "strike", "exponent", "coefficients", "dates", "scale"}


def _payoff(v):
    if not isinstance(v, dict):
        raise ValueError("must be an object")
    unknown = set(v) - _PAYOFF_KEYS
    if unknown:
        raise ValueError(f"unknown key(s) {sorted(unknown)}")
    out = dict(v)
    out["kind"] = _choice(*PAYOFF_KINDS)(v.get("kind"))
    for key in ("strike", "exponent", "scale"):
        if key in v:
            out[key] = _float()(v[key])
    if "dates" in v:
        out["dates"] = _list(_int(0))(v["dates"])
    if out["kind"] in ("call", "put") and "strike" not in v:
        raise ValueError(f"{out['kind']} payoff needs a strike")
    if out["kind"] == "basis":
        if "coefficients" not in v:
            raise ValueError("basis payoff needs coefficients")
        out["coefficients"] = _list(_list(_float()))(v["coefficients"])
    return out


_COMMON = {"base_seed": (_seed, REQUIRED), "output": (str, None), "threads": (_threads, None)}

_PRICER_FIELDS = {
    "process": (lambda v: ProcessKind.parse(v).value, REQUIRED),
    "times": (_list(_float(positive=True)), REQUIRED),
    "t0_state": (_float(), None),
    "payoff": (_payoff, REQUIRED),
    "basis": (_basis, REQUIRED),
}

SCHEMAS: dict[str, dict[str, tuple[Callable, Any]]] = {
    "price": {**_PRICER_FIELDS, "n_paths": (_n_paths, REQUIRED), "shared_paths": (_bool, False)},
    "check": {**_PRICER_FIELDS, "probe_paths": (_int(10_000), 10_000)},
    "sweep": {
        "setting": (_choice("normal", "lognormal"), "normal"),
        "K_values": (_list(_int(0)), list(ex.DEFAULT_K_VALUES)),
        "N_values": (_list(_int(2)), list(ex.DEFAULT_N_VALUES)),
        "batches": (_int(2), 5000),
        "t1": (_float(positive=True), 1.0),
        "t2": (_float(positive=True), 2.0),
        "scaled_threshold": (_int(0), 7),
        "N_ref": (_int(2), 500_000),
        "format": (_choice("csv", "json", "plot"), "csv"),
    },
    "moments": {
        "setting": (_choice("normal", "lognormal"), "normal"),
        "max_index": (_int(0), 6),
        "rho": (_float(lo=1.0), 2.0),
        "t1": (_float(positive=True), 1.0),
        "t2": (_float(positive=True), 2.0),
    },
    "bounds": {
        "kind": (_choice("worst_case_normal", "theorem3", "gram", "expected_mse"), REQUIRED),
        "setting": (_choice("normal", "lognormal"), "normal"),
        "K": (_int(0), None),
        "N": (_int(1), None),
        "rho": (_float(lo=1.0), None),
        "m": (_int(1), None),
        "n": (_int(1), None),
        "c": (_float(lo=1.0), None),
        "t_m": (_float(positive=True), None),
        "t_1": (_float(positive=True), None),
        "t": (_float(positive=True), None),
        "t1": (_float(positive=True), None),
        "t2": (_float(positive=True), None),
        "family": (lambda v: BasisFamily.parse(v).value, None),
    },
    "critical": {
        "setting": (_choice("normal", "lognormal", "normal-single", "lognormal-single",
                            "normal-multi", "lognormal-multi"), REQUIRED),
        "N": (lambda v: _list(_float(lo=2.0))(v if isinstance(v, list) else [v]), REQUIRED),
        "rho": (_float(lo=1.0), None),
        "t1": (_float(positive=True), None),
        "t2": (_float(positive=True), None),
        "m": (_int(1), None),
        "n": (_int(1), None),
        "c": (_float(lo=1.0), None),
        "t_m": (_float(positive=True), None),
        "t_prev": (_float(positive=True), None),
    },
}

# keys a bounds/critical computation needs beyond the schema defaults
_BOUNDS_NEEDS = {
    "worst_case_normal": ("K", "N", "rho"),
    "theorem3": ("m", "n", "K", "N", "c"),
    "gram": ("family", "K", "t"),
    "expected_mse": ("K", "N"),
}
_CRITICAL_NEEDS = {
    "normal": ("rho",), "normal-single": ("rho",),
    "lognormal": ("t1", "t2"), "lognormal-single": ("t1", "t2"),
    "normal-multi": ("m", "n", "c", "rho"),
    "lognormal-multi": ("m", "n", "t_m", "t_prev"),
}


@dataclass
class RunConfig:
    subcommand: str
    params: dict
    output: str | None = None
    threads: int | str | None = None

    @property
    def base_seed(self) -> int:
        return self.params["base_seed"]

    def workers(self) -> int:
        threads = self.threads
        if threads is None:
            env = os.environ.get("AMRMC_THREADS")
            threads = env.strip() if env else 1
            if threads != "auto":
                try:
                    threads = max(1, int(threads))
                except ValueError:
                    threads = 1
        if threads == "auto":
            return os.cpu_count() or 1
        return int(threads)

    def to_dict(self) -> dict:
        return {"subcommand": self.subcommand, **self.params}


def parse_config(document: "str | dict", subcommand: str | None = None) -> RunConfig:
    """Validate a JSON configuration document.

    All problems are collected and raised together as a :class:`ConfigError`.
    Defaults are filled in, so the returned config records every parameter the
    run will use.
    """
    if isinstance(document, str):
        try:
            doc = json.loads(document) if document.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError([f"malformed JSON: {exc}"]) from None
    else:
        doc = dict(document)
    if not isinstance(doc, dict):
        raise ConfigError(["configuration must be a JSON object"])
    doc = dict(doc)
    errors = []
    named = doc.pop("subcommand", None)
    if subcommand is None:
        subcommand = named
    elif named is not None and named != subcommand:
        errors.append(f"document is for subcommand {named!r}, not {subcommand!r}")
    if subcommand not in SCHEMAS:
        raise ConfigError(errors + [f"unknown or missing subcommand {subcommand!r}"])
    schema = {**_COMMON, **SCHEMAS[subcommand]}

    for key in doc:
        if key not in schema:
            errors.append(f"unknown key {key!r}")
    params = {}
    for key, (check, default) in schema.items():
        if key not in doc:
            if default is REQUIRED:
                errors.append(f"{key} required")
            else:
                params[key] = default
            continue
        try:
            params[key] = check(doc[key])
        except ValueError as exc:
            errors.append(f"{key}: {exc}")

    if not errors:
        errors.extend(_cross_checks(subcommand, params))
    if errors:
        raise ConfigError(errors)
    output = params.pop("output")
    threads = params.pop("threads")
    return RunConfig(subcommand, params, output, threads)


def _cross_checks(sub: str, p: dict) -> list[str]:
    errors = []
    if sub in ("price", "check"):
        try:
            grid = ExerciseGrid(tuple(p["times"]), p["t0_state"])
            grid.initial_state(ProcessKind.parse(p["process"]))
            _build_payoff(p)
        except ValueError as exc:
            errors.append(str(exc))
        if sub == "price" and isinstance(p["n_paths"], list) and len(p["n_paths"]) != len(p["times"]):
            errors.append("n_paths list needs one entry per exercise date")
    elif sub == "sweep":
        try:
            _sweep_grid(p)
        except ValueError as exc:
            errors.append(str(exc))
    elif sub == "moments":
        if p["setting"] == "lognormal" and not p["t1"] <= p["t2"]:
            errors.append("need t1 <= t2")
    elif sub == "bounds":
        needs = list(_BOUNDS_NEEDS[p["kind"]])
        if p["kind"] == "theorem3" and p["setting"] == "lognormal":
            needs += ["t_m", "t_1"]
        if p["kind"] == "expected_mse":
            needs += ["rho"] if p["setting"] == "normal" and p["t1"] is None else ["t1", "t2"]
        errors.extend(f"{k} required for bounds kind {p['kind']!r}" for k in needs if p[k] is None)
    elif sub == "critical":
        errors.extend(f"{k} required for setting {p['setting']!r}"
                      for k in _CRITICAL_NEEDS[p["setting"]] if p[k] is None)
    return errors


def _grid(p) -> ExerciseGrid:
    return ExerciseGrid(tuple(p["times"]), p["t0_state"])


def _basis_spec(p) -> BasisSpec:
    return BasisSpec(p["basis"]["family"], p["basis"]["K"])


def _build_payoff(p) -> PayoffSpec:
    d = dict(p["payoff"])
    kind = d.pop("kind")
    if "coefficients" in d:
        d["coefficients"] = tuple(tuple(r) for r in d["coefficients"])
        d["basis"] = _basis_spec(p)
    if "dates" in d:
        d["dates"] = tuple(d["dates"])
    return PayoffSpec(kind, **d)


def _sweep_grid(p) -> ex.SweepGrid:
    return ex.SweepGrid(
        setting=p["setting"], K_values=tuple(p["K_values"]), N_values=tuple(p["N_values"]),
        base_seed=p["base_seed"], batches=p["batches"], t1=p["t1"], t2=p["t2"],
        scaled_threshold=p["scaled_threshold"], N_ref=p["N_ref"],
    )


# ---------------------------------------------------------------------------
# serialization


def _json_safe(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "Infinity" if obj > 0 else "-Infinity"
        return obj
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):
        return _json_safe(obj.item())
    return obj


def dumps_json(obj) -> str:
    # repr-based float output is the shortest string that round-trips exactly
    return json.dumps(_json_safe(obj), indent=2, allow_nan=False) + "\n"


def _g6(x: float) -> str:
    return f"{x:.6g}"


# ---------------------------------------------------------------------------
# subcommands: each returns the text to write


def _run_price(cfg: RunConfig, log) -> str:
    p = cfg.params
    result = price_bermudan(p["process"], _grid(p), _build_payoff(p), _basis_spec(p),
                            p["n_paths"], SeedCoordinates(cfg.base_seed),
                            shared_paths=p["shared_paths"], workers=cfg.workers())
    return dumps_json({"config": cfg.to_dict(), "result": result.to_dict()})


def _run_check(cfg: RunConfig, log) -> str:
    p = cfg.params
    report = check_assumptions(p["process"], _grid(p), _build_payoff(p), _basis_spec(p),
                               p["probe_paths"], SeedCoordinates(cfg.base_seed))
    return dumps_json({"config": cfg.to_dict(), "result": report.to_dict()})


def _run_sweep(cfg: RunConfig, log) -> str:
    grid = _sweep_grid(cfg.params)

    def progress(cell):
        log(f"cell K={cell.K} N={cell.N} method={cell.method} mse_mean={cell.mse_mean:.6g}")

    result = ex.run_sweep(grid, workers=cfg.workers(), progress=progress)
    fmt = cfg.params["format"]
    if fmt == "csv":
        return result.to_csv()
    if fmt == "json":
        return dumps_json({"config": cfg.to_dict(), **result.to_json_dict()})
    return dumps_json(result.plot_data())


def _run_moments(cfg: RunConfig, log) -> str:
    p = cfg.params
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["setting", "k1", "k2", "first_moment", "fourth_moment"])
    n = p["max_index"]
    for k1 in range(n + 1):
        for k2 in range(n + 1):
            if p["setting"] == "normal":
                first = first_cross_moment_normal(k1, k2, p["rho"])
                fourth = fourth_cross_moment_normal(k1, k2, p["rho"])
            else:
                mom = lognormal_moments(k1, k2, p["t1"], p["t2"])
                first, fourth = mom.first, mom.fourth
            writer.writerow([p["setting"], k1, k2, _g6(first), _g6(fourth)])
    return buf.getvalue()


def _run_bounds(cfg: RunConfig, log) -> str:
    p = cfg.params
    kind = p["kind"]
    if kind == "worst_case_normal":
        out = worst_case_bounds_normal(p["K"], p["N"], p["rho"]).to_dict()
    elif kind == "theorem3":
        out = theorem3_bound(p["setting"], p["m"], p["n"], p["K"], p["N"], c=p["c"],
                             t_m=p["t_m"], t_1=p["t_1"]).to_dict()
    elif kind == "gram":
        g = gram_analysis(BasisSpec(p["family"], p["K"]), p["t"])
        if g.refused:
            raise GramConditioningError(g.note or "Gram matrix refused", order=p["K"], t=p["t"],
                                        condition=g.condition_estimate)
        out = g.to_dict()
    else:
        value = expected_mse_closed_form(p["setting"], p["K"], p["N"], rho=p["rho"],
                                         t1=p["t1"], t2=p["t2"])
        out = {"kind": kind, "setting": p["setting"], "K": p["K"], "N": p["N"],
               "expected_mse": value}
    return dumps_json({"config": cfg.to_dict(), "result": out})


def _run_critical(cfg: RunConfig, log) -> str:
    p = cfg.params
    keys = _CRITICAL_NEEDS[p["setting"]]
    lines = []
    for n in p["N"]:
        lo, hi = critical_curve(p["setting"], n, **{k: p[k] for k in keys})
        lines.append(f"{lo:.3f}" if f"{lo:.3f}" == f"{hi:.3f}" else f"{lo:.3f} {hi:.3f}")
    return "\n".join(lines) + "\n"


RUNNERS = {
    "price": _run_price, "check": _run_check, "sweep": _run_sweep,
    "moments": _run_moments, "bounds": _run_bounds, "critical": _run_critical,
}


def dispatch(cfg: RunConfig, *, stdout=None, stderr=None, progress: bool = False) -> int:
    """Run a validated configuration and write its output; return the exit code."""
    stdout = stdout if stdout is not None else sys.stdout
    stderr = stderr if stderr is not None else sys.stderr

    def log(msg):
        if progress:
            print(msg, file=stderr, flush=True)

    if cfg.output:
        parent = os.path.dirname(os.path.abspath(cfg.output))
        if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
            print(f"error: cannot write to {cfg.output}", file=stderr)
            return EXIT_IO
    try:
        text = RUNNERS[cfg.subcommand](cfg, log)
    except GramConditioningError as exc:
        print(f"error: Gram matrix conditioning failure: {exc}", file=stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_INVALID
    try:
        if cfg.output:
            with open(cfg.output, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        else:
            stdout.write(text)
            stdout.flush()
    except OSError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_IO
    return EXIT_OK


def _parse_param(item: str) -> tuple[str, Any]:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ValueError(f"--param expects KEY=VALUE, got {item!r}")
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amrmc", description=__doc__.split("\n\n")[0])
    parser.add_argument("subcommand", nargs="?", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="JSON parameter document ('-' for stdin)")
    parser.add_argument("--out", help="output path (default: standard output)")
    parser.add_argument("--threads", help="worker cap, integer or 'auto' (env AMRMC_THREADS)")
    parser.add_argument("--seed", type=int, help="base seed, overrides the document")
    parser.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                        help="set one parameter; VALUE is parsed as JSON when possible")
    parser.add_argument("--show-config", action="store_true",
                        help="print the validated configuration with defaults and exit")
    parser.add_argument("--progress", action="store_true",
                        help="log progress lines to standard error")
    return parser


def main(argv=None, *, stdout=None, stderr=None) -> int:
    stdout = stdout if stdout is not None else sys.stdout
    stderr = stderr if stderr is not None else sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK

    doc: dict = {}
    if args.config:
        try:
            if args.config == "-":
                text = sys.stdin.read()
            else:
                with open(args.config, encoding="utf-8") as fh:
                    text = fh.read()
        except OSError as exc:
            print(f"error: cannot read config: {exc}", file=stderr)
            return EXIT_IO
        try:
            doc = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            print(f"error: malformed JSON: {exc}", file=stderr)
            return EXIT_INVALID
        if not isinstance(doc, dict):
            print("error: configuration must be a JSON object", file=stderr)
            return EXIT_INVALID
    try:
        for item in args.param:
            key, value = _parse_param(item)
            doc[key] = value
    except ValueError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_INVALID
    if args.seed is not None:
        doc["base_seed"] = args.seed
    if args.out is not None:
        doc["output"] = args.out
    if args.threads is not None:
        doc["threads"] = args.threads if args.threads == "auto" else _maybe_int(args.threads)

    try:
        cfg = parse_config(doc, args.subcommand)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"error: {err}", file=stderr)
        return EXIT_INVALID
    if args.show_config:
        stdout.write(dumps_json({**cfg.to_dict(), "output": cfg.output, "threads": cfg.threads}))
        return EXIT_OK
    return dispatch(cfg, stdout=stdout, stderr=stderr, progress=args.progress)


def _maybe_int(s: str):
    try:
        return int(s)
    except ValueError:
        return s


if __name__ == "__main__":
    sys.exit(main())
