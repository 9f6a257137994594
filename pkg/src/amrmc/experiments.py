"""Paths-versus-basis-size experiments.

A sweep evaluates the worst-case single-period target on a grid of basis
orders K and path counts N. Each cell repeats the regression over independent
batches and reports the batch mean, standard error and median of
|beta_tilde - beta|^2 next to the exact expected value.

Seeds: batch b of cell (K, N) uses labels ``(K, N, b)`` under the sweep's base
seed. Cells at or above ``scaled_threshold`` are estimated once per K at
``N_ref`` paths (labels ``(K, N_ref, b)``) and rescaled by N_ref / N, which is
exact in expectation because the error variance is proportional to 1/N.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .basis import BasisFamily, BasisSpec, eval_basis
from .moments import (
    GramConditioningError,
    critical_curve,
    expected_mse_closed_form,
    gram_analysis,
    theorem3_bound,
)
from .paths import ExerciseGrid, ProcessKind, SeedCoordinates, sample_paths
from .regression import (
    CoefficientSet,
    PayoffSpec,
    SinglePeriodTarget,
    price_bermudan,
    project,
)

DEFAULT_N_VALUES = (500, 1000, 2000, 4000, 8000, 16000, 32000, 64000, 128000)
DEFAULT_K_VALUES = tuple(range(1, 13))

CSV_HEADER = (
    "setting", "K", "N", "batches", "method", "mse_mean", "mse_stderr", "mse_median",
    "expected_mse", "critical_K_lower", "critical_K_upper", "regime",
)


def worst_case_target(setting: str, K: int, t1: float = 1.0, t2: float = 2.0) -> SinglePeriodTarget:
    """Target whose projection coefficient vector is the unit vector e_K.

    Normal: Y = rho^{K/2} psi_K(S(t2)) with Hermite bases. Lognormal:
    Y = psi_K(S(t2)) = exp(K W(t2) - K^2 t2 / 2).
    """
    if not 0 < t1 < t2:
        raise ValueError("need 0 < t1 < t2")
    a = np.zeros(K + 1)
    beta = np.zeros(K + 1)
    beta[K] = 1.0
    if setting == "normal":
        a[K] = (t2 / t1) ** (K / 2)
        basis = BasisSpec(BasisFamily.HERMITE, K)
    elif setting == "lognormal":
        a[K] = 1.0
        basis = BasisSpec(BasisFamily.EXP_MARTINGALE, K)
    else:
        raise ValueError(f"unknown setting {setting!r}")
    return SinglePeriodTarget(basis, float(t1), float(t2), a, beta)


def _setting_of(target: SinglePeriodTarget) -> str:
    return "normal" if target.basis.family is BasisFamily.HERMITE else "lognormal"


def closed_form_for(target: SinglePeriodTarget, N: int) -> float:
    try:
        return expected_mse_closed_form(_setting_of(target), target.basis.order, N,
                                        t1=target.t1, t2=target.t2)
    except GramConditioningError:
        return math.nan


def batch_squared_errors(
    target: SinglePeriodTarget,
    N: int,
    batches: int,
    seed: SeedCoordinates,
    *,
    workers: int | None = None,
) -> np.ndarray:
    """|beta_tilde - beta|^2 for batches b = 0..batches-1 keyed by seed.child(b)."""
    gram = gram_analysis(target.basis, target.t1)
    gram.require_inverse()
    grid = ExerciseGrid((target.t1, target.t2))
    process = target.process

    def one(b):
        states = sample_paths(process, grid, N, seed.child(b)).states
        psi = eval_basis(target.basis, target.t1, states[:, 0])
        beta = project(target.y(states[:, 1]), psi, gram)
        diff = beta - target.true_beta
        return float(diff @ diff)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, range(batches)))
    else:
        out = [one(b) for b in range(batches)]
    return np.asarray(out)


@dataclass
class MseCell:
    setting: str
    K: int
    N: int
    batches: int
    method: str
    mse_mean: float
    mse_stderr: float
    mse_median: float
    expected_mse: float
    critical_K_lower: float = math.nan
    critical_K_upper: float = math.nan
    regime: str = ""
    available: bool = True

    def csv_row(self) -> list[str]:
        def g(x):
            return f"{x:.6g}"

        return [self.setting, str(self.K), str(self.N), str(self.batches), self.method,
                g(self.mse_mean), g(self.mse_stderr), g(self.mse_median), g(self.expected_mse),
                g(self.critical_K_lower), g(self.critical_K_upper), self.regime]

    @classmethod
    def from_csv_row(cls, row: Sequence[str]) -> "MseCell":
        if len(row) != len(CSV_HEADER):
            raise ValueError(f"expected {len(CSV_HEADER)} fields, got {len(row)}")
        d = dict(zip(CSV_HEADER, row))
        mean = float(d["mse_mean"])
        return cls(
            setting=d["setting"], K=int(d["K"]), N=int(d["N"]), batches=int(d["batches"]),
            method=d["method"], mse_mean=mean, mse_stderr=float(d["mse_stderr"]),
            mse_median=float(d["mse_median"]), expected_mse=float(d["expected_mse"]),
            critical_K_lower=float(d["critical_K_lower"]),
            critical_K_upper=float(d["critical_K_upper"]), regime=d["regime"],
            available=not math.isnan(mean),
        )


def _summarize(errors: np.ndarray, scale: float = 1.0) -> tuple[float, float, float]:
    mean = float(np.mean(errors)) * scale
    stderr = float(np.std(errors, ddof=1) / math.sqrt(len(errors))) * scale
    median = float(np.median(errors)) * scale
    return mean, stderr, median


def estimate_mse_cell(
    target: SinglePeriodTarget,
    N: int,
    batches: int,
    method: str,
    seed: SeedCoordinates,
    *,
    n_ref: int = 500_000,
    workers: int | None = None,
    raw_errors: np.ndarray | None = None,
) -> MseCell:
    """Batch estimate of MSE(beta_tilde) for one (K, N) cell.

    ``direct`` runs ``batches`` regressions of N paths keyed by
    ``seed.child(b)``. ``scaled`` runs them at ``n_ref`` paths instead and
    multiplies mean, standard error and median by n_ref / N; ``raw_errors``
    may supply those n_ref-path errors when they were already computed.
    A Gram failure yields an unavailable cell rather than an exception.
    """
    if batches < 2:
        raise ValueError("need at least two batches for a standard error")
    if method not in ("direct", "scaled"):
        raise ValueError(f"unknown method {method!r}")
    setting = _setting_of(target)
    K = target.basis.order
    runs = N if method == "direct" else n_ref
    expected = closed_form_for(target, N)
    try:
        errors = raw_errors if raw_errors is not None else batch_squared_errors(
            target, runs, batches, seed, workers=workers)
    except GramConditioningError:
        nan = math.nan
        return MseCell(setting, K, N, batches, method, nan, nan, nan, expected, available=False)
    mean, se, median = _summarize(errors, runs / N)
    return MseCell(setting, K, N, batches, method, mean, se, median, expected)


@dataclass
class SweepGrid:
    setting: str
    K_values: tuple[int, ...]
    N_values: tuple[int, ...]
    base_seed: int
    batches: int = 5000
    t1: float = 1.0
    t2: float = 2.0
    scaled_threshold: int = 7
    N_ref: int = 500_000

    def __post_init__(self):
        self.K_values = tuple(int(k) for k in self.K_values)
        self.N_values = tuple(int(n) for n in self.N_values)
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if self.setting not in ("normal", "lognormal"):
            out.append(f"setting must be 'normal' or 'lognormal', got {self.setting!r}")
        if self.batches < 2:
            out.append("batches must be at least 2")
        if not 0 < self.t1 < self.t2:
            out.append("need 0 < t1 < t2")
        if any(k < 0 for k in self.K_values):
            out.append("K values must be nonnegative")
        if any(n < 2 for n in self.N_values):
            out.append("N values must be at least 2")
        if (any(k >= self.scaled_threshold for k in self.K_values) and self.N_values
                and self.N_ref < max(self.N_values)):
            out.append("N_ref must be at least max(N_values) when the scaled method is used")
        return out

    def method_for(self, K: int) -> str:
        return "scaled" if K >= self.scaled_threshold else "direct"

    def cell_seed(self, K: int, N: int) -> SeedCoordinates:
        runs = N if self.method_for(K) == "direct" else self.N_ref
        return SeedCoordinates(self.base_seed, (K, runs))

    def thresholds(self, N: int) -> tuple[float, float]:
        if self.setting == "normal":
            return critical_curve("normal-single", N, rho=self.t2 / self.t1)
        return critical_curve("lognormal-single", N, t1=self.t1, t2=self.t2)


def classify_regime(K: float, lower: float, upper: float) -> str:
    if K < lower:
        return "subcritical"
    if K > upper:
        return "supercritical"
    return "band"


def run_cell(grid: SweepGrid, K: int, N: int, *, workers: int | None = None,
             raw_errors: np.ndarray | None = None) -> MseCell:
    """One sweep cell, computed exactly as :func:`run_sweep` computes it."""
    target = worst_case_target(grid.setting, K, grid.t1, grid.t2)
    cell = estimate_mse_cell(target, N, grid.batches, grid.method_for(K), grid.cell_seed(K, N),
                             n_ref=grid.N_ref, workers=workers, raw_errors=raw_errors)
    lo, hi = grid.thresholds(N)
    cell.critical_K_lower, cell.critical_K_upper = lo, hi
    cell.regime = classify_regime(K, lo, hi)
    return cell


@dataclass
class SweepResult:
    grid: SweepGrid
    cells: list[MseCell] = field(default_factory=list)

    def cell(self, K: int, N: int) -> MseCell:
        for c in self.cells:
            if c.K == K and c.N == N:
                return c
        raise KeyError((K, N))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for c in self.cells:
            writer.writerow(c.csv_row())
        return buf.getvalue()

    def to_json_dict(self) -> dict:
        return {"grid": asdict(self.grid), "cells": [asdict(c) for c in self.cells]}

    def plot_data(self, samples: int = 50) -> dict:
        ns = self.grid.N_values
        lo, hi = (min(ns), max(ns)) if ns else (2, 2)
        curve = []
        for n in np.geomspace(max(lo, 2), max(hi, 2), samples):
            k_lo, k_hi = self.grid.thresholds(float(n))
            curve.append({"N": float(n), "K_lower": k_lo, "K_upper": k_hi})
        return {
            "points": [{"K": c.K, "N": c.N, "mse_mean": c.mse_mean} for c in self.cells],
            "critical_curve": curve,
        }


def parse_csv(text: str) -> list[MseCell]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError("missing or unexpected CSV header")
    return [MseCell.from_csv_row(r) for r in rows[1:] if r]


def run_sweep(grid: SweepGrid, *, workers: int | None = None, progress=None) -> SweepResult:
    """Evaluate every (K, N) cell of the grid.

    Scaled cells of one K share a single N_ref run, exactly as if each had been
    computed alone.
    """
    result = SweepResult(grid)
    scaled_cache: dict[int, np.ndarray | None] = {}
    for K in grid.K_values:
        for N in grid.N_values:
            raw = None
            if grid.method_for(K) == "scaled":
                if K not in scaled_cache:
                    target = worst_case_target(grid.setting, K, grid.t1, grid.t2)
                    try:
                        scaled_cache[K] = batch_squared_errors(
                            target, grid.N_ref, grid.batches, grid.cell_seed(K, N),
                            workers=workers)
                    except GramConditioningError:
                        scaled_cache[K] = None
                raw = scaled_cache[K]
            cell = run_cell(grid, K, N, workers=workers, raw_errors=raw)
            result.cells.append(cell)
            if progress is not None:
                progress(cell)
    return result


# ---------------------------------------------------------------------------
# multiperiod studies


def continuation_error_norm(estimated, reference, basis: BasisSpec, t: float) -> float:
    """Weighted L2 distance sqrt((b - c)^T Psi(t) (b - c)) of two basis combinations."""
    b = np.asarray(estimated, dtype=float)
    c = np.asarray(reference, dtype=float)
    if b.shape != c.shape or b.shape != (basis.size,):
        raise ValueError("coefficient vectors must both have length K+1")
    d = b - c
    if basis.family is BasisFamily.HERMITE:
        return float(math.sqrt(d @ d))
    q = gram_analysis(basis, t).quadratic_form(d)
    return math.sqrt(max(q, 0.0))


@dataclass
class DateError:
    date: int
    t: float
    mean_sq_error: float
    stderr: float
    bound_upper: float
    log_bound_upper: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class MultiperiodStudy:
    N: int
    replications: int
    n_ref: int | None
    rows: list[DateError]
    reference: dict[int, list[float]]
    note: str = ""

    def row(self, date: int) -> DateError:
        return next(r for r in self.rows if r.date == date)

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "replications": self.replications,
            "n_ref": self.n_ref,
            "rows": [r.to_dict() for r in self.rows],
            "reference": {str(k): v for k, v in self.reference.items()},
            "note": self.note,
        }


def multiperiod_error_study(
    process: "ProcessKind | str",
    grid: ExerciseGrid,
    payoff: PayoffSpec,
    basis: BasisSpec,
    N: int,
    replications: int,
    seed: SeedCoordinates,
    *,
    n_ref: int | None = None,
    reference: "CoefficientSet | dict[int, Iterable[float]] | None" = None,
    workers: int | None = None,
) -> MultiperiodStudy:
    """Mean squared continuation error E||C_hat_n - C_n||_n^2 at each date.

    Replication r runs the pricer with ``seed.child(r + 1)``. Unless exact
    coefficients are passed as ``reference``, C_n is approximated by one run at
    ``n_ref`` (default 100 N) paths keyed by ``seed.child(0)``; its own sampling
    error, about n_ref / N times smaller, remains in the estimate.
    """
    if replications < 2:
        raise ValueError("need at least two replications")
    process = ProcessKind.parse(process)
    note = ""
    if reference is None:
        n_ref = n_ref or 100 * N
        if n_ref < 100 * N:
            raise ValueError("reference run needs at least 100 N paths")
        ref = price_bermudan(process, grid, payoff, basis, n_ref, seed.child(0),
                             workers=workers).coefficients
        note = f"reference from a single {n_ref}-path run; its error is about N/n_ref of the estimate"
    elif isinstance(reference, CoefficientSet):
        ref = reference.coefficients
        n_ref = max(reference.n_paths.values())
        note = "reference supplied as a coefficient set"
    else:
        ref = {int(k): np.asarray(v, dtype=float) for k, v in reference.items()}
        n_ref = None
        note = "exact reference coefficients supplied"

    m = grid.m
    sq = np.zeros((replications, m - 1))
    for r in range(replications):
        run = price_bermudan(process, grid, payoff, basis, N, seed.child(r + 1), workers=workers)
        for n in range(1, m):
            sq[r, n - 1] = continuation_error_norm(
                run.coefficients[n], ref[n], basis, grid.times[n - 1]) ** 2

    setting = "normal" if basis.family is BasisFamily.HERMITE else "lognormal"
    rows = []
    for n in range(1, m):
        col = sq[:, n - 1]
        bound = theorem3_bound(setting, m, n, basis.order, N, c=grid.max_ratio(),
                               t_m=grid.times[-1], t_1=grid.times[0])
        rows.append(DateError(
            date=n, t=grid.times[n - 1], mean_sq_error=float(col.mean()),
            stderr=float(col.std(ddof=1) / math.sqrt(replications)),
            bound_upper=bound.upper, log_bound_upper=bound.log_upper,
        ))
    return MultiperiodStudy(N, replications, n_ref, rows,
                            {n: np.asarray(ref[n]).tolist() for n in range(1, m)}, note)


def to_json(obj) -> str:
    return json.dumps(obj, indent=2)
