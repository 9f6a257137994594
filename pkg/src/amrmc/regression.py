"""Quasi-regression estimators for single-period and Bermudan problems.

Coefficients are always formed as Psi^{-1} gamma_tilde with the *exact* Gram
matrix Psi; the sample second-moment matrix is never used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import BasisFamily, BasisSpec, eval_basis
from .moments import GramAnalysis, gram_analysis
from .paths import GENERATOR_METHOD, ExerciseGrid, ProcessKind, SeedCoordinates, sample_paths

PAYOFF_KINDS = ("call", "put", "identity", "zero", "power", "basis")


@dataclass(frozen=True)
class PayoffSpec:
    """Exercise values h_0, ..., h_m.

    ``kind`` is one of ``call``, ``put`` (need ``strike``), ``identity``,
    ``zero``, ``power`` (h(s) = s ** exponent) or ``basis`` (h_n is the basis
    combination ``coefficients[n - 1]`` at date n; h_0 = 0). ``dates`` lists
    the date indices 0..m at which exercise is allowed; elsewhere h_n = 0.
    Every value is multiplied by ``scale``; discounting, if any, belongs there
    or in the functions themselves.
    """

    kind: str
    strike: float = 0.0
    exponent: float = 1.0
    coefficients: tuple[tuple[float, ...], ...] | None = None
    basis: BasisSpec | None = None
    dates: tuple[int, ...] | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in PAYOFF_KINDS:
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if self.kind == "basis":
            if self.coefficients is None or self.basis is None:
                raise ValueError("basis payoff needs coefficients and a basis")
            coeffs = tuple(tuple(float(a) for a in row) for row in self.coefficients)
            if any(len(row) != self.basis.size for row in coeffs):
                raise ValueError("basis payoff coefficients must have length K+1")
            object.__setattr__(self, "coefficients", coeffs)
        if self.dates is not None:
            object.__setattr__(self, "dates", tuple(sorted(int(d) for d in self.dates)))

    def active(self, n: int) -> bool:
        return self.dates is None or n in self.dates

    def value(self, n: int, t: float, states) -> np.ndarray:
        h = self._raw(n, t, np.asarray(states, dtype=float))
        return h if self.scale == 1.0 else self.scale * h

    def _raw(self, n, t, s):
        if not self.active(n) or self.kind == "zero":
            return np.zeros_like(s)
        if self.kind == "call":
            return np.maximum(s - self.strike, 0.0)
        if self.kind == "put":
            return np.maximum(self.strike - s, 0.0)
        if self.kind == "identity":
            return s.copy()
        if self.kind == "power":
            return np.power(s, self.exponent)
        if n == 0:
            return np.zeros_like(s)
        return eval_basis(self.basis, t, s) @ np.asarray(self.coefficients[n - 1])

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in ("call", "put"):
            d["strike"] = self.strike
        if self.kind == "power":
            d["exponent"] = self.exponent
        if self.kind == "basis":
            d["coefficients"] = [list(r) for r in self.coefficients]
            d["basis"] = {"family": self.basis.family.value, "K": self.basis.order}
        if self.dates is not None:
            d["dates"] = list(self.dates)
        if self.scale != 1.0:
            d["scale"] = self.scale
        return d


@dataclass(frozen=True)
class SinglePeriodTarget:
    """Y = sum_k a_k psi_k(S(t2)) regressed on psi(S(t1))."""

    basis: BasisSpec
    t1: float
    t2: float
    coefficients: np.ndarray
    true_beta: np.ndarray

    @property
    def process(self) -> ProcessKind:
        if self.basis.family is BasisFamily.HERMITE:
            return ProcessKind.BROWNIAN
        return ProcessKind.GEOMETRIC

    @property
    def rho(self) -> float:
        return self.t2 / self.t1

    def y(self, s2: np.ndarray) -> np.ndarray:
        a = self.coefficients
        nz = np.flatnonzero(a)
        if len(nz) == 1 and nz[0] == self.basis.order:
            # the worst-case target only needs the top basis function
            return a[-1] * eval_basis(self.basis, self.t2, s2)[..., -1]
        return eval_basis(self.basis, self.t2, s2) @ a


def implied_beta(basis: BasisSpec, t1: float, t2: float, coefficients) -> np.ndarray:
    """Exact projection coefficients of sum_k a_k psi_k(S(t2)) onto psi(S(t1))."""
    a = np.asarray(coefficients, dtype=float)
    if basis.family is BasisFamily.HERMITE:
        k = np.arange(basis.size)
        return a * (t2 / t1) ** (-k / 2)
    return a.copy()


@dataclass
class CoefficientSet:
    basis: BasisSpec
    grid: ExerciseGrid
    process: ProcessKind
    coefficients: dict[int, np.ndarray]
    continuation_estimate: float
    exercise_value_0: float
    n_paths: dict[int, int]
    seeds: dict[int, SeedCoordinates]
    shared_paths: bool = False
    generator: str = ""
    continuation_stderr: float = math.nan

    @property
    def value_estimate(self) -> float:
        return max(self.exercise_value_0, self.continuation_estimate)

    def to_dict(self) -> dict:
        return {
            "process": self.process.value,
            "times": list(self.grid.times),
            "basis": {"family": self.basis.family.value, "K": self.basis.order},
            "coefficients": {str(n): c.tolist() for n, c in sorted(self.coefficients.items())},
            "value_estimate": self.value_estimate,
            "continuation_estimate": self.continuation_estimate,
            "exercise_value_0": self.exercise_value_0,
            "continuation_stderr": self.continuation_stderr,
            "n_paths": {str(n): v for n, v in sorted(self.n_paths.items())},
            "seeds": {str(n): s.to_dict() for n, s in sorted(self.seeds.items())},
            "shared_paths": self.shared_paths,
            "generator": self.generator,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoefficientSet":
        basis = BasisSpec(d["basis"]["family"], d["basis"]["K"])
        return cls(
            basis=basis,
            grid=ExerciseGrid(tuple(d["times"])),
            process=ProcessKind.parse(d["process"]),
            coefficients={int(n): np.asarray(c, dtype=float) for n, c in d["coefficients"].items()},
            continuation_estimate=float(d["continuation_estimate"]),
            exercise_value_0=float(d["exercise_value_0"]),
            n_paths={int(n): int(v) for n, v in d["n_paths"].items()},
            seeds={int(n): SeedCoordinates.from_dict(s) for n, s in d["seeds"].items()},
            shared_paths=bool(d.get("shared_paths", False)),
            generator=d.get("generator", ""),
            continuation_stderr=float(d.get("continuation_stderr", math.nan)),
        )


def project(y_values, basis_values, gram: GramAnalysis) -> np.ndarray:
    """Quasi-regression coefficients Psi^{-1} (1/N) sum_i y_i psi(S_i)."""
    y = np.asarray(y_values, dtype=float)
    psi = np.asarray(basis_values, dtype=float)
    if psi.ndim != 2 or y.ndim != 1 or psi.shape[0] != y.shape[0]:
        raise ValueError(f"shape mismatch: y {y.shape}, basis values {psi.shape}")
    if psi.shape[0] < 1:
        raise ValueError("need at least one sample")
    if psi.shape[1] != gram.order + 1:
        raise ValueError("basis values do not match the Gram matrix order")
    inverse = gram.require_inverse()
    gamma = y @ psi / y.shape[0]
    if gram.family is BasisFamily.HERMITE:
        return gamma
    return inverse @ gamma


def continuation_eval(coefficients, basis: BasisSpec, t: float, states) -> np.ndarray:
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape != (basis.size,):
        raise ValueError(f"expected {basis.size} coefficients, got {coefficients.shape}")
    return eval_basis(basis, t, states) @ coefficients


def _batch_sizes(n_paths, m: int) -> dict[int, int]:
    if np.ndim(n_paths) == 0:
        sizes = {n: int(n_paths) for n in range(1, m + 1)}
    else:
        if len(n_paths) != m:
            raise ValueError(f"need one batch size per date (m={m})")
        sizes = {n: int(v) for n, v in zip(range(1, m + 1), n_paths)}
    if any(v < 1 for v in sizes.values()):
        raise ValueError("batch sizes must be positive")
    return sizes


def price_bermudan(
    process: "ProcessKind | str",
    grid: ExerciseGrid,
    payoff: PayoffSpec,
    basis: BasisSpec,
    n_paths: "int | Sequence[int]",
    seed: SeedCoordinates,
    *,
    shared_paths: bool = False,
    workers: int | None = None,
) -> CoefficientSet:
    """Backward induction with quasi-regression at every exercise date.

    Date n (1 <= n < m) regresses max(h_{n+1}, C_hat_{n+1})(S_{n+1}) on
    psi_n(S_n) over a fresh batch of paths keyed by ``seed.child(n)``, with
    C_hat_m = 0 and V_hat_m = h_m. The time-0 continuation value is the mean
    of V_hat_1 over one more fresh batch, keyed by ``seed.child(0)``.

    ``n_paths`` is one batch size or a sequence whose entry n-1 is the batch
    used when estimating at date n (entry 0 for the time-0 average). With
    ``shared_paths`` a single batch keyed by ``seed.child(0)`` serves every
    date instead.

    Raises
    ------
    GramConditioningError
        If the Gram matrix at any date t_1..t_{m-1} cannot be inverted; the
        exception carries the offending date index.
    """
    process = ProcessKind.parse(process)
    m = grid.m
    sizes = _batch_sizes(n_paths, m)
    times = grid.times
    grams = {n: gram_analysis(basis, times[n - 1]) for n in range(1, m)}
    for n, g in grams.items():
        g.require_inverse(date_index=n)

    coeffs: dict[int, np.ndarray] = {}
    seeds: dict[int, SeedCoordinates] = {}

    def v_hat(n, states):
        h = payoff.value(n, times[n - 1], states)
        if n == m:
            return h
        return np.maximum(h, continuation_eval(coeffs[n], basis, times[n - 1], states))

    shared = None
    if shared_paths:
        size = max(sizes.values())
        sizes = {n: size for n in sizes}
        seeds[0] = seed.child(0)
        shared = sample_paths(process, grid, size, seeds[0], workers=workers,
                              chunks=workers or 1).states

    for n in range(m - 1, 0, -1):
        if shared is None:
            seeds[n] = seed.child(n)
            states = sample_paths(process, grid.prefix(n + 1), sizes[n], seeds[n],
                                  workers=workers, chunks=workers or 1).states
        else:
            states = shared
        y = v_hat(n + 1, states[:, n])
        psi = eval_basis(basis, times[n - 1], states[:, n - 1])
        coeffs[n] = project(y, psi, grams[n])

    if shared is None:
        seeds[0] = seed.child(0)
        first = sample_paths(process, grid.prefix(1), sizes[1], seeds[0],
                             workers=workers, chunks=workers or 1).states[:, 0]
    else:
        first = shared[:, 0]
    v1 = v_hat(1, first)
    c0 = float(np.mean(v1))
    c0_se = float(np.std(v1, ddof=1) / math.sqrt(len(v1))) if len(v1) > 1 else math.nan
    h0 = float(payoff.value(0, 0.0, np.array([grid.initial_state(process)]))[0])
    return CoefficientSet(
        basis=basis, grid=grid, process=process, coefficients=coeffs,
        continuation_estimate=c0, exercise_value_0=h0, n_paths=sizes, seeds=seeds,
        shared_paths=shared_paths, generator=GENERATOR_METHOD, continuation_stderr=c0_se,
    )


# ---------------------------------------------------------------------------
# hypothesis checks


@dataclass
class ConditionCheck:
    name: str
    date: int | None
    index: int | None
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float
    status: str
    detail: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class AssumptionReport:
    probe_paths: int
    checks: list[ConditionCheck] = field(default_factory=list)
    second_moments: list[list[float]] = field(default_factory=list)
    fourth_moments: list[list[float]] = field(default_factory=list)

    def status(self, name: str) -> str:
        relevant = [c.status for c in self.checks if c.name == name]
        return "warn" if "warn" in relevant else "pass"

    def to_dict(self) -> dict:
        return {
            "probe_paths": self.probe_paths,
            "B1": self.status("B1"),
            "B3": self.status("B3"),
            "checks": [c.to_dict() for c in self.checks],
            "second_moments": self.second_moments,
            "fourth_moments": self.fourth_moments,
        }


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    with np.errstate(over="ignore", invalid="ignore"):
        mean = float(np.mean(x))
        se = float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.inf
    return mean, se


def check_assumptions(
    process: "ProcessKind | str",
    grid: ExerciseGrid,
    payoff: PayoffSpec,
    basis: BasisSpec,
    probe_paths: int,
    seed: SeedCoordinates,
) -> AssumptionReport:
    """Monte Carlo probe of the multiperiod moment-growth conditions B1 and B3.

    B1: E[psi_{nk}^2] and E[psi_{nk}^4] nondecreasing in n and in k; a step
    is flagged only when the drop exceeds four combined standard errors.
    B3: E[h_n^4(S_n)] <= (t_n / t_{n-1})^{2K} E[psi_{nK}^4(S_n)] at each
    date n = 1..m, with t_0 = 0 so the factor is infinite at n = 1 for K > 0.
    Violations produce "warn", never an exception.
    """
    if probe_paths < 10_000:
        raise ValueError("probe_paths must be at least 10^4")
    process = ProcessKind.parse(process)
    states = sample_paths(process, grid, probe_paths, seed).states
    K = basis.order
    report = AssumptionReport(probe_paths)
    m2 = np.empty((grid.m, K + 1, 2))
    m4 = np.empty((grid.m, K + 1, 2))
    for n in range(1, grid.m + 1):
        t = grid.times[n - 1]
        psi = eval_basis(basis, t, states[:, n - 1])
        for k in range(K + 1):
            m2[n - 1, k] = _mean_se(psi[:, k] ** 2)
            m4[n - 1, k] = _mean_se(psi[:, k] ** 4)

        lhs, lhs_se = _mean_se(payoff.value(n, t, states[:, n - 1]) ** 4)
        t_prev = grid.times[n - 2] if n >= 2 else 0.0
        if K == 0:
            factor = 1.0
        elif t_prev == 0.0:
            factor = math.inf
        else:
            factor = (t / t_prev) ** (2 * K)
        with np.errstate(over="ignore", invalid="ignore"):
            rhs = factor * m4[n - 1, K, 0]
            rhs_se = factor * m4[n - 1, K, 1] if math.isfinite(factor) else 0.0
        ok = lhs <= rhs
        report.checks.append(ConditionCheck("B3", n, K, lhs, lhs_se, float(rhs), float(rhs_se),
                                            "pass" if ok else "warn"))

    for moments, label in ((m2, "second"), (m4, "fourth")):
        for n in range(grid.m):
            for k in range(K + 1):
                here, se_here = moments[n, k]
                for nn, kk in ((n + 1, k), (n, k + 1)):
                    if nn >= grid.m or kk > K:
                        continue
                    there, se_there = moments[nn, kk]
                    tol = 4.0 * math.hypot(se_here, se_there)
                    ok = not there < here - tol
                    report.checks.append(ConditionCheck(
                        "B1", n + 1, k, float(here), float(se_here), float(there),
                        float(se_there), "pass" if ok else "warn",
                        f"{label} moment ({n + 1},{k}) -> ({nn + 1},{kk})"))
    report.second_moments = m2[..., 0].tolist()
    report.fourth_moments = m4[..., 0].tolist()
    return report
