"""Closed-form moments, Gram matrices and worst-case error bounds.

Combinatorial and exponential quantities are carried as logarithms and only
exponentiated on the way out; an overflow there becomes ``inf`` rather than an
exception.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .basis import BasisFamily, BasisSpec

MAX_CONDITION = 1e12

SINGLE_SETTINGS = ("normal-single", "lognormal-single")
MULTI_SETTINGS = ("normal-multi", "lognormal-multi")


class GramConditioningError(ArithmeticError):
    """The exact Gram matrix is too ill-conditioned to invert reliably."""

    def __init__(self, message: str, *, order: int | None = None, t: float | None = None,
                 date_index: int | None = None, condition: float | None = None):
        super().__init__(message)
        self.order = order
        self.t = t
        self.date_index = date_index
        self.condition = condition


# ---------------------------------------------------------------------------
# log-space helpers


def log_binom(n: int, k: int) -> float:
    if k < 0 or k > n:
        return -math.inf
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def logsumexp(values) -> float:
    values = [v for v in values if v != -math.inf]
    if not values:
        return -math.inf
    top = max(values)
    if top == math.inf:
        return math.inf
    return top + math.log(math.fsum(math.exp(v - top) for v in values))


def exp_or_inf(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not rho >= 1.0 or not math.isfinite(rho):
        raise ValueError(f"time ratio rho must be >= 1, got {rho}")
    return rho


# ---------------------------------------------------------------------------
# normal setting


def first_cross_moment_normal(k1: int, k2: int, rho: float) -> float:
    """E[psi_{2,k2}(S_2) psi_{1,k1}(S_1)] for normalized Hermite bases."""
    rho = _check_rho(rho)
    if k1 != k2:
        return 0.0
    return rho ** (-k1 / 2)


def log_fourth_term(k1: int, k2: int, k: int, rho: float) -> float:
    return -k * math.log(rho) + log_binom(2 * k, k) + log_binom(k1, k) + log_binom(k2, k)


def log_fourth_cross_moment_normal(k1: int, k2: int, rho: float) -> float:
    rho = _check_rho(rho)
    return logsumexp(log_fourth_term(k1, k2, k, rho) for k in range(min(k1, k2) + 1))


def fourth_cross_moment_normal(k1: int, k2: int, rho: float) -> float:
    """E[psi_{2,k2}(S_2)^2 psi_{1,k1}(S_1)^2]; a sum of rho^-k C(2k,k) C(k1,k) C(k2,k)."""
    return exp_or_inf(log_fourth_cross_moment_normal(k1, k2, rho))


def c_rho(rho: float) -> float:
    return 2.0 * math.log(2.0 + math.sqrt(_check_rho(rho)))


def k_star(K: int, rho: float) -> tuple[int, list[float]]:
    """Index of the largest summand of rho^-k C(2k,k) C(K,k)^2.

    Returns ``(k_star, ratios)`` where ``ratios[k]`` is the ratio of summand
    k+1 to summand k, k = 0..K-1. The ratio decreases in k, so the first k with
    ratio <= 1 is the (smallest) maximizer.
    """
    rho = _check_rho(rho)
    if K < 0:
        raise ValueError("K must be nonnegative")
    ratios = [2.0 * (2 * k + 1) * (K - k) ** 2 / (rho * (k + 1) ** 3) for k in range(K)]
    ks = next((k for k, r in enumerate(ratios) if r <= 1.0), K)
    return ks, ratios


def log_dominant_summand(K: int, rho: float) -> tuple[int, float]:
    ks, _ = k_star(K, rho)
    return ks, log_fourth_term(K, K, ks, rho)


# ---------------------------------------------------------------------------
# critical growth curves


def critical_curve(setting: str, N: float, **params) -> tuple[float, float]:
    """(K_lower, K_upper): convergence and divergence thresholds at delta = 0.

    Parameters by setting:

    ``normal-single``: ``rho``.
    ``lognormal-single``: ``t1``, ``t2``.
    ``normal-multi``: ``m``, ``n``, ``c`` and ``rho`` (= t_m / t_{m-1}).
    ``lognormal-multi``: ``m``, ``n``, ``t_m``, ``t_prev`` (= t_{m-1}).
    """
    if not N >= 2:
        raise ValueError("N must be at least 2")
    log_n = math.log(N)
    if setting in ("normal", "normal-single"):
        k = log_n / c_rho(params["rho"])
        return k, k
    if setting in ("lognormal", "lognormal-single"):
        t1, t2 = float(params["t1"]), float(params["t2"])
        if not 0 < t1 < t2:
            raise ValueError("need 0 < t1 < t2")
        return math.sqrt(log_n / (5 * t1 + t2)), math.sqrt(log_n / (3 * t1 + t2))
    if setting in ("normal-multi", "lognormal-multi"):
        m, n = int(params["m"]), int(params["n"])
        if not m > n >= 1:
            raise ValueError("need m > n >= 1")
        if setting == "normal-multi":
            c = float(params["c"])
            if not c >= 1:
                raise ValueError("date ratio c must be >= 1")
            lower = log_n / ((m - n) * (2 * math.log(3.0) + math.log(c)))
            return lower, log_n / c_rho(params["rho"])
        tm, tp = float(params["t_m"]), float(params["t_prev"])
        if not 0 < tp < tm:
            raise ValueError("need 0 < t_prev < t_m")
        lower = math.sqrt(log_n / ((6 * (m - n) + 2) * tm))
        # the single-period divergence rate at the last step: 3 t_{m-1} + t_m
        return lower, math.sqrt(log_n / (3 * tp + tm))
    raise ValueError(f"unknown setting {setting!r}")


# ---------------------------------------------------------------------------
# Gram matrices


def vandermonde_log_det(K: int, t: float) -> float:
    """log prod_{0<=q<r<=K} (e^{rt} - e^{qt})."""
    return math.fsum(
        q * t + math.log(math.expm1((r - q) * t)) for r in range(K + 1) for q in range(r)
    )


def lemma4_constant(t: float) -> float:
    """C(t) = exp(-2e / (e^t - 1)^2)."""
    return math.exp(-2 * math.e / math.expm1(t) ** 2)


def log_gram_norm_bound(K: int, t: float) -> float:
    return 2 * math.log(K + 1) + 2 * K * K * t


def log_gram_inverse_norm_bound(K: int, t: float) -> float:
    """log of C(t)^-1 K (K+1) (e^t / (e^t - 1))^K; -inf at K = 0."""
    if K == 0:
        return -math.inf
    return (2 * math.e / math.expm1(t) ** 2 + math.log(K) + math.log(K + 1)
            + K * (t - math.log(math.expm1(t))))


@dataclass(frozen=True, eq=False)
class GramAnalysis:
    family: BasisFamily
    order: int
    t: float
    matrix: np.ndarray
    log_det: float
    det_sign: int
    log_det_numeric: float | None
    inverse: np.ndarray | None
    norm: float
    log_norm: float
    inverse_norm: float | None
    condition_estimate: float
    log_norm_bound: float | None = None
    log_inverse_norm_bound: float | None = None
    refused: bool = False
    note: str = ""

    @property
    def determinant(self) -> float:
        return self.det_sign * exp_or_inf(self.log_det)

    def require_inverse(self, date_index: int | None = None) -> np.ndarray:
        if self.inverse is None:
            where = f" at date index {date_index}" if date_index is not None else ""
            raise GramConditioningError(
                f"Gram matrix for K={self.order}, t={self.t:g}{where} refused: {self.note}",
                order=self.order, t=self.t, date_index=date_index,
                condition=self.condition_estimate,
            )
        return self.inverse

    def quadratic_form(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(v @ self.matrix @ v)

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else a.tolist()

        return {
            "family": self.family.value,
            "K": self.order,
            "t": self.t,
            "matrix": arr(self.matrix),
            "log_det": self.log_det,
            "det_sign": self.det_sign,
            "log_det_numeric": self.log_det_numeric,
            "inverse": arr(self.inverse),
            "norm": self.norm,
            "log_norm": self.log_norm,
            "inverse_norm": self.inverse_norm,
            "condition_estimate": self.condition_estimate,
            "log_norm_bound": self.log_norm_bound,
            "log_inverse_norm_bound": self.log_inverse_norm_bound,
            "refused": self.refused,
            "note": self.note,
        }


def _readonly(a):
    if a is not None:
        a.setflags(write=False)
    return a


@functools.lru_cache(maxsize=256)
def _gram_cached(family: BasisFamily, K: int, t: float, max_condition: float) -> GramAnalysis:
    if family is BasisFamily.HERMITE:
        eye = np.eye(K + 1)
        root = math.sqrt(K + 1)
        return GramAnalysis(
            family, K, t, _readonly(eye), 0.0, 1, 0.0, _readonly(eye.copy()),
            root, math.log(root), root, 1.0,
        )

    k = np.arange(K + 1, dtype=float)
    expo = np.outer(k, k) * t
    with np.errstate(over="ignore"):
        matrix = np.exp(expo)
    log_norm = 0.5 * logsumexp((2 * expo).ravel().tolist())
    log_det = vandermonde_log_det(K, t)
    bounds = dict(log_norm_bound=log_gram_norm_bound(K, t),
                  log_inverse_norm_bound=log_gram_inverse_norm_bound(K, t))

    if not np.all(np.isfinite(matrix)):
        return GramAnalysis(
            family, K, t, _readonly(matrix), log_det, 1, None, None, math.inf, log_norm,
            None, math.inf, refused=True, note="entries overflow double precision", **bounds,
        )

    condition = float(np.linalg.cond(matrix))
    # Jacobi scaling turns the matrix into exp(-(i-j)^2 t / 2), which the
    # Cholesky factorization handles far better than the raw entries.
    d = np.sqrt(np.diag(matrix))
    scaled = matrix / np.outer(d, d)
    try:
        factor = cho_factor(scaled, lower=True)
    except LinAlgError:
        factor = None
    log_det_numeric = None
    if factor is not None:
        log_det_numeric = float(2 * np.sum(np.log(np.diag(factor[0]))) + 2 * np.sum(np.log(d)))

    if factor is None or not condition <= max_condition:
        why = "not positive definite in floating point" if factor is None else (
            f"condition estimate {condition:.3g} exceeds {max_condition:.3g}")
        return GramAnalysis(
            family, K, t, _readonly(matrix), log_det, 1, log_det_numeric, None,
            exp_or_inf(log_norm), log_norm, None, condition, refused=True, note=why, **bounds,
        )

    inv_scaled = cho_solve(factor, np.eye(K + 1))
    inverse = inv_scaled / np.outer(d, d)
    inverse = 0.5 * (inverse + inverse.T)
    return GramAnalysis(
        family, K, t, _readonly(matrix), log_det, 1, log_det_numeric, _readonly(inverse),
        exp_or_inf(log_norm), log_norm, float(np.linalg.norm(inverse)), condition, **bounds,
    )


def gram_analysis(spec: BasisSpec, t: float, *, max_condition: float = MAX_CONDITION) -> GramAnalysis:
    """Exact second-moment matrix E[psi(S(t)) psi(S(t))^T] and its diagnostics.

    For the exponential-martingale basis the inverse is withheld (``refused``)
    when the condition estimate exceeds ``max_condition``; nothing downstream
    ever sees a silently inaccurate inverse.
    """
    if not t > 0:
        raise ValueError("Gram matrix date must be positive")
    return _gram_cached(spec.family, spec.order, float(t), float(max_condition))


# ---------------------------------------------------------------------------
# lognormal setting


@dataclass(frozen=True)
class LognormalMoments:
    k1: int
    k2: int
    t1: float
    t2: float
    log_first: float
    log_fourth: float

    @property
    def first(self) -> float:
        return exp_or_inf(self.log_first)

    @property
    def fourth(self) -> float:
        return exp_or_inf(self.log_fourth)

    def log_mixed(self, j: int, k: int) -> float:
        """log E[psi_{k2}(S_2)^2 psi_j(S_1) psi_k(S_1)]."""
        k2 = self.k2
        return k2 * k2 * self.t2 + 2 * k2 * (j + k) * self.t1 + j * k * self.t1

    def mixed(self, j: int, k: int) -> float:
        return exp_or_inf(self.log_mixed(j, k))


def lognormal_moments(k1: int, k2: int, t1: float, t2: float) -> LognormalMoments:
    """Cross moments of the exponential-martingale basis at dates t1 <= t2."""
    if not 0 < t1 <= t2:
        raise ValueError("need 0 < t1 <= t2")
    return LognormalMoments(
        k1, k2, float(t1), float(t2),
        log_first=k1 * k2 * t1,
        log_fourth=k1 * k1 * t1 + k2 * k2 * t2 + 4 * k1 * k2 * t1,
    )


# ---------------------------------------------------------------------------
# bounds and exact expected errors


@dataclass
class BoundReport:
    kind: str
    K: int
    N: int
    parameters: dict
    log_lower: float
    log_upper: float
    constants: dict = field(default_factory=dict)
    asymptotic: bool = False

    @property
    def lower(self) -> float:
        return exp_or_inf(self.log_lower)

    @property
    def upper(self) -> float:
        return exp_or_inf(self.log_upper)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "K": self.K,
            "N": self.N,
            "parameters": dict(self.parameters),
            "lower": self.lower,
            "upper": self.upper,
            "log_lower": self.log_lower,
            "log_upper": self.log_upper,
            "constants": dict(self.constants),
            "asymptotic": self.asymptotic,
        }


def worst_case_bounds_normal(K: int, N: int, rho: float) -> BoundReport:
    """Lower and upper bounds on sup_{|beta|=1} MSE in the normal setting."""
    rho = _check_rho(rho)
    if K < 0 or N < 1:
        raise ValueError("need K >= 0 and N >= 1")
    ks, log_term = log_dominant_summand(K, rho)
    log_base = (K - ks) * math.log(rho) + log_binom(2 * ks, ks) + 2 * log_binom(K, ks)
    a = 2.0 / (2.0 + math.sqrt(rho))
    return BoundReport(
        kind="worst_case_normal",
        K=K,
        N=N,
        parameters={"rho": rho},
        log_lower=log_base - math.log(K + 1) - math.log(N),
        log_upper=log_base + 5 * math.log(K + 1) - math.log(N),
        constants={"k_star": ks, "c_rho": c_rho(rho), "a": a, "b": 1.0 - a,
                   "log_dominant_summand": log_term},
    )


def log_expected_mse_normal_scaled(K: int, rho: float) -> float:
    """log of N * E|beta_tilde - beta|^2 for the worst-case normal target."""
    rho = _check_rho(rho)
    log_sum = K * math.log(rho) + logsumexp(
        log_fourth_cross_moment_normal(k, K, rho) for k in range(K + 1))
    if log_sum > 30:
        return log_sum
    return math.log(math.expm1(log_sum)) if log_sum > 0 else -math.inf


def expected_mse_closed_form(setting: str, K: int, N: int, *, rho: float | None = None,
                             t1: float | None = None, t2: float | None = None) -> float:
    """Exact E|beta_tilde - beta|^2 for the worst-case single-period target.

    ``normal`` needs ``rho`` (or ``t1`` and ``t2``); ``lognormal`` needs
    ``t1`` and ``t2`` and raises :class:`GramConditioningError` when the Gram
    matrix at t1 cannot be inverted.
    """
    if N < 1 or K < 0:
        raise ValueError("need K >= 0 and N >= 1")
    if setting == "normal":
        if rho is None:
            rho = float(t2) / float(t1)
        return exp_or_inf(log_expected_mse_normal_scaled(K, rho) - math.log(N))
    if setting != "lognormal":
        raise ValueError(f"unknown setting {setting!r}")
    if t1 is None or t2 is None or not 0 < t1 <= t2:
        raise ValueError("lognormal setting needs 0 < t1 <= t2")
    gram = gram_analysis(BasisSpec(BasisFamily.EXP_MARTINGALE, K), t1)
    inverse = gram.require_inverse()
    mom = lognormal_moments(K, K, t1, t2)
    idx = np.arange(K + 1)
    log_mixed = np.array([[mom.log_mixed(j, k) for k in idx] for j in idx])
    log_gamma = idx * K * t1
    with np.errstate(over="ignore"):
        cov = np.exp(log_mixed) - np.exp(log_gamma[:, None] + log_gamma[None, :])
    if not np.all(np.isfinite(cov)):
        return math.inf
    return float(np.trace(inverse @ cov @ inverse)) / N


def theorem3_bound(setting: str, m: int, n: int, K: int, N: int, *, c: float,
                   t_m: float | None = None, t_1: float | None = None) -> BoundReport:
    """Leading term of the multiperiod bound on E||C_hat_n - C_n||_n^2.

    The (1 + o(1)) factor is taken as 1, so the report is flagged asymptotic.
    """
    if not 1 <= n <= m:
        raise ValueError("need 1 <= n <= m")
    if K < 0 or N < 1 or not c >= 1:
        raise ValueError("need K >= 0, N >= 1 and c >= 1")
    params = {"setting": setting, "m": m, "n": n, "c": c}
    if setting == "normal":
        log_b = 0.5 * math.log(K + 1)
        log_e4 = log_fourth_cross_moment_normal(K, K, 1.0)
        log_e2 = 0.0
    elif setting == "lognormal":
        if t_m is None or t_1 is None or not 0 < t_1 <= t_m:
            raise ValueError("lognormal bound needs 0 < t_1 <= t_m")
        params.update(t_m=t_m, t_1=t_1)
        log_b = log_gram_inverse_norm_bound(K, t_1) if K > 0 else 0.0
        log_e4 = 6.0 * K * K * t_m
        log_e2 = 1.0 * K * K * t_m
    else:
        raise ValueError(f"unknown setting {setting!r}")
    log_h = max(K * math.log(c), 2 * log_b + math.log(K + 1))
    log_a = math.log(K + 1) + log_h + log_e4
    steps = m - n
    constants = {
        "B_K": exp_or_inf(log_b), "log_B_K": log_b,
        "H_K": exp_or_inf(log_h), "log_H_K": log_h,
        "A_K": exp_or_inf(log_a), "log_A_K": log_a,
        "E_psi4": exp_or_inf(log_e4), "log_E_psi4": log_e4,
        "E_psi2": exp_or_inf(log_e2), "log_E_psi2": log_e2,
    }
    if setting == "lognormal":
        constants["log_dominant_factor"] = (6 * steps + 2) * K * K * t_m
        if t_1 is not None:
            constants["C_t"] = lemma4_constant(t_1)
    if steps == 0:
        log_upper = -math.inf
    else:
        log_upper = (math.log(2.0**steps - 1) + 2 * math.log(K + 1) - math.log(N)
                     + log_b + steps * log_a + 2 * log_e2)
    return BoundReport(
        kind="theorem3",
        K=K,
        N=N,
        parameters=params,
        log_lower=-math.inf,
        log_upper=log_upper,
        constants=constants,
        asymptotic=True,
    )
