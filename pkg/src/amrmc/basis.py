"""Polynomial basis families.

Two families are supported:

* ``hermite`` -- normalized Hermite polynomials He_k(x / sqrt(t)) / sqrt(k!),
  orthonormal under the law of a standard Brownian motion at time t;
* ``exp_martingale`` -- the powers exp(k W(t) - k^2 t / 2) of geometric
  Brownian motion S(t) = exp(W(t) - t/2), written in terms of the state as
  S^k exp(k (1 - k) t / 2).

Both have psi_0 == 1, and t^{k/2} psi_k (Hermite) or psi_k itself
(exponential) is a martingale.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class BasisFamily(str, enum.Enum):
    HERMITE = "hermite"
    EXP_MARTINGALE = "exp_martingale"

    @classmethod
    def parse(cls, value: "str | BasisFamily") -> "BasisFamily":
        if isinstance(value, cls):
            return value
        aliases = {
            "hermite": cls.HERMITE,
            "hermite_normalized": cls.HERMITE,
            "exp_martingale": cls.EXP_MARTINGALE,
            "exponential_martingale": cls.EXP_MARTINGALE,
        }
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown basis family {value!r}") from None


@dataclass(frozen=True)
class BasisSpec:
    family: BasisFamily
    order: int

    def __post_init__(self):
        object.__setattr__(self, "family", BasisFamily.parse(self.family))
        if int(self.order) != self.order or self.order < 0:
            raise ValueError("basis order K must be a nonnegative integer")
        object.__setattr__(self, "order", int(self.order))

    @property
    def size(self) -> int:
        return self.order + 1


@dataclass(frozen=True)
class SquareExpansion:
    """He_n(x)^2 = sum_i coefficients[i] * He_{2i}(x)."""

    degree: int
    coefficients: tuple[float, ...]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        he = hermite_all(2 * self.degree, x)
        return sum(c * he[..., 2 * i] for i, c in enumerate(self.coefficients))


def hermite(n: int, x):
    """Probabilists' Hermite polynomial He_n by the three-term recurrence."""
    if n < 0:
        raise ValueError("degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if n == 0:
        return prev if prev.ndim else float(prev)
    cur = x.copy()
    for k in range(1, n):
        prev, cur = cur, x * cur - k * prev
    return cur if cur.ndim else float(cur)


def hermite_all(n: int, x) -> np.ndarray:
    """He_0(x), ..., He_n(x) stacked along a new last axis."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (n + 1,))
    out[..., 0] = 1.0
    if n >= 1:
        out[..., 1] = x
    for k in range(1, n):
        out[..., k + 1] = x * out[..., k] - k * out[..., k - 1]
    return out


def _normalized_hermite(order: int, z: np.ndarray) -> np.ndarray:
    # h_k = He_k / sqrt(k!) obeys h_{k+1} = (z h_k - sqrt(k) h_{k-1}) / sqrt(k+1),
    # which never forms k! explicitly.
    out = np.empty(z.shape + (order + 1,))
    out[..., 0] = 1.0
    if order >= 1:
        out[..., 1] = z
    for k in range(1, order):
        out[..., k + 1] = (z * out[..., k] - math.sqrt(k) * out[..., k - 1]) / math.sqrt(k + 1)
    return out


def eval_basis(spec: BasisSpec, t: float, state) -> np.ndarray:
    """psi_0(state), ..., psi_K(state) at date ``t``.

    ``state`` may be a scalar or an array; the basis index is appended as the
    last axis.
    """
    if not t > 0:
        raise ValueError("basis evaluation date must be positive")
    x = np.asarray(state, dtype=float)
    if spec.family is BasisFamily.HERMITE:
        return _normalized_hermite(spec.order, x / math.sqrt(t))
    if np.any(x <= 0):
        raise ValueError("exponential-martingale basis needs positive states")
    k = np.arange(spec.size, dtype=float)
    # S^k exp(k(1-k)t/2) keeps psi_1(S) == S exactly
    return np.power(x[..., None], k) * np.exp(0.5 * k * (1.0 - k) * t)


def martingale_scale(spec: BasisSpec, k: int, t: float) -> float:
    """f_k(t) such that f_k(t) psi_k(S(t)) is a martingale."""
    if not t > 0:
        raise ValueError("date must be positive")
    if spec.family is BasisFamily.HERMITE:
        return t ** (k / 2)
    return 1.0


def hermite_square_expansion(n: int) -> SquareExpansion:
    """Coefficients (n!)^2 / ((i!)^2 (n-i)!) of He_n^2 in He_{2i}."""
    if n < 0:
        raise ValueError("degree must be nonnegative")
    # each coefficient is the integer C(n, i) * n! / i!
    fact = math.factorial
    coeffs = []
    for i in range(n + 1):
        c = math.comb(n, i) * (fact(n) // fact(i))
        try:
            coeffs.append(float(c))
        except OverflowError:
            coeffs.append(math.inf)
    return SquareExpansion(n, tuple(coeffs))
