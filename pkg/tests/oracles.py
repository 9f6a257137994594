"""Independent reference computations used by the tests.

Nothing here imports the package: each oracle takes a different route to the
same quantity (explicit sums, Gaussian quadrature, moment generating
functions, a binomial lattice, exact rational arithmetic).
"""

import math
from fractions import Fraction

import numpy as np
from numpy.polynomial.hermite_e import hermegauss


def hermite_explicit(n, x):
    """He_n(x) from the explicit sum n! sum_m (-1)^m x^(n-2m) / (m! (n-2m)! 2^m)."""
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x)
    for m in range(n // 2 + 1):
        c = (-1) ** m * math.factorial(n) / (math.factorial(m) * math.factorial(n - 2 * m) * 2**m)
        total = total + c * x ** (n - 2 * m)
    return total


def normalized_hermite_explicit(k, x, t):
    return hermite_explicit(k, np.asarray(x) / math.sqrt(t)) / math.sqrt(math.factorial(k))


def gauss_moment_normal(k1, k2, p, q, t1, t2, nodes=40):
    """E[psi_k1(W1)^p psi_k2(W2)^q] for normalized Hermite bases by 2-D quadrature.

    W1 = sqrt(t1) Z1 and W2 = W1 + sqrt(t2 - t1) Z2 with independent standard
    normals; Gauss-Hermite with ``nodes`` points is exact for polynomial
    integrands of degree below 2 * nodes.
    """
    z, w = hermegauss(nodes)
    w = w / w.sum()
    z1, z2 = np.meshgrid(z, z, indexing="ij")
    weight = np.outer(w, w)
    w1 = math.sqrt(t1) * z1
    w2 = w1 + math.sqrt(t2 - t1) * z2
    f = normalized_hermite_explicit(k1, w1, t1) ** p * normalized_hermite_explicit(k2, w2, t2) ** q
    return float(np.sum(weight * f))


def mgf_moment_lognormal(k1, k2, p, q, t1, t2):
    """E[psi_k1(S1)^p psi_k2(S2)^q] for psi_k(S_t) = exp(k W_t - k^2 t / 2).

    The exponent is a p k1 W1 + q k2 W2 plus a constant; split W2 = W1 + (W2 - W1)
    and use the Gaussian moment generating function.
    """
    a = p * k1 + q * k2
    b = q * k2
    log_val = 0.5 * a * a * t1 + 0.5 * b * b * (t2 - t1) - 0.5 * p * k1 * k1 * t1 - 0.5 * q * k2 * k2 * t2
    return math.exp(log_val)


def gram_exp_martingale_exact(K, t):
    """Psi_jk = E[psi_j psi_k] from the moment generating function."""
    out = np.empty((K + 1, K + 1))
    for j in range(K + 1):
        for k in range(K + 1):
            out[j, k] = math.exp(0.5 * (j + k) ** 2 * t - 0.5 * (j * j + k * k) * t)
    return out


def k_star_brute(K, rho):
    """Smallest argmax over k of rho^-k C(2k,k) C(K,k)^2, in exact arithmetic."""
    rho = Fraction(rho)
    terms = [Fraction(math.comb(2 * k, k) * math.comb(K, k) ** 2) / rho**k for k in range(K + 1)]
    best = max(terms)
    return terms.index(best)


def fourth_moment_exact(k1, k2, rho):
    """sum_k rho^-k C(2k,k) C(k1,k) C(k2,k) as an exact fraction."""
    rho = Fraction(rho)
    return sum(Fraction(math.comb(2 * k, k) * math.comb(k1, k) * math.comb(k2, k)) / rho**k
               for k in range(min(k1, k2) + 1))


def expected_mse_normal_exact(K, N, rho):
    """(rho^K sum_k M4(k, K) - 1) / N as an exact fraction."""
    rho = Fraction(rho)
    s = sum(fourth_moment_exact(k, K, rho) for k in range(K + 1))
    return (rho**K * s - 1) / N


def crr_bermudan_put(strike, dates, steps):
    """Bermudan put on S = exp(W - t/2) (zero rate, unit volatility) by a CRR tree.

    ``steps`` must place every exercise date on a time node. Exercise is
    allowed only at those nodes; elsewhere the value is the discounted (here
    undiscounted) risk-neutral expectation.
    """
    T = dates[-1]
    dt = T / steps
    u = math.exp(math.sqrt(dt))
    d = 1.0 / u
    p = (1.0 - d) / (u - d)
    ex_steps = {int(round(s / dt)) for s in dates}
    for s in dates:
        if abs(round(s / dt) * dt - s) > 1e-9:
            raise ValueError("exercise dates must fall on lattice nodes")
    j = np.arange(steps + 1)
    s = u ** (steps - 2 * j)
    v = np.maximum(strike - s, 0.0)
    for i in range(steps - 1, -1, -1):
        v = p * v[:-1] + (1 - p) * v[1:]
        if i in ex_steps:
            s_i = u ** (i - 2 * np.arange(i + 1))
            v = np.maximum(v, strike - s_i)
    return float(v[0])


def mc_mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def importance_moments(setting, K, t1, t2, n, scale, normals, chunk=10**6):
    """Monte Carlo estimates of E[psi_a(S1)^p psi_b(S2)^p], p = 1, 2, a, b <= K.

    The two Brownian increments are drawn with standard deviation inflated by
    ``scale`` and reweighted by the likelihood ratio, which keeps the
    estimator's variance finite and well estimated for the heavy-tailed
    products. ``normals(start, count)`` supplies standard normals.
    Returns (means, stderrs), each shaped (2, K+1, K+1) with p-1 first.
    """
    def basis(w, t):
        k = np.arange(K + 1)
        if setting == "normal":
            return np.stack([normalized_hermite_explicit(j, w, t) for j in k], axis=-1)
        return np.exp(np.outer(w, k) - 0.5 * k * k * t)

    total = np.zeros((2, K + 1, K + 1))
    total_sq = np.zeros((2, K + 1, K + 1))
    for c in range(n // chunk):
        z = normals(2 * c * chunk, 2 * chunk).reshape(chunk, 2) * scale
        w = np.exp((-0.5 * z**2 * (1 - 1 / scale**2)).sum(axis=1) + 2 * math.log(scale))
        w1 = math.sqrt(t1) * z[:, 0]
        w2 = w1 + math.sqrt(t2 - t1) * z[:, 1]
        p1, p2 = basis(w1, t1), basis(w2, t2)
        for a in range(K + 1):
            for j, power in ((0, 1), (1, 2)):
                g = (p1[:, a, None] ** power) * (p2**power) * w[:, None]
                total[j, a] += g.sum(axis=0)
                total_sq[j, a] += (g * g).sum(axis=0)
    n_used = (n // chunk) * chunk
    mean = total / n_used
    se = np.sqrt(np.maximum(total_sq / n_used - mean**2, 0.0) / n_used)
    return mean, se
