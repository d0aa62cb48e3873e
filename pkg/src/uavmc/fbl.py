"""Finite-blocklength reliability math: capacity/dispersion, achievable
rate, decoding error probability (DEP), the SINR threshold equivalent to a
DEP target, and the closed-form hypoexponential SINR-outage probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfc, erfcinv

LOG2_E = np.log2(np.e)

# Relative gap below which hypoexponential rates are treated as tied and
# deterministically separated before the coefficient product.
RATE_TIE_REL = 1e-9


def q_function(x):
    """Gaussian tail probability Q(x) = 0.5 * erfc(x / sqrt(2))."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


def q_inverse(p):
    """Inverse of the Gaussian Q-function."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise ValueError("q_inverse requires 0 < p < 1 (infinite at the ends)")
    out = np.sqrt(2.0) * erfcinv(2.0 * p_arr)
    return float(out) if np.ndim(p) == 0 else out


def capacity_dispersion(gamma):
    """Shannon capacity C(gamma) and channel dispersion V(gamma) in bits.

    C = log2(1 + gamma); V = (1 - 1/(1+gamma)^2) * (log2 e)^2.
    """
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0.0):
        raise ValueError("SINR must be nonnegative")
    c = np.log2(1.0 + g)
    v = (1.0 - 1.0 / (1.0 + g) ** 2) * LOG2_E ** 2
    if np.ndim(gamma) == 0:
        return float(c), float(v)
    return c, v


def achievable_rate(n: int, eps: float, gamma) -> float:
    """Normal-approximation achievable rate in bits per channel use.

    R*(n, eps) = C - sqrt(V/n) * Qinv(eps) + log2(n) / (2n), evaluated
    pointwise at the given SINR.
    """
    if n < 1:
        raise ValueError("blocklength must be at least 1")
    c, v = capacity_dispersion(gamma)
    return c - np.sqrt(v / n) * q_inverse(eps) + np.log2(n) / (2.0 * n)


def dep(n: int, b, gamma):
    """Decoding error probability of sending b bits in n channel uses.

    eps = Q((n*C(gamma) + 0.5*log2(n) - b) / sqrt(n*V(gamma))), evaluated
    at the realized SINR; gamma = 0 degenerates to eps = 1 (zero
    dispersion, nothing decodable).  Broadcasts over b and gamma.
    """
    if n < 1:
        raise ValueError("blocklength must be at least 1")
    b_arr = np.asarray(b, dtype=float)
    if np.any(b_arr < 1):
        raise ValueError("bit count must be at least 1")
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0.0):
        raise ValueError("SINR must be nonnegative")

    positive = g > 0.0
    g_safe = np.where(positive, g, 1.0)
    c, v = np.log2(1.0 + g_safe), (1.0 - 1.0 / (1.0 + g_safe) ** 2) * LOG2_E ** 2
    arg = (n * c + 0.5 * np.log2(n) - b_arr) / np.sqrt(n * v)
    eps = np.where(positive, q_function(arg), 1.0)
    if np.ndim(gamma) == 0 and np.ndim(b) == 0:
        return float(eps)
    return eps


def sinr_threshold_approx(n: int, b: int, eps_max: float) -> float:
    """Closed-form SINR threshold from the high-SINR dispersion limit.

    gamma_th = exp(Qinv(eps_max)/sqrt(n) + b*ln2/n - ln(n)/(2n)) - 1.
    """
    if n < 1 or b < 1:
        raise ValueError("n and b must be at least 1")
    exponent = (q_inverse(eps_max) / np.sqrt(n)
                + b * np.log(2.0) / n
                - np.log(n) / (2.0 * n))
    return float(np.exp(exponent) - 1.0)


def sinr_threshold(n: int, b: int, eps_max: float) -> float:
    """SINR level at which the DEP equals eps_max exactly.

    Numerically inverts ``dep`` (the closed-form approximation above drops
    the dispersion's SINR dependence and misses the round trip by orders of
    magnitude at small eps); at eps_max = 0.5 both definitions coincide.
    """
    if not 0.0 < eps_max < 1.0:
        raise ValueError("eps_max must lie strictly between 0 and 1")
    guess = max(sinr_threshold_approx(n, b, eps_max), 1e-9)

    def gap(gamma):
        return dep(n, b, gamma) - eps_max

    lo = 1e-12
    if gap(lo) <= 0.0:
        # DEP target met even at (numerically) zero SINR.
        return lo
    hi = guess
    for _ in range(200):
        if gap(hi) < 0.0:
            break
        hi *= 2.0
    else:
        raise RuntimeError("failed to bracket the SINR threshold")
    return float(brentq(gap, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=200))


def _separate_rates(rates: np.ndarray, rel: float = RATE_TIE_REL) -> np.ndarray:
    """Deterministically nudge near-equal rates apart (relative scale)."""
    order = np.argsort(rates)
    out = rates.astype(float).copy()
    for prev, cur in zip(order[:-1], order[1:]):
        gap = out[cur] - out[prev]
        min_gap = rel * max(abs(out[cur]), abs(out[prev]))
        if gap < min_gap:
            out[cur] = out[prev] + min_gap
    return out


def hypoexp_survival(rates, s):
    """Survival function of a sum of independent exponentials.

    F_bar(s) = sum_k [prod_{j != k} lam_j / (lam_j - lam_k)] * exp(-lam_k*s)
    for pairwise distinct positive rates lam_k.  Broadcasts over s.
    """
    lam = np.asarray(rates, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise ValueError("rates must be a nonempty 1-D sequence")
    if np.any(lam <= 0.0):
        raise ValueError("rates must be positive")
    if np.unique(lam).size != lam.size:
        raise ValueError("duplicate rates: jitter them apart before calling")
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0.0):
        raise ValueError("s must be nonnegative")

    diff = lam[None, :] - lam[:, None]          # diff[k, j] = lam_j - lam_k
    ratio = lam[None, :] / np.where(diff == 0.0, 1.0, diff)
    np.fill_diagonal(ratio, 1.0)
    coef = ratio.prod(axis=1)

    surv = np.sum(coef * np.exp(-np.outer(s_arr.ravel(), lam)), axis=1)
    surv = np.clip(surv, 0.0, 1.0)
    if np.ndim(s) == 0:
        return float(surv[0])
    return surv.reshape(s_arr.shape)


@dataclass
class ReliabilityTargets:
    """Reliability requirements and the SINR threshold they imply."""

    eps_max: float = 1e-5
    outage_max: float = 1e-3
    gamma_th: float | None = None

    def __post_init__(self):
        if not 0.0 < self.eps_max < 1.0:
            raise ValueError("eps_max must lie strictly between 0 and 1")
        if not 0.0 < self.outage_max < 1.0:
            raise ValueError("outage_max must lie strictly between 0 and 1")
        if self.gamma_th is not None and self.gamma_th <= 0.0:
            raise ValueError("gamma_th must be positive once derived")

    def derive_gamma_th(self, n: int, b: int) -> float:
        """Fill gamma_th from the DEP target for the given traffic."""
        self.gamma_th = sinr_threshold(n, b, self.eps_max)
        return self.gamma_th


@dataclass
class ClusterSignalModel:
    """Per-user signal statistics for the closed-form outage probability.

    ``mean_powers`` are the expected received powers from each serving AP
    (transmit power x beam gain x mean path gain); ``interference_plus_noise``
    is the conditioning denominator beta (noise plus expected interference).
    The optional per-link interference means enable Monte-Carlo DEP with
    instantaneous interference.
    """

    mean_powers: np.ndarray
    interference_plus_noise: float
    interference_means: np.ndarray = field(default_factory=lambda: np.empty(0))
    noise_power: float | None = None

    def __post_init__(self):
        self.mean_powers = np.asarray(self.mean_powers, dtype=float)
        self.interference_means = np.asarray(self.interference_means, dtype=float)
        if self.mean_powers.size == 0 or np.any(self.mean_powers <= 0.0):
            raise ValueError("mean_powers must be nonempty and positive")
        if self.interference_plus_noise <= 0.0:
            raise ValueError("interference_plus_noise must be positive")

    def mean_sinr(self) -> float:
        return float(self.mean_powers.sum() / self.interference_plus_noise)


def outage_from_means(mean_powers: np.ndarray, beta: float,
                      gamma_th: float) -> float:
    """Closed-form outage from serving-link mean powers and the
    interference-plus-noise level beta (lean path used inside the
    environment's per-step loop)."""
    if gamma_th < 0.0:
        raise ValueError("gamma_th must be nonnegative")
    if gamma_th == 0.0:
        return 0.0
    s = gamma_th * beta
    lam = _separate_rates(1.0 / np.asarray(mean_powers, dtype=float))
    if lam.size == 1:
        surv = np.exp(-lam[0] * s)
    else:
        diff = lam[None, :] - lam[:, None]
        ratio = lam[None, :] / np.where(diff == 0.0, 1.0, diff)
        np.fill_diagonal(ratio, 1.0)
        surv = float(ratio.prod(axis=1) @ np.exp(-lam * s))
    return float(min(max(1.0 - surv, 0.0), 1.0))


def outage_probability(model: ClusterSignalModel, gamma_th: float) -> float:
    """Probability that the fading cluster power falls below the threshold.

    O = 1 - F_bar(gamma_th * beta) where the received power is a sum of
    independent exponentials with means ``mean_powers`` (rates 1/mean).
    Near-equal rates are separated by a deterministic relative jitter
    before the coefficient product.
    """
    return outage_from_means(model.mean_powers, model.interference_plus_noise,
                             gamma_th)


def dep_expected(n: int, b: int, model: ClusterSignalModel, samples: int,
                 rng: np.random.Generator, deterministic: bool = False) -> float:
    """Monte-Carlo DEP averaged over fading realizations.

    Draws unit-mean exponential fading per serving link (and per
    interference link when the model carries per-link interference means
    plus a noise power); ``deterministic=True`` collapses every draw to its
    mean, reproducing the pointwise ``dep`` at the mean SINR.
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    mu = model.mean_powers
    if deterministic:
        return float(dep(n, b, model.mean_sinr()))

    signal = rng.exponential(1.0, size=(samples, mu.size)) @ mu
    if model.interference_means.size and model.noise_power is not None:
        draws = rng.exponential(1.0, size=(samples, model.interference_means.size))
        beta = model.noise_power + draws @ model.interference_means
    else:
        beta = model.interference_plus_noise
    return float(np.mean(dep(n, b, signal / beta)))
