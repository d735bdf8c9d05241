"""Importance weights and collapse statistics for one ensemble.

Given a spectrum, one canonical observation, and an ensemble of rotated
particle coordinates, this module computes the normalized importance
weights, the standardized per-particle score statistics whose ordered
gaps determine the maximum weight exactly, the two scaling constants
used by the asymptotic checks, the positive unnormalized weight
representation with unit conditional mean, the exact Gaussian posterior
(the reference for no-collapse error checks), and Lyapunov quotients
measuring how fast the score sums become normal.

All functions are pure and operate on immutable inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy import integrate

from .errors import ValidationError
from .rng import CanonicalObservation, Ensemble
from .spectrum import Spectrum

_GH_NODES, _GH_WEIGHTS = hermgauss(64)


def _check_consistent(s: Spectrum, obs: CanonicalObservation, e: Ensemble | None = None):
    if not np.array_equal(obs.spectrum.values, s.values):
        raise ValidationError("observation was drawn under a different spectrum")
    if e is not None and not np.array_equal(e.observation.mu, obs.mu):
        raise ValidationError("ensemble was drawn under a different observation")


def log_unnormalized_weights(s: Spectrum, e: Ensemble) -> np.ndarray:
    """Per-particle log numerators: -(1/2) sum_j lambda_j^2 W_ij^2.

    The data-dependent constant shared by all particles is omitted; it
    cancels in normalization.
    """
    if e.d_prime != s.d_prime or not np.array_equal(e.observation.spectrum.values, s.values):
        raise ValidationError("ensemble was drawn under a different spectrum")
    return -0.5 * (e.w**2 @ s.squares)


def normalize(log_unnorm: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Softmax with max-shift; returns (weights, max_weight, ess).

    The shift makes the largest exponent 0, so no overflow is possible;
    underflow of hopeless particles to weight 0 is accepted.
    """
    ell = np.asarray(log_unnorm, dtype=np.float64)
    if ell.ndim != 1 or ell.size < 2:
        raise ValidationError("need at least 2 log-weights")
    if not np.all(np.isfinite(ell)):
        raise ValidationError("log-weights must be finite")
    shifted = np.exp(ell - np.max(ell))
    weights = shifted / np.sum(shifted)
    max_weight = float(np.max(weights))
    ess = 1.0 / float(np.sum(weights**2))
    return weights, max_weight, ess


def score_statistics(
    s: Spectrum, obs: CanonicalObservation, e: Ensemble
) -> tuple[np.ndarray, float]:
    """Exactly standardized quadratic scores and their variance scale.

    S_i = sum_j lambda_j^2 (W_ij^2 - (1 + mu_j^2))
          / sqrt(2 sum_j lambda_j^4 (1 + 2 mu_j^2))

    Conditional on the observation, each S_i has mean 0 and variance 1
    exactly, because W_ij ~ N(mu_j, 1) gives
    Var(W_ij^2) = 2 + 4 mu_j^2.  Also returns
    sigma2_dprime = (2/d') sum_j lambda_j^4 (1 + 2 mu_j^2), the
    per-coordinate variance scale, so that the standardizing denominator
    is sqrt(d' * sigma2_dprime).
    """
    _check_consistent(s, obs, e)
    lam2 = s.squares
    centered = e.w**2 - (1.0 + obs.mu**2)
    var_sum = float(np.sum(lam2**2 * (1.0 + 2.0 * obs.mu**2)))
    sigma2_dprime = 2.0 * var_sum / s.d_prime
    s_stats = (centered @ lam2) / math.sqrt(2.0 * var_sum)
    return s_stats, sigma2_dprime


def t_statistic(s_stats: np.ndarray, sigma2_dprime: float, d_prime: int) -> float:
    """Sum of exponentially damped gaps above the smallest score.

    With scores sorted ascending,
    T = sum_{l>=2} exp(-(1/2) sqrt(d' sigma2) (S_(l) - S_(1))),
    and the maximum normalized weight equals 1/(1+T) exactly: the
    factor 1/2 restores the log-weight differences, since
    log w_i - log w_k = -(1/2) sqrt(d' sigma2) (S_i - S_k).
    """
    scores = np.sort(np.asarray(s_stats, dtype=np.float64))
    if scores.size < 2:
        raise ValidationError("need at least 2 scores")
    if not (sigma2_dprime > 0.0 and np.isfinite(sigma2_dprime)):
        raise ValidationError("sigma2_dprime must be positive and finite")
    scale = 0.5 * math.sqrt(d_prime * sigma2_dprime)
    return float(np.sum(np.exp(-scale * (scores[1:] - scores[0]))))


def tau_squared(s: Spectrum) -> float:
    """Dimension-averaged variance constant (2/d') sum (3 lambda^4 + 2 lambda^2)."""
    return 2.0 * float(np.sum(3.0 * s.squares**2 + 2.0 * s.squares)) / s.d_prime


def tau_squared_unnormalized(s: Spectrum) -> float:
    """Total variance constant 2 sum (3 lambda^4 + 2 lambda^2) = d' * tau_squared."""
    return 2.0 * float(np.sum(3.0 * s.squares**2 + 2.0 * s.squares))


@dataclass(frozen=True, eq=False)
class WeightSummary:
    """All per-ensemble weight diagnostics in one place."""

    log_unnorm: np.ndarray
    weights: np.ndarray
    max_weight: float
    ess: float
    s_stats: np.ndarray
    sigma2_dprime: float
    t_stat: float

    def __post_init__(self):
        for name in ("log_unnorm", "weights", "s_stats"):
            a = np.array(getattr(self, name), dtype=np.float64, copy=True)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        n = self.weights.size
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-12 or np.any(self.weights < 0.0):
            raise ValidationError("weights must be non-negative and sum to 1")
        if self.max_weight != float(np.max(self.weights)):
            raise ValidationError("max_weight must equal max(weights)")
        if not (1.0 - 1e-12 <= self.ess <= n + 1e-9):
            raise ValidationError("ess must lie in [1, n]")
        if abs(self.max_weight - 1.0 / (1.0 + self.t_stat)) > 1e-10:
            raise ValidationError("max weight and gap-sum statistic disagree beyond 1e-10")

    @property
    def n(self) -> int:
        return int(self.weights.size)


def weight_summary(s: Spectrum, obs: CanonicalObservation, e: Ensemble) -> WeightSummary:
    """Weights, scores, and the gap-sum statistic for one ensemble."""
    ell = log_unnormalized_weights(s, e)
    weights, max_weight, ess = normalize(ell)
    s_stats, sigma2 = score_statistics(s, obs, e)
    t = t_statistic(s_stats, sigma2, s.d_prime)
    return WeightSummary(
        log_unnorm=ell,
        weights=weights,
        max_weight=max_weight,
        ess=ess,
        s_stats=s_stats,
        sigma2_dprime=sigma2,
        t_stat=t,
    )


@dataclass(frozen=True, eq=False)
class UnnormalizedWeights:
    """Positive weight representation with unit conditional mean."""

    u: np.ndarray
    log_c: float

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64, copy=True)
        u.setflags(write=False)
        object.__setattr__(self, "u", u)
        if np.any(u <= 0.0) or not np.all(np.isfinite(u)):
            raise ValidationError("unnormalized weights must be positive and finite")

    @property
    def c_dprime(self) -> float:
        return math.exp(self.log_c)


def u_weights(s: Spectrum, obs: CanonicalObservation, e: Ensemble) -> UnnormalizedWeights:
    """U_i = c^{-1} exp{-(1/2) sum_j [lambda_j^2 (Z_ij^2 - 1) + 2 lambda_j^2 mu_j Z_ij]}.

    Z_ij = W_ij - mu_j is standard normal given the observation, and

      log c = sum_j [ -(1/2) log(1 + lambda_j^2) + lambda_j^2 / 2
                      + lambda_j^4 mu_j^2 / (2 (1 + lambda_j^2)) ]

    makes the conditional mean of every U_i exactly 1.  Everything is
    accumulated in log space; the product form of c is never formed.
    """
    _check_consistent(s, obs, e)
    lam2 = s.squares
    z = e.w - obs.mu
    log_kernel = -0.5 * ((z**2 - 1.0) @ lam2) - (z @ (lam2 * obs.mu))
    log_c = float(
        np.sum(
            -0.5 * np.log1p(lam2) + 0.5 * lam2 + lam2**2 * obs.mu**2 / (2.0 * (1.0 + lam2))
        )
    )
    return UnnormalizedWeights(u=np.exp(log_kernel - log_c), log_c=log_c)


@dataclass(frozen=True, eq=False)
class PosteriorMoments:
    """Coordinate-wise Gaussian posterior of the canonical state given the data."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        for name in ("mean", "variance"):
            a = np.array(getattr(self, name), dtype=np.float64, copy=True)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.mean.shape != self.variance.shape or self.mean.ndim != 1:
            raise ValidationError("mean and variance must be equal-length vectors")
        # 1/(1 + lambda^2) rounds to exactly 1.0 once lambda^2 drops below
        # machine epsilon, so the upper bound is inclusive.
        if np.any(self.variance <= 0.0) or np.any(self.variance > 1.0):
            raise ValidationError("posterior variances must lie in (0, 1]")

    def expectation(self, g: Callable[[np.ndarray], np.ndarray], j: int = 0) -> float:
        """E[g(V_j) | data] by 64-point Gauss-Hermite quadrature.

        Accurate for smooth bounded g; discontinuous g (indicators)
        converge slowly and should be checked against a closed form.
        """
        sd = math.sqrt(self.variance[j])
        points = self.mean[j] + math.sqrt(2.0) * sd * _GH_NODES
        return float(np.sum(_GH_WEIGHTS * np.asarray(g(points))) / math.sqrt(math.pi))


def exact_posterior(s: Spectrum, obs: CanonicalObservation) -> PosteriorMoments:
    """Conjugate-Gaussian posterior of each canonical coordinate.

    Prior V_j ~ N(0,1) observed through mu_j = V_j + eps_j / lambda_j
    gives V_j | data ~ N(lambda_j^2 mu_j / (1 + lambda_j^2),
    1 / (1 + lambda_j^2)).
    """
    _check_consistent(s, obs)
    lam2 = s.squares
    return PosteriorMoments(mean=lam2 * obs.mu / (1.0 + lam2), variance=1.0 / (1.0 + lam2))


def _centered_square_moment(mu: float, k: int, signed: bool = False) -> float:
    """E |(Z + mu)^2 - (1 + mu^2)|^k for standard normal Z (or signed moment).

    Adaptive quadrature with the integrand split at the two roots
    z = -mu +- sqrt(1 + mu^2) where the absolute value has kinks.
    """
    c = 1.0 + mu * mu
    root = math.sqrt(c)
    kinks = sorted((-mu - root, -mu + root))
    norm = 1.0 / math.sqrt(2.0 * math.pi)

    def integrand(z):
        q = (z + mu) ** 2 - c
        base = q**k if signed else abs(q) ** k
        return base * norm * math.exp(-0.5 * z * z)

    pieces = [(-np.inf, kinks[0]), (kinks[0], kinks[1]), (kinks[1], np.inf)]
    total = 0.0
    for a, b in pieces:
        val, err = integrate.quad(integrand, a, b, epsabs=1e-12, epsrel=1e-9, limit=200)
        if not np.isfinite(val):
            raise ValidationError(f"moment quadrature failed on ({a}, {b})")
        total += val
    return total


def lyapunov_quotient(s: Spectrum, obs: CanonicalObservation, k: int) -> float:
    """Normalized absolute-moment sum controlling normality of the scores.

    L_k = B^{-k} sum_j E|xi_j|^k with xi_j = lambda_j^2 ((Z + mu_j)^2
    - (1 + mu_j^2)) and B^2 = sum_j lambda_j^4 (2 + 4 mu_j^2).  Small
    L_3 certifies the central limit behaviour of the score statistics;
    for constant spectra L_3 decays like 1/sqrt(d').
    """
    if k not in (3, 4, 5):
        raise ValidationError("Lyapunov order k must be 3, 4, or 5")
    _check_consistent(s, obs)
    lam2 = s.squares
    b2 = float(np.sum(lam2**2 * (2.0 + 4.0 * obs.mu**2)))
    total = 0.0
    for lam2_j, mu_j in zip(lam2, obs.mu):
        total += float(lam2_j) ** k * _centered_square_moment(float(mu_j), k)
    return total / b2 ** (0.5 * k)
