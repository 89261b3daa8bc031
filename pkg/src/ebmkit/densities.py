"""Closed-form reference densities used as oracles.

All densities act on batches of shape ``(n, d)`` and return per-point
values.  ``log_Z`` refers to the unnormalized form ``exp(-U)`` that the
density is the Boltzmann-Gibbs law of.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .core import RngStream, as_points

__all__ = [
    "AnalyticDensity",
    "DiagGaussian",
    "GaussianMixture1D",
    "OuOracle",
    "mixture_from_z",
    "ula_limit_covariance",
    "ou_law_at_time",
    "trapezoid_grid",
    "quadrature_kl",
    "quadrature_entropy",
    "quadrature_mass",
]

_LOG_2PI = np.log(2 * np.pi)


class AnalyticDensity:
    """A normalized density with exact log-pdf, score and direct sampler."""

    d: int

    def log_pdf(self, x):
        raise NotImplementedError

    def score(self, x):
        raise NotImplementedError

    def sample(self, stream: RngStream, n):
        raise NotImplementedError

    def log_Z(self):
        """Log-normalizer of the unnormalized form ``exp(-U)``."""
        raise NotImplementedError

    def entropy(self):
        """Differential entropy, or ``None`` when not available in closed form."""
        return None

    def energy(self, x):
        """The energy ``U`` with ``pdf = exp(-U) / Z``."""
        return -(self.log_pdf(x) + self.log_Z())

    def pdf(self, x):
        return np.exp(self.log_pdf(x))


@dataclass(frozen=True, eq=False)
class DiagGaussian(AnalyticDensity):
    """Gaussian with diagonal covariance, parameterized by per-axis variances."""

    mean: np.ndarray
    var: np.ndarray

    def __init__(self, mean, var):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        var = np.broadcast_to(np.asarray(var, dtype=float), mean.shape).copy()
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def d(self):
        return self.mean.size

    def log_pdf(self, x):
        x = as_points(x)
        return -0.5 * np.sum((x - self.mean) ** 2 / self.var, axis=1) - self.log_Z()

    def score(self, x):
        return -(as_points(x) - self.mean) / self.var

    def sample(self, stream, n):
        z = stream.normal((n, self.d))
        return self.mean + np.sqrt(self.var) * z

    def log_Z(self):
        return float(0.5 * np.sum(_LOG_2PI + np.log(self.var)))

    def entropy(self):
        return float(0.5 * np.sum(_LOG_2PI + 1.0 + np.log(self.var)))


@dataclass(frozen=True, eq=False)
class GaussianMixture1D(AnalyticDensity):
    """One-dimensional Gaussian mixture; ``stds`` are standard deviations."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __init__(self, weights, means, stds, log_weights=None):
        w = np.atleast_1d(np.asarray(weights, dtype=float))
        m = np.atleast_1d(np.asarray(means, dtype=float))
        s = np.atleast_1d(np.asarray(stds, dtype=float))
        if not (w.shape == m.shape == s.shape):
            raise ValueError("weights, means and stds must have the same length")
        if np.any(w <= 0) or np.any(s <= 0):
            raise ValueError("weights and stds must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)
        lw = np.log(w) if log_weights is None else np.asarray(log_weights, dtype=float)
        object.__setattr__(self, "_log_weights", lw)

    d = 1

    def _component_logs(self, x):
        x = as_points(x)[:, 0]
        r = (x[:, None] - self.means) / self.stds
        return self._log_weights - 0.5 * r**2 - np.log(self.stds) - 0.5 * _LOG_2PI

    def log_pdf(self, x):
        return logsumexp(self._component_logs(x), axis=1)

    def responsibilities(self, x):
        c = self._component_logs(x)
        return np.exp(c - logsumexp(c, axis=1, keepdims=True))

    def score(self, x):
        x = as_points(x)
        resp = self.responsibilities(x)
        comp = -(x - self.means) / self.stds**2
        return np.sum(resp * comp, axis=1, keepdims=True)

    def sample(self, stream, n):
        u = stream.uniform(n)
        z = stream.normal(n)
        k = np.searchsorted(np.cumsum(self.weights), u, side="right")
        k = np.minimum(k, len(self.weights) - 1)
        return (self.means[k] + self.stds[k] * z)[:, None]

    def log_Z(self):
        return 0.0

    def entropy(self):
        lo = float(np.min(self.means - 40 * self.stds))
        hi = float(np.max(self.means + 40 * self.stds))
        return quadrature_entropy(self, lo, hi, 200001)


def mixture_from_z(z, means=(-5.0, 5.0), stds=(1.0, 1.0)):
    """``sigmoid(z) N(-5, 1) + (1 - sigmoid(z)) N(5, 1)``."""
    z = float(z)
    w1, w2 = expit(z), expit(-z)
    lw = np.array([-np.logaddexp(0.0, -z), -np.logaddexp(0.0, z)])
    # expit(z) + expit(-z) can differ from 1 by an ulp
    w = np.array([w1, w2]) / (w1 + w2)
    return GaussianMixture1D(w, means, stds, log_weights=lw)


@dataclass(frozen=True, eq=False)
class OuOracle:
    """Diagonal Ornstein-Uhlenbeck / ULA reference for a Gaussian target."""

    mu: np.ndarray
    sigma2: np.ndarray
    h: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        s2 = np.broadcast_to(np.asarray(self.sigma2, dtype=float), mu.shape).copy()
        if np.any(s2 <= 0):
            raise ValueError("sigma2 entries must be positive")
        if self.h and not 0 < self.h < s2.min():
            raise ValueError("ULA divergent/invalid step: need 0 < h < min(sigma2)")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", s2)


def ula_limit_covariance(sigma2, h):
    """Stationary variances of ULA on a diagonal Gaussian: ``s2 / (1 - h / (2 s2))``."""
    s2 = np.atleast_1d(np.asarray(sigma2, dtype=float))
    if not 0 < h < s2.min():
        raise ValueError(
            f"ULA divergent/invalid step: h={h} outside (0, {s2.min()})"
        )
    return s2 / (1.0 - h / (2.0 * s2))


def ou_law_at_time(oracle: OuOracle, x0, t):
    """Mean and diagonal covariance of the OU process ``dX = -(X-mu)/s2 dt + sqrt(2) dW``."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be non-negative")
    x0 = np.asarray(x0, dtype=float)
    decay = np.exp(-t / oracle.sigma2)
    mean = oracle.mu + decay * (x0 - oracle.mu)
    cov = oracle.sigma2 * -np.expm1(-2.0 * t / oracle.sigma2)
    return mean, cov


# ---------------------------------------------------------------------------
# 1-D trapezoid oracles
# ---------------------------------------------------------------------------


def trapezoid_grid(rho: AnalyticDensity, lo, hi, n, tol=1e-10):
    if rho.d != 1:
        raise ValueError("quadrature oracles are one-dimensional")
    if n < 1000:
        raise ValueError("quadrature needs n >= 1000 grid points")
    x = np.linspace(lo, hi, n)
    lp = rho.log_pdf(x)
    edge = np.exp(lp[[0, -1]])
    if np.any(edge > tol):
        raise ValueError(
            f"grid [{lo}, {hi}] does not cover the density (boundary pdf {edge.max():.3g})"
        )
    return x, lp


def quadrature_mass(rho, lo=-15.0, hi=15.0, n=20001):
    x, lp = trapezoid_grid(rho, lo, hi, n)
    return float(np.trapezoid(np.exp(lp), x))


def quadrature_entropy(rho, lo=-15.0, hi=15.0, n=20001):
    x, lp = trapezoid_grid(rho, lo, hi, n)
    p = np.exp(lp)
    return float(-np.trapezoid(p * lp, x))


def quadrature_kl(rho1, rho2, lo=-15.0, hi=15.0, n=20001):
    """Trapezoid estimate of ``KL(rho1 || rho2)`` on ``[lo, hi]``."""
    x, lp1 = trapezoid_grid(rho1, lo, hi, n)
    _, lp2 = trapezoid_grid(rho2, lo, hi, n)
    p1 = np.exp(lp1)
    return float(np.trapezoid(p1 * (lp1 - lp2), x))
