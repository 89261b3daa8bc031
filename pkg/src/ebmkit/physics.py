"""Thermodynamic identities checked numerically on the analytic families."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigError, EnergyModel, NumericalError, RngStream
from .densities import AnalyticDensity, GaussianMixture1D, quadrature_entropy

__all__ = [
    "ThermoReport",
    "free_energy_residual",
    "StepDensity",
    "maxent_uniform",
    "MaxEntCheck",
    "random_step_densities",
    "gaussian_maxent_check",
]


@dataclass(frozen=True)
class ThermoReport:
    log_Z: float
    mean_energy: float
    entropy: float
    residual: float
    beta: float
    n_samples: int
    energy_std_error: float


def free_energy_residual(U: EnergyModel, beta, oracle: AnalyticDensity, n, stream: RngStream,
                         tol=1e-6):
    """``log Z + beta E[U] - H`` for the Boltzmann density of ``beta U``.

    ``log Z`` is read off pointwise from the oracle at ten sampled points
    (which also checks that the oracle really is ``exp(-beta U) / Z``),
    ``E[U]`` is a Monte Carlo mean over ``n`` oracle draws and ``H`` is
    the oracle's closed-form or quadrature entropy.
    """
    if n < 10:
        raise ConfigError("need at least 10 samples")
    x = oracle.sample(stream, n)
    u = U.energy(x)
    probe = -beta * u[:10] - oracle.log_pdf(x[:10])
    log_Z = float(np.mean(probe))
    if np.max(np.abs(probe - log_Z)) > tol:
        raise NumericalError("oracle/energy mismatch: oracle is not exp(-beta U)/Z")
    H = oracle.entropy()
    if H is None:
        if x.shape[1] != 1:
            raise ConfigError("oracle has no entropy and is not one-dimensional")
        H = quadrature_entropy(oracle, float(x.min()) - 10, float(x.max()) + 10, 200001)
    ubar = float(u.mean())
    se = float(u.std(ddof=1) / np.sqrt(n))
    return ThermoReport(log_Z, ubar, float(H), log_Z + beta * ubar - float(H), float(beta), int(n), se)


@dataclass(frozen=True)
class StepDensity:
    """Piecewise-constant density on ``edges`` with ``levels`` per bin."""

    edges: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        lv = np.asarray(self.levels, dtype=float)
        if len(e) != len(lv) + 1 or np.any(np.diff(e) <= 0):
            raise ValueError("edges must be increasing with one more entry than levels")
        if np.any(lv < 0):
            raise ValueError("levels must be non-negative")
        mass = float(np.sum(lv * np.diff(e)))
        if abs(mass - 1.0) > 1e-12:
            raise ValueError(f"step density has mass {mass}, not 1")
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "levels", lv)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, len(self.levels) - 1)
        inside = (x >= self.edges[0]) & (x <= self.edges[-1])
        return np.where(inside, self.levels[i], 0.0)

    def entropy(self):
        w = np.diff(self.edges)
        lv = self.levels
        pos = lv > 0
        return float(-np.sum(w[pos] * lv[pos] * np.log(lv[pos]))) + 0.0


def random_step_densities(lo, hi, count, stream: RngStream, n_bins=8, amplitude=0.5):
    """``count`` normalized step densities whose levels are randomly perturbed."""
    edges = np.linspace(lo, hi, n_bins + 1)
    out = []
    for _ in range(count):
        lv = 1.0 + amplitude * (2 * stream.uniform(n_bins) - 1)
        lv = lv / np.sum(lv * np.diff(edges))
        out.append(StepDensity(edges, lv))
    return out


@dataclass(frozen=True)
class MaxEntCheck:
    entropy: float
    max_competitor_entropy: float
    n_competitors: int

    @property
    def holds(self):
        return self.entropy > self.max_competitor_entropy


def maxent_uniform(lo, hi, stream: RngStream = None, n_perturb=50):
    """The uniform density on ``[lo, hi]`` and its comparison against
    ``n_perturb`` random step densities on the same interval."""
    if not hi > lo:
        raise ConfigError("need hi > lo")
    uniform = StepDensity(np.array([lo, hi], dtype=float), np.array([1.0 / (hi - lo)]))
    stream = stream if stream is not None else RngStream(0, 1)
    others = random_step_densities(lo, hi, n_perturb, stream)
    best = max(o.entropy() for o in others)
    return uniform, MaxEntCheck(uniform.entropy(), best, n_perturb)


def gaussian_maxent_check(var=1.0, n_perturb=20, stream: RngStream = None):
    """Compare the entropy of ``N(0, var)`` with symmetric two-component
    mixtures of the same mean and variance."""
    stream = stream if stream is not None else RngStream(0, 2)
    h_gauss = 0.5 * np.log(2 * np.pi * np.e * var)
    hs = []
    sd = np.sqrt(var)
    for _ in range(n_perturb):
        delta = sd * (0.3 + 0.65 * stream.uniform())
        s = np.sqrt(var - delta**2)
        mix = GaussianMixture1D([0.5, 0.5], [-delta, delta], [s, s])
        hs.append(quadrature_entropy(mix, -12 * sd, 12 * sd, 100001))
    return MaxEntCheck(float(h_gauss), float(max(hs)), n_perturb)
