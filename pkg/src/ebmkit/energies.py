"""Concrete energy families and the Hopfield/Ising energy.

Continuous families implement :class:`~ebmkit.core.EnergyModel`; the
Hopfield network works on spin vectors in ``{-1, +1}^N``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .core import EnergyModel, RngStream, as_points
from .densities import DiagGaussian, GaussianMixture1D, mixture_from_z
from .mlp import MLP

__all__ = [
    "QuadraticEnergy",
    "MixtureEnergy1D",
    "MlpEnergy",
    "ShiftedEnergy",
    "HopfieldNet",
    "ising_energy",
    "hebbian_couplings",
    "hopfield_retrieve",
    "overlap",
    "mlp_energy_gradients",
    "save_checkpoint",
    "load_checkpoint",
    "model_to_dict",
    "model_from_dict",
]

_LOG_2PI = np.log(2 * np.pi)


class QuadraticEnergy(EnergyModel):
    """``U(x) = sum_i (x_i - mu_i)^2 / (2 sigma2_i)`` with ``theta = (mu, log sigma2)``."""

    family = "quadratic"

    def __init__(self, mu, log_sigma2=None):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if log_sigma2 is None:
            log_sigma2 = np.zeros_like(mu)
        log_sigma2 = np.broadcast_to(np.asarray(log_sigma2, dtype=float), mu.shape)
        self.d = mu.size
        self.theta = np.concatenate([mu, log_sigma2])

    @classmethod
    def from_theta(cls, theta):
        theta = np.asarray(theta, dtype=float)
        d = theta.size // 2
        return cls(theta[:d], theta[d:])

    @property
    def mu(self):
        return self.theta[: self.d]

    @property
    def sigma2(self):
        return np.exp(self.theta[self.d :])

    def energy(self, x):
        return np.sum((as_points(x) - self.mu) ** 2 / (2 * self.sigma2), axis=1)

    def grad_x(self, x):
        return (as_points(x) - self.mu) / self.sigma2

    def grad_theta(self, x):
        r = as_points(x) - self.mu
        return np.concatenate([-r / self.sigma2, -(r**2) / (2 * self.sigma2)], axis=1)

    def with_theta(self, theta):
        return QuadraticEnergy.from_theta(theta)

    def log_Z(self):
        return float(0.5 * np.sum(_LOG_2PI + self.theta[self.d :]))

    def density(self):
        return DiagGaussian(self.mu, self.sigma2)

    def sample(self, stream, n):
        return self.density().sample(stream, n)


class MixtureEnergy1D(EnergyModel):
    """``U(x) = -log[s(z) N(x; m1, s1) + (1 - s(z)) N(x; m2, s2)]`` with ``theta = (z,)``.

    ``exp(-U)`` is normalized, so ``log Z = 0`` for every ``z``.
    """

    family = "mixture1d"
    d = 1

    def __init__(self, z=0.0, means=(-5.0, 5.0), stds=(1.0, 1.0)):
        self.theta = np.atleast_1d(np.asarray(z, dtype=float)).copy()
        if self.theta.size != 1:
            raise ValueError("mixture energy has a single parameter z")
        self.means = np.asarray(means, dtype=float)
        self.stds = np.asarray(stds, dtype=float)

    @property
    def z(self):
        return float(self.theta[0])

    def _comp(self, x):
        """Per-component log terms, shape ``(n,)`` each, and the flat ``x``."""
        x = as_points(x)[:, 0]
        r1 = (x - self.means[0]) / self.stds[0]
        r2 = (x - self.means[1]) / self.stds[1]
        c1 = log_expit(self.z) - 0.5 * r1 * r1 - np.log(self.stds[0])
        c2 = log_expit(-self.z) - 0.5 * r2 * r2 - np.log(self.stds[1])
        return c1, c2, x

    def energy(self, x):
        c1, c2, _ = self._comp(x)
        return 0.5 * _LOG_2PI - np.logaddexp(c1, c2)

    def _resp(self, x):
        c1, c2, x = self._comp(x)
        return expit(c1 - c2), x

    def grad_x(self, x):
        p1, x = self._resp(x)
        g1 = (x - self.means[0]) / self.stds[0] ** 2
        g2 = (x - self.means[1]) / self.stds[1] ** 2
        return (g2 + p1 * (g1 - g2))[:, None]

    def grad_theta(self, x):
        p1, _ = self._resp(x)
        # d/dz log rho = (1 - s) p1 - s (1 - p1) = p1 - s
        return (expit(self.z) - p1)[:, None]

    def with_theta(self, theta):
        return MixtureEnergy1D(theta, self.means, self.stds)

    def log_Z(self):
        return 0.0

    def density(self) -> GaussianMixture1D:
        return mixture_from_z(self.z, self.means, self.stds)

    def sample(self, stream, n):
        return self.density().sample(stream, n)


class MlpEnergy(EnergyModel):
    """``U(x) = MLP(x) + c |x|^2`` with tanh hidden layers ``d -> w1 -> w2 -> 1``.

    The quadratic term keeps ``x . grad U(x) > 0`` outside a compact set, so
    ``exp(-U)`` is integrable for any weights.
    """

    family = "mlp"

    def __init__(self, d, widths=(32, 32), c=1e-2, theta=None, stream=None):
        if c < 0:
            raise ValueError("confinement coefficient must be non-negative")
        self.d = int(d)
        self.widths = tuple(int(w) for w in widths)
        self.c = float(c)
        self.net = MLP((self.d, *self.widths, 1))
        if theta is None:
            stream = stream if stream is not None else RngStream(0)
            theta = self.net.init(stream)
        self.theta = np.asarray(theta, dtype=float).copy()
        self.net.unpack(self.theta)  # shape check

    def energy(self, x):
        x = as_points(x)
        out, _ = self.net.forward(self.theta, x)
        return out[:, 0] + self.c * np.sum(x**2, axis=1)

    def energy_and_grads(self, x):
        x = as_points(x)
        out, acts = self.net.forward(self.theta, x)
        g_theta, g_x = self.net.backward(self.theta, acts, np.ones_like(out), per_sample=True)
        u = out[:, 0] + self.c * np.sum(x**2, axis=1)
        return u, g_x + 2 * self.c * x, g_theta

    def grad_x(self, x):
        x = as_points(x)
        out, acts = self.net.forward(self.theta, x)
        _, g_x = self.net.backward(self.theta, acts, np.ones_like(out))
        return g_x + 2 * self.c * x

    def grad_theta(self, x):
        return self.energy_and_grads(x)[2]

    def mean_grad_theta(self, x, weights=None):
        x = as_points(x)
        out, acts = self.net.forward(self.theta, x)
        if weights is None:
            g = np.full_like(out, 1.0 / len(x))
        else:
            w = np.asarray(weights, dtype=float)
            g = (w / w.sum())[:, None]
        g_theta, _ = self.net.backward(self.theta, acts, g)
        return g_theta

    def with_theta(self, theta):
        return MlpEnergy(self.d, self.widths, self.c, theta=theta)


def mlp_energy_gradients(model: MlpEnergy, x):
    """``(U, grad_x, grad_theta)`` for a batch, all by reverse accumulation."""
    return model.energy_and_grads(x)


class ShiftedEnergy(EnergyModel):
    """``U + c``: same Boltzmann density, ``log Z`` lowered by ``c``."""

    def __init__(self, base: EnergyModel, shift):
        self.base = base
        self.shift = float(shift)
        self.d = base.d
        self.theta = base.theta
        self.family = base.family

    def energy(self, x):
        return self.base.energy(x) + self.shift

    def grad_x(self, x):
        return self.base.grad_x(x)

    def grad_theta(self, x):
        return self.base.grad_theta(x)

    def mean_grad_theta(self, x, weights=None):
        return self.base.mean_grad_theta(x, weights)

    def with_theta(self, theta):
        return ShiftedEnergy(self.base.with_theta(theta), self.shift)

    def log_Z(self):
        return self.base.log_Z() - self.shift


# ---------------------------------------------------------------------------
# Hopfield / Ising
# ---------------------------------------------------------------------------


def _check_spins(x):
    x = np.asarray(x)
    if not np.all((x == 1) | (x == -1)):
        raise ValueError("spin vectors must have entries in {-1, +1}")
    return x.astype(float)


@dataclass
class HopfieldNet:
    """Symmetric couplings ``J`` (zero diagonal), field ``h``, moment ``mu``.

    ``beta`` is the inverse temperature at which the Boltzmann machine reading
    of the same energy would be sampled; retrieval dynamics ignore it.
    """

    J: np.ndarray
    h: np.ndarray = None
    mu: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ValueError("J must be square")
        if not np.array_equal(J, J.T):
            raise ValueError("J must be symmetric")
        if np.any(np.diag(J) != 0):
            raise ValueError("J must have zero diagonal")
        self.J = J
        self.h = np.zeros(len(J)) if self.h is None else np.asarray(self.h, dtype=float)

    @property
    def n(self):
        return len(self.J)


def ising_energy(net: HopfieldNet, x):
    """``-1/2 sum_{i != j} J_ij x_i x_j - mu sum_j h_j x_j``.

    The half compensates for visiting every pair twice in the full
    symmetric sum.
    """
    x = _check_spins(x)
    return float(-0.5 * x @ net.J @ x - net.mu * net.h @ x)


def hebbian_couplings(patterns):
    """``J_ij = (1/n) sum_l y_i^l y_j^l`` off the diagonal, zero on it."""
    try:
        y = np.array([np.asarray(p) for p in patterns])
    except ValueError as exc:
        raise ValueError("patterns have ragged lengths") from exc
    if y.ndim != 2 or y.shape[0] < 1:
        raise ValueError("patterns have ragged lengths or are empty")
    y = _check_spins(y)
    J = y.T @ y / y.shape[0]
    np.fill_diagonal(J, 0.0)
    return J


def _sgn(v):
    return np.where(v >= 0, 1.0, -1.0)


def hopfield_retrieve(net: HopfieldNet, x0, max_iter=100):
    """Synchronous retrieval ``x <- sgn(J x + h)`` with ``sgn(0) = +1``.

    Returns ``(x, iterations, converged)`` where ``iterations`` counts the
    updates that changed the state.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    x = _check_spins(x0)
    for it in range(max_iter):
        x_new = _sgn(net.J @ x + net.h)
        if np.array_equal(x_new, x):
            return x, it, True
        x = x_new
    return x, max_iter, False


def overlap(x, y):
    """Magnetization overlap ``(1/N) sum_i x_i y_i``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return float(x @ y / x.size)


# ---------------------------------------------------------------------------
# JSON checkpoints
# ---------------------------------------------------------------------------


def model_to_dict(model: EnergyModel, metadata=None):
    meta = dict(metadata or {})
    if isinstance(model, MixtureEnergy1D):
        meta.setdefault("means", model.means.tolist())
        meta.setdefault("stds", model.stds.tolist())
    elif isinstance(model, MlpEnergy):
        meta.setdefault("widths", list(model.widths))
        meta.setdefault("c", model.c)
    # Python's float repr is the shortest string that round-trips exactly
    return {
        "family": model.family,
        "d": int(model.d),
        "theta": [float(t) for t in model.theta],
        "metadata": meta,
    }


def model_from_dict(obj):
    fam, theta, meta = obj["family"], np.asarray(obj["theta"], dtype=float), obj.get("metadata", {})
    if fam == "quadratic":
        return QuadraticEnergy.from_theta(theta)
    if fam == "mixture1d":
        return MixtureEnergy1D(theta, meta.get("means", (-5.0, 5.0)), meta.get("stds", (1.0, 1.0)))
    if fam == "mlp":
        return MlpEnergy(obj["d"], meta["widths"], meta["c"], theta=theta)
    raise ValueError(f"unknown model family {fam!r}")


def save_checkpoint(path, model, metadata=None):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, metadata), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
