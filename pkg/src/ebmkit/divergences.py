"""Monte Carlo estimators of divergences, cross-entropy and ``log Z``, plus
the two sampling-free objectives (score matching and NCE).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit, logsumexp

from .core import EnergyModel, NumericalError, RngStream, as_points, check_finite
from .densities import AnalyticDensity
from .mlp import MLP

__all__ = [
    "DivergenceEstimate",
    "kl_mc",
    "fisher_mc",
    "cross_entropy",
    "log_z_importance",
    "LinearScore",
    "MlpScore",
    "score_matching_loss",
    "fit_score_matching",
    "nce_loss",
    "fit_nce",
]


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    std_error: float
    n_samples: int


def _mean_se(v):
    v = np.asarray(v, dtype=float)
    n = v.size
    return DivergenceEstimate(float(v.mean()), float(v.std(ddof=1) / np.sqrt(n)), n)


def kl_mc(rho1: AnalyticDensity, rho2: AnalyticDensity, n, stream: RngStream):
    """Mean and standard error of ``log rho1(x) - log rho2(x)``, ``x ~ rho1``."""
    if n < 2:
        raise ValueError("need n >= 2 samples")
    x = rho1.sample(stream, n)
    v = rho1.log_pdf(x) - rho2.log_pdf(x)
    if not np.all(np.isfinite(v)):
        raise NumericalError("log-density is -inf on the support of rho1")
    return _mean_se(v)


def fisher_mc(rho1: AnalyticDensity, rho2: AnalyticDensity, n, stream: RngStream):
    """Mean and standard error of ``|score1(x) - score2(x)|^2``, ``x ~ rho1``."""
    if n < 2:
        raise ValueError("need n >= 2 samples")
    x = rho1.sample(stream, n)
    diff = rho1.score(x) - rho2.score(x)
    check_finite(diff, "score difference")
    return _mean_se(np.sum(diff**2, axis=1))


def cross_entropy(U: EnergyModel, log_Z, data):
    """``log Z + mean U(data)``."""
    data = as_points(data)
    if len(data) < 1:
        raise ValueError("empty data set")
    return float(log_Z + U.energy(data).mean())


def log_z_importance(U: EnergyModel, proposal: AnalyticDensity, n, stream: RngStream):
    """Importance-sampling estimate of ``log Z`` with a delta-method error bar."""
    x = proposal.sample(stream, n)
    lw = -U.energy(x) - proposal.log_pdf(x)
    if not np.any(np.isfinite(lw)):
        raise NumericalError("all importance weights are zero")
    lse = logsumexp(lw)
    w = np.exp(lw - lw.max())
    rel = w.std(ddof=1) / (np.sqrt(n) * w.mean())
    return DivergenceEstimate(float(lse - np.log(n)), float(rel), n)


# ---------------------------------------------------------------------------
# Score matching
# ---------------------------------------------------------------------------


class LinearScore:
    """``s(x) = -theta x`` with a single scalar parameter."""

    def __init__(self, theta=0.0):
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float)).copy()

    def with_theta(self, theta):
        return LinearScore(theta)

    def value(self, x):
        return -self.theta[0] * as_points(x)

    def vjp(self, x, g):
        """Parameter gradient of ``sum_i g_i . s(x_i)``."""
        return np.array([-np.sum(g * as_points(x))])

    def trace_and_grad(self, x):
        x = as_points(x)
        n, d = x.shape
        return np.full(n, -self.theta[0] * d), np.array([-float(n * d)])


class MlpScore:
    """Vector-valued tanh MLP ``R^d -> R^d`` used as a score head."""

    def __init__(self, d, widths=(16, 16), theta=None, stream=None):
        self.d = int(d)
        self.widths = tuple(widths)
        self.net = MLP((self.d, *self.widths, self.d))
        if theta is None:
            theta = self.net.init(stream if stream is not None else RngStream(0))
        self.theta = np.asarray(theta, dtype=float).copy()

    def with_theta(self, theta):
        return MlpScore(self.d, self.widths, theta=theta)

    def value(self, x):
        return self.net.forward(self.theta, as_points(x))[0]

    def vjp(self, x, g):
        _, acts = self.net.forward(self.theta, as_points(x))
        return self.net.backward(self.theta, acts, g)[0]

    def trace_and_grad(self, x):
        return self.net.jacobian_trace(self.theta, as_points(x), with_grad=True)


def score_matching_loss(model, data):
    """``mean(1/2 |s(x)|^2 + tr d_x s(x))`` and its parameter gradient."""
    x = as_points(data)
    n = len(x)
    s = model.value(x)
    tr, g_tr = model.trace_and_grad(x)
    loss = float(np.mean(0.5 * np.sum(s**2, axis=1) + tr))
    grad = (model.vjp(x, s) + g_tr) / n
    return loss, grad


def fit_score_matching(model, data, learning_rate=0.5, n_steps=200):
    """Full-batch gradient descent on the score-matching objective."""
    for _ in range(n_steps):
        _, g = score_matching_loss(model, data)
        model = model.with_theta(model.theta - learning_rate * g)
    return model


# ---------------------------------------------------------------------------
# Noise-contrastive estimation
# ---------------------------------------------------------------------------


def nce_loss(U: EnergyModel, log_Z_param, noise: AnalyticDensity, data, noise_samples):
    """Negated NCE objective with ``f = -U - log_Z_param - log rho_noise``.

    Returns ``(loss, grad_theta, grad_log_Z)``.
    """
    xd, xn = as_points(data), as_points(noise_samples)
    fd = -U.energy(xd) - log_Z_param - noise.log_pdf(xd)
    fn = -U.energy(xn) - log_Z_param - noise.log_pdf(xn)
    loss = float(-np.mean(log_expit(fd)) - np.mean(log_expit(-fn)))
    cd, cn = expit(-fd), expit(fn)
    grad_theta = U.mean_grad_theta(xd, cd) * cd.mean() - U.mean_grad_theta(xn, cn) * cn.mean()
    grad_c = float(cd.mean() - cn.mean())
    return loss, grad_theta, grad_c


def fit_nce(U: EnergyModel, noise, data, noise_samples, log_Z0=0.0, tol=1e-10, maxiter=500):
    """Minimize the NCE loss over ``(theta, log_Z)`` with L-BFGS.

    Returns ``(model, log_Z_param, final_loss)``.
    """
    p = U.n_params

    def fun(v):
        loss, gt, gc = nce_loss(U.with_theta(v[:p]), v[p], noise, data, noise_samples)
        return loss, np.append(gt, gc)

    v0 = np.append(U.theta, log_Z0)
    res = minimize(fun, v0, jac=True, method="L-BFGS-B", options={"gtol": tol, "maxiter": maxiter})
    return U.with_theta(res.x[:p]), float(res.x[p]), float(res.fun)
