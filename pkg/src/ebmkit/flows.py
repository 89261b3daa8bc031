"""Generative dynamics: stochastic interpolants and score-based diffusion.

Time-dependent vector fields expose ``value(x, t)`` and ``vjp(x, t, g)``.
Every training objective here is a weighted quadratic regression on
sampled ``(x, t, target)`` triples, so one fitter serves all of them:
closed-form least squares for fields that are linear in their parameters,
Adam for MLP fields.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import legendre

from .core import ConfigError, NumericalError, RngStream, StreamBank, as_points, map_chunks
from .densities import OuOracle, ou_law_at_time
from .mlp import MLP

__all__ = [
    "InterpolantSpec",
    "interpolant_sample",
    "LinearTimeField",
    "MlpField",
    "SigmaScaledScore",
    "RegressionBatch",
    "interpolant_batch",
    "loss_b",
    "loss_s",
    "dsm_batch",
    "dsm_loss",
    "fit_least_squares",
    "fit_adam",
    "DsmConfig",
    "dsm_train",
    "generate_ode",
    "generate_sde",
    "reverse_sde_generate",
    "ou_sigma",
    "gaussian_velocity",
    "gaussian_interp_var",
]


# ---------------------------------------------------------------------------
# Interpolant
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InterpolantSpec:
    """Linear interpolant ``(1-t) x0 + t x1 + a sqrt(t(1-t)) z``.

    ``a = 0`` gives the deterministic interpolant (velocity only);
    ``epsilon`` is the SDE noise level used at generation time.
    """

    a: float = 1.0
    epsilon: float = 0.0
    t_min: float = 0.01

    def __post_init__(self):
        if self.a < 0:
            raise ConfigError("interpolant amplitude a must be >= 0")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if not 0 < self.t_min < 0.5:
            raise ConfigError("t_min must lie in (0, 0.5)")

    def gamma(self, t):
        t = np.asarray(t, dtype=float)
        return self.a * np.sqrt(t * (1.0 - t))

    def gamma_dot(self, t):
        t = np.asarray(t, dtype=float)
        return self.a * (1.0 - 2.0 * t) / (2.0 * np.sqrt(t * (1.0 - t)))


def _time_column(t, n):
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        t = np.full(n, float(t))
    if t.shape != (n,):
        raise ValueError(f"t must be a scalar or have shape ({n},)")
    return t


def interpolant_sample(spec: InterpolantSpec, x0, x1, t, stream: RngStream):
    """Draw ``X_t`` for paired endpoints.

    Returns ``(X_t, z, dI_dt, gamma_dot)``.  At ``t`` in {0, 1} the endpoint
    is returned exactly and ``gamma_dot`` is reported as 0.
    """
    x0, x1 = as_points(x0), as_points(x1)
    if x0.shape != x1.shape:
        raise ValueError("x0 and x1 must have the same shape")
    n, d = x0.shape
    t = _time_column(t, n)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("t must lie in [0, 1]")
    z = stream.normal((n, d))
    tc = t[:, None]
    xt = (1.0 - tc) * x0 + tc * x1 + spec.gamma(tc) * z
    inner = (t > 0) & (t < 1)
    gdot = np.zeros(n)
    gdot[inner] = spec.gamma_dot(t[inner])
    xt[t == 0] = x0[t == 0]
    xt[t == 1] = x1[t == 1]
    return xt, z, x1 - x0, gdot


def gaussian_interp_var(t, a):
    """Variance of ``X_t`` for unit-variance independent Gaussian endpoints."""
    t = np.asarray(t, dtype=float)
    return (1 - t) ** 2 + t**2 + a**2 * t * (1 - t)


def gaussian_velocity(x, t, m, a):
    """Exact velocity between ``N(0, 1)`` and ``N(m, 1)`` under the independent coupling."""
    k = (2 * t - 1) * (1 - 0.5 * a**2) / gaussian_interp_var(t, a)
    return m + k * (x - t * m)


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


class LinearTimeField:
    """``v(x, t) = sum_k P_k(tau(t)) (A_k x + c_k)`` with Legendre ``P_k``.

    ``tau`` maps ``t_range`` onto ``[-1, 1]``, linearly or in ``log t``.
    The field is linear in ``theta`` (flattened ``(K (d+1), d)`` matrix).
    """

    def __init__(self, d, degree=6, t_range=(0.0, 1.0), log_time=False, role="b", theta=None):
        self.d, self.degree = int(d), int(degree)
        self.t_range = (float(t_range[0]), float(t_range[1]))
        self.log_time = bool(log_time)
        self.role = role
        if self.log_time and self.t_range[0] <= 0:
            raise ConfigError("log-time basis needs t_range[0] > 0")
        self.n_features = (self.degree + 1) * (self.d + 1)
        shape = (self.n_features * self.d,)
        self.theta = np.zeros(shape) if theta is None else np.asarray(theta, dtype=float).copy()
        if self.theta.shape != shape:
            raise ValueError(f"expected {shape[0]} parameters")

    def with_theta(self, theta):
        return LinearTimeField(self.d, self.degree, self.t_range, self.log_time, self.role, theta)

    def _tau(self, t):
        lo, hi = self.t_range
        if self.log_time:
            t, lo, hi = np.log(np.maximum(t, 1e-300)), np.log(lo), np.log(hi)
        return 2.0 * (t - lo) / (hi - lo) - 1.0

    def features(self, x, t):
        x = as_points(x)
        n = len(x)
        P = legendre.legvander(self._tau(_time_column(t, n)), self.degree)
        xa = np.hstack([x, np.ones((n, 1))])
        return (P[:, :, None] * xa[:, None, :]).reshape(n, -1)

    def value(self, x, t):
        return self.features(x, t) @ self.theta.reshape(self.n_features, self.d)

    __call__ = value

    def vjp(self, x, t, g):
        return (self.features(x, t).T @ g).ravel()


class MlpField:
    """tanh MLP on the concatenated input ``(x / x_scale, t)``."""

    def __init__(self, d, widths=(32, 32), x_scale=1.0, role="b", theta=None, stream=None):
        self.d = int(d)
        self.widths = tuple(widths)
        self.x_scale = float(x_scale)
        self.role = role
        self.net = MLP((self.d + 1, *self.widths, self.d))
        if theta is None:
            theta = self.net.init(stream if stream is not None else RngStream(0))
        self.theta = np.asarray(theta, dtype=float).copy()

    def with_theta(self, theta):
        return MlpField(self.d, self.widths, self.x_scale, self.role, theta)

    def _input(self, x, t):
        x = as_points(x)
        return np.hstack([x / self.x_scale, _time_column(t, len(x))[:, None]])

    def value(self, x, t):
        return self.net.forward(self.theta, self._input(x, t))[0]

    __call__ = value

    def vjp(self, x, t, g):
        _, acts = self.net.forward(self.theta, self._input(x, t))
        return self.net.backward(self.theta, acts, g)[0]


class SigmaScaledScore:
    """Score ``base(x, t) / sigma(t)``, the usual noise-conditioned parameterization."""

    def __init__(self, base, sigma: Callable = None):
        self.base = base
        self.sigma = sigma if sigma is not None else ou_sigma
        self.role = "s"

    @property
    def theta(self):
        return self.base.theta

    def with_theta(self, theta):
        return SigmaScaledScore(self.base.with_theta(theta), self.sigma)

    def value(self, x, t):
        n = len(as_points(x))
        return self.base.value(x, t) / self.sigma(_time_column(t, n))[:, None]

    __call__ = value

    def vjp(self, x, t, g):
        n = len(as_points(x))
        return self.base.vjp(x, t, g / self.sigma(_time_column(t, n))[:, None])


# ---------------------------------------------------------------------------
# Regression batches and losses
# ---------------------------------------------------------------------------


@dataclass
class RegressionBatch:
    x: np.ndarray
    t: np.ndarray
    target: np.ndarray
    weight: np.ndarray
    z: Optional[np.ndarray] = None


def interpolant_batch(spec: InterpolantSpec, x0, x1, stream: RngStream, role="b"):
    """Sample ``t ~ U(t_min, 1 - t_min)`` and the regression target of ``role``.

    The velocity target is ``dI/dt + gamma_dot z``; the score target is
    ``-z / gamma``.
    """
    x0 = as_points(x0)
    n = len(x0)
    t = spec.t_min + (1 - 2 * spec.t_min) * stream.uniform(n)
    xt, z, dI, gdot = interpolant_sample(spec, x0, x1, t, stream)
    if role == "b":
        target = dI + gdot[:, None] * z
    elif role == "s":
        g = spec.gamma(t)
        if np.any(g < 1e-8):
            raise NumericalError("gamma(t) < 1e-8 at a sampled time; the score loss needs a > 0")
        target = -z / g[:, None]
    else:
        raise ValueError(f"unknown role {role!r}")
    return RegressionBatch(xt, t, target, np.ones(n), z)


def _quad_loss(field, batch: RegressionBatch):
    """``mean(1/2 |v|^2 - target . v)`` and its parameter gradient."""
    v = field.value(batch.x, batch.t)
    n = len(v)
    loss = float(np.mean(0.5 * np.sum(v**2, axis=1) - np.sum(batch.target * v, axis=1)))
    return loss, field.vjp(batch.x, batch.t, v - batch.target) / n


def loss_b(b, spec: InterpolantSpec, x0, x1, stream: RngStream):
    """Monte Carlo velocity loss ``E[1/2 |b|^2 - (dI/dt + gamma_dot z) . b]``."""
    return _quad_loss(b, interpolant_batch(spec, x0, x1, stream, "b"))


def loss_s(s, spec: InterpolantSpec, x0, x1, stream: RngStream):
    """Monte Carlo score loss ``E[1/2 |s|^2 + z . s / gamma]``."""
    return _quad_loss(s, interpolant_batch(spec, x0, x1, stream, "s"))


def ou_sigma(t):
    """Noise scale of the forward OU process ``dX = -X dt + sqrt(2) dW``."""
    return np.sqrt(-np.expm1(-2.0 * np.asarray(t, dtype=float)))


_UNIT_OU = OuOracle(0.0, 1.0)


def dsm_batch(data, stream: RngStream, t_min=0.01, T=3.0, n=None):
    """Noised data ``x_t ~ N(e^{-t} x0, 1 - e^{-2t})`` with its conditional score.

    ``x0`` is the full data set, or ``n`` draws with replacement from it.
    Weights are ``lambda(t) = var(t)``.
    """
    data = as_points(data)
    if len(data) == 0:
        raise ValueError("empty data set")
    x0 = data if n is None else data[stream.integers(len(data), n)]
    m, d = x0.shape
    t = t_min + (T - t_min) * stream.uniform(m)
    mean, var = ou_law_at_time(_UNIT_OU, x0, t[:, None])
    z = stream.normal((m, d))
    xt = mean + np.sqrt(var) * z
    return RegressionBatch(xt, t, -z / np.sqrt(var), var[:, 0], z)


def dsm_loss(s, batch: RegressionBatch):
    """``mean(lambda |s - target|^2)`` and its parameter gradient."""
    v = s.value(batch.x, batch.t)
    r = v - batch.target
    w = batch.weight[:, None]
    loss = float(np.mean(batch.weight * np.sum(r**2, axis=1)))
    return loss, 2.0 * s.vjp(batch.x, batch.t, w * r) / len(v)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def fit_least_squares(field, batch: RegressionBatch, ridge=1e-10):
    """Exact weighted least-squares fit for fields linear in their parameters."""
    if isinstance(field, SigmaScaledScore):
        sig = field.sigma(batch.t)
        inner = RegressionBatch(batch.x, batch.t, batch.target * sig[:, None], batch.weight / sig**2)
        return SigmaScaledScore(fit_least_squares(field.base, inner, ridge), field.sigma)
    if not isinstance(field, LinearTimeField):
        raise ConfigError("least-squares fitting needs a LinearTimeField")
    Phi = field.features(batch.x, batch.t)
    w = batch.weight[:, None]
    A = Phi.T @ (w * Phi)
    A[np.diag_indices_from(A)] += ridge * np.trace(A) / len(A)
    B = Phi.T @ (w * batch.target)
    return field.with_theta(np.linalg.solve(A, B).ravel())


def fit_adam(field, loss_fn, n_steps, learning_rate=1e-3, betas=(0.9, 0.999), eps=1e-8, log_every=0,
             cosine=False):
    """Adam descent on ``loss_fn(field, step) -> (loss, grad)``.

    With ``cosine`` the step size decays as ``lr (1 + cos(pi k / n_steps)) / 2``.

    Returns ``(field, curve)`` where ``curve`` rows are ``(step, loss, grad_norm)``.
    """
    theta = field.theta.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    curve = []
    b1, b2 = betas
    for k in range(n_steps):
        loss, g = loss_fn(field.with_theta(theta), k)
        if not np.isfinite(loss) or not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite loss or gradient at step {k}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        lr = learning_rate * 0.5 * (1 + np.cos(np.pi * k / n_steps)) if cosine else learning_rate
        theta = theta - lr * (m / (1 - b1 ** (k + 1))) / (np.sqrt(v / (1 - b2 ** (k + 1))) + eps)
        if log_every and k % log_every == 0:
            curve.append((k, loss, float(np.linalg.norm(g))))
    return field.with_theta(theta), curve


@dataclass
class DsmConfig:
    T: float = 3.0
    t_min: float = 0.01
    n_steps: int = 6000
    batch_size: int = 512
    learning_rate: float = 5e-3
    cosine: bool = True
    log_every: int = 0

    def __post_init__(self):
        if not 0 < self.t_min < self.T:
            raise ConfigError("need 0 < t_min < T")
        if self.n_steps < 0 or self.batch_size < 1:
            raise ConfigError("n_steps must be >= 0 and batch_size >= 1")


def dsm_train(score_field, data, cfg: DsmConfig, stream: RngStream):
    """Denoising score matching on the OU forward process.

    Linear fields are solved in one least-squares pass over
    ``cfg.n_steps * cfg.batch_size`` noised samples; MLP fields take
    ``cfg.n_steps`` Adam steps on fresh minibatches.  Returns
    ``(field, curve)``.
    """
    base = score_field.base if isinstance(score_field, SigmaScaledScore) else score_field
    if isinstance(base, LinearTimeField):
        batch = dsm_batch(data, stream, cfg.t_min, cfg.T, n=cfg.n_steps * cfg.batch_size)
        fitted = fit_least_squares(score_field, batch)
        return fitted, [(0, dsm_loss(fitted, batch)[0], 0.0)]

    def loss_fn(field, k):
        return dsm_loss(field, dsm_batch(data, stream, cfg.t_min, cfg.T, n=cfg.batch_size))

    return fit_adam(score_field, loss_fn, cfg.n_steps, cfg.learning_rate, log_every=cfg.log_every,
                    cosine=cfg.cosine)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def _check(x, step):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite state at integration step {step}")


def _by_block(fn, x, workers, streams=None):
    """Integrate fixed-size sample blocks independently (optionally threaded)."""
    x = as_points(x).astype(float, copy=True)
    out = np.empty_like(x)

    def work(sl):
        out[sl] = fn(x[sl], None if streams is None else streams[sl])

    map_chunks(work, len(x), workers)
    return out


def generate_ode(b, x0_batch, n_time_steps=100, method="rk4", t_end=1.0, workers=1):
    """Integrate ``dX/dt = b(X, t)`` from ``t = 0`` to ``t_end``."""
    if n_time_steps < 1:
        raise ConfigError("n_time_steps must be >= 1")
    if method not in ("rk4", "euler"):
        raise ConfigError(f"unknown integrator {method!r}")
    return _by_block(lambda x, _: _ode(b, x, n_time_steps, method, t_end), x0_batch, workers)


def _ode(b, x, n_time_steps, method, t_end):
    dt = t_end / n_time_steps
    for k in range(n_time_steps):
        t = k * dt
        if method == "euler":
            x = x + dt * b(x, t)
        else:
            k1 = b(x, t)
            k2 = b(x + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = b(x + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = b(x + dt * k3, t + dt)
            x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        _check(x, k)
    return x


def generate_sde(b, s, epsilon, x0_batch, n_time_steps, streams: StreamBank, workers=1):
    """Euler-Maruyama on ``dX = (b + eps s) dt + sqrt(2 eps) dW`` over ``[0, 1]``.

    ``s`` may be ``None`` when ``epsilon == 0``.
    """
    if epsilon < 0:
        raise ConfigError("epsilon must be >= 0")
    if n_time_steps < 1:
        raise ConfigError("n_time_steps must be >= 1")
    if len(streams) != len(as_points(x0_batch)):
        raise ConfigError("one stream per sample is required")
    return _by_block(lambda x, st: _sde(b, s, epsilon, x, n_time_steps, st), x0_batch, workers, streams)


def _sde(b, s, epsilon, x, n_time_steps, streams):
    dt = 1.0 / n_time_steps
    for k in range(n_time_steps):
        t = k * dt
        drift = b(x, t)
        if epsilon > 0:
            drift = drift + epsilon * s(x, t)
        noise = streams.normal(x.shape[1])
        x = x + dt * drift + np.sqrt(2 * epsilon * dt) * noise
        _check(x, k)
    return x


def reverse_sde_generate(score, x_T_batch, T, n_steps, streams: StreamBank, t_min=0.01, workers=1):
    """Reverse-time Euler-Maruyama for the OU forward process, from ``T`` to ``t_min``.

    Each step maps ``x`` to ``x + dt (x + 2 s(x, t)) + sqrt(2 dt) xi``.
    """
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1")
    if not 0 <= t_min < T:
        raise ConfigError("need 0 <= t_min < T")
    return _by_block(lambda x, st: _reverse(score, x, T, t_min, n_steps, st), x_T_batch, workers, streams)


def _reverse(score, x, T, t_min, n_steps, streams):
    dt = (T - t_min) / n_steps
    for k in range(n_steps):
        t = T - k * dt
        x = x + dt * (x + 2.0 * score(x, t)) + np.sqrt(2 * dt) * streams.normal(x.shape[1])
        _check(x, k)
    return x
