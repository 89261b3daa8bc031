"""EBM trainers: contrastive divergence, persistent CD, and Jarzynski-reweighted
sequential training.

Gradients follow the ascent convention ``D = E_model[dU/dtheta] - E_data[dU/dtheta]``
(minus the cross-entropy gradient) and are always applied as
``theta <- theta + lr * D``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

from .core import (
    ConfigError,
    EnergyModel,
    NumericalError,
    RngStream,
    StreamBank,
    WalkerEnsemble,
    as_points,
    aux_stream,
    effective_sample_size,
    log_mean_exp,
    map_chunks,
)
from .densities import AnalyticDensity
from .samplers import ula_step

__all__ = [
    "TrainConfig",
    "TrainerState",
    "optimizer_step",
    "cd_gradient",
    "init_pcd",
    "pcd_update",
    "jarz_alpha",
    "init_jarzynski",
    "jarz_update",
    "systematic_resample",
    "train",
]


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    n_walkers: int = 1000
    ula_step: float = 0.01
    cd_inner_steps: int = 1
    optimizer: str = "sgd"
    resample_threshold: float = 0.5
    total_steps: int = 1000
    batch_size: Optional[int] = None
    alpha_theta: str = "split"
    workers: int = 1
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.n_walkers < 1:
            raise ConfigError("n_walkers must be >= 1")
        if not self.ula_step > 0:
            raise ConfigError("ula_step must be > 0")
        if self.cd_inner_steps < 1:
            raise ConfigError("cd_inner_steps must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0 < self.resample_threshold <= 1:
            raise ConfigError("resample_threshold must lie in (0, 1]")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.alpha_theta not in ("split", "current"):
            raise ConfigError("alpha_theta must be 'split' or 'current'")


@dataclass
class TrainerState:
    theta: np.ndarray
    k: int = 0
    ensemble: Optional[WalkerEnsemble] = None
    log_Z0: float = 0.0
    log_Z_running: float = float("nan")
    ce_trace: List[float] = field(default_factory=list)
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    aux: Optional[RngStream] = None
    n_resamples: int = 0
    cache: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).copy()
        if self.m is None:
            self.m = np.zeros_like(self.theta)
        if self.v is None:
            self.v = np.zeros_like(self.theta)


def optimizer_step(state: TrainerState, grad, cfg: TrainConfig):
    """Ascent step on ``grad``; bumps ``state.k``."""
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise NumericalError(f"non-finite gradient at step {state.k}")
    lr = cfg.learning_rate
    if cfg.optimizer == "sgd":
        state.theta = state.theta + lr * grad
    else:
        b1, b2 = cfg.adam_betas
        t = state.k + 1
        state.m = b1 * state.m + (1 - b1) * grad
        state.v = b2 * state.v + (1 - b2) * grad**2
        m_hat = state.m / (1 - b1**t)
        v_hat = state.v / (1 - b2**t)
        state.theta = state.theta + lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    state.k += 1
    return state


def _ula_all(U, x, h, bank: StreamBank, workers, step=None):
    out = np.empty_like(x)

    def work(sl):
        out[sl] = ula_step(U, x[sl], h, bank[sl], step=step)

    map_chunks(work, len(x), workers)
    return out


def _ula_from_grad(x, g, h, bank: StreamBank, workers, step=None):
    """ULA move with a precomputed gradient; noise is drawn per walker chunk."""
    noise = np.empty_like(x)

    def work(sl):
        noise[sl] = bank[sl].normal(x.shape[1])

    map_chunks(work, len(x), workers)
    out = x - h * g + np.sqrt(2 * h) * noise
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"ULA diverged at step {step}")
    return out


def _batch(data, cfg, stream):
    if cfg.batch_size is None or cfg.batch_size >= len(data):
        return data
    return data[stream.integers(len(data), cfg.batch_size)]


# ---------------------------------------------------------------------------
# Contrastive divergence
# ---------------------------------------------------------------------------


def cd_gradient(U: EnergyModel, data_batch, cfg: TrainConfig, stream: RngStream, bank: StreamBank,
                init="resample"):
    """CD estimate of ``D``: walkers restart at data and take ``P`` ULA steps.

    ``init="resample"`` draws ``N`` starting points with replacement;
    ``init="identity"`` starts one walker on every data point (``N = n``).
    """
    data = as_points(data_batch)
    if init == "identity":
        x = data.copy()
    else:
        x = data[stream.integers(len(data), cfg.n_walkers)]
    if len(bank) != len(x):
        raise ConfigError("stream bank size must match the number of walkers")
    for p in range(cfg.cd_inner_steps):
        x = _ula_all(U, x, cfg.ula_step, bank, cfg.workers, step=p)
    return U.mean_grad_theta(x) - U.mean_grad_theta(data)


# ---------------------------------------------------------------------------
# Persistent CD
# ---------------------------------------------------------------------------


def init_pcd(U: EnergyModel, data, cfg: TrainConfig, seed, positions=None):
    """Walkers start on random data points unless ``positions`` is given."""
    aux = aux_stream(seed)
    data = as_points(data)
    if positions is None:
        positions = data[aux.integers(len(data), cfg.n_walkers)]
    ens = WalkerEnsemble.create(positions, seed)
    return TrainerState(U.theta, ensemble=ens, aux=aux)


def pcd_update(state: TrainerState, U: EnergyModel, data_batch, cfg: TrainConfig):
    """Gradient from the persistent walkers, optimizer step, then one ULA sweep under ``theta_k``."""
    model = U.with_theta(state.theta)
    data = as_points(data_batch)
    ens = state.ensemble
    grad = model.mean_grad_theta(ens.positions) - model.mean_grad_theta(data)
    step = state.k
    optimizer_step(state, grad, cfg)
    ens.positions = _ula_all(model, ens.positions, cfg.ula_step, ens.streams, cfg.workers, step=step)
    return state


# ---------------------------------------------------------------------------
# Jarzynski-reweighted training
# ---------------------------------------------------------------------------


def _alpha(u_x, g_x, x, y, h):
    return u_x + 0.5 * np.sum((y - x) * g_x, axis=1) + 0.25 * h * np.sum(g_x**2, axis=1)


def jarz_alpha(U: EnergyModel, x, y, h):
    """``U(x) + (y - x) . grad U(x) / 2 + h |grad U(x)|^2 / 4``."""
    x, y = as_points(x), as_points(y)
    return _alpha(U.energy(x), U.grad_x(x), x, y, h)


def systematic_resample(log_weights, stream: RngStream):
    """Indices drawn by systematic resampling with one uniform offset."""
    w = np.exp(np.asarray(log_weights) - logsumexp(log_weights))
    n = len(w)
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    u = (stream.uniform() + np.arange(n)) / n
    return np.searchsorted(cdf, u, side="right").clip(0, n - 1)


def init_jarzynski(U: EnergyModel, cfg: TrainConfig, seed, proposal: Optional[AnalyticDensity] = None):
    """Walkers drawn from ``rho_theta0``.

    Families with an exact sampler (``U.sample``) and ``U.log_Z`` start with
    zero log-weights.  Otherwise walkers are drawn from ``proposal`` and carry
    their importance weights, with ``log Z_theta0`` set to the importance
    estimate; the weighted ensemble then represents ``rho_theta0`` exactly
    in expectation.
    """
    aux = aux_stream(seed)
    if proposal is None and hasattr(U, "sample") and hasattr(U, "log_Z"):
        x = U.sample(aux, cfg.n_walkers)
        ens = WalkerEnsemble.create(x, seed)
        log_Z0 = U.log_Z()
    elif proposal is not None:
        x = proposal.sample(aux, cfg.n_walkers)
        ens = WalkerEnsemble.create(x, seed)
        lw = -U.energy(x) - proposal.log_pdf(x)
        log_Z0 = log_mean_exp(lw)
        ens.log_weights = lw - log_Z0
    else:
        raise ConfigError(
            f"family {U.family!r} has no exact sampler; pass an importance proposal"
        )
    state = TrainerState(U.theta, ensemble=ens, log_Z0=float(log_Z0), aux=aux)
    state.log_Z_running = state.log_Z0 + log_mean_exp(ens.log_weights)
    return state


def jarz_update(state: TrainerState, U: EnergyModel, data_batch, cfg: TrainConfig, data_full=None):
    """One Jarzynski training step.

    Order: record the cross-entropy of ``theta_k``, form the reweighted
    gradient from ``(X_k, A_k)``, step the optimizer to ``theta_{k+1}``, move
    walkers by ULA under ``theta_k``, update ``A`` with ``alpha_{k+1}`` taken
    at ``theta_{k+1}`` and ``alpha_k`` at ``theta_k``, then resample if the
    ESS fraction falls below the threshold.
    """
    ens = state.ensemble
    data = as_points(data_batch)
    data_full = data if data_full is None else as_points(data_full)
    model_k = U.with_theta(state.theta)
    A = ens.log_weights
    n = ens.n_walkers

    log_Z = state.log_Z0 + log_mean_exp(A)
    state.log_Z_running = log_Z
    state.ce_trace.append(log_Z + float(model_k.energy(data_full).mean()))

    w = np.exp(A - A.max())
    grad = model_k.mean_grad_theta(ens.positions, w) - model_k.mean_grad_theta(data)
    step = state.k
    optimizer_step(state, grad, cfg)
    model_next = U.with_theta(state.theta) if cfg.alpha_theta == "split" else model_k

    x = ens.positions
    cache = state.cache
    if cache is not None and np.array_equal(cache[0], model_k.theta):
        u_x, g_x = cache[1], cache[2]
    else:
        u_x, g_x = model_k.energy(x), model_k.grad_x(x)
    y = _ula_from_grad(x, g_x, cfg.ula_step, ens.streams, cfg.workers, step)
    fwd = _alpha(u_x, g_x, x, y, cfg.ula_step)
    u_y, g_y = model_next.energy(y), model_next.grad_x(y)
    bwd = _alpha(u_y, g_y, y, x, cfg.ula_step)
    state.cache = (model_next.theta.copy(), u_y, g_y)
    A = A - bwd + fwd
    if not np.all(np.isfinite(A)):
        raise NumericalError(f"non-finite Jarzynski weights at step {step}")
    ens.positions = y
    ens.log_weights = A

    if effective_sample_size(A) / n < cfg.resample_threshold:
        idx = systematic_resample(A, state.aux)
        ens.positions = ens.positions[idx]
        state.cache = (state.cache[0], u_y[idx], g_y[idx])
        ens.log_weights = np.full(n, log_mean_exp(A))
        state.n_resamples += 1
    if n > 1 and effective_sample_size(ens.log_weights) < 1.5:
        raise NumericalError(f"weight degeneracy at step {step}")
    state.log_Z_running = state.log_Z0 + log_mean_exp(ens.log_weights)
    return state


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------


def train(algo, U: EnergyModel, data, cfg: TrainConfig, seed, init_positions=None,
          proposal=None, log_every=1, callback=None):
    """Run ``cfg.total_steps`` updates of ``algo`` in {"cd", "pcd", "jarz"}.

    Returns ``(model, state, log)`` where ``log`` is a list of dict rows with
    ``step``, ``theta``, ``log_Z_estimate``, ``cross_entropy`` and
    ``ess_fraction`` (the last three are ``None`` when the algorithm does not
    provide them).
    """
    data = as_points(data)
    if algo == "cd":
        state = TrainerState(U.theta, aux=aux_stream(seed))
        bank = StreamBank.create(seed, cfg.n_walkers)
    elif algo == "pcd":
        state = init_pcd(U, data, cfg, seed, init_positions)
    elif algo == "jarz":
        state = init_jarzynski(U, cfg, seed, proposal)
    else:
        raise ConfigError(f"unknown training algorithm {algo!r}")
    batch_stream = aux_stream(seed, 1)
    log = []

    for _ in range(cfg.total_steps):
        k = state.k
        batch = _batch(data, cfg, batch_stream)
        row = {"step": k, "theta": state.theta.copy(), "log_Z_estimate": None,
               "cross_entropy": None, "ess_fraction": None}
        if algo == "cd":
            model = U.with_theta(state.theta)
            grad = cd_gradient(model, batch, cfg, state.aux, bank)
            optimizer_step(state, grad, cfg)
        elif algo == "pcd":
            pcd_update(state, U, batch, cfg)
        else:
            ess = state.ensemble.ess() / cfg.n_walkers
            log_Z = state.log_Z0 + log_mean_exp(state.ensemble.log_weights)
            jarz_update(state, U, batch, cfg, data_full=data)
            row.update(log_Z_estimate=log_Z, cross_entropy=state.ce_trace[-1], ess_fraction=ess)
        if log_every and k % log_every == 0:
            log.append(row)
        if callback is not None:
            callback(state)
    return U.with_theta(state.theta), state, log
