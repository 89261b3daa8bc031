"""Markov kernels targeting ``exp(-U) / Z``: random-walk MH, ULA and MALA.

Kernels act on a batch of walkers at once; each walker draws from its own
stream in a :class:`~ebmkit.core.StreamBank`.  Every kernel first draws
the Gaussian proposal noise and then, if it has an accept/reject step, one
uniform, so MH and MALA with the drift removed share their random numbers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import EnergyModel, NumericalError, StreamBank, WalkerEnsemble, as_points, map_chunks

__all__ = [
    "SamplerConfig",
    "ChainStats",
    "mh_acceptance",
    "mh_accept_ratio",
    "mh_step",
    "ula_step",
    "mala_log_proposal",
    "mala_step",
    "run_chain",
    "mh_transition_matrix",
    "integrated_autocorr_time",
    "KERNELS",
]

KERNELS = ("mh", "ula", "mala")


@dataclass
class SamplerConfig:
    """``step_h`` is the ULA/MALA time step, or the MH random-walk std."""

    step_h: float
    n_steps: int
    burn_in: Optional[int] = None

    def __post_init__(self):
        if not self.step_h > 0:
            raise ValueError("step_h must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.burn_in is None:
            self.burn_in = self.n_steps // 10
        if not 0 <= self.burn_in <= self.n_steps:
            raise ValueError("burn_in must lie in [0, n_steps]")


@dataclass
class ChainStats:
    acceptance_rate: Optional[float]
    mean: np.ndarray
    covariance_diag: np.ndarray
    autocorrelation_time: float
    n_samples: int
    trace: Optional[np.ndarray] = field(default=None, repr=False)
    trace_accepted: Optional[np.ndarray] = field(default=None, repr=False)


def mh_acceptance(delta_u, log_g_fwd=0.0, log_g_bwd=0.0):
    """``min(1, exp(-delta_u + log_g_bwd - log_g_fwd))``."""
    log_r = -np.asarray(delta_u, dtype=float) + log_g_bwd - log_g_fwd
    return np.exp(np.minimum(log_r, 0.0))


def mh_accept_ratio(U: EnergyModel, x, x_prop, log_g_fwd=0.0, log_g_bwd=0.0):
    """MH acceptance probability; depends on ``U`` only through differences."""
    du = U.energy(x_prop) - U.energy(x)
    return mh_acceptance(du, log_g_fwd, log_g_bwd)


def _accept(x, x_prop, log_accept, streams):
    u = streams.uniform()
    acc = np.log(u) < log_accept
    return np.where(acc[:, None], x_prop, x), acc


def mh_step(U: EnergyModel, x, step_h, streams: StreamBank):
    """Gaussian random-walk Metropolis-Hastings step for every walker."""
    x = as_points(x)
    x_prop = x + step_h * streams.normal(x.shape[1])
    u_prop = U.energy(x_prop)
    if not np.all(np.isfinite(u_prop)):
        raise NumericalError("non-finite energy at MH proposal")
    log_a = np.minimum(U.energy(x) - u_prop, 0.0)
    return _accept(x, x_prop, log_a, streams)


def ula_step(U: EnergyModel, x, h, streams: StreamBank, step=None):
    """``x - h grad U(x) + sqrt(2h) xi``."""
    if not h > 0:
        raise ValueError("ULA step h must be positive")
    x = as_points(x)
    with np.errstate(over="ignore", invalid="ignore"):
        out = x - h * U.grad_x(x) + np.sqrt(2 * h) * streams.normal(x.shape[1])
    if not np.all(np.isfinite(out)):
        where = f" at step {step}" if step is not None else ""
        raise NumericalError(f"ULA diverged{where}")
    return out


def mala_log_proposal(x_to, x_from, grad_from, h):
    """Log density of the Langevin proposal ``N(x_from - h grad U, 2h I)``."""
    d = x_to.shape[1]
    r = x_to - x_from + h * grad_from
    return -np.sum(r**2, axis=1) / (4 * h) - 0.5 * d * np.log(4 * np.pi * h)


def mala_step(U: EnergyModel, x, h, streams: StreamBank, drift=True, step=None):
    """Metropolis-adjusted Langevin step.

    With ``drift=False`` the proposal loses its gradient term and the step
    is exactly random-walk MH with standard deviation ``sqrt(2h)``.
    """
    if not h > 0:
        raise ValueError("MALA step h must be positive")
    x = as_points(x)
    g = U.grad_x(x) if drift else np.zeros_like(x)
    x_prop = x - h * g + np.sqrt(2 * h) * streams.normal(x.shape[1])
    u_x, u_p = U.energy(x), U.energy(x_prop)
    if not np.all(np.isfinite(u_p)) or not np.all(np.isfinite(x_prop)):
        where = f" at step {step}" if step is not None else ""
        raise NumericalError(f"MALA proposal non-finite{where}")
    if drift:
        g_p = U.grad_x(x_prop)
        log_fwd = mala_log_proposal(x_prop, x, g, h)
        log_bwd = mala_log_proposal(x, x_prop, g_p, h)
        log_a = np.minimum(u_x - u_p + log_bwd - log_fwd, 0.0)
    else:
        log_a = np.minimum(u_x - u_p, 0.0)
    return _accept(x, x_prop, log_a, streams)


def _kernel_fn(kernel):
    if kernel == "mh":
        return lambda U, x, cfg, s, k: mh_step(U, x, cfg.step_h, s)
    if kernel == "ula":
        return lambda U, x, cfg, s, k: (ula_step(U, x, cfg.step_h, s, step=k), None)
    if kernel == "mala":
        return lambda U, x, cfg, s, k: mala_step(U, x, cfg.step_h, s, step=k)
    raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")


def run_chain(
    U: EnergyModel,
    kernel: str,
    cfg: SamplerConfig,
    ensemble: WalkerEnsemble,
    workers: int = 1,
    trace_walkers: int = 64,
):
    """Apply ``kernel`` ``cfg.n_steps`` times to every walker, in place.

    Statistics pool all walkers over the post-burn-in steps.  The first
    ``trace_walkers`` walkers are recorded for the autocorrelation estimate
    and for optional trace dumps.
    """
    step = _kernel_fn(kernel)
    n, d = ensemble.positions.shape
    n_rec = min(trace_walkers, n)
    keep = cfg.n_steps - cfg.burn_in
    sums = np.zeros((n, d))
    sumsq = np.zeros((n, d))
    n_acc = np.zeros(n, dtype=np.int64)
    trace = np.empty((cfg.n_steps, n_rec, d))
    trace_acc = np.zeros((cfg.n_steps, n_rec), dtype=bool)

    def work(sl):
        x = ensemble.positions[sl]
        streams = ensemble.streams[sl]
        rec = slice(sl.start, min(sl.stop, n_rec))
        n_r = max(rec.stop - rec.start, 0)
        for k in range(cfg.n_steps):
            x, acc = step(U, x, cfg, streams, k)
            if acc is not None:
                n_acc[sl] += acc
            if k >= cfg.burn_in:
                sums[sl] += x
                sumsq[sl] += x * x
            if n_r:
                trace[k, rec] = x[:n_r]
                if acc is not None:
                    trace_acc[k, rec] = acc[:n_r]
        ensemble.positions[sl] = x

    if cfg.n_steps:
        map_chunks(work, n, workers)

    if keep > 0:
        m = sums.sum(axis=0) / (n * keep)
        var = sumsq.sum(axis=0) / (n * keep) - m**2
        n_samples = n * keep
    else:
        x0 = ensemble.positions
        m, var, n_samples = x0.mean(axis=0), x0.var(axis=0), n
    rate = None
    if kernel != "ula" and cfg.n_steps:
        rate = float(n_acc.sum() / (n * cfg.n_steps))
    tau = integrated_autocorr_time(trace[cfg.burn_in :]) if keep > 3 else 1.0
    return ensemble, ChainStats(rate, m, var, tau, n_samples, trace, trace_acc)


def integrated_autocorr_time(trace):
    """Integrated autocorrelation time with Geyer's initial positive sequence.

    ``trace`` has shape ``(T, walkers, d)``; autocovariances are averaged
    over walkers and the largest time over coordinates is returned.
    """
    trace = np.asarray(trace, dtype=float)
    if trace.ndim == 2:
        trace = trace[:, :, None]
    T = trace.shape[0]
    if T < 4:
        return 1.0
    x = trace - trace.mean(axis=0)
    nfft = 1 << (2 * T - 1).bit_length()
    f = np.fft.rfft(x, n=nfft, axis=0)
    acov = np.fft.irfft(f * np.conj(f), n=nfft, axis=0)[:T].mean(axis=1) / T
    taus = []
    for j in range(acov.shape[1]):
        c = acov[:, j]
        if c[0] <= 0:
            taus.append(1.0)
            continue
        rho = c / c[0]
        tau = -1.0
        for k in range(0, T - 1, 2):
            pair = rho[k] + rho[k + 1]
            if pair <= 0:
                break
            tau += 2 * pair
        taus.append(max(tau, 1.0))
    return float(max(taus))


def mh_transition_matrix(energies, proposal):
    """Exact MH transition matrix on a finite state space.

    ``proposal[i, j]`` is the probability of proposing ``j`` from ``i``.
    """
    u = np.asarray(energies, dtype=float)
    g = np.asarray(proposal, dtype=float)
    n = len(u)
    T = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j and g[i, j] > 0:
                a = mh_acceptance(u[j] - u[i], np.log(g[i, j]), np.log(g[j, i]))
                T[i, j] = g[i, j] * a
        T[i, i] = 1.0 - T[i].sum()
    return T
