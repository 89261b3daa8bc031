"""Command-line driver: one subcommand per experiment, CSV out.

Usage::

    ebmkit [--seed S] [--out DIR] [--config FILE] [--threads T] <command> [options]

A JSON config is a flat object whose keys are the option names of the
chosen command (dashes or underscores) plus ``seed``.  Explicit flags win
over config values, which win over built-in defaults.

Exit status: 0 on success, 2 on configuration errors, 3 on numerical
failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .core import ConfigError, NumericalError, StreamBank, WalkerEnsemble, aux_stream
from .csvio import write_csv
from .densities import DiagGaussian, GaussianMixture1D, mixture_from_z, quadrature_kl, ula_limit_covariance
from .divergences import LinearScore, fisher_mc, fit_nce, kl_mc, score_matching_loss
from .energies import (
    HopfieldNet,
    MixtureEnergy1D,
    QuadraticEnergy,
    hebbian_couplings,
    hopfield_retrieve,
    overlap,
    save_checkpoint,
)
from .flows import (
    DsmConfig,
    InterpolantSpec,
    LinearTimeField,
    MlpField,
    SigmaScaledScore,
    dsm_train,
    fit_least_squares,
    gaussian_interp_var,
    generate_ode,
    generate_sde,
    interpolant_batch,
    reverse_sde_generate,
)
from .physics import free_energy_residual, gaussian_maxent_check, maxent_uniform
from .samplers import SamplerConfig, run_chain
from .training import TrainConfig, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

GLOBAL_KEYS = ("seed",)


@dataclass
class ExperimentConfig:
    seed: int
    experiment: str
    overrides: dict = field(default_factory=dict)
    output_dir: Path = Path(".")
    threads: int = 1

    def hashable(self):
        """Everything that determines the output bytes (threads and paths excluded)."""
        return {"experiment": self.experiment, "seed": self.seed, **self.overrides}


# ---------------------------------------------------------------------------
# Argument types
# ---------------------------------------------------------------------------


def _float_list(s):
    try:
        return [float(v) for v in str(s).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from exc


def _int_list(s):
    try:
        return [int(v) for v in str(s).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from exc


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s!r}")
    return v


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_fig_gauss(a, ctx: ExperimentConfig):
    rho = GaussianMixture1D([a.p, 1 - a.p], [a.mu1, a.mu2], [a.sigma1, a.sigma2])
    x_samples = rho.sample(aux_stream(ctx.seed, 0), a.n_samples)[:, 0]
    edges = np.linspace(a.lo, a.hi, a.bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    counts, _ = np.histogram(x_samples, edges)
    width = edges[1] - edges[0]
    cdf = a.p * norm.cdf(edges, a.mu1, a.sigma1) + (1 - a.p) * norm.cdf(edges, a.mu2, a.sigma2)
    expected = a.n_samples * np.diff(cdf)
    pdf = rho.pdf(centers[:, None])
    energy = rho.energy(centers[:, None])
    hist = counts / (a.n_samples * width)
    rows = zip(centers, pdf, energy, hist, counts, expected)
    return {"fig_gauss.csv": (["x", "pdf", "energy", "hist", "count", "expected_count"], rows)}


def cmd_fig_divergence(a, ctx: ExperimentConfig):
    rho1 = mixture_from_z(0.0)
    rows = []
    for i, n in enumerate(a.n_list):
        for z in np.linspace(0.0, a.z_max, a.z_points):
            rho2 = mixture_from_z(z)
            # the same draws from rho1 for every z (common random numbers)
            kl = kl_mc(rho1, rho2, n, aux_stream(ctx.seed, 100 + i))
            fi = fisher_mc(rho1, rho2, n, aux_stream(ctx.seed, 100 + i))
            rows.append((z, n, kl.value, kl.std_error, fi.value, fi.std_error, quadrature_kl(rho1, rho2)))
    header = ["z", "n", "kl", "kl_se", "fisher", "fisher_se", "kl_quadrature"]
    return {"fig_divergence.csv": (header, rows)}


def cmd_ula_bias(a, ctx: ExperimentConfig):
    U = QuadraticEnergy(0.0, 0.0)
    n = a.n_walkers
    x0 = U.sample(aux_stream(ctx.seed, 0), n)
    rows = []
    for i, h in enumerate(a.h_list):
        if h <= 0:
            raise ConfigError(f"step sizes must be positive, got {h}")
        try:
            analytic = float(ula_limit_covariance(1.0, h)[0])
            status = "ok"
        except ValueError:
            analytic = None
            status = "divergent" if h >= 2.0 else "outside-guard"
        ula_var = None
        if status != "divergent":
            ens = WalkerEnsemble.create(x0, ctx.seed, stream_offset=2 * i * n)
            _, st = run_chain(U, "ula", SamplerConfig(h, a.n_steps), ens, workers=ctx.threads)
            ula_var = float(st.covariance_diag[0])
        ens = WalkerEnsemble.create(x0, ctx.seed, stream_offset=(2 * i + 1) * n)
        _, sm = run_chain(U, "mala", SamplerConfig(h, a.n_steps), ens, workers=ctx.threads)
        ratio = ula_var / analytic if (ula_var is not None and analytic) else None
        rows.append((h, ula_var, analytic, ratio, float(sm.covariance_diag[0]), sm.acceptance_rate, status))
    header = ["h", "ula_var", "ula_analytic", "ula_ratio", "mala_var", "mala_acceptance", "status"]
    return {"ula_bias.csv": (header, rows)}


CAPABILITIES = {"cd": set(), "pcd": set(), "jarz": {"log_Z", "cross_entropy"}, "nce": {"log_Z"}, "sm": set()}


def _train_target(a, ctx):
    if a.family == "mixture":
        target = MixtureEnergy1D(a.z_star)
    else:
        target = QuadraticEnergy(a.target_mean, np.log(a.target_var))
    return target, target.sample(aux_stream(ctx.seed, 1), a.n_data)


def cmd_train(a, ctx: ExperimentConfig):
    family = a.family or ("quadratic" if a.algo in ("nce", "sm") else "mixture")
    a.family = family
    missing = sorted(set(a.track) - CAPABILITIES[a.algo])
    if missing:
        raise ConfigError(f"algorithm {a.algo!r} does not provide {', '.join(missing)}")
    if a.algo in ("nce", "sm") and family != "quadratic":
        raise ConfigError(f"{a.algo} runs on the quadratic family only")
    target, data = _train_target(a, ctx)
    out = {}
    if a.algo == "sm":
        model = LinearScore(a.theta0[0] if a.theta0 else 0.0)
        rows = []
        for k in range(a.total_steps):
            loss, g = score_matching_loss(model, data)
            rows.append((k, model.theta[0], loss))
            model = model.with_theta(model.theta - a.learning_rate * g)
        rows.append((a.total_steps, model.theta[0], score_matching_loss(model, data)[0]))
        out["train_sm.csv"] = (["step", "theta_0", "loss"], rows)
        summary = [("theta_final", model.theta[0]), ("theta_exact", 1.0 / a.target_var)]
        out["train_sm_summary.csv"] = (["quantity", "value"], summary)
        return out
    if a.algo == "nce":
        theta0 = a.theta0 or [0.5, np.log(2.0)]
        noise = DiagGaussian(0.0, a.noise_var)
        noise_x = noise.sample(aux_stream(ctx.seed, 2), a.n_data)
        model, log_Z, loss = fit_nce(QuadraticEnergy.from_theta(theta0), noise, data, noise_x)
        header = ["step", "theta_0", "theta_1", "log_Z_estimate", "loss"]
        out["train_nce.csv"] = (header, [(1, model.theta[0], model.theta[1], log_Z, loss)])
        summary = [("log_Z_estimate", log_Z), ("log_Z_exact", model.log_Z()),
                   ("mu", float(model.mu[0])), ("sigma2", float(model.sigma2[0]))]
        out["train_nce_summary.csv"] = (["quantity", "value"], summary)
        save_checkpoint(ctx.output_dir / "train_nce.json", model, {"algo": "nce", "log_Z_estimate": log_Z})
        return out

    theta0 = a.theta0 or ([0.0] if family == "mixture" else [1.0, 0.5])
    U = MixtureEnergy1D(theta0) if family == "mixture" else QuadraticEnergy.from_theta(theta0)
    cfg = TrainConfig(
        learning_rate=a.learning_rate, n_walkers=a.n_walkers, ula_step=a.ula_step,
        cd_inner_steps=a.cd_inner_steps, optimizer=a.optimizer, resample_threshold=a.resample_threshold,
        total_steps=a.total_steps, batch_size=a.batch_size or None, alpha_theta=a.alpha_theta,
        workers=ctx.threads,
    )
    init_positions = None
    if a.algo == "pcd" and a.pcd_init == "left":
        init_positions = np.full((a.n_walkers, 1), float(U.means[0]) if family == "mixture" else -2.0)
    model, state, log = train(a.algo, U, data, cfg, ctx.seed, init_positions=init_positions,
                              log_every=a.log_every)
    p = U.n_params
    rows = []
    for r in log:
        direct = U.with_theta(r["theta"])
        ce_direct = direct.log_Z() + float(direct.energy(data).mean())
        rows.append((r["step"], *r["theta"], r["log_Z_estimate"], r["cross_entropy"], ce_direct, r["ess_fraction"]))
    header = ["step", *[f"theta_{j}" for j in range(p)], "log_Z_estimate", "cross_entropy",
              "cross_entropy_direct", "ess_fraction"]
    out[f"train_{a.algo}.csv"] = (header, rows)
    summary = [("steps", state.k), *[(f"theta_{j}", v) for j, v in enumerate(model.theta)]]
    if a.algo == "jarz":
        summary += [("log_Z_estimate", state.log_Z_running), ("n_resamples", state.n_resamples)]
    if family == "mixture":
        mass = float(expit(model.z))
        target_mass = float(expit(a.z_star))
        summary += [("left_mass", mass), ("target_left_mass", target_mass),
                    ("data_left_mass", float(np.mean(data[:, 0] < 0))), ("mass_error", abs(mass - target_mass))]
    out[f"train_{a.algo}_summary.csv"] = (["quantity", "value"], summary)
    meta = {"algo": a.algo, "step": state.k, "log_Z_running": state.log_Z_running,
            "n_resamples": state.n_resamples}
    save_checkpoint(ctx.output_dir / f"train_{a.algo}.json", model, meta)
    return out


def _interpolant(a, ctx):
    spec = InterpolantSpec(a=a.a)
    st = aux_stream(ctx.seed, 1)
    x0 = st.normal((a.n_train, 1))
    x1 = a.m + st.normal((a.n_train, 1))
    b = fit_least_squares(LinearTimeField(1, a.degree), interpolant_batch(spec, x0, x1, st, "b"))
    s = None
    if a.a > 0:
        s = fit_least_squares(LinearTimeField(1, a.degree, role="s"), interpolant_batch(spec, x0, x1, st, "s"))
    xg = aux_stream(ctx.seed, 2).normal((a.n_gen, 1))
    n = a.n_gen
    rows = []
    ode_end = None
    for t in (0.25, 0.5, 0.75, 1.0):
        steps = max(1, int(round(a.ode_steps * t)))
        xt = generate_ode(b, xg, steps, t_end=t, workers=ctx.threads)
        if t == 1.0:
            ode_end = xt
        mean, var = float(xt.mean()), float(xt.var(ddof=1))
        rows.append(("ode", 0.0, t, mean, var, np.sqrt(var / n), var * np.sqrt(2.0 / (n - 1)),
                     t * a.m, float(gaussian_interp_var(t, a.a)), None, None))
    if s is not None:
        for eps in a.eps_list:
            bank = StreamBank.create(ctx.seed, n)
            xe = generate_sde(b, s, eps, xg, a.sde_steps, bank, workers=ctx.threads)
            mean, var = float(xe.mean()), float(xe.var(ddof=1))
            gap = abs(var - float(ode_end.var(ddof=1)))
            rms = float(np.sqrt(np.mean((xe - ode_end) ** 2)))
            rows.append(("sde", eps, 1.0, mean, var, np.sqrt(var / n), var * np.sqrt(2.0 / (n - 1)),
                         a.m, 1.0, gap, rms))
    header = ["method", "epsilon", "t", "mean", "variance", "mean_se", "variance_se",
              "analytic_mean", "analytic_variance", "var_gap_vs_ode", "rms_vs_ode"]
    return {"flows_interpolant.csv": (header, rows)}


def _diffusion(a, ctx):
    data = mixture_from_z(0.0).sample(aux_stream(ctx.seed, 1), a.n_data)
    widths = tuple(a.widths)
    field0 = SigmaScaledScore(MlpField(1, widths, x_scale=5.0, role="s", stream=aux_stream(ctx.seed, 2)))
    cfg = DsmConfig(T=a.T, t_min=a.t_min, n_steps=a.dsm_steps, batch_size=a.batch_size,
                    learning_rate=a.learning_rate, log_every=a.log_every)
    score, curve = dsm_train(field0, data, cfg, aux_stream(ctx.seed, 3))
    st = aux_stream(ctx.seed, 4)
    n = a.n_gen
    x0 = data[st.integers(len(data), n)]
    sig_T = np.sqrt(-np.expm1(-2 * a.T))
    x_T = np.exp(-a.T) * x0 + sig_T * st.normal((n, 1))
    gen = reverse_sde_generate(score, x_T, a.T, a.reverse_steps, StreamBank.create(ctx.seed, n),
                               t_min=a.t_min, workers=ctx.threads)[:, 0]
    left, right = gen[gen < 0], gen[gen >= 0]
    summary = [
        ("left_mass", left.size / n), ("right_mass", right.size / n),
        ("left_mean", float(left.mean()) if left.size else None),
        ("left_std", float(left.std()) if left.size > 1 else None),
        ("right_mean", float(right.mean()) if right.size else None),
        ("right_std", float(right.std()) if right.size > 1 else None),
        ("n_generated", n),
    ]
    return {
        "flows_diffusion.csv": (["quantity", "value"], summary),
        "flows_diffusion_curve.csv": (["step", "loss", "grad_norm"], curve),
        "flows_diffusion_samples.csv": (["x"], ((v,) for v in gen)),
    }


def cmd_flows(a, ctx: ExperimentConfig):
    return _interpolant(a, ctx) if a.task == "interpolant" else _diffusion(a, ctx)


def cmd_hopfield(a, ctx: ExperimentConfig):
    N = a.n_units
    if not 0 <= a.corruption <= 1:
        raise ConfigError("corruption must lie in [0, 1]")
    pat_stream = aux_stream(ctx.seed, 1)
    patterns = np.where(pat_stream.uniform((a.n_patterns, N)) < 0.5, -1.0, 1.0)
    net = HopfieldNet(hebbian_couplings(patterns))
    flip_stream = aux_stream(ctx.seed, 2)
    k = int(round(a.corruption * N))
    rows = []
    for trial in range(a.trials):
        j = trial % a.n_patterns
        y = patterns[j]
        cue = y.copy()
        idx = np.argsort(flip_stream.uniform(N), kind="stable")[:k]
        cue[idx] *= -1
        x, it, conv = hopfield_retrieve(net, cue, a.max_iter)
        m = overlap(x, y)
        rows.append((trial, j, k, overlap(cue, y), m, it, conv, bool(np.array_equal(x, y))))
    header = ["trial", "pattern", "n_flipped", "overlap_cue", "overlap_final", "iterations", "converged", "exact"]
    return {"hopfield.csv": (header, rows)}


def cmd_thermo(a, ctx: ExperimentConfig):
    fams = ["quadratic", "mixture"] if a.family == "all" else [a.family]
    rows = []
    for i, fam in enumerate(fams):
        if fam == "quadratic":
            U, oracle = QuadraticEnergy(0.0, 0.0), DiagGaussian(0.0, 1.0 / a.beta)
        else:
            if a.beta != 1.0:
                raise ConfigError("the mixture family has an oracle only at beta = 1")
            U = MixtureEnergy1D(0.0)
            oracle = U.density()
        r = free_energy_residual(U, a.beta, oracle, a.n_samples, aux_stream(ctx.seed, 10 + i))
        rows.append((fam, r.beta, r.log_Z, r.mean_energy, r.entropy, r.residual, r.energy_std_error, r.n_samples))
    header = ["family", "beta", "log_Z", "mean_energy", "entropy", "residual", "energy_se", "n_samples"]
    _, uni = maxent_uniform(0.0, 1.0, aux_stream(ctx.seed, 20))
    gau = gaussian_maxent_check(1.0, 20, aux_stream(ctx.seed, 21))
    maxent = [("uniform_interval", uni.entropy, uni.max_competitor_entropy, uni.n_competitors, uni.holds),
              ("gaussian_fixed_variance", gau.entropy, gau.max_competitor_entropy, gau.n_competitors, gau.holds)]
    return {
        "thermo.csv": (header, rows),
        "thermo_maxent.csv": (["check", "entropy", "max_competitor_entropy", "n_competitors", "holds"], maxent),
    }


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _global_flags(p, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="master seed")
    p.add_argument("--out", default=d("."), help="output directory")
    p.add_argument("--config", default=d(None), help="JSON file of option overrides")
    p.add_argument("--threads", type=_positive_int, default=d(1), help="worker threads")


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="ebmkit", description="Energy-based model experiments.",
                                     formatter_class=fmt)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_, formatter_class=fmt)
        _global_flags(p, suppress=True)
        p.set_defaults(_fn=fn)
        return p

    p = add("fig-gauss", cmd_fig_gauss, "density, energy and sampled histogram of a 1-D Gaussian mixture")
    p.add_argument("--p", type=float, default=0.7, help="weight of the first component")
    p.add_argument("--mu1", type=float, default=0.0)
    p.add_argument("--mu2", type=float, default=5.0)
    p.add_argument("--sigma1", type=float, default=1.0)
    p.add_argument("--sigma2", type=float, default=0.5)
    p.add_argument("--n-samples", type=_positive_int, default=100000)
    p.add_argument("--bins", type=_positive_int, default=100)
    p.add_argument("--lo", type=float, default=-6.0)
    p.add_argument("--hi", type=float, default=9.0)

    p = add("fig-divergence", cmd_fig_divergence, "KL and Fisher divergence between bimodal mixtures")
    p.add_argument("--n-list", type=_int_list, default="100,1000,10000", help="Monte Carlo sample sizes")
    p.add_argument("--z-max", type=float, default=5.0)
    p.add_argument("--z-points", type=_positive_int, default=21)

    p = add("ula-bias", cmd_ula_bias, "stationary variance of ULA and MALA on N(0, 1)")
    p.add_argument("--h-list", type=_float_list, default="0.1,0.25,0.5,2.0", help="step sizes")
    p.add_argument("--n-walkers", type=_positive_int, default=10000)
    p.add_argument("--n-steps", type=_positive_int, default=1000)

    p = add("train", cmd_train, "train an energy model (cd, pcd, jarz, nce, sm)")
    p.add_argument("--algo", choices=sorted(CAPABILITIES), default="jarz")
    p.add_argument("--family", choices=["mixture", "quadratic"], default=None,
                   help="model family (default: mixture, or quadratic for nce/sm)")
    p.add_argument("--z-star", type=float, default=1.0, help="mixture target parameter")
    p.add_argument("--target-mean", type=float, default=0.0)
    p.add_argument("--target-var", type=float, default=1.0)
    p.add_argument("--theta0", type=_float_list, default="", help="initial parameters (family default if empty)")
    p.add_argument("--n-data", type=_positive_int, default=10000)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--n-walkers", type=_positive_int, default=10000)
    p.add_argument("--ula-step", type=float, default=0.01)
    p.add_argument("--cd-inner-steps", type=_positive_int, default=1)
    p.add_argument("--optimizer", choices=["sgd", "adam"], default="sgd")
    p.add_argument("--resample-threshold", type=float, default=0.5)
    p.add_argument("--total-steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=0, help="0 means full batch")
    p.add_argument("--alpha-theta", choices=["split", "current"], default="split")
    p.add_argument("--pcd-init", choices=["data", "left"], default="data")
    p.add_argument("--noise-var", type=float, default=4.0, help="NCE noise variance")
    p.add_argument("--track", type=lambda s: [v for v in s.split(",") if v], default="",
                   help="quantities that must be tracked (log_Z, cross_entropy)")
    p.add_argument("--log-every", type=_positive_int, default=1)

    p = add("flows", cmd_flows, "stochastic interpolants and score-based diffusion")
    p.add_argument("--task", choices=["interpolant", "diffusion"], default="interpolant")
    p.add_argument("--m", type=float, default=2.0, help="target mean (interpolant)")
    p.add_argument("--a", type=float, default=1.0, help="interpolant noise amplitude")
    p.add_argument("--degree", type=int, default=8, help="time polynomial degree of the linear fields")
    p.add_argument("--n-train", type=_positive_int, default=200000)
    p.add_argument("--n-gen", type=_positive_int, default=10000)
    p.add_argument("--ode-steps", type=_positive_int, default=100)
    p.add_argument("--sde-steps", type=_positive_int, default=1000)
    p.add_argument("--eps-list", type=_float_list, default="0.2,0.05,0.0125")
    p.add_argument("--n-data", type=_positive_int, default=10000, help="mixture data size (diffusion)")
    p.add_argument("--T", type=float, default=3.0, help="diffusion horizon")
    p.add_argument("--t-min", type=float, default=0.01)
    p.add_argument("--dsm-steps", type=int, default=6000)
    p.add_argument("--batch-size", type=_positive_int, default=512)
    p.add_argument("--learning-rate", type=float, default=5e-3)
    p.add_argument("--widths", type=_int_list, default="32,32")
    p.add_argument("--reverse-steps", type=_positive_int, default=500)
    p.add_argument("--log-every", type=int, default=100)

    p = add("hopfield", cmd_hopfield, "Hebbian storage and retrieval from corrupted cues")
    p.add_argument("--n-patterns", type=_positive_int, default=1)
    p.add_argument("--n-units", type=_positive_int, default=200)
    p.add_argument("--corruption", type=float, default=0.1)
    p.add_argument("--trials", type=_positive_int, default=100)
    p.add_argument("--max-iter", type=_positive_int, default=100)

    p = add("thermo", cmd_thermo, "free-energy identity and maximum-entropy checks")
    p.add_argument("--family", choices=["quadratic", "mixture", "all"], default="all")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--n-samples", type=_positive_int, default=1000000)

    # the defaults formatter only annotates options that carry help text
    for sp in sub.choices.values():
        for act in sp._actions:
            if act.help is None:
                act.help = act.dest.replace("_", " ")
    return parser, sub


def _subparser(sub, name):
    return sub.choices[name]


def _load_config(path, subparser):
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config must be a flat JSON object")
    dests = {a.dest for a in subparser._actions if a.dest not in ("help", "_fn")}
    cmd_defaults, global_defaults = {}, {}
    for key, value in obj.items():
        dest = key.replace("-", "_")
        if dest in GLOBAL_KEYS:
            global_defaults[dest] = value
        elif dest in dests and dest not in ("out", "config", "threads"):
            if isinstance(value, (dict,)) or (isinstance(value, list) and any(isinstance(v, (list, dict)) for v in value)):
                raise ConfigError(f"config key {key!r} must be a scalar or flat list")
            # strings go through the option's own type conversion
            cmd_defaults[dest] = ",".join(map(str, value)) if isinstance(value, list) else str(value)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return cmd_defaults, global_defaults


def parse(argv):
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sp = _subparser(sub, args.command)
        cmd_defaults, global_defaults = _load_config(args.config, sp)
        sp.set_defaults(**cmd_defaults)
        parser.set_defaults(**global_defaults)
        args = parser.parse_args(argv)
        sp_actions = {a.dest: a for a in sp._actions}
        for dest in cmd_defaults:
            act = sp_actions[dest]
            if act.choices is not None and getattr(args, dest) not in act.choices:
                raise ConfigError(f"config value {getattr(args, dest)!r} for {dest!r} not in {sorted(act.choices)}")
    return parser, args


def run(argv=None):
    """Parse ``argv``, run the command and write its CSV files; returns the paths."""
    _, args = parse(argv)
    params = {k: v for k, v in vars(args).items() if k not in ("seed", "out", "config", "threads", "command", "_fn")}
    ctx = ExperimentConfig(seed=args.seed, experiment=args.command, overrides=params,
                           output_dir=Path(args.out), threads=args.threads)
    ctx.output_dir.mkdir(parents=True, exist_ok=True)
    tables = args._fn(args, ctx)
    hashed = ctx.hashable()
    return [write_csv(ctx.output_dir / name, header, rows, ctx.seed, hashed)
            for name, (header, rows) in tables.items()]


def main(argv=None):
    try:
        paths = run(argv)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
