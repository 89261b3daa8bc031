import numpy as np
import pytest

from ebmkit.core import ConfigError, NumericalError, RngStream, StreamBank
from ebmkit.flows import (
    DsmConfig,
    InterpolantSpec,
    LinearTimeField,
    MlpField,
    SigmaScaledScore,
    dsm_batch,
    dsm_train,
    fit_least_squares,
    gaussian_interp_var,
    gaussian_velocity,
    generate_ode,
    generate_sde,
    interpolant_batch,
    interpolant_sample,
    loss_b,
    loss_s,
    ou_sigma,
    reverse_sde_generate,
)


class Fn:
    """Wrap a plain function ``f(x, t)`` as a parameter-free field."""

    theta = np.zeros(0)

    def __init__(self, f):
        self.f = f

    def value(self, x, t):
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(x),))[:, None]
        return self.f(np.asarray(x, dtype=float), t)

    __call__ = value

    def vjp(self, x, t, g):
        return np.zeros(0)


ZERO = Fn(lambda x, t: np.zeros_like(x))


def _pairs(n, m=2.0, seed=1):
    s = RngStream(seed, 7)
    return s.normal((n, 1)), m + s.normal((n, 1))


# -- interpolant -------------------------------------------------------------------


def test_interpolant_endpoints_exact():
    x0, x1 = _pairs(50)
    spec = InterpolantSpec(a=1.7)
    xt, _, dI, g = interpolant_sample(spec, x0, x1, 0.0, RngStream(1))
    assert np.array_equal(xt, x0) and np.all(g == 0)
    xt, _, _, _ = interpolant_sample(spec, x0, x1, 1.0, RngStream(1))
    assert np.array_equal(xt, x1)
    assert np.array_equal(dI, x1 - x0)
    assert spec.gamma(0.0) == 0.0 and spec.gamma(1.0) == 0.0
    assert np.all(spec.gamma(np.linspace(0.01, 0.99, 50)) > 0)


def test_interpolant_midpoint():
    x0, x1 = _pairs(5)
    xt, z, _, g = interpolant_sample(InterpolantSpec(a=1.0), x0, x1, 0.5, RngStream(2))
    assert np.allclose(xt, (x0 + x1) / 2 + 0.5 * z, atol=1e-15)
    assert np.all(g == 0.0)
    assert InterpolantSpec(a=1.0).gamma(0.5) == 0.5


def test_interpolant_rejects_bad_time_and_amplitude():
    x0, x1 = _pairs(3)
    with pytest.raises(ValueError):
        interpolant_sample(InterpolantSpec(), x0, x1, 1.5, RngStream(0))
    with pytest.raises(ConfigError):
        InterpolantSpec(a=-1.0)
    with pytest.raises(NumericalError):
        interpolant_batch(InterpolantSpec(a=0.0), x0, x1, RngStream(0), "s")


def test_velocity_oracle_by_regression():
    # b*(x, t) = E[dX_t/dt | X_t = x]: check the closed form against a
    # Monte Carlo linear regression of the time derivative on X_t
    a, m, n = 1.0, 2.0, 10**6
    spec = InterpolantSpec(a=a)
    x0, x1 = _pairs(n, m, seed=3)
    for t in (0.25, 0.5, 0.75):
        xt, z, dI, g = interpolant_sample(spec, x0, x1, t, RngStream(4, int(100 * t)))
        xdot = (dI + g[:, None] * z)[:, 0]
        slope, icpt = np.polyfit(xt[:, 0], xdot, 1)
        ref = gaussian_velocity(np.array([0.0, 1.0]), t, m, a)
        assert icpt == pytest.approx(ref[0], abs=0.01)
        assert slope == pytest.approx(ref[1] - ref[0], abs=0.01)
        assert xt.var() == pytest.approx(gaussian_interp_var(t, a), rel=0.01)


# -- losses ----------------------------------------------------------------------------


def test_zero_fields_have_zero_loss():
    x0, x1 = _pairs(100)
    assert loss_b(ZERO, InterpolantSpec(), x0, x1, RngStream(1))[0] == 0.0
    assert loss_s(ZERO, InterpolantSpec(), x0, x1, RngStream(1))[0] == 0.0


def test_trained_velocity_matches_oracle_deterministic_interpolant():
    spec = InterpolantSpec(a=0.0)
    x0, x1 = _pairs(10**5)
    b = fit_least_squares(LinearTimeField(1, degree=8), interpolant_batch(spec, x0, x1, RngStream(5), "b"))
    xs = np.array([[0.0], [1.0]])
    for t in (0.25, 0.5, 0.75):
        # (intercept, slope) of the linear-in-x field against the closed form
        fit = b(xs, t)[:, 0] @ np.array([[1.0, -1.0], [0.0, 1.0]])
        ref = gaussian_velocity(xs, t, 2.0, 0.0)[:, 0] @ np.array([[1.0, -1.0], [0.0, 1.0]])
        assert np.linalg.norm(fit - ref) < 0.05 * np.linalg.norm(ref)


def test_exact_velocity_minimizes_loss():
    spec = InterpolantSpec(a=1.0)
    x0, x1 = _pairs(10**5)
    star = Fn(lambda x, t: gaussian_velocity(x, t, 2.0, 1.0))
    base = loss_b(star, spec, x0, x1, RngStream(6))[0]
    rng = RngStream(7)
    for _ in range(10):
        c = (0.2 + 0.2 * rng.uniform(2)) * np.where(rng.uniform(2) < 0.5, -1, 1)
        pert = Fn(lambda x, t, c=c: gaussian_velocity(x, t, 2.0, 1.0) + c[0] + c[1] * x)
        assert base <= loss_b(pert, spec, x0, x1, RngStream(6))[0]


def test_trained_score_matches_gaussian_marginal():
    spec = InterpolantSpec(a=1.0)
    s0 = RngStream(8)
    x0, x1 = s0.normal((2 * 10**5, 1)), s0.normal((2 * 10**5, 1))
    s = fit_least_squares(LinearTimeField(1, degree=8, role="s"),
                          interpolant_batch(spec, x0, x1, RngStream(9), "s"))
    xs = np.array([[-1.0], [1.0], [2.0]])
    var = 0.25 + 0.25 + 0.25
    assert np.allclose(s(xs, 0.5), -xs / var, rtol=0.05)
    # first-order condition: E[s(X_t) + z / gamma | X_t] = 0, binned on X_t
    xt, z, _, _ = interpolant_sample(spec, x0, x1, 0.5, RngStream(10))
    r = (s(xt, 0.5) + z / spec.gamma(0.5))[:, 0]
    edges = np.quantile(xt[:, 0], np.linspace(0, 1, 11))
    which = np.clip(np.searchsorted(edges, xt[:, 0], side="right") - 1, 0, 9)
    for k in range(10):
        rk = r[which == k]
        assert abs(rk.mean()) < 4 * rk.std() / np.sqrt(rk.size)


@pytest.mark.parametrize("role", ["b", "s"])
def test_loss_gradients_finite_difference(role):
    spec = InterpolantSpec(a=1.0)
    x0, x1 = _pairs(400)
    field = MlpField(1, (6, 5), role=role, stream=RngStream(11))
    fn = loss_b if role == "b" else loss_s
    _, g = fn(field, spec, x0, x1, RngStream(12))
    h = 1e-6
    for i in range(0, field.theta.size, 7):
        e = np.zeros_like(field.theta)
        e[i] = h
        fd = (fn(field.with_theta(field.theta + e), spec, x0, x1, RngStream(12))[0]
              - fn(field.with_theta(field.theta - e), spec, x0, x1, RngStream(12))[0]) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-3, abs=1e-7)


@pytest.mark.parametrize(
    "field",
    [LinearTimeField(2, degree=3, theta=RngStream(1).normal(4 * 3 * 2)),
     MlpField(2, (4, 4), x_scale=2.0, stream=RngStream(2)),
     SigmaScaledScore(MlpField(2, (4, 3), stream=RngStream(3)))],
    ids=["legendre", "mlp", "sigma-scaled"],
)
def test_field_vjp_finite_difference(field):
    x = RngStream(4).normal((6, 2))
    t = 0.05 + 0.9 * RngStream(5).uniform(6)
    g = RngStream(6).normal((6, 2))
    v = field.vjp(x, t, g)
    h = 1e-6
    for i in range(field.theta.size):
        e = np.zeros_like(field.theta)
        e[i] = h
        fd = (np.sum(g * field.with_theta(field.theta + e).value(x, t))
              - np.sum(g * field.with_theta(field.theta - e).value(x, t))) / (2 * h)
        assert v[i] == pytest.approx(fd, rel=1e-4, abs=1e-8)


# -- generation --------------------------------------------------------------------------


def test_ode_trivial_fields():
    x = RngStream(1).normal((10, 2))
    assert np.array_equal(generate_ode(ZERO, x, 7), x)
    c = np.array([0.3, -1.25])
    out = generate_ode(Fn(lambda x, t: np.broadcast_to(c, x.shape)), x, 13)
    assert np.allclose(out, x + c, atol=1e-13)
    with pytest.raises(NumericalError):
        generate_ode(Fn(lambda x, t: np.full_like(x, np.inf)), x, 2)


def test_ode_transports_gaussian_to_gaussian():
    spec = InterpolantSpec(a=1.0)
    x0, x1 = _pairs(2 * 10**5)
    b = fit_least_squares(LinearTimeField(1, degree=8), interpolant_batch(spec, x0, x1, RngStream(13), "b"))
    out = generate_ode(b, RngStream(14).normal((10**4, 1)), 100)
    assert out.mean() == pytest.approx(2.0, abs=0.05)
    assert out.var() == pytest.approx(1.0, abs=0.05)


def test_exact_velocity_marginals():
    n, a, m = 10**5, 1.0, 2.0
    b = Fn(lambda x, t: gaussian_velocity(x, t, m, a))
    x = RngStream(15).normal((n, 1))
    for t in (0.25, 0.5, 0.75):
        o = generate_ode(b, x, int(100 * t), t_end=t)[:, 0]
        var = gaussian_interp_var(t, a)
        assert abs(o.mean() - t * m) < 3 * np.sqrt(var / n)
        assert abs(o.var() - var) < 3 * var * np.sqrt(2 / n)


def test_sde_zero_noise_is_euler():
    b = Fn(lambda x, t: gaussian_velocity(x, t, 2.0, 1.0))
    x = RngStream(16).normal((1000, 1))
    sde = generate_sde(b, None, 0.0, x, 1000, StreamBank.create(1, 1000))
    euler = generate_ode(b, x, 1000, method="euler")
    assert np.array_equal(sde, euler)
    rk = generate_ode(b, x, 100)
    assert sde.mean() == pytest.approx(rk.mean(), rel=0.01)
    assert sde.var() == pytest.approx(rk.var(), rel=0.01)


def test_sde_pure_diffusion():
    x = RngStream(17).normal((10**4, 1))
    out = generate_sde(ZERO, ZERO, 0.5, x, 50, StreamBank.create(2, 10**4))
    assert (out - x).var() == pytest.approx(1.0, rel=0.02)


def test_sde_trained_pair_endpoint():
    spec = InterpolantSpec(a=1.0)
    x0, x1 = _pairs(2 * 10**5)
    b = fit_least_squares(LinearTimeField(1, degree=8), interpolant_batch(spec, x0, x1, RngStream(18), "b"))
    s = fit_least_squares(LinearTimeField(1, degree=8, role="s"),
                          interpolant_batch(spec, x0, x1, RngStream(19), "s"))
    out = generate_sde(b, s, 0.1, RngStream(20).normal((10**4, 1)), 500, StreamBank.create(3, 10**4))
    assert out.mean() == pytest.approx(2.0, abs=0.05)
    assert out.var() == pytest.approx(1.0, abs=0.05)


def test_generation_independent_of_workers():
    b = Fn(lambda x, t: gaussian_velocity(x, t, 2.0, 1.0))
    x = RngStream(21).normal((9000, 1))
    outs = [generate_sde(b, b, 0.2, x, 20, StreamBank.create(4, 9000), workers=w) for w in (1, 3)]
    assert np.array_equal(*outs)


# -- denoising score matching and the reverse SDE ----------------------------------------


def _linear_score():
    return SigmaScaledScore(LinearTimeField(1, degree=6, t_range=(0.01, 3.0), log_time=True, role="s"))


def test_dsm_single_point():
    s, _ = dsm_train(_linear_score(), np.zeros((1, 1)), DsmConfig(n_steps=100, batch_size=1000), RngStream(22))
    for t in (0.3, 1.0):
        var = 1 - np.exp(-2 * t)
        assert s(np.array([[1.0]]), t)[0, 0] == pytest.approx(-1 / var, rel=0.05)


def test_dsm_gaussian_data_score():
    data = RngStream(23).normal((10**4, 1))
    s, _ = dsm_train(_linear_score(), data, DsmConfig(n_steps=200, batch_size=1000), RngStream(24))
    xs = np.array([[-1.5], [1.0]])
    assert np.allclose(s(xs, 1.0), -xs, rtol=0.05)


def test_dsm_weighting_flattens_target_scale():
    b = dsm_batch(np.zeros((1, 1)), RngStream(25), n=2 * 10**5)
    scaled = b.weight * b.target[:, 0] ** 2
    edges = np.linspace(0.01, 3.0, 6)
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (b.t >= lo) & (b.t < hi)
        assert scaled[sel].mean() == pytest.approx(1.0, rel=0.05)


def test_reverse_sde_with_exact_score():
    n = 10**4
    exact = Fn(lambda x, t: -x)
    out = reverse_sde_generate(exact, RngStream(26).normal((n, 1)), 3.0, 500, StreamBank.create(5, n))
    assert abs(out.mean()) < 0.02 * 1 + 3 / np.sqrt(n)
    assert out.var() == pytest.approx(1.0, rel=0.02 + 3 * np.sqrt(2 / n))


def test_reverse_sde_without_score_widens():
    n = 2000
    out = reverse_sde_generate(ZERO, RngStream(27).normal((n, 1)), 3.0, 300, StreamBank.create(6, n))
    assert out.var() > 50.0


def test_ou_sigma():
    assert ou_sigma(0.0) == 0.0
    assert ou_sigma(1.0) == pytest.approx(np.sqrt(1 - np.exp(-2)))
