import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebmkit.core import RngStream, finite_diff_grad
from ebmkit.densities import DiagGaussian
from ebmkit.energies import (
    HopfieldNet,
    MixtureEnergy1D,
    MlpEnergy,
    QuadraticEnergy,
    ShiftedEnergy,
    hebbian_couplings,
    hopfield_retrieve,
    ising_energy,
    load_checkpoint,
    mlp_energy_gradients,
    save_checkpoint,
)


def _fd_checks(U, xs, rtol=1e-4, atol=1e-6):
    for x in xs:
        gx = U.grad_x(x[None])[0]
        fx = finite_diff_grad(lambda v: U.energy(v[None])[0], x)
        assert np.allclose(gx, fx, rtol=rtol, atol=atol)
        gt = U.grad_theta(x[None])[0]
        ft = finite_diff_grad(lambda th: U.with_theta(th).energy(x[None])[0], U.theta)
        assert np.allclose(gt, ft, rtol=rtol, atol=atol)


def test_quadratic_gradients_and_density():
    U = QuadraticEnergy([0.5, -1.0], [0.2, -0.3])
    xs = RngStream(1).normal((10, 2))
    _fd_checks(U, xs)
    g = DiagGaussian(U.mu, U.sigma2)
    pts = RngStream(2).normal((100, 2)) * 2
    assert np.max(np.abs(-U.energy(pts) - U.log_Z() - g.log_pdf(pts))) < 1e-12
    assert U.log_Z() == pytest.approx(g.log_Z())


@pytest.mark.parametrize("z", [-3.0, 0.0, 1.3])
def test_mixture_energy_normalized_and_gradients(z):
    U = MixtureEnergy1D(z)
    xs = np.linspace(-20, 20, 40001)
    assert np.trapezoid(np.exp(-U.energy(xs)), xs) == pytest.approx(1.0, abs=1e-6)
    assert U.log_Z() == 0.0
    _fd_checks(U, np.linspace(-8, 8, 9)[:, None])


def test_mixture_energy_minima_are_modes():
    U = MixtureEnergy1D(0.0)
    xs = np.linspace(-8, 8, 1601)
    u = U.energy(xs)
    loc = xs[1:-1][(u[1:-1] < u[:-2]) & (u[1:-1] < u[2:])]
    assert np.allclose(sorted(loc), [-5, 5], atol=0.02)


def test_mlp_examples():
    U = MlpEnergy(1, widths=(4, 4), c=1.0, theta=np.zeros(MlpEnergy(1, (4, 4)).theta.size))
    u, gx, _ = mlp_energy_gradients(U, np.array([[2.0]]))
    assert u[0] == pytest.approx(4.0) and gx[0, 0] == pytest.approx(4.0)
    # c = 0 with a constant final bias: dU/db is one everywhere
    V = MlpEnergy(2, widths=(3, 3), c=0.0, stream=RngStream(4))
    _, _, gt = mlp_energy_gradients(V, RngStream(5).normal((7, 2)))
    assert np.allclose(gt[:, -1], 1.0)


def test_mlp_gradients_finite_difference():
    U = MlpEnergy(2, widths=(5, 4), c=0.1, stream=RngStream(6))
    _fd_checks(U, RngStream(7).normal((10, 2)))
    x = RngStream(8).normal((6, 2))
    w = np.arange(1.0, 7.0)
    ref = np.sum(U.grad_theta(x) * (w / w.sum())[:, None], axis=0)
    assert np.allclose(U.mean_grad_theta(x, w), ref, atol=1e-12)


def test_mlp_confinement_integrable():
    U = MlpEnergy(1, widths=(8, 8), c=1e-2, stream=RngStream(2))
    far = np.array([[-1e3], [1e3]])
    assert np.all(far[:, 0] * U.grad_x(far)[:, 0] > 0)


def test_shifted_energy_same_gradients():
    U = QuadraticEnergy([1.0])
    S = ShiftedEnergy(U, 7.5)
    x = RngStream(1).normal((5, 1))
    assert np.array_equal(U.grad_x(x), S.grad_x(x))
    assert np.array_equal(U.grad_theta(x), S.grad_theta(x))
    assert S.log_Z() == pytest.approx(U.log_Z() - 7.5)


def test_ising_examples():
    net0 = HopfieldNet(np.zeros((3, 3)))
    for x in itertools.product([-1, 1], repeat=3):
        assert ising_energy(net0, x) == 0.0
    net = HopfieldNet(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert ising_energy(net, [1, 1]) == -1.0
    assert ising_energy(net, [1, -1]) == 1.0
    assert ising_energy(HopfieldNet(np.zeros((1, 1)), h=[2.0]), [1]) == -2.0
    with pytest.raises(ValueError):
        ising_energy(net, [1, 0])


def test_ising_pair_sum_equivalence():
    rng = RngStream(3)
    J = hebbian_couplings(np.where(rng.uniform((3, 6)) < 0.5, -1, 1))
    h = rng.normal(6)
    net = HopfieldNet(J, h=h, mu=0.7)
    x = np.where(rng.uniform(6) < 0.5, -1, 1)
    pair = sum(J[i, j] * x[i] * x[j] for i in range(6) for j in range(i + 1, 6))
    assert ising_energy(net, x) == pytest.approx(-pair - 0.7 * h @ x, abs=1e-12)


def test_hebbian_examples():
    y = np.array([1, -1, 1, 1])
    J = hebbian_couplings([y])
    ref = np.outer(y, y).astype(float)
    np.fill_diagonal(ref, 0)
    assert np.array_equal(J, ref)
    assert np.array_equal(hebbian_couplings([y, -y]), ref)
    assert hebbian_couplings([[1, 1], [1, -1]])[0, 1] == 0.0
    with pytest.raises(ValueError):
        hebbian_couplings([[1, 1], [1, -1, 1]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(2, 9), st.integers(0, 2**32 - 1))
def test_hebbian_symmetric_zero_diagonal(n, N, seed):
    pats = np.where(RngStream(seed).uniform((n, N)) < 0.5, -1, 1)
    J = hebbian_couplings(pats)
    assert np.array_equal(J, J.T) and np.all(np.diag(J) == 0)


def test_retrieval_examples():
    y = np.where(RngStream(1).uniform(200) < 0.5, -1.0, 1.0)
    net = HopfieldNet(hebbian_couplings([y]))
    x, it, ok = hopfield_retrieve(net, y, 10)
    assert ok and it == 0 and np.array_equal(x, y)
    cue = y.copy()
    flip = np.argsort(RngStream(2).uniform(200))[:20]
    cue[flip] *= -1
    x, it, ok = hopfield_retrieve(net, cue, 10)
    assert ok and np.array_equal(x, y)
    field = HopfieldNet(np.zeros((5, 5)), h=np.ones(5))
    x, it, ok = hopfield_retrieve(field, [-1, 1, -1, -1, 1], 10)
    assert ok and it == 1 and np.all(x == 1)


def test_sgn_tie_break():
    net = HopfieldNet(np.zeros((2, 2)))
    x, _, _ = hopfield_retrieve(net, [-1, -1], 5)
    assert np.all(x == 1)


def test_synchronous_dynamics_reach_fixed_point_or_two_cycle():
    # brute force over every start state: the synchronous map has only
    # fixed points and 2-cycles as attractors for symmetric J
    rng = RngStream(11)
    for trial in range(5):
        N = 6
        pats = np.where(rng.uniform((2, N)) < 0.5, -1, 1)
        net = HopfieldNet(hebbian_couplings(pats), h=0.3 * rng.normal(N))
        for start in itertools.product([-1, 1], repeat=N):
            seen = {}
            x = np.array(start, dtype=float)
            for k in range(2**N + 2):
                key = tuple(x)
                if key in seen:
                    assert k - seen[key] in (1, 2)
                    break
                seen[key] = k
                assert np.isfinite(ising_energy(net, x))
                x = np.where(net.J @ x + net.h >= 0, 1.0, -1.0)
            else:
                pytest.fail("no cycle found")


def test_checkpoint_round_trip(tmp_path):
    for U in (QuadraticEnergy([0.1, 1 / 3], [np.pi, -1e-17]), MixtureEnergy1D(0.1 + 0.2),
              MlpEnergy(2, (3, 3), stream=RngStream(1))):
        p = tmp_path / "m.json"
        save_checkpoint(p, U, {"note": "x"})
        V = load_checkpoint(p)
        assert type(V) is type(U)
        assert np.array_equal(V.theta, U.theta)
