# %% [markdown]
# # Langevin sampling: the price of skipping the accept step
#
# The unadjusted Langevin algorithm moves every walker by
# `x - h grad U(x) + sqrt(2h) xi`. On a standard Gaussian its stationary
# variance is `1 / (1 - h/2)` rather than 1. Adding a Metropolis correction
# (MALA) removes that bias at the cost of rejected moves.

# %%
import numpy as np

from ebmkit.core import WalkerEnsemble
from ebmkit.densities import ula_limit_covariance
from ebmkit.energies import MixtureEnergy1D, QuadraticEnergy
from ebmkit.samplers import SamplerConfig, mh_transition_matrix, run_chain

U = QuadraticEnergy([0.0])
x0 = np.zeros((4000, 1))

# %%
print(f"{'h':>6} {'ULA var':>9} {'predicted':>9} {'MALA var':>9} {'accept':>7}")
for h in (0.1, 0.25, 0.5):
    ens = WalkerEnsemble.create(x0, seed=1)
    _, ula = run_chain(U, "ula", SamplerConfig(h, 400), ens)
    ens = WalkerEnsemble.create(x0, seed=2)
    _, mala = run_chain(U, "mala", SamplerConfig(h, 400), ens)
    pred = ula_limit_covariance([1.0], h)[0]
    print(f"{h:6.2f} {ula.covariance_diag[0]:9.4f} {pred:9.4f} "
          f"{mala.covariance_diag[0]:9.4f} {mala.acceptance_rate:7.3f}")

# %% [markdown]
# ## Detailed balance on three states
#
# For a finite state space the Metropolis-Hastings kernel can be written
# down exactly. The probability flux `rho_i T_ij` is then symmetric.

# %%
u = np.array([-1.0, 0.0, 1.0]) ** 2 / 2
rho = np.exp(-u) / np.exp(-u).sum()
T = mh_transition_matrix(u, (np.ones((3, 3)) - np.eye(3)) / 2)
flux = rho[:, None] * T
print(T.round(4))
print("max |flux - flux^T| =", np.abs(flux - flux.T).max())

# %% [markdown]
# ## Slow mixing between modes
#
# On the balanced mixture with modes at -5 and +5, walkers started in the
# left mode essentially never cross over at a small step size.

# %%
ens = WalkerEnsemble.create(np.full((1000, 1), -5.0), seed=3)
run_chain(MixtureEnergy1D(0.0), "ula", SamplerConfig(0.01, 1000), ens)
print("fraction in right mode after 1000 steps:", np.mean(ens.positions[:, 0] > 0))
