# %% [markdown]
# # Free energy, maximum entropy and a Hopfield memory

# %%
import numpy as np

from ebmkit.core import RngStream
from ebmkit.energies import HopfieldNet, MixtureEnergy1D, QuadraticEnergy, hebbian_couplings, hopfield_retrieve
from ebmkit.physics import free_energy_residual, gaussian_maxent_check, maxent_uniform

# %% [markdown]
# `log Z + beta E[U] - H` vanishes for a Boltzmann density. Here it is checked
# with Monte Carlo energies and closed-form or quadrature entropies.

# %%
for name, U in (("quadratic", QuadraticEnergy([0.0])), ("mixture", MixtureEnergy1D(0.0))):
    r = free_energy_residual(U, 1.0, U.density(), 200_000, RngStream(0, 10))
    print(f"{name:9s} log Z {r.log_Z:+.4f}  E[U] {r.mean_energy:.4f}  H {r.entropy:.4f}  "
          f"residual {r.residual:+.5f}")

_, uni = maxent_uniform(0.0, 1.0, RngStream(0, 20))
gau = gaussian_maxent_check(1.0, 20, RngStream(0, 21))
print("uniform beats step densities:", uni.holds, " Gaussian beats same-variance mixtures:", gau.holds)

# %% [markdown]
# ## Retrieval
#
# One pattern on 200 spins is stored with the Hebbian rule. Flipping 20 spins
# of it still lands back on the pattern after a single synchronous update.

# %%
rng = RngStream(0, 30)
y = np.where(rng.uniform(200) < 0.5, -1.0, 1.0)
net = HopfieldNet(hebbian_couplings([y]))
cue = y.copy()
cue[np.argsort(rng.uniform(200))[:20]] *= -1
x, it, ok = hopfield_retrieve(net, cue)
print(f"recovered exactly: {np.array_equal(x, y)} after {it} update(s)")

# storing as many patterns as spins overloads the network
P = np.where(rng.uniform((60, 60)) < 0.5, -1.0, 1.0)
net = HopfieldNet(hebbian_couplings(P))
overlaps = [float(hopfield_retrieve(net, p)[0] @ p) / 60 for p in P]
print(f"mean overlap with 60 patterns on 60 spins: {np.mean(overlaps):.3f}")
