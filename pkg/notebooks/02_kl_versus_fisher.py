# %% [markdown]
# # Two ways to compare densities
#
# Take `rho_z = sigmoid(z) N(-5, 1) + (1 - sigmoid(z)) N(5, 1)` and compare it
# with the balanced mixture `rho_0`. KL sees the change of mode weights.
# The Fisher divergence only looks at scores, which are almost unchanged
# away from the region between the modes, so it barely moves.

# %%
import numpy as np

from ebmkit.core import RngStream
from ebmkit.densities import DiagGaussian, mixture_from_z, quadrature_kl
from ebmkit.divergences import LinearScore, fisher_mc, fit_nce, fit_score_matching, kl_mc
from ebmkit.energies import QuadraticEnergy

rho0 = mixture_from_z(0.0)
for z in np.linspace(0, 5, 6):
    rz = mixture_from_z(z)
    kl = kl_mc(rho0, rz, 10_000, RngStream(0, 7))
    fi = fisher_mc(rho0, rz, 10_000, RngStream(0, 7))
    print(f"z={z:3.1f}  KL={kl.value:8.4f} (quad {quadrature_kl(rho0, rz):7.4f})  Fisher={fi.value:10.2e}")

# %% [markdown]
# ## Objectives that avoid the partition function
#
# Score matching fits `s(x) = -theta x` without ever touching `Z`; on
# standard normal data the optimum is `theta = 1`. Noise-contrastive
# estimation instead learns `log Z` as an extra parameter by telling data
# apart from a wider Gaussian.

# %%
data = RngStream(1).normal((100_000, 1))
print("score matching theta:", fit_score_matching(LinearScore(0.0), data).theta[0])

noise = DiagGaussian([0.0], [4.0])
noise_x = noise.sample(RngStream(2), 100_000)
model, log_Z, _ = fit_nce(QuadraticEnergy([0.5], [np.log(2.0)]), noise, data, noise_x)
print(f"NCE log Z = {log_Z:.4f}, exact = {0.5 * np.log(2 * np.pi):.4f}")
