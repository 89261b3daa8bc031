"""Energy-based models, Langevin samplers, divergences and generative flows on numpy."""
from .core import ConfigError, EbmError, NumericalError, RngStream, StreamBank, WalkerEnsemble
from .densities import DiagGaussian, GaussianMixture1D, mixture_from_z
from .energies import HopfieldNet, MixtureEnergy1D, MlpEnergy, QuadraticEnergy
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "EbmError",
    "NumericalError",
    "RngStream",
    "StreamBank",
    "WalkerEnsemble",
    "DiagGaussian",
    "GaussianMixture1D",
    "mixture_from_z",
    "HopfieldNet",
    "MixtureEnergy1D",
    "MlpEnergy",
    "QuadraticEnergy",
    "TrainConfig",
    "train",
]
