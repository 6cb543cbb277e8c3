"""Pseudo-spectral simulation and analysis of the quasineutral limit of Navier-Stokes-Poisson."""

from .config import ExperimentConfig, profile_config
from .nsp import FluidParams, PlasmaState, energy, run, step
from .scenarios import scenario
from .spectral import Field, SpectralGrid

__all__ = [
    "ExperimentConfig",
    "Field",
    "FluidParams",
    "PlasmaState",
    "SpectralGrid",
    "energy",
    "profile_config",
    "run",
    "scenario",
    "step",
]

__version__ = "0.1.0"
