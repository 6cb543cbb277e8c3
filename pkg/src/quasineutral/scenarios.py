"""Initial-data library for lambda sweeps."""

from __future__ import annotations

import math

import numpy as np

from .nsp import FluidParams, PlasmaState, energy
from .spectral import Field, SpectralGrid

SCENARIOS = ("well_prepared", "ill_prepared", "acoustic_single_mode", "taylor_green")


class ScenarioError(KeyError):
    """Unknown scenario name."""


def random_solenoidal(grid: SpectralGrid, amplitude: float, seed: int, kmax: float = 4.0) -> np.ndarray:
    """Divergence-free field with modes 0 < |k| <= kmax and RMS ``amplitude``."""
    if amplitude == 0:
        return np.zeros((grid.dim,) + grid.shape)
    rng = np.random.default_rng(seed)
    shape = (grid.dim,) + grid.shape
    hat = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    band = (grid.kmag > 0) & (grid.kmag <= kmax + 1e-12)
    hat = grid.leray_p_hat(hat * band)
    v = grid.ifft(hat).real
    rms = math.sqrt(float(np.mean(np.sum(v**2, axis=0))))
    return v * (amplitude / rms)


def _mode(grid: SpectralGrid, k: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray, float]:
    kv = np.asarray(k, dtype=float) * (2.0 * math.pi / grid.extent)
    x = grid.coordinates()
    phase = np.tensordot(kv, x, axes=1)
    return kv, phase, float(np.linalg.norm(kv))


def _default_k(grid: SpectralGrid) -> tuple[int, ...]:
    return (1,) + (0,) * (grid.dim - 1)


def scenario(
    name: str,
    grid: SpectralGrid,
    params: FluidParams,
    amplitude: float = 0.1,
    seed: int = 0,
    k: tuple[int, ...] | None = None,
) -> tuple[PlasmaState, dict]:
    """Initial state and a record of its initial energy.

    ill_prepared scales the density bump by lam |k| so that ||lam E(0)|| and
    the initial energy stay of order amplitude^2 uniformly in lam.
    """
    if name not in SCENARIOS:
        raise ScenarioError(f"unknown scenario {name!r}; choose one of {', '.join(SCENARIOS)}")
    k = _default_k(grid) if k is None else tuple(k)
    sigma = np.zeros(grid.shape)
    u = np.zeros((grid.dim,) + grid.shape)
    if name == "well_prepared":
        u = random_solenoidal(grid, amplitude, seed)
    elif name == "ill_prepared":
        kv, phase, kn = _mode(grid, k)
        sigma = amplitude * params.lam * kn * np.cos(phase)
        u = random_solenoidal(grid, amplitude, seed) + amplitude * np.multiply.outer(kv / kn, np.cos(phase))
    elif name == "acoustic_single_mode":
        _, phase, _ = _mode(grid, k)
        sigma = amplitude * np.cos(phase)
    else:
        x = grid.coordinates()
        s = 2.0 * math.pi / grid.extent
        if grid.dim == 2:
            u = amplitude * np.stack([np.sin(s * x[0]) * np.cos(s * x[1]), -np.cos(s * x[0]) * np.sin(s * x[1])])
        else:
            cz = np.cos(s * x[2])
            u = amplitude * np.stack(
                [
                    np.sin(s * x[0]) * np.cos(s * x[1]) * cz,
                    -np.cos(s * x[0]) * np.sin(s * x[1]) * cz,
                    np.zeros(grid.shape),
                ]
            )
    state = PlasmaState.from_fields(Field(grid, (1.0 + sigma)[None]), Field(grid, u), params)
    e = energy(state)
    record = {
        "scenario": name,
        "amplitude": amplitude,
        "seed": seed,
        "lambda": params.lam,
        "initial_energy": e.total,
        "kinetic": e.kinetic,
        "internal": e.internal,
        "electric": e.electric,
    }
    return state, record
