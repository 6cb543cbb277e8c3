"""Uniformly sampled time series of fields."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import Field, SpectralGrid, StructureError


@dataclass
class FieldSeries:
    """Physical samples ``values[n, c, ...]`` at ``times[n]`` on one grid."""

    grid: SpectralGrid
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values)
        if v.ndim == self.grid.dim + 1:
            v = v[:, np.newaxis]
        if v.shape[0] != self.times.shape[0] or v.shape[2:] != self.grid.shape:
            raise StructureError(f"series values {v.shape} do not match {self.times.shape[0]} times on {self.grid.shape}")
        self.values = v

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def ncomp(self) -> int:
        return self.values.shape[1]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def dt(self, rtol: float = 1e-9) -> float:
        """Uniform sample spacing; raises when spacing is not uniform."""
        if len(self) < 2:
            raise StructureError("need at least two samples for a spacing")
        steps = np.diff(self.times)
        h = float(np.mean(steps))
        if not np.all(np.abs(steps - h) <= rtol * max(abs(h), 1e-300) + 1e-12):
            raise StructureError("time samples are not uniformly spaced")
        return h

    def at(self, i: int) -> Field:
        return Field(self.grid, self.values[i])

    def with_values(self, values: np.ndarray) -> "FieldSeries":
        return FieldSeries(self.grid, self.times, values)

    def aligned_with(self, other: "FieldSeries", atol: float = 1e-12) -> bool:
        return (
            self.grid.compatible(other.grid)
            and len(self) == len(other)
            and bool(np.all(np.abs(self.times - other.times) <= atol * max(1.0, float(np.max(np.abs(self.times)))) ))
        )

    def spatial_l2(self) -> np.ndarray:
        """L2 norm in space of every sample."""
        w = self.grid.volume / self.grid.n_total
        axes = tuple(range(1, self.values.ndim))
        return np.sqrt(np.sum(np.abs(self.values) ** 2, axis=axes) * w)


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    if n == 1:
        return np.zeros(1)
    w[0] = w[-1] = 0.5 * h
    return w


def spacetime_l2(series: FieldSeries) -> float:
    """L2 norm over space and time (trapezoid in time)."""
    norms = series.spatial_l2()
    w = trapezoid_weights(len(series), series.dt())
    return float(np.sqrt(np.sum(w * norms**2)))
