"""Direction-binned energy of the residual field lam*E~.

This is a spatially averaged stand-in for a microlocal defect measure: the
x-dependence is integrated out and only the frequency direction k/|k| is
resolved.  Every JSON emitted here carries ``"surrogate": true``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .series import FieldSeries, trapezoid_weights
from .spectral import ParameterError, SpectralGrid, StructureError


@dataclass
class AngularDefectSpectrum:
    centers: np.ndarray  # (B, d) unit vectors
    matrices: np.ndarray  # (B, d, d)
    window: tuple[float, float]

    @property
    def masses(self) -> np.ndarray:
        return np.trace(self.matrices, axis1=1, axis2=2)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    def to_json(self) -> str:
        bins = [
            {"center_direction": c.tolist(), "matrix": m.tolist(), "mass": float(np.trace(m))}
            for c, m in zip(self.centers, self.matrices)
        ]
        doc = {
            "bins": bins,
            "total_mass": self.total_mass,
            "window": [float(self.window[0]), float(self.window[1])],
            "surrogate": True,
            "note": "x-averaged direction spectrum of lam*E~; not a measure-theoretic object",
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def bin_centers(dim: int, n_bins: int) -> np.ndarray:
    """Uniform sectors in 2-D; a Fibonacci lattice (near equal-area cells) in 3-D."""
    if n_bins < 2:
        raise ParameterError("need at least two bins")
    if dim == 2:
        a = 2.0 * math.pi * np.arange(n_bins) / n_bins
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    i = np.arange(n_bins) + 0.5
    z = 1.0 - 2.0 * i / n_bins
    phi = math.pi * (1.0 + math.sqrt(5.0)) * i
    r = np.sqrt(1.0 - z**2)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def direction_bins(grid: SpectralGrid, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Bin index of every wavevector (-1 for k = 0) and the bin centers."""
    centers = bin_centers(grid.dim, n_bins)
    khat = grid.khat.reshape(grid.dim, -1).T
    if grid.dim == 2:
        ang = np.arctan2(khat[:, 1], khat[:, 0])
        idx = np.floor((ang + math.pi / n_bins) / (2.0 * math.pi / n_bins)).astype(int) % n_bins
    else:
        idx = np.argmax(khat @ centers.T, axis=1)
    idx = np.where(grid.kmag.ravel() > 0, idx, -1)
    return idx.reshape(grid.shape), centers


def _amplitudes(series: FieldSeries) -> np.ndarray:
    """Coefficients c_k with f = sum c_k exp(i k.x), shape (n, ncomp, N..)."""
    return series.grid.fft(series.values) / series.grid.n_total


def angular_spectrum(residual: FieldSeries, n_bins: int = 32, window: tuple[float, float] | None = None) -> AngularDefectSpectrum:
    """Time average over ``window`` of sum_k vol |c_k|^2 k (x) k / |k|^2, binned by k/|k|."""
    if len(residual) == 0:
        raise StructureError("empty residual series")
    g = residual.grid
    t = residual.times
    t0, t1 = (float(t[0]), float(t[-1])) if window is None else window
    keep = (t >= t0 - 1e-12) & (t <= t1 + 1e-12)
    sub = FieldSeries(g, t[keep], residual.values[keep])
    c = _amplitudes(sub)
    energy = g.volume * np.sum(np.abs(c) ** 2, axis=1)  # (n, N..)
    if len(sub) > 1:
        w = trapezoid_weights(len(sub), sub.dt())
        avg = np.tensordot(w, energy, axes=1) / np.sum(w)
    else:
        avg = energy[0]
    idx, centers = direction_bins(g, n_bins)
    khat = g.khat
    d = g.dim
    mats = np.zeros((n_bins, d, d))
    flat_idx = idx.ravel()
    flat_e = avg.ravel()
    kk = (khat[:, np.newaxis] * khat[np.newaxis, :]).reshape(d, d, -1)
    for b in range(n_bins):
        sel = flat_idx == b
        if np.any(sel):
            mats[b] = np.sum(kk[:, :, sel] * flat_e[sel], axis=-1)
    return AngularDefectSpectrum(centers, mats, (t0, t1))


def pairing_with_symbol(spectrum: AngularDefectSpectrum, symbol: np.ndarray) -> float:
    """sum_b tr(a_b M_b) for an x-constant matrix symbol given per bin (or one matrix for all)."""
    a = np.asarray(symbol, dtype=float)
    B, d, _ = spectrum.matrices.shape
    if a.shape == (d, d):
        a = np.broadcast_to(a, (B, d, d))
    if a.shape != (B, d, d):
        raise StructureError(f"symbol shape {a.shape} does not match {B} bins of size {d}x{d}")
    return float(np.einsum("bij,bji->", a, spectrum.matrices))


def _weighted_cross(weight: FieldSeries, f: np.ndarray, g_: np.ndarray, grid: SpectralGrid, times: np.ndarray) -> complex:
    """int int weight f . conj(g) dx dt."""
    w = trapezoid_weights(len(times), float(times[1] - times[0])) * grid.volume / grid.n_total
    prod = np.sum(f * np.conj(g_), axis=1) * weight.values[:, 0]
    return complex(np.sum(w * np.sum(prod.reshape(len(times), -1), axis=1)))


def orthogonality_check(
    Eplus: FieldSeries,
    Eminus: FieldSeries,
    residual: FieldSeries,
    testfns: list[tuple[str, FieldSeries]],
    lam: float,
) -> dict:
    """Cross pairings between the two phase components and the residual.

    For each test weight phi:
      plus_minus:  <phi Eplus e^{it/lam}, Eminus e^{-it/lam}>
      res_plus:    <phi lam E~, Eplus e^{it/lam}>
      res_minus:   <phi lam E~, Eminus e^{-it/lam}>
    with <f, g> = int int f . conj(g).  ``residual`` is lam*E~.
    """
    t = Eplus.times
    if not (Eplus.aligned_with(Eminus) and Eplus.aligned_with(residual)):
        raise StructureError("orthogonality inputs are not aligned")
    grid = Eplus.grid
    shape = (-1,) + (1,) * (Eplus.values.ndim - 1)
    ph = np.exp(1j * t / lam).reshape(shape)
    p_osc = Eplus.values * ph
    m_osc = Eminus.values * np.conj(ph)
    rows = []
    for name, phi in testfns:
        if phi.ncomp != 1 or len(phi) != len(t):
            raise StructureError("test weights must be scalar series on the same times")
        rows.append(
            {
                "test": name,
                "plus_minus": abs(_weighted_cross(phi, p_osc, m_osc, grid, t)),
                "res_plus": abs(_weighted_cross(phi, residual.values, p_osc, grid, t)),
                "res_minus": abs(_weighted_cross(phi, residual.values, m_osc, grid, t)),
            }
        )
    max_cross = max((max(r["plus_minus"], r["res_plus"], r["res_minus"]) for r in rows), default=0.0)
    return {"lambda": lam, "pairings": rows, "max_cross": max_cross, "surrogate": True}


def low_frequency_mass(residual: FieldSeries, radius: float) -> float:
    """sum_{0<|k|<=R} int |c_k(t)| dt with c_k the Fourier amplitudes of lam*E~.

    The mode k = 0 is included when present; ``radius`` must stay below the
    dealiasing cutoff.
    """
    g = residual.grid
    if radius >= g.kmax_dealiased:
        raise ParameterError(f"radius {radius} must lie below the dealiasing cutoff {g.kmax_dealiased:.3f}")
    c = _amplitudes(residual)
    mag = np.sqrt(np.sum(np.abs(c) ** 2, axis=1))  # (n, N..)
    sel = g.kmag <= radius + 1e-12
    per_t = np.sum(mag[:, sel], axis=1)
    if len(residual) == 1:
        return float(per_t[0])
    w = trapezoid_weights(len(residual), residual.dt())
    return float(np.sum(w * per_t))


def concentration(spectrum: AngularDefectSpectrum, direction: np.ndarray, antipodal: bool = True) -> float:
    """Share of the angular mass in the bin(s) containing ``direction`` (and -direction)."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    dots = spectrum.centers @ d
    bins = {int(np.argmax(dots))}
    if antipodal:
        bins.add(int(np.argmin(dots)))
    total = spectrum.total_mass
    if total == 0:
        return 0.0
    return float(sum(spectrum.masses[b] for b in bins) / total)
