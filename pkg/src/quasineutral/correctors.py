"""Two-scale splitting of the electric field and velocity.

Phase convention used throughout: the scaled field lam*E is approximated by

    lam*E ~ exp(+i t/lam) Eplus + exp(-i t/lam) Eminus,

so Eplus is the slowly varying amplitude of the exp(+i t/lam) oscillation
and Eminus = conj(Eplus) for real E.  The matching oscillatory velocity is

    W ~ -i exp(+i t/lam) Eplus + i exp(-i t/lam) Eminus = 2 Im(exp(i t/lam) Eplus).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nsp import PlasmaState, Trajectory
from .series import FieldSeries, trapezoid_weights
from .spectral import (
    Field,
    SpectralGrid,
    StructureError,
    atomic_write_text,
    load_field,
    save_field,
)

PHASE_CONVENTION = "lam*E ~ exp(+i t/lam) Eplus + exp(-i t/lam) Eminus; W ~ -i exp(+i t/lam) Eplus + i exp(-i t/lam) Eminus"


class SamplingError(ValueError):
    """Sampling too coarse to resolve the averaging window."""


@dataclass
class OscillationDecomposition:
    lam: float
    E: FieldSeries
    E1: FieldSeries
    E2: FieldSeries
    W: FieldSeries
    v: FieldSeries
    Eplus: FieldSeries
    Eminus: FieldSeries
    shrunken: np.ndarray
    method: str = "windowed"
    convention: str = PHASE_CONVENTION
    meta: dict = field(default_factory=dict)


def modulate_T(series: FieldSeries, lam: float, sign: int) -> FieldSeries:
    """Multiply sample n by exp(-sign * i t_n / lam)."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    phase = np.exp(-sign * 1j * series.times / lam)
    shape = (-1,) + (1,) * (series.values.ndim - 1)
    return series.with_values(series.values * phase.reshape(shape))


def window_length(lam: float) -> float:
    return 2.0 * math.pi * lam


def check_sampling(h: float, lam: float) -> None:
    need = window_length(lam) / 16.0
    if h > need * (1.0 + 1e-12):
        raise SamplingError(f"sample spacing {h:.3e} too coarse for window 2*pi*lam; need dt <= {need:.3e}")


def average_H(series: FieldSeries, lam: float) -> tuple[FieldSeries, np.ndarray]:
    """Forward window mean over [t, t + 2 pi lam] with trapezoidal quadrature.

    The trapezoid is applied to the piecewise-linear interpolant, so window
    ends falling between samples are handled exactly for that interpolant.
    Windows that would run past the last sample are shrunk to end there and
    flagged in the returned boolean array.
    """
    h = series.dt()
    check_sampling(h, lam)
    n = len(series)
    t = series.times
    vals = series.values
    shape = (-1,) + (1,) * (vals.ndim - 1)
    cum = np.zeros_like(vals)
    cum[1:] = np.cumsum(0.5 * h * (vals[1:] + vals[:-1]), axis=0)
    length = window_length(lam)
    ends = t + length
    shrunk = ends > t[-1] + 1e-12 * max(1.0, abs(t[-1]))
    ends = np.where(shrunk, t[-1], ends)
    pos = (ends - t[0]) / h
    j = np.clip(np.floor(pos + 1e-9).astype(int), 0, n - 1)
    frac = np.clip(ends - t[j], 0.0, None)
    jn = np.minimum(j + 1, n - 1)
    f_j, f_n = vals[j], vals[jn]
    slope_term = np.where(jn > j, frac**2 / (2.0 * h), 0.0).reshape(shape)
    integral_end = cum[j] + frac.reshape(shape) * f_j + slope_term * (f_n - f_j)
    span = (ends - t).reshape(shape)
    out = np.where(span > 0, (integral_end - cum) / np.where(span > 0, span, 1.0), vals)
    return series.with_values(out), shrunk


def complement_G(series: FieldSeries, lam: float) -> tuple[FieldSeries, np.ndarray]:
    avg, shrunk = average_H(series, lam)
    return series.with_values(series.values - avg.values), shrunk


def cumulative_trapezoid(series: FieldSeries) -> np.ndarray:
    h = series.dt()
    out = np.zeros_like(series.values)
    out[1:] = np.cumsum(0.5 * h * (series.values[1:] + series.values[:-1]), axis=0)
    return out


def initial_momentum_gradient(state0: PlasmaState) -> np.ndarray:
    """Q(rho0 u0) = grad Delta^-1 div(rho0 u0)."""
    g = state0.grid
    m = state0.rho.values[0][np.newaxis] * state0.u.values
    return g.ifft_real(g.leray_q_hat(g.fft(m)))


def build_W(E1: FieldSeries, state0: PlasmaState | None) -> FieldSeries:
    """W(t) = W(0) + int_0^t E1 with W(0) = -lam^2 E_t(0) = Q(rho0 u0).

    From lam^2 Delta V_t = -div(rho u), lam^2 E_t = -Q(rho u); the initial
    value makes W match the gradient velocity carried by the oscillation.
    """
    if state0 is None:
        raise StructureError("build_W needs the initial state for W(0)")
    w0 = initial_momentum_gradient(state0)
    return E1.with_values(w0[np.newaxis] + cumulative_trapezoid(E1))


def electric_source(state: PlasmaState) -> np.ndarray:
    """F in lam^2 E_tt + E = F:  Q div(rho u (x) u) + grad rho^gamma - (2mu+nu) grad div u - Q(sigma E)."""
    g, p = state.grid, state.params
    k = g.wavenumbers
    mask = g.dealias_mask
    u = state.u.values
    rho = state.rho.values[0]
    sigma = rho - 1.0
    u_hat = g.fft(u)
    flux_hat = mask * g.fft(rho[np.newaxis, np.newaxis] * u[:, np.newaxis] * u[np.newaxis, :])
    divflux_hat = np.einsum("j...,ij...->i...", 1j * k, flux_hat)
    press_hat = mask * g.fft(rho**p.gamma)
    v_hat = g.fft(state.V.values[0])
    e_phys = g.ifft_real(g.grad_hat(v_hat))
    se_hat = mask * g.fft(sigma[np.newaxis] * e_phys)
    kdotu = np.sum(k * u_hat, axis=0)
    total = g.leray_q_hat(divflux_hat - se_hat) + g.grad_hat(press_hat) - p.longitudinal_viscosity * 1j * k * (1j * kdotu)
    return g.ifft_real(total)


def electric_source_series(traj: Trajectory) -> FieldSeries:
    vals = np.array([electric_source(traj.state(i)) for i in range(len(traj.times))])
    return FieldSeries(traj.grid, traj.times, vals)


def electric_series(traj: Trajectory) -> FieldSeries:
    return FieldSeries(traj.grid, traj.times, traj.electric_field())


def extract_correctors(
    E: FieldSeries,
    lam: float,
    method: str = "windowed",
    source: FieldSeries | None = None,
    Et0: np.ndarray | None = None,
) -> tuple[FieldSeries, FieldSeries, np.ndarray]:
    """Amplitudes (Eplus, Eminus) of the exp(+-i t/lam) oscillations of lam*E.

    windowed: Eplus = H(lam exp(-i s/lam) E).
    duhamel:  Eplus(t) = lam (E(0)/2 + lam E_t(0)/(2i) + int_0^t F(s) exp(-i s/lam)/(2 i lam) ds),
    which needs the source ``F`` of lam^2 E_tt + E = F and ``E_t(0)``.
    Returns the two amplitude series and the shrunken-window flags (all
    False for the Duhamel route).
    """
    if method == "windowed":
        plus, shrunk = average_H(modulate_T(E.with_values(lam * E.values.astype(complex)), lam, +1), lam)
        minus, _ = average_H(modulate_T(E.with_values(lam * E.values.astype(complex)), lam, -1), lam)
        return plus, minus, shrunk
    if method == "duhamel":
        if source is None or Et0 is None:
            raise StructureError("duhamel extraction needs the source history and E_t(0)")
        if not source.aligned_with(E):
            raise StructureError("source and field series are not aligned")
        e0 = E.values[0]
        shape = (-1,) + (1,) * (E.values.ndim - 1)
        ph = np.exp(-1j * E.times / lam).reshape(shape)
        ip = cumulative_trapezoid(source.with_values(source.values * ph))
        im = cumulative_trapezoid(source.with_values(source.values * np.conj(ph)))
        plus = lam * (0.5 * e0 + lam * Et0 / 2j + ip / (2j * lam))
        minus = lam * (0.5 * e0 - lam * Et0 / 2j - im / (2j * lam))
        return E.with_values(plus), E.with_values(minus), np.zeros(len(E), dtype=bool)
    raise ValueError(f"unknown extraction method {method!r}")


def initial_field_rate(state0: PlasmaState) -> np.ndarray:
    """E_t(0) = -Q(rho0 u0) / lam^2."""
    return -initial_momentum_gradient(state0) / state0.params.lam**2


def split_velocity(u: FieldSeries, W: FieldSeries) -> FieldSeries:
    if not u.aligned_with(W):
        raise StructureError("velocity and W series are not aligned")
    return u.with_values(u.values - W.values)


def residual_field(E: FieldSeries, Eplus: FieldSeries, Eminus: FieldSeries, lam: float) -> tuple[FieldSeries, FieldSeries]:
    """E~ = E - exp(i t/lam) Eplus/lam - exp(-i t/lam) Eminus/lam, and lam*E~."""
    if not (E.aligned_with(Eplus) and E.aligned_with(Eminus)):
        raise StructureError("residual inputs are not aligned")
    shape = (-1,) + (1,) * (E.values.ndim - 1)
    ph = np.exp(1j * E.times / lam).reshape(shape)
    scaled = lam * E.values - ph * Eplus.values - np.conj(ph) * Eminus.values
    return E.with_values(scaled / lam), E.with_values(scaled)


def reconstruct_oscillation(Eplus: FieldSeries, Eminus: FieldSeries, lam: float) -> FieldSeries:
    """Oscillatory velocity -i exp(i t/lam) Eplus + i exp(-i t/lam) Eminus (real part kept)."""
    shape = (-1,) + (1,) * (Eplus.values.ndim - 1)
    ph = np.exp(1j * Eplus.times / lam).reshape(shape)
    w = -1j * ph * Eplus.values + 1j * np.conj(ph) * Eminus.values
    return Eplus.with_values(w.real)


def weak_pairing(series: FieldSeries, testfn: FieldSeries) -> complex:
    """Space-time pairing  int int series . conj(testfn) dx dt  (trapezoid in time).

    A scalar test function is broadcast over the components of ``series``
    and the component pairings are summed.
    """
    if len(series) != len(testfn) or not series.grid.compatible(testfn.grid):
        raise StructureError("series and test function are not aligned")
    if testfn.ncomp not in (1, series.ncomp):
        raise StructureError("test function must be scalar or match the component count")
    w = trapezoid_weights(len(series), series.dt()) * series.grid.volume / series.grid.n_total
    prod = np.sum(series.values * np.conj(testfn.values), axis=tuple(range(1, series.values.ndim)))
    return complex(np.sum(w * prod))


def time_bump(times: np.ndarray, t0: float, t1: float) -> np.ndarray:
    """sin^4 bump supported in [t0, t1]; three continuous derivatives at the ends."""
    s = (times - t0) / (t1 - t0)
    inside = (s > 0) & (s < 1)
    return np.where(inside, np.sin(np.pi * np.clip(s, 0, 1)) ** 4, 0.0)


def smooth_test_fields(grid: SpectralGrid, times: np.ndarray, t0: float, t1: float) -> list[tuple[str, FieldSeries]]:
    """Smooth space-time test fields: time bump times low harmonics."""
    x = grid.coordinates()
    kx = 2.0 * math.pi / grid.extent
    spatial = {
        "one": np.ones(grid.shape),
        "cos_x1": np.cos(kx * x[0]),
        "cos_x2": np.cos(kx * x[1]),
        "cos_x1_plus_x2": np.cos(kx * (x[0] + x[1])),
    }
    b = time_bump(times, t0, t1)
    return [(name, FieldSeries(grid, times, np.multiply.outer(b, phi))) for name, phi in spatial.items()]


def decompose(
    traj: Trajectory,
    method: str = "windowed",
    t_end: float | None = None,
) -> OscillationDecomposition:
    """Full splitting of one trajectory.

    The averaging windows look forward by 2 pi lam; pass ``t_end`` to keep
    only samples whose window lies inside the stored run.
    """
    lam = traj.lam
    E = electric_series(traj)
    E1, shrunk = complement_G(E, lam)
    E2 = E.with_values(E.values - E1.values)
    W = build_W(E1, traj.state0)
    u = FieldSeries(traj.grid, traj.times, traj.u)
    v = split_velocity(u, W)
    if method == "windowed":
        plus, minus, flags = extract_correctors(E, lam, "windowed")
    else:
        plus, minus, flags = extract_correctors(
            E, lam, "duhamel", source=electric_source_series(traj), Et0=initial_field_rate(traj.state0)
        )
        flags = shrunk
    keep = slice(None)
    if t_end is not None:
        keep = traj.times <= t_end + 1e-9
    def cut(s):
        return FieldSeries(s.grid, s.times[keep], s.values[keep])

    return OscillationDecomposition(
        lam=lam,
        E=cut(E),
        E1=cut(E1),
        E2=cut(E2),
        W=cut(W),
        v=cut(v),
        Eplus=cut(plus),
        Eminus=cut(minus),
        shrunken=np.asarray(flags)[keep],
        method=method,
    )


def gradient_impurity(series: FieldSeries) -> float:
    """max_n ||P f_n|| / ||f_n|| over nonzero samples."""
    g = series.grid
    hat = g.fft(series.values)
    p = np.moveaxis(g.leray_p_hat(np.moveaxis(hat, 1, 0)), 0, 1)
    axes = tuple(range(1, hat.ndim))
    num = np.sqrt(np.sum(np.abs(p) ** 2, axis=axes))
    den = np.sqrt(np.sum(np.abs(hat) ** 2, axis=axes))
    ok = den > 0
    return float(np.max(num[ok] / den[ok])) if np.any(ok) else 0.0


_DECOMP_FIELDS = ("E1", "E2", "W", "Eplus", "Eminus", "v")


def save_decomposition(directory: str | Path, d: OscillationDecomposition, every: int = 1) -> Path:
    """Write one spectral-layout file per (quantity, retained sample) plus manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    idx = list(range(0, len(d.E), every))
    files = {}
    for name in _DECOMP_FIELDS:
        s = getattr(d, name)
        files[name] = []
        for i in idx:
            fname = f"{name}_{i:05d}.bin"
            save_field(directory / fname, s.at(i))
            files[name].append(fname)
    manifest = {
        "lambda": d.lam,
        "times": [float(d.E.times[i]) for i in idx],
        "indices": idx,
        "flags": {"shrunken_windows": [bool(d.shrunken[i]) for i in idx]},
        "method": d.method,
        "phase_convention": d.convention,
        "files": files,
    }
    atomic_write_text(directory / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_decomposition_fields(directory: str | Path) -> tuple[dict, dict]:
    """Read back the manifest and the stacked field series (physical samples)."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    out = {}
    for name, names in manifest["files"].items():
        fields = [load_field(directory / f) for f in names]
        grid = fields[0].grid
        out[name] = FieldSeries(grid, np.asarray(manifest["times"]), np.array([f.values for f in fields]))
    return manifest, out
