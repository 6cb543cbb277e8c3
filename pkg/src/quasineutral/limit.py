"""The lam = 0 side: incompressible Navier-Stokes for v and the corrector equation.

    v_t = P(-(v.grad)v) + nu Lap v,                 div v = 0
    E_t = d Lap E - Q div(v (x) E),                  P E = 0

with div(v (x) E)_j = d_i(v_i E_j), i.e. transport of E by v.  The
diffusivity d defaults to 1; :func:`corrector_diffusivity` gives the value
(2 mu + nu)/2 that a two-scale expansion of the compressible system with
viscosities (mu, nu) produces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .series import FieldSeries
from .spectral import Field, SpectralGrid


class InvariantError(ValueError):
    """Input violates div v = 0 or P E = 0."""


class CFLError(ValueError):
    """Time step violates the advective bound."""


@dataclass
class LimitState:
    v: Field
    Eplus: Field
    Eminus: Field
    t: float = 0.0

    def divergence_ratio(self) -> float:
        return _div_ratio(self.v.grid, self.v.values)

    def impurity(self) -> tuple[float, float]:
        g = self.v.grid
        return _gradient_impurity(g, self.Eplus.values), _gradient_impurity(g, self.Eminus.values)


@dataclass
class LimitTrajectory:
    grid: SpectralGrid
    times: np.ndarray
    v: np.ndarray
    Eplus: np.ndarray
    Eminus: np.ndarray

    def series(self, name: str) -> FieldSeries:
        return FieldSeries(self.grid, self.times, getattr(self, name))


def corrector_diffusivity(mu: float, nu: float) -> float:
    """(2 mu + nu)/2: half the longitudinal viscosity, which damps the envelope."""
    return 0.5 * (2.0 * mu + nu)


def _div_ratio(g: SpectralGrid, v: np.ndarray) -> float:
    hat = g.fft(v)
    num = np.sqrt(np.sum(np.abs(g.div_hat(hat)) ** 2))
    # compare |div v| with |k||v| so the ratio is scale-free
    den = np.sqrt(np.sum(g.k2 * np.sum(np.abs(hat) ** 2, axis=0)))
    return float(num / den) if den > 0 else 0.0


def _gradient_impurity(g: SpectralGrid, e: np.ndarray) -> float:
    hat = g.fft(e)
    den = np.sqrt(np.sum(np.abs(hat) ** 2))
    if den == 0:
        return 0.0
    return float(np.sqrt(np.sum(np.abs(g.leray_p_hat(hat)) ** 2)) / den)


def _check_cfl(g: SpectralGrid, v: np.ndarray, dt: float, c: float = 1.0) -> None:
    vmax = float(np.max(np.sqrt(np.sum(v**2, axis=0))))
    if vmax > 0 and dt * vmax > c * g.spacing:
        raise CFLError(f"dt={dt:.3e} violates the advective bound {c * g.spacing / vmax:.3e}")


class NSIntegrator:
    """Lawson SSP-RK2 for the Leray-projected Navier-Stokes equations."""

    def __init__(self, grid: SpectralGrid, viscosity: float = 1.0):
        self.grid = grid
        self.viscosity = viscosity

    def nonlinear(self, v_hat):
        g = self.grid
        v = g.ifft_real(v_hat)
        grads = g.ifft_real(1j * g.wavenumbers[:, np.newaxis] * v_hat[np.newaxis])
        adv = np.einsum("j...,ji...->i...", v, grads)
        return -g.leray_p_hat(g.dealias_mask * g.fft(adv))

    def advance(self, v_hat, dt):
        decay = np.exp(-self.viscosity * self.grid.k2 * dt)
        n0 = self.nonlinear(v_hat)
        v1 = decay * (v_hat + dt * n0)
        n1 = self.nonlinear(v1)
        return 0.5 * decay * v_hat + 0.5 * (v1 + dt * n1)


def ns_step(v: Field, dt: float, viscosity: float = 1.0, div_tol: float = 1e-10) -> Field:
    g = v.grid
    vals = v.physical().values
    if _div_ratio(g, vals) > div_tol:
        raise InvariantError("ns_step needs a divergence-free velocity")
    _check_cfl(g, vals, dt)
    v_hat = NSIntegrator(g, viscosity).advance(g.fft(vals), dt)
    return Field(g, g.ifft_real(v_hat))


def ns_run(v0: Field, T: float, dt: float, viscosity: float = 1.0, store_every: int = 1) -> FieldSeries:
    """Fixed-step run; dt is shortened so that an integer number of steps lands on T.

    Every ``store_every``-th step is kept, and the final step always is.
    """
    g = v0.grid
    n_steps = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / n_steps
    vals = v0.physical().values
    _check_cfl(g, vals, dt)
    integ = NSIntegrator(g, viscosity)
    v_hat = g.leray_p_hat(g.fft(vals))
    times, out = [0.0], [g.ifft_real(v_hat)]
    for n in range(1, n_steps + 1):
        v_hat = integ.advance(v_hat, dt)
        if n % store_every == 0 or n == n_steps:
            times.append(n * dt)
            out.append(g.ifft_real(v_hat))
    return FieldSeries(g, np.asarray(times), np.array(out))


def ns_energy_balance(series: FieldSeries, viscosity: float = 1.0) -> np.ndarray:
    """||v(t)||^2 + 2 nu int_0^t ||grad v||^2 at every sample.

    The time integral uses the Hermite-corrected trapezoid, with the rate of
    ||grad v||^2 taken from the equation itself.
    """
    g = series.grid
    hat = g.fft(series.values)
    vol_norm = g.volume / g.n_total**2
    axes = tuple(range(1, hat.ndim))
    e = vol_norm * np.sum(np.abs(hat) ** 2, axis=axes)
    d = vol_norm * np.sum(g.k2 * np.abs(hat) ** 2, axis=axes)
    integ = NSIntegrator(g, viscosity)
    vt = np.array([integ.nonlinear(h) - viscosity * g.k2 * h for h in hat])
    dd = 2.0 * vol_norm * np.sum(g.k2 * np.real(np.conj(hat) * vt), axis=axes)
    h = series.dt()
    steps = 0.5 * h * (d[1:] + d[:-1]) + h**2 / 12.0 * (dd[:-1] - dd[1:])
    acc = np.concatenate([[0.0], np.cumsum(steps)])
    return e + 2.0 * viscosity * acc


def pressure_from_velocity(v: Field) -> Field:
    """Pi = Delta^-1 div((v.grad)v), the pressure eliminated by the projection."""
    g = v.grid
    v_hat = g.fft(v.physical().values)
    vv = g.ifft_real(v_hat)
    grads = g.ifft_real(1j * g.wavenumbers[:, np.newaxis] * v_hat[np.newaxis])
    adv = g.dealias_mask * g.fft(np.einsum("j...,ji...->i...", vv, grads))
    return Field(g, g.ifft_real(-g.inv_k2 * g.div_hat(adv))[np.newaxis])


class CorrectorIntegrator:
    """Lawson SSP-RK2 for E_t = d Lap E - Q div(v (x) E); Q is applied at every stage."""

    def __init__(self, grid: SpectralGrid, diffusivity: float = 1.0):
        self.grid = grid
        self.diffusivity = diffusivity

    def transport(self, e_hat, v):
        g = self.grid
        e = g.ifft(e_hat)
        tensor = v[:, np.newaxis] * e[np.newaxis, :]  # (i, j) = v_i E_j
        t_hat = g.dealias_mask * g.fft(tensor)
        div = np.einsum("i...,ij...->j...", 1j * g.wavenumbers, t_hat)
        return -g.leray_q_hat(div)

    def advance(self, e_hat, v0, dt, v1=None):
        """One step; ``v1`` is the advecting velocity at the end of the step (defaults to v0)."""
        g = self.grid
        v1 = v0 if v1 is None else v1
        decay = np.exp(-self.diffusivity * g.k2 * dt)
        e1 = decay * (e_hat + dt * self.transport(e_hat, v0))
        e2 = 0.5 * decay * e_hat + 0.5 * (e1 + dt * self.transport(e1, v1))
        return g.leray_q_hat(e2)


def corrector_step(
    E: Field, v: Field, dt: float, diffusivity: float = 1.0, tol: float = 1e-10
) -> Field:
    g = E.grid
    e = np.asarray(E.physical().values, dtype=complex)
    if _gradient_impurity(g, e) > tol:
        raise InvariantError("corrector_step needs a gradient field (P E = 0)")
    vv = v.physical().values
    _check_cfl(g, vv, dt)
    e_hat = CorrectorIntegrator(g, diffusivity).advance(g.fft(e), vv, dt)
    return Field(g, g.ifft(e_hat))


def coupled_limit_run(
    v0: Field,
    Eplus0: Field,
    T: float,
    dt: float,
    Eminus0: Field | None = None,
    viscosity: float = 1.0,
    diffusivity: float = 1.0,
    store_every: int = 1,
    tol: float = 1e-8,
) -> LimitTrajectory:
    """Evolve v by Navier-Stokes and the correctors riding on it.

    v is not influenced by the correctors.  Samples are kept every
    ``store_every`` steps and at the final step.  When Eminus0 is omitted or is the
    conjugate of Eplus0, Eminus is produced as the conjugate of Eplus.
    """
    g = v0.grid
    vals = v0.physical().values
    if _div_ratio(g, vals) > tol:
        raise InvariantError("v0 must be divergence free")
    ep = np.asarray(Eplus0.physical().values, dtype=complex)
    if _gradient_impurity(g, ep) > tol:
        raise InvariantError("Eplus0 must be a gradient field")
    conjugate = Eminus0 is None or np.allclose(Eminus0.physical().values, np.conj(ep), rtol=0, atol=1e-12 * max(1.0, float(np.max(np.abs(ep)))))
    em = np.conj(ep) if conjugate else np.asarray(Eminus0.physical().values, dtype=complex)
    n_steps = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / n_steps
    _check_cfl(g, vals, dt)
    ns = NSIntegrator(g, viscosity)
    cor = CorrectorIntegrator(g, diffusivity)
    v_hat = g.leray_p_hat(g.fft(vals))
    p_hat = g.leray_q_hat(g.fft(ep))
    m_hat = g.leray_q_hat(g.fft(em))
    v_phys = g.ifft_real(v_hat)
    times, vs, eps = [0.0], [v_phys], [g.ifft(p_hat)]
    ems = [np.conj(eps[0]) if conjugate else g.ifft(m_hat)]
    for n in range(1, n_steps + 1):
        v_next_hat = ns.advance(v_hat, dt)
        v_next = g.ifft_real(v_next_hat)
        p_hat = cor.advance(p_hat, v_phys, dt, v_next)
        if not conjugate:
            m_hat = cor.advance(m_hat, v_phys, dt, v_next)
        v_hat, v_phys = v_next_hat, v_next
        if n % store_every == 0 or n == n_steps:
            times.append(n * dt)
            vs.append(v_phys)
            eps.append(g.ifft(p_hat))
            ems.append(np.conj(eps[-1]) if conjugate else g.ifft(m_hat))
    return LimitTrajectory(g, np.asarray(times), np.array(vs), np.array(eps), np.array(ems))


def corrector_forcing(Eplus: Field, Eminus: Field) -> tuple[Field, float]:
    """P div(E+ (x) E+ + E- (x) E-), real part, and the relative size of the imaginary part."""
    g = Eplus.grid
    ep = np.asarray(Eplus.physical().values, dtype=complex)
    em = np.asarray(Eminus.physical().values, dtype=complex)
    tensor = ep[:, np.newaxis] * ep[np.newaxis, :] + em[:, np.newaxis] * em[np.newaxis, :]
    t_hat = g.dealias_mask * g.fft(tensor)
    div = np.einsum("j...,ij...->i...", 1j * g.wavenumbers, t_hat)
    out = g.ifft(g.leray_p_hat(div))
    scale = max(float(np.max(np.abs(out))), 1e-300)
    imag = float(np.max(np.abs(out.imag))) / scale if np.max(np.abs(out)) > 0 else 0.0
    return Field(g, out.real), imag
