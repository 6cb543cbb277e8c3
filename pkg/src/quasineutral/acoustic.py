"""Klein-Gordon view of the density fluctuation sigma = rho - 1.

sigma obeys

    sigma_tt - gamma Lap sigma + sigma/lam^2 = F1 + F2 + F3

with the viscous, convective/pressure and electric source pieces

    F1 = -div(mu Lap u + (nu+mu) grad div u)
    F2 = div(div(rho u (x) u) + (gamma-1) grad pi)
    F3 = -div(sigma grad V) = -lam^2 div(div(grad V (x) grad V) - 1/2 grad |grad V|^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nsp import PlasmaState, Trajectory, pressure_pi, rhs
from .series import FieldSeries
from .spectral import Field, ParameterError, SpectralGrid, StructureError, sobolev_norm


@dataclass
class KGSources:
    F1: np.ndarray
    F2: np.ndarray
    F3: np.ndarray
    F3_quadratic: np.ndarray
    f3_mismatch: float

    @property
    def total(self) -> np.ndarray:
        return self.F1 + self.F2 + self.F3


@dataclass
class RateFit:
    exponent: float
    prefactor: float
    residual: float
    samples: list = field(default_factory=list)


def _dealiased_product_hat(grid: SpectralGrid, a: np.ndarray) -> np.ndarray:
    return grid.dealias_mask * grid.fft(a)


def assemble_sources(state: PlasmaState) -> KGSources:
    """Evaluate F1, F2, F3 on one state; F3 is computed in both forms."""
    g, p = state.grid, state.params
    k = g.wavenumbers
    u = state.u.values
    u_hat = g.fft(u)
    rho = state.rho.values[0]
    sigma = rho - 1.0
    kdotu = np.sum(k * u_hat, axis=0)
    # div(mu Lap u + (nu+mu) grad div u) = (2 mu + nu) Lap div u
    f1_hat = -p.longitudinal_viscosity * (-g.k2) * (1j * kdotu)
    flux = rho[np.newaxis, np.newaxis] * u[:, np.newaxis] * u[np.newaxis, :]  # (i, j)
    flux_hat = _dealiased_product_hat(g, flux)
    pi_hat = _dealiased_product_hat(g, pressure_pi(rho, p.gamma))
    # div div M = -sum_ij k_i k_j M_ij
    f2_hat = -np.einsum("i...,j...,ij...->...", k, k, flux_hat) + (p.gamma - 1.0) * (-g.k2) * pi_hat
    v_hat = g.fft(state.V.values[0])
    grad_v = g.ifft_real(g.grad_hat(v_hat))
    sgv_hat = _dealiased_product_hat(g, sigma[np.newaxis] * grad_v)
    f3_hat = -1j * np.sum(k * sgv_hat, axis=0)
    vv_hat = _dealiased_product_hat(g, grad_v[:, np.newaxis] * grad_v[np.newaxis, :])
    sq_hat = _dealiased_product_hat(g, np.sum(grad_v**2, axis=0))
    inner_hat = -np.einsum("i...,j...,ij...->...", k, k, vv_hat) - 0.5 * (-g.k2) * sq_hat
    f3q_hat = -(p.lam**2) * inner_hat
    F3 = g.ifft_real(f3_hat)
    F3q = g.ifft_real(f3q_hat)
    w = g.volume / g.n_total
    mismatch = float(np.sqrt(np.sum((F3 - F3q) ** 2) * w))
    return KGSources(g.ifft_real(f1_hat), g.ifft_real(f2_hat), F3, F3q, mismatch)


def kg_operator_direct(state: PlasmaState) -> np.ndarray:
    """sigma_tt - gamma Lap sigma + sigma/lam^2 computed from the momentum equation.

    sigma_tt = -div((rho u)_t) with (rho u)_t = rho_t u + rho u_t taken from
    the NSP right-hand side; this route never touches the source splitting.
    """
    g, p = state.grid, state.params
    rho_t, u_t = rhs(state)
    rho = state.rho.values[0]
    m_t = rho_t.values[0][np.newaxis] * state.u.values + rho[np.newaxis] * u_t.values
    sigma_tt = -g.ifft_real(g.div_hat(_dealiased_product_hat(g, m_t)))
    sigma = rho - 1.0
    lap = g.ifft_real(-g.k2 * g.fft(sigma))
    return sigma_tt - p.gamma * lap + sigma / p.lam**2


def kg_residual(traj: Trajectory, sound_speed_sq: float | None = None) -> dict:
    """Centered-difference residual of the Klein-Gordon identity on interior snapshots.

    ``sound_speed_sq`` defaults to gamma, the linearised sound speed squared
    of the pressure law rho^gamma.
    """
    n = len(traj.times)
    if n < 3:
        raise StructureError("need at least three snapshots")
    h = FieldSeries(traj.grid, traj.times, traj.sigma).dt()
    g, p = traj.grid, traj.params
    c2 = p.gamma if sound_speed_sq is None else sound_speed_sq
    w = g.volume / g.n_total
    per = []
    for i in range(1, n - 1):
        s = traj.sigma
        stt = (s[i + 1] - 2.0 * s[i] + s[i - 1]) / h**2
        lap = g.ifft_real(-g.k2 * g.fft(s[i]))
        src = assemble_sources(traj.state(i)).total
        r = stt - c2 * lap + s[i] / p.lam**2 - src
        per.append(float(np.sqrt(np.sum(r**2) * w)))
    per_arr = np.asarray(per)
    return {"max": float(per_arr.max()), "mean": float(per_arr.mean()), "per_snapshot": per}


def rescale(f: Field, lam: float, direction: str = "forward") -> Field:
    """Relabel the grid for y = x/lam (forward) or x = lam*y (backward).

    Sample values are unchanged: u~(y) = u(lam*y) lives on a box of side L/lam.
    """
    if not lam > 0:
        raise ParameterError("lam must be positive")
    g = f.grid
    if direction == "forward":
        extent = g.extent / lam
    elif direction == "backward":
        extent = g.extent * lam
    else:
        raise ParameterError(f"direction must be 'forward' or 'backward', got {direction!r}")
    new = SpectralGrid(g.dim, g.points, extent, g.dealias_fraction)
    return Field(new, f.values.copy(), f.fourier)


def rescale_time(t, lam: float, direction: str = "forward"):
    return t / lam if direction == "forward" else t * lam


def rescaled_norm_factor(lam: float, q: float, k: float, p: float, dim: int) -> float:
    """Factor lam^(-1/q + k - d/p) relating the L^q_tau W^{k,p}_y norm of the
    rescaled field to the L^q_t W^{k,p}_x norm of the original (homogeneous k)."""
    inv_q = 0.0 if math.isinf(q) else 1.0 / q
    inv_p = 0.0 if math.isinf(p) else 1.0 / p
    return lam ** (-inv_q + k - dim * inv_p)


def _tiny_series(x, fn, series):
    out = np.empty_like(x)
    small = x < 1e-3
    out[~small] = fn(x[~small])
    out[small] = series(x[small])
    return out


def kg_solve_linear(
    f: Field,
    g: Field,
    mass: float,
    T: float,
    dt: float,
    source: FieldSeries | None = None,
) -> FieldSeries:
    """Solve w_tt - Lap w + mass^2 w = F with w(0)=f, w_t(0)=g.

    Each Fourier mode is advanced with the exact oscillatory propagator; the
    source is taken piecewise linear between samples and its Duhamel
    integral is evaluated in closed form.
    """
    if not mass > 0:
        raise ParameterError("mass must be positive")
    grid = f.grid
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise StructureError("T must be an integer multiple of dt")
    omega = np.sqrt(grid.k2 + mass**2)
    if float(np.max(omega)) * dt > math.pi:
        raise ParameterError(
            f"dt={dt:.3e} under-resolves the top frequency {float(np.max(omega)):.3e}; need dt <= {math.pi / float(np.max(omega)):.3e}"
        )
    if source is not None and len(source) != n_steps + 1:
        raise StructureError("source must be sampled at every output time")
    x = omega * dt
    c, s = np.cos(x), np.sin(x)
    # kernels of the piecewise-linear Duhamel integral
    i0 = (1.0 - c) / omega**2
    i1 = _tiny_series(x, lambda y: (y - np.sin(y)) / y**3, lambda y: 1.0 / 6.0 - y**2 / 120.0) * dt**2
    j0 = s / omega
    j1 = _tiny_series(x, lambda y: (1.0 - np.cos(y)) / y**2, lambda y: 0.5 - y**2 / 24.0) * dt
    w_hat = grid.fft(f.physical().values)
    wt_hat = grid.fft(g.physical().values)
    out = np.empty((n_steps + 1,) + w_hat.shape)
    out[0] = grid.ifft_real(w_hat)
    f_prev = grid.fft(source.values[0]) if source is not None else None
    for n in range(1, n_steps + 1):
        w_new = c * w_hat + (s / omega) * wt_hat
        wt_new = -omega * s * w_hat + c * wt_hat
        if source is not None:
            f_next = grid.fft(source.values[n])
            w_new = w_new + (i0 - i1) * f_prev + i1 * f_next
            wt_new = wt_new + (j0 - j1) * f_prev + j1 * f_next
            f_prev = f_next
        w_hat, wt_hat = w_new, wt_new
        out[n] = grid.ifft_real(w_hat)
    return FieldSeries(grid, np.arange(n_steps + 1) * dt, out)


def kg_energy(w: np.ndarray, wt: np.ndarray, grid: SpectralGrid, mass: float) -> float:
    """(|w_t|^2 + |grad w|^2 + m^2 |w|^2)/2 integrated over the box."""
    w_hat = grid.fft(w)
    vol_norm = grid.volume / grid.n_total**2
    grad2 = vol_norm * float(np.sum(grid.k2 * np.abs(w_hat) ** 2))
    cell = grid.volume / grid.n_total
    return 0.5 * (float(np.sum(wt**2)) * cell + grad2 + mass**2 * float(np.sum(w**2)) * cell)


def strichartz_norm(series: FieldSeries, s: float, q: float = 4.0) -> float:
    """(sum_n dt * ||w_n||_{W^{-s,4}}^q)^(1/q), left-endpoint rectangle rule in time.

    A single sample is treated as a unit time interval.
    """
    if len(series) == 0:
        raise StructureError("empty series")
    h = series.dt() if len(series) > 1 else 1.0
    total = 0.0
    for i in range(max(len(series) - 1, 1)):
        total += h * sobolev_norm(series.at(i), -s, 4) ** q
    return total ** (1.0 / q)


def fit_rate(samples) -> RateFit:
    """Least-squares fit y = C * lam^r on log-log axes.

    ``samples`` is a sequence of (lam, y) pairs with lam strictly decreasing.
    """
    pts = [(float(a), float(b)) for a, b in samples]
    if len(pts) < 3:
        raise StructureError("need at least three samples")
    lams = np.array([a for a, _ in pts])
    ys = np.array([b for _, b in pts])
    if np.any(np.diff(lams) >= 0):
        raise StructureError("abscissae must be strictly decreasing")
    if np.any(ys <= 0) or np.any(lams <= 0):
        raise ParameterError("rate fit needs positive values")
    X = np.vstack([np.log(lams), np.ones_like(lams)]).T
    coef, *_ = np.linalg.lstsq(X, np.log(ys), rcond=None)
    resid = np.log(ys) - X @ coef
    return RateFit(float(coef[0]), float(math.exp(coef[1])), float(np.sqrt(np.mean(resid**2))), pts)


def guaranteed_qu_exponent(p: float = 4.0, s0: float = 1.5) -> float:
    """Proven (not sharp) decay exponent (6-p)/(p(17+4 s0)) of the gradient velocity."""
    return (6.0 - p) / (p * (17.0 + 4.0 * s0))


def mollifier_width(lam: float, s0: float = 1.5) -> float:
    """alpha = lam^(2/(17+4 s0)), the width balancing the two error terms."""
    return lam ** (2.0 / (17.0 + 4.0 * s0))


def strichartz_monitor(traj: Trajectory, s0: float = 1.5) -> float:
    """lam^(-1/2) ||sigma||_{L^4_t W^{-s0-2,4}_x} over the stored snapshots."""
    series = FieldSeries(traj.grid, traj.times, traj.sigma)
    return traj.lam**-0.5 * strichartz_norm(series, s0 + 2.0, 4.0)


def dispersion_frequency(kmag: float, lam: float, sound_speed_sq: float) -> float:
    """Undamped linear frequency sqrt(c^2 |k|^2 + 1/lam^2)."""
    return math.sqrt(sound_speed_sq * kmag**2 + 1.0 / lam**2)


def prony_frequency(samples, h: float) -> dict:
    """Order-2 linear prediction x_{n+1} = a x_n + b x_{n-1} on a uniformly sampled signal.

    The roots z of z^2 - a z - b give s = log(z)/h; ``natural`` is |s|, the
    undamped frequency of a damped oscillator, ``damped`` is |Im s| and
    ``decay`` is -Re s.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 4:
        raise StructureError("need at least four samples")
    A = np.stack([x[1:-1], x[:-2]], axis=1)
    (a, b), *_ = np.linalg.lstsq(A, x[2:], rcond=None)
    roots = np.roots([1.0, -a, -b])
    s = np.log(roots.astype(complex)) / h
    s = s[np.argmax(np.abs(s.imag))]
    return {"natural": float(abs(s)), "damped": float(abs(s.imag)), "decay": float(-s.real)}


def peak_frequency(samples, h: float) -> dict:
    """Angular frequency of the largest DFT bin of a (complex) series after removing its mean."""
    x = np.asarray(samples, dtype=complex)
    if x.size < 4:
        raise StructureError("need at least four samples")
    spec = np.abs(np.fft.fft(x - x.mean()))
    freqs = 2.0 * math.pi * np.fft.fftfreq(x.size, d=h)
    i = int(np.argmax(spec))
    return {"frequency": float(abs(freqs[i])), "bin_width": 2.0 * math.pi / (x.size * h)}
