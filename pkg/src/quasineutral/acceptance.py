"""Acceptance suite A1-A12 with pinned tolerances."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .acoustic import dispersion_frequency, fit_rate, prony_frequency
from .config import ExperimentConfig, profile_config
from .correctors import extract_correctors
from .defect import angular_spectrum, concentration
from .harness import SweepBundle, simulate, sweep
from .nsp import FluidParams, PlasmaState, poisson_solve, run
from .scenarios import scenario
from .series import FieldSeries, spacetime_l2
from .spectral import Field, SpectralGrid, scalar_field

TOL_ALGEBRA = 1e-12
TOL_POISSON_MODE = 1e-12
TOL_POISSON_RANDOM = 1e-10
TOL_FIXED_POINT = 1e-12
MIN_ORDER = 1.8
TOL_DISPERSION = 0.01
TOL_ENERGY = 1e-8
MAX_CORRECTOR_MISMATCH = 0.20
MIN_HOLDER = 0.3
TOL_EXTRACTION = 0.02
MIN_CONCENTRATION = 0.99


@dataclass
class Item:
    id: str
    name: str
    passed: bool
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{self.id} {'PASS' if self.passed else 'FAIL'} {self.name}: " + ", ".join(
            f"{k}={_short(v)}" for k, v in self.values.items()
        )

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "passed": bool(self.passed), "values": self.values}


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, list):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


def strictly_decreasing(values) -> bool:
    v = list(values)
    return len(v) >= 2 and all(b < a for a, b in zip(v, v[1:]))


# -- A1 ---------------------------------------------------------------------

def check_projector_algebra(dim: int = 2, points: int = 32, n_fields: int = 100, seed: int = 0) -> Item:
    g = SpectralGrid(dim, points)
    rng = np.random.default_rng(seed)
    worst = {"P2_minus_P": 0.0, "PQ": 0.0, "div_P": 0.0, "parseval": 0.0}
    k = np.sqrt(g.k2)
    for _ in range(n_fields):
        v = rng.standard_normal((dim,) + g.shape)
        vh = g.fft(v)
        nv = np.linalg.norm(vh)
        ph = g.leray_p_hat(vh)
        worst["P2_minus_P"] = max(worst["P2_minus_P"], np.linalg.norm(g.leray_p_hat(ph) - ph) / nv)
        worst["PQ"] = max(worst["PQ"], np.linalg.norm(g.leray_p_hat(g.leray_q_hat(vh))) / nv)
        worst["div_P"] = max(worst["div_P"], np.linalg.norm(g.div_hat(ph)) / np.linalg.norm(k * vh))
        phys = float(np.sum(v**2))
        spec = float(np.sum(np.abs(vh) ** 2)) / g.n_total
        worst["parseval"] = max(worst["parseval"], abs(phys - spec) / phys)
    worst = {a: float(b) for a, b in worst.items()}
    return Item("A1", "projector/transform algebra", max(worst.values()) <= TOL_ALGEBRA, worst)


# -- A2 ---------------------------------------------------------------------

def check_poisson(points: int = 32, lam: float = 0.1, seed: int = 1) -> Item:
    g = SpectralGrid(2, points)
    x = g.coordinates()
    eps = 0.05
    kv = np.array([2.0, 1.0])
    phase = kv[0] * x[0] + kv[1] * x[1]
    rho = scalar_field(g, 1.0 + eps * np.cos(phase))
    V = poisson_solve(rho, lam).values[0]
    exact = -eps * np.cos(phase) / (lam**2 * float(kv @ kv))
    mode_err = float(np.linalg.norm(V - exact) / np.linalg.norm(exact))
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(g.shape)
    r = 1.0 + 0.1 * (r - r.mean())
    rho2 = scalar_field(g, r)
    state = PlasmaState.from_fields(rho2, Field(g, np.zeros((2,) + g.shape)), FluidParams(lam=lam))
    res = state.poisson_residual()
    vals = {"single_mode_rel_error": mode_err, "random_residual": res}
    return Item("A2", "Poisson exactness", mode_err <= TOL_POISSON_MODE and res <= TOL_POISSON_RANDOM, vals)


# -- A3 ---------------------------------------------------------------------

def check_fixed_point(points: int = 32, steps: int = 1000, lam: float = 0.1) -> Item:
    g = SpectralGrid(2, points)
    params = FluidParams(lam=lam)
    st = PlasmaState.from_fields(scalar_field(g, np.ones(g.shape)), Field(g, np.zeros((2,) + g.shape)), params)
    dt = lam / 32
    traj = run(st, steps * dt, dt, snapshot_stride=steps, diagnostics_stride=steps)
    dev = max(float(np.max(np.abs(traj.sigma[-1]))), float(np.max(np.abs(traj.u[-1]))))
    return Item("A3", "constant state fixed point", dev <= TOL_FIXED_POINT, {"max_deviation": dev, "steps": steps})


# -- A4 ---------------------------------------------------------------------

def check_integrator_order(points: int = 32, lam: float = 0.1, T: float = 0.25, dt0: float = 0.01) -> Item:
    g = SpectralGrid(2, points)
    params = FluidParams(lam=lam)
    st, _ = scenario("ill_prepared", g, params, amplitude=0.1, seed=3)
    finals = []
    for j in range(4):
        dt = dt0 / 2**j
        tr = run(st, T, dt, snapshot_stride=round(T / dt), diagnostics_stride=10**9)
        finals.append(np.concatenate([tr.sigma[-1].ravel(), tr.u[-1].ravel()]))
    diffs = [float(np.linalg.norm(finals[j] - finals[j + 1])) for j in range(3)]
    orders = [math.log2(diffs[j] / diffs[j + 1]) for j in range(2)]
    return Item("A4", "integrator order", min(orders) >= MIN_ORDER, {"orders": orders, "successive_diffs": diffs})


# -- A5 ---------------------------------------------------------------------

def check_dispersion(points: int = 32, lam: float = 0.1, amplitude: float = 1e-4, T: float = 2.0) -> Item:
    g = SpectralGrid(2, points)
    params = FluidParams(lam=lam)
    st, _ = scenario("acoustic_single_mode", g, params, amplitude=amplitude, k=(1, 0))
    dt = lam / 32
    tr = run(st, T, dt, diagnostics_stride=10**9)
    series = np.fft.fft2(tr.sigma)[:, 1, 0].real
    fit = prony_frequency(series, tr.sample_dt)
    theory = dispersion_frequency(1.0, lam, params.gamma)
    unit_sound = dispersion_frequency(1.0, lam, 1.0)
    err = abs(fit["natural"] - theory) / theory
    vals = {
        "measured_natural": fit["natural"],
        "measured_damped": fit["damped"],
        "theory_gamma": theory,
        "rel_error": err,
        "unit_sound_speed_frequency": unit_sound,
        "unit_sound_speed_deviation": abs(fit["natural"] - unit_sound) / unit_sound,
    }
    return Item("A5", "plasma-acoustic dispersion", err <= TOL_DISPERSION, vals)


# -- A6 ---------------------------------------------------------------------

def extra_energy_runs(config: ExperimentConfig, lam: float = 0.1) -> dict:
    """Per-step energy increase of the scenarios not covered by the sweeps."""
    out = {}
    for name in ("taylor_green", "acoustic_single_mode"):
        cfg = config.replace(scenario=name, lambda_list=[lam])
        traj, _, _ = simulate(cfg, lam)
        tot = traj.diagnostics["total"]
        out[name] = float(np.max(np.diff(tot)) / tot[0])
    return out


def check_energy(sweeps: dict[str, SweepBundle], extra: dict) -> Item:
    vals = {}
    for name, b in sweeps.items():
        for m in b.members:
            key = f"{name}@{m.lam:g}"
            vals[key] = m.metrics.get("energy_max_increase") if m.status == "ok" else None
    vals.update({f"{k}@0.1": v for k, v in extra.items()})
    ok = all(v is not None and v <= TOL_ENERGY for v in vals.values())
    return Item("A6", "energy inequality per step", ok, vals)


# -- A7 - A10, A12 sweep items ----------------------------------------------

def _metric(b: SweepBundle, name: str) -> list:
    return [m.metrics.get(name) if m.status == "ok" else None for m in b.members]


def _complete(vals) -> bool:
    return all(v is not None for v in vals)


def check_well_prepared(b: SweepBundle) -> Item:
    qu = _metric(b, "sup_qu")
    pv = _metric(b, "sup_pu_minus_v")
    fit = fit_rate(list(zip(b.config.lambda_list, qu))).exponent if _complete(qu) and min(qu) > 0 else None
    ok = _complete(qu) and _complete(pv) and strictly_decreasing(qu) and strictly_decreasing(pv) and fit is not None and fit > 0
    return Item(
        "A7",
        "well-prepared convergence",
        ok,
        {"lambda": b.config.lambda_list, "sup_qu": qu, "qu_exponent": fit, "sup_pu_minus_v": pv},
    )


def check_plasma_frequency(b: SweepBundle) -> Item:
    peak = _metric(b, "plasma_peak_frequency")
    theory = _metric(b, "plasma_theory_frequency")
    width = _metric(b, "plasma_bin_width")
    ok = _complete(peak) and all(abs(p - t) <= w for p, t, w in zip(peak, theory, width))
    return Item("A8", "plasma oscillation frequency", ok, {"peak": peak, "theory": theory, "bin_width": width})


def check_corrector_residual(b: SweepBundle) -> Item:
    r = _metric(b, "corrector_residual")
    e = _metric(b, "residual_l2")
    ok = _complete(r) and _complete(e) and strictly_decreasing(r) and strictly_decreasing(e)
    return Item("A9", "corrector residual", ok, {"lambda": b.config.lambda_list, "r": r, "lam_residual_l2": e})


def check_corrector_dynamics(b: SweepBundle) -> Item:
    mm = _metric(b, "corrector_mismatch")
    unit = _metric(b, "corrector_mismatch_unit_diffusivity")
    ok = _complete(mm) and strictly_decreasing(mm) and mm[-1] <= MAX_CORRECTOR_MISMATCH
    return Item(
        "A9b",
        "corrector dynamics",
        ok,
        {"lambda": b.config.lambda_list, "mismatch": mm, "mismatch_unit_diffusivity": unit},
    )


def check_equicontinuity(b: SweepBundle) -> Item:
    m = min(b.members, key=lambda m: m.lam)
    a = m.metrics.get("holder_exponent") if m.status == "ok" else None
    return Item("A10", "time equicontinuity of Pu", a is not None and a >= MIN_HOLDER, {"lambda": m.lam, "exponent": a})


def single_direction_concentration(points: int = 32, seed: int = 5, n_bins: int = 32) -> float:
    g = SpectralGrid(2, points)
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, 1.0, 33)
    x = g.coordinates()
    vals = np.zeros((len(times), 2) + g.shape)
    for j in range(1, 6):
        a, ph, f = rng.standard_normal(3)
        # gradient of cos(j x1 + phase) varies only along e1
        vals[:, 0] += np.multiply.outer(a * np.cos(f * times), -j * np.sin(j * x[0] + ph))
    spec = angular_spectrum(FieldSeries(g, times, vals), n_bins)
    return concentration(spec, np.array([1.0, 0.0]))


def check_defect(b: SweepBundle) -> Item:
    lfm = _metric(b, "low_frequency_mass")
    cross = _metric(b, "max_cross_pairing")
    conc = single_direction_concentration()
    ok = (
        _complete(lfm)
        and _complete(cross)
        and strictly_decreasing(lfm)
        and strictly_decreasing(cross)
        and conc >= MIN_CONCENTRATION
    )
    vals = {"lambda": b.config.lambda_list, "low_frequency_mass": lfm, "max_cross": cross, "direction_concentration": conc}
    return Item("A12", "defect surrogate", ok, vals)


# -- A11 --------------------------------------------------------------------

def synthetic_kg(points: int = 32, lam: float = 0.05, T: float = 1.0, seed: int = 7, per_lambda: int = 32):
    """Closed-form gradient solution of lam^2 (E_tt - Lap E) + E = 0 with modes |k| <= sqrt 2.

    Returns (E series, exact Eplus, exact Eminus, E_t(0), source lam^2 Lap E).
    """
    g = SpectralGrid(2, points)
    dt = lam / per_lambda
    n = math.ceil((T + 2.0 * math.pi * lam) / dt)
    times = np.arange(n + 1) * dt
    rng = np.random.default_rng(seed)
    band = (g.kmag > 0) & (g.kmag <= math.sqrt(2.0) + 1e-12)
    a = (rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)) * band
    b = (rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)) * band
    # real potential: keep the Hermitian part of the coefficients
    a = 0.5 * (a + np.conj(np.roll(np.flip(a), 1, axis=(0, 1))))
    b = 0.5 * (b + np.conj(np.roll(np.flip(b), 1, axis=(0, 1))))
    omega = np.sqrt(g.k2 + 1.0 / lam**2)
    c = np.cos(np.multiply.outer(times, omega))
    s = np.sin(np.multiply.outer(times, omega))
    phi_hat = a * c + b * s
    grad = 1j * g.wavenumbers
    E = g.ifft_real(np.einsum("i...,n...->ni...", grad, phi_hat))
    Et0 = g.ifft_real(grad * (b * omega))
    amp_p = 0.5 * (a + b / 1j)
    amp_m = 0.5 * (a - b / 1j)
    env = np.exp(1j * np.multiply.outer(times, omega - 1.0 / lam))
    plus = lam * g.ifft(np.einsum("i...,n...->ni...", grad, amp_p * env))
    minus = lam * g.ifft(np.einsum("i...,n...->ni...", grad, amp_m * np.conj(env)))
    lapE = g.ifft_real(-g.k2 * g.fft(E))
    def series(v):
        return FieldSeries(g, times, v)

    return series(E), series(plus), series(minus), Et0, series(lam**2 * lapE), T


def check_extraction(lam: float = 0.05) -> Item:
    E, plus, minus, Et0, src, T = synthetic_kg(lam=lam)
    keep = E.times <= T + 1e-12
    wp, wm, _ = extract_correctors(E, lam, "windowed")
    dp, dm, _ = extract_correctors(E, lam, "duhamel", source=src, Et0=Et0)

    def cut(s):
        return FieldSeries(s.grid, s.times[keep], s.values[keep])

    def rel(a, b):
        return spacetime_l2(cut(a).with_values(cut(a).values - cut(b).values)) / spacetime_l2(cut(b))

    vals = {
        "windowed_plus": rel(wp, plus),
        "windowed_minus": rel(wm, minus),
        "duhamel_plus": rel(dp, plus),
        "windowed_vs_duhamel": rel(wp, dp),
    }
    ok = vals["windowed_plus"] <= TOL_EXTRACTION and vals["windowed_minus"] <= TOL_EXTRACTION and vals["windowed_vs_duhamel"] <= TOL_EXTRACTION
    return Item("A11", "extraction oracle", ok, vals)


# -- driver -------------------------------------------------------------------

def desk_sweeps(profile: str = "desk", **overrides) -> dict[str, SweepBundle]:
    base = profile_config(profile, **overrides)
    well = base.replace(scenario="well_prepared", correctors=False, defect=False)
    ill = base.replace(scenario="ill_prepared")
    return {"well_prepared": sweep(well), "ill_prepared": sweep(ill)}


def run_acceptance(profile: str = "desk", sweeps: dict[str, SweepBundle] | None = None, **overrides) -> list[Item]:
    sweeps = desk_sweeps(profile, **overrides) if sweeps is None else sweeps
    base = sweeps["ill_prepared"].config
    items = [
        check_projector_algebra(base.dim),
        check_poisson(),
        check_fixed_point(),
        check_integrator_order(),
        check_dispersion(),
        check_energy(sweeps, extra_energy_runs(base)),
        check_well_prepared(sweeps["well_prepared"]),
        check_plasma_frequency(sweeps["ill_prepared"]),
        check_corrector_residual(sweeps["ill_prepared"]),
        check_corrector_dynamics(sweeps["ill_prepared"]),
        check_equicontinuity(sweeps["ill_prepared"]),
        check_extraction(),
        check_defect(sweeps["ill_prepared"]),
    ]
    return items
