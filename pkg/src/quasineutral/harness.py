"""Lambda sweeps: run, decompose, measure, fit, report."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acoustic import dispersion_frequency, fit_rate, peak_frequency, strichartz_monitor
from .config import ExperimentConfig
from .correctors import (
    OscillationDecomposition,
    decompose,
    reconstruct_oscillation,
    residual_field,
    smooth_test_fields,
)
from .defect import AngularDefectSpectrum, angular_spectrum, low_frequency_mass, orthogonality_check
from .limit import coupled_limit_run, corrector_diffusivity, ns_run
from .nsp import FluidParams, Trajectory, diagnostics_csv, run
from .scenarios import scenario
from .series import FieldSeries, spacetime_l2
from .spectral import Field, SpectralGrid, atomic_write_text

log = logging.getLogger(__name__)

SUMMARY_SCHEMA = 1
METRIC_COLUMNS = (
    "energy_max_increase",
    "sup_qu",
    "sup_pu_minus_v",
    "plasma_peak_frequency",
    "plasma_theory_frequency",
    "plasma_bin_width",
    "corrector_residual",
    "residual_l2",
    "corrector_mismatch",
    "corrector_mismatch_unit_diffusivity",
    "corrector_start_time",
    "holder_exponent",
    "low_frequency_mass",
    "max_cross_pairing",
    "strichartz_monitor",
    "initial_energy",
)
FIT_TARGETS = {
    "qu_decay": "sup_qu",
    "pu_minus_v": "sup_pu_minus_v",
    "corrector_residual": "corrector_residual",
    "residual_l2": "residual_l2",
    "corrector_mismatch": "corrector_mismatch",
    "low_frequency_mass": "low_frequency_mass",
    "max_cross_pairing": "max_cross_pairing",
}


@dataclass
class RunPlan:
    """Step, snapshot stride and horizon of one member; T lands on a snapshot."""

    lam: float
    dt: float
    stride: int
    horizon: float

    @property
    def sample_dt(self) -> float:
        return self.dt * self.stride


@dataclass
class MemberResult:
    lam: float
    status: str
    error: str | None = None
    metrics: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    spectrum: AngularDefectSpectrum | None = None
    checkpoints: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "status": self.status,
            "error": self.error,
            "metrics": self.metrics,
            "initial": self.initial,
            "diagnostics": {k: [float(x) for x in v] for k, v in self.diagnostics.items()},
            "spectrum": None if self.spectrum is None else json.loads(self.spectrum.to_json()),
        }


@dataclass
class SweepBundle:
    config: ExperimentConfig | None
    members: list[MemberResult] = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    limit_comparison: list = field(default_factory=list)
    acceptance: list = field(default_factory=list)

    def ok_members(self) -> list[MemberResult]:
        return [m for m in self.members if m.status == "ok"]

    def series(self, metric: str) -> list[tuple[float, float]]:
        return [(m.lam, m.metrics[metric]) for m in self.ok_members() if m.metrics.get(metric) is not None]


def plan_run(config: ExperimentConfig, lam: float) -> RunPlan:
    """dt from the config rule, shortened so that T is a whole number of samples.

    The run extends past T by at least one averaging window 2 pi lam so that
    forward windows over [0, T] are complete.
    """
    dt0 = config.dt(lam)
    stride = max(1, int(2.0 * math.pi * lam / (config.samples_per_period * dt0)))
    n_samples = math.ceil(config.T / (stride * dt0) - 1e-9)
    dt = config.T / (n_samples * stride)
    sample = dt * stride
    pad = math.ceil(2.0 * math.pi * lam / sample - 1e-9)
    return RunPlan(lam, dt, stride, (n_samples + pad) * sample)


def member_params(config: ExperimentConfig, lam: float) -> FluidParams:
    return FluidParams(gamma=config.gamma, mu=config.mu, nu=config.nu, lam=lam)


def member_grid(config: ExperimentConfig) -> SpectralGrid:
    return SpectralGrid(config.dim, config.points, config.extent)


def simulate(config: ExperimentConfig, lam: float) -> tuple[Trajectory, dict, RunPlan]:
    grid = member_grid(config)
    params = member_params(config, lam)
    state, record = scenario(config.scenario, grid, params, config.amplitude, config.seed, tuple(config.mode))
    plan = plan_run(config, lam)
    traj = run(
        state,
        plan.horizon,
        plan.dt,
        snapshot_stride=plan.stride,
        diagnostics_stride=config.diagnostics_stride,
        c_cfl=config.c_cfl,
        propagator=config.propagator,
    )
    return traj, record, plan


def _l2_per_sample(grid: SpectralGrid, values: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, values.ndim))
    return np.sqrt(np.sum(np.abs(values) ** 2, axis=axes) * grid.volume / grid.n_total)


def _project(grid: SpectralGrid, values: np.ndarray, which: str) -> np.ndarray:
    hat = np.moveaxis(grid.fft(values), 1, 0)
    hat = grid.leray_p_hat(hat) if which == "P" else grid.leray_q_hat(hat)
    return grid.ifft_real(np.moveaxis(hat, 0, 1))


def reference_velocity(traj: Trajectory, plan: RunPlan, t_end: float, substeps: int = 1) -> FieldSeries:
    """Incompressible NS from P u(0), sampled on the trajectory's snapshot times up to t_end."""
    g = traj.grid
    v0 = Field(g, _project(g, traj.u[:1], "P")[0])
    return ns_run(v0, t_end, plan.dt / substeps, viscosity=traj.params.mu, store_every=plan.stride * substeps)


def mode_index(grid: SpectralGrid, mode) -> tuple[int, ...]:
    return tuple(int(m) % grid.points for m in mode)


def plasma_frequency(traj: Trajectory, mode) -> dict:
    """Peak angular frequency of k.Qu(k)/|k| for the seeded mode over the whole run."""
    g = traj.grid
    idx = mode_index(g, mode)
    khat = g.khat[(slice(None),) + idx]
    u_hat = g.fft(traj.u)[(slice(None), slice(None)) + idx]
    q = u_hat @ khat
    out = peak_frequency(q, traj.sample_dt)
    kmag = float(g.kmag[idx])
    out["theory"] = dispersion_frequency(kmag, traj.lam, traj.params.gamma)
    return out


def holder_exponent(pu: FieldSeries, lam: float, max_lag: float, n_lags: int = 8) -> dict:
    """Fit h -> RMS_t ||Pu(t+h) - Pu(t)|| ~ C h^a over lags in [lam, max_lag]."""
    h = pu.dt()
    lo = max(1, math.ceil(lam / h - 1e-9))
    hi = int(math.floor(max_lag / h + 1e-9))
    if hi <= lo:
        return {"exponent": None, "lags": []}
    lags = sorted({int(round(x)) for x in np.geomspace(lo, hi, n_lags)}, reverse=True)
    samples = []
    for j in lags:
        diff = pu.values[j:] - pu.values[:-j]
        samples.append((j * h, float(np.sqrt(np.mean(_l2_per_sample(pu.grid, diff) ** 2)))))
    if len(samples) < 3:
        return {"exponent": None, "lags": samples}
    fit = fit_rate(samples)
    return {"exponent": fit.exponent, "lags": samples}


def corrector_mismatch(
    d: OscillationDecomposition,
    v_ref: FieldSeries,
    t_start: float,
    diffusivity: float,
    viscosity: float = 1.0,
    substeps: int = 4,
) -> tuple[float, float]:
    """Evolve extracted Eplus from t_start to the last sample by the corrector PDE.

    Returns the relative L2 mismatch against the extracted Eplus there and the
    actual start time used (the nearest stored sample).
    """
    times = d.Eplus.times
    i0 = int(np.argmin(np.abs(times - t_start)))
    span = float(times[-1] - times[i0])
    g = d.Eplus.grid
    lt = coupled_limit_run(
        Field(g, v_ref.values[i0]),
        Field(g, d.Eplus.values[i0]),
        span,
        d.Eplus.dt() / substeps,
        viscosity=viscosity,
        diffusivity=diffusivity,
        store_every=10**9,
    )
    a = lt.Eplus[-1]
    b = d.Eplus.values[-1]
    return float(np.linalg.norm(a - b) / np.linalg.norm(b)), float(times[i0])


def analyse_member(config: ExperimentConfig, traj: Trajectory, record: dict, plan: RunPlan, ref_substeps: int = 1) -> MemberResult:
    g, lam = traj.grid, traj.lam
    T = config.T
    diag = traj.diagnostics
    metrics: dict = {c: None for c in METRIC_COLUMNS}
    tot = diag["total"]
    e0 = float(tot[0])
    metrics["initial_energy"] = record["initial_energy"]
    if e0 > 0 and len(tot) > 1:
        metrics["energy_max_increase"] = float(np.max(np.diff(tot)) / e0)
    inside = diag["t"] <= T + 1e-9
    metrics["sup_qu"] = float(np.max(diag["qu_l2"][inside]))

    n_keep = int(np.sum(traj.times <= T + 1e-9))
    v_ref = reference_velocity(traj, plan, float(traj.times[n_keep - 1]), ref_substeps)
    pu = FieldSeries(g, traj.times[:n_keep], _project(g, traj.u[:n_keep], "P"))
    late = pu.times >= config.corrector_start - 1e-9
    metrics["sup_pu_minus_v"] = float(np.max(_l2_per_sample(g, pu.values - v_ref.values)[late]))

    if config.scenario in ("ill_prepared", "acoustic_single_mode"):
        pf = plasma_frequency(traj, config.mode)
        metrics["plasma_peak_frequency"] = pf["frequency"]
        metrics["plasma_theory_frequency"] = pf["theory"]
        metrics["plasma_bin_width"] = pf["bin_width"]

    metrics["holder_exponent"] = holder_exponent(pu, lam, config.holder_max_lag)["exponent"]
    if config.strichartz:
        metrics["strichartz_monitor"] = strichartz_monitor(traj)

    result = MemberResult(lam, "ok", metrics=metrics, initial=record, diagnostics={k: list(v) for k, v in diag.items()})
    if not (config.correctors or config.defect):
        return result

    d = decompose(traj, config.extraction, t_end=T)
    u = FieldSeries(g, d.E.times, traj.u[:n_keep])
    w_rec = reconstruct_oscillation(d.Eplus, d.Eminus, lam)
    metrics["corrector_residual"] = float(np.max(_l2_per_sample(g, u.values - w_rec.values - v_ref.values)))
    _, lam_res = residual_field(d.E, d.Eplus, d.Eminus, lam)
    metrics["residual_l2"] = spacetime_l2(lam_res)
    if config.correctors:
        dif = config.corrector_diffusivity
        dif = corrector_diffusivity(config.mu, config.nu) if dif is None else dif
        metrics["corrector_mismatch"], metrics["corrector_start_time"] = corrector_mismatch(
            d, v_ref, config.corrector_start, dif, config.mu
        )
        metrics["corrector_mismatch_unit_diffusivity"], _ = corrector_mismatch(
            d, v_ref, config.corrector_start, 1.0, config.mu
        )
        result.checkpoints = {
            "Eplus0": d.Eplus.values[0].copy(),
            "EplusT": d.Eplus.values[-1].copy(),
            "tT": float(d.Eplus.times[-1]),
            "v0": v_ref.values[0].copy(),
        }
    if config.defect:
        metrics["low_frequency_mass"] = low_frequency_mass(lam_res, config.low_freq_radius)
        tests = smooth_test_fields(g, d.E.times, 0.0, float(d.E.times[-1]))
        metrics["max_cross_pairing"] = orthogonality_check(d.Eplus, d.Eminus, lam_res, tests, lam)["max_cross"]
        result.spectrum = angular_spectrum(lam_res, config.n_bins)
    return result


def run_member(config: ExperimentConfig, lam: float, ref_substeps: int = 1) -> MemberResult:
    """Simulate and analyse one lambda; any failure is captured in the result."""
    try:
        traj, record, plan = simulate(config, lam)
        return analyse_member(config, traj, record, plan, ref_substeps)
    except Exception as exc:  # isolate: one diverging member must not stop the sweep
        log.warning("member lambda=%g failed: %s", lam, exc)
        return MemberResult(lam, "failed", error=f"{type(exc).__name__}: {exc}")


def _member_job(args):
    config, lam, substeps = args
    return run_member(config, lam, substeps)


def fit_rates(bundle: SweepBundle) -> dict:
    fits = {}
    for name, metric in FIT_TARGETS.items():
        pts = [(a, b) for a, b in bundle.series(metric) if b > 0]
        if len(pts) < 3:
            continue
        f = fit_rate(pts)
        fits[name] = {"exponent": f.exponent, "prefactor": f.prefactor, "residual": f.residual, "samples": len(pts)}
    return fits


def limit_comparison(config: ExperimentConfig, bundle: SweepBundle) -> list[dict]:
    """Corrector PDE from the smallest-lambda extraction at t=0, compared with every member at T."""
    ok = [m for m in bundle.ok_members() if m.checkpoints]
    if not ok:
        return []
    seed = min(ok, key=lambda m: m.lam)
    grid = member_grid(config)
    dif = config.corrector_diffusivity
    dif = corrector_diffusivity(config.mu, config.nu) if dif is None else dif
    dt = config.dt(seed.lam) / 2.0
    lt = coupled_limit_run(
        Field(grid, seed.checkpoints["v0"]),
        Field(grid, seed.checkpoints["Eplus0"]),
        seed.checkpoints["tT"],
        dt,
        viscosity=config.mu,
        diffusivity=dif,
        store_every=10**9,
    )
    ref = lt.Eplus[-1]
    rows = []
    for m in sorted(ok, key=lambda m: -m.lam):
        e = m.checkpoints["EplusT"]
        rows.append({"lambda": m.lam, "mismatch": float(np.linalg.norm(e - ref) / np.linalg.norm(ref))})
    return rows


def sweep(config: ExperimentConfig, workers: int | None = None) -> SweepBundle:
    """Run every lambda of the config; failing members are marked, not fatal."""
    workers = config.workers if workers is None else workers
    dts = [plan_run(config, lam).dt for lam in config.lambda_list]
    dt_ref = min(dts)
    jobs = [(config, lam, max(1, math.ceil(dt / dt_ref - 1e-9))) for lam, dt in zip(config.lambda_list, dts)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            members = list(pool.map(_member_job, jobs))
    else:
        members = [_member_job(j) for j in jobs]
    bundle = SweepBundle(config, members)
    if config.rates:
        bundle.fits = fit_rates(bundle)
    if config.correctors:
        bundle.limit_comparison = limit_comparison(config, bundle)
    return bundle


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def metrics_csv(bundle: SweepBundle) -> str:
    lines = [",".join(("lambda", "status") + METRIC_COLUMNS)]
    for m in bundle.members:
        row = [_fmt(m.lam), m.status] + [_fmt(m.metrics.get(c)) for c in METRIC_COLUMNS]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def rate_csv(bundle: SweepBundle, metric: str) -> str:
    lines = ["lambda,value"] + [f"{_fmt(a)},{_fmt(b)}" for a, b in bundle.series(metric)]
    return "\n".join(lines) + "\n"


def fits_csv(bundle: SweepBundle) -> str:
    lines = ["name,exponent,prefactor,residual,samples"]
    for name in sorted(bundle.fits):
        f = bundle.fits[name]
        lines.append(",".join([name, _fmt(f["exponent"]), _fmt(f["prefactor"]), _fmt(f["residual"]), str(f["samples"])]))
    return "\n".join(lines) + "\n"


def _clean(obj):
    """JSON-ready copy with numpy scalars converted and non-finite floats nulled."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def summary(bundle: SweepBundle) -> dict:
    cfg = bundle.config
    return {
        "schema": SUMMARY_SCHEMA,
        "config": None if cfg is None else json.loads(cfg.to_json()),
        "surrogate_dimension": None if cfg is None else (cfg.dim != 3),
        "members": [
            {"lambda": m.lam, "status": m.status, "error": m.error, "initial_energy": m.initial.get("initial_energy")}
            for m in bundle.members
        ],
        "fits": bundle.fits,
        "limit_comparison": bundle.limit_comparison,
        "items": bundle.acceptance,
        "passed": sum(1 for it in bundle.acceptance if it.get("passed")),
        "total": len(bundle.acceptance),
    }


def report(bundle: SweepBundle, out_dir: str | Path) -> list[Path]:
    """Write CSV tables, rate files, per-member data and summary.json; returns the paths written."""
    out = Path(out_dir)
    written = []

    def put(rel: str, text: str) -> None:
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(path, text)
        written.append(path)

    put("metrics.csv", metrics_csv(bundle))
    put("fits.csv", fits_csv(bundle))
    for name, metric in FIT_TARGETS.items():
        put(f"rates/{name}.csv", rate_csv(bundle, metric))
    lc = ["lambda,mismatch"] + [f"{_fmt(r['lambda'])},{_fmt(r['mismatch'])}" for r in bundle.limit_comparison]
    put("limit_comparison.csv", "\n".join(lc) + "\n")
    for m in bundle.members:
        tag = f"members/lambda_{m.lam:.6g}"
        if m.diagnostics:
            put(f"{tag}/diagnostics.csv", diagnostics_csv({k: np.asarray(v) for k, v in m.diagnostics.items()}))
        if m.spectrum is not None:
            put(f"{tag}/defect_spectrum.json", m.spectrum.to_json())
    put("bundle.json", _dumps({"config": None if bundle.config is None else json.loads(bundle.config.to_json()),
                               "members": [m.to_dict() for m in bundle.members],
                               "fits": bundle.fits,
                               "limit_comparison": bundle.limit_comparison,
                               "acceptance": bundle.acceptance}))
    put("summary.json", _dumps(summary(bundle)))
    return written


def load_bundle(path: str | Path) -> SweepBundle:
    """Rebuild a bundle (metrics only, no field data) from bundle.json."""
    data = json.loads(Path(path).read_text())
    cfg = None if data["config"] is None else ExperimentConfig.from_dict(data["config"])
    members = []
    for m in data["members"]:
        spec = None
        if m.get("spectrum"):
            s = m["spectrum"]
            spec = AngularDefectSpectrum(
                np.array([b["center_direction"] for b in s["bins"]]),
                np.array([b["matrix"] for b in s["bins"]]),
                tuple(s["window"]),
            )
        members.append(
            MemberResult(
                m["lambda"],
                m["status"],
                m["error"],
                m["metrics"],
                m["initial"],
                {k: list(v) for k, v in m["diagnostics"].items()},
                spec,
            )
        )
    return SweepBundle(cfg, members, data["fits"], data["limit_comparison"], data["acceptance"])
