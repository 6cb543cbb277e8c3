import json
import math

import numpy as np
import pytest

from quasineutral.nsp import (
    DIAGNOSTIC_COLUMNS,
    DomainError,
    FluidParams,
    PlasmaState,
    RegimeError,
    StabilityError,
    diagnostics_csv,
    dt_max,
    energy,
    poisson_solve,
    pressure_pi,
    rhs,
    run,
    save_trajectory,
    step,
)
from quasineutral.scenarios import scenario
from quasineutral.spectral import CompatibilityError, Field, SpectralGrid, grad, l2_norm, load_field, scalar_field


def rest_state(g, lam=0.1):
    return PlasmaState.from_fields(
        scalar_field(g, np.ones(g.shape)), Field(g, np.zeros((g.dim,) + g.shape)), FluidParams(lam=lam)
    )


def shear_state(g, amp=0.3, lam=0.1):
    x = g.coordinates()
    u = np.zeros((2,) + g.shape)
    u[1] = amp * np.sin(x[0])
    return PlasmaState.from_fields(scalar_field(g, np.ones(g.shape)), Field(g, u), FluidParams(lam=lam))


def test_params_validation():
    for bad in ({"gamma": 1.0}, {"mu": 0.0}, {"mu": 1.0, "nu": -1.0}, {"lam": 0.0}):
        with pytest.raises(ValueError):
            FluidParams(**bad)
    assert FluidParams().longitudinal_viscosity == 3.0


def test_pressure_examples():
    assert np.all(pressure_pi(np.ones(5), 5 / 3) == 0)
    rho = np.array([0.5, 0.9, 1.3, 2.0])
    assert np.allclose(pressure_pi(rho, 2.0), (rho - 1) ** 2, rtol=1e-14, atol=1e-15)
    g = 5 / 3
    oracle = (1.1**g - 1 - g * 0.1) / (g - 1)
    assert pressure_pi(np.array([1.1]), g)[0] == pytest.approx(oracle, rel=1e-14)


def test_pressure_nonpositive_density_locates_cell():
    g = SpectralGrid(2, 8)
    rho = np.ones(g.shape)
    rho[3, 5] = -0.1
    with pytest.raises(DomainError, match=r"\(3, 5\)"):
        pressure_pi(scalar_field(g, rho), 5 / 3)


def test_poisson_examples(rng):
    g = SpectralGrid(2, 32)
    lam = 0.2
    assert np.max(np.abs(poisson_solve(scalar_field(g, np.ones(g.shape)), lam).values)) == 0
    x = g.coordinates()
    ph = 2 * x[0] + x[1]
    V = poisson_solve(scalar_field(g, 1 + 0.05 * np.cos(ph)), lam).values[0]
    assert np.max(np.abs(V + 0.05 * np.cos(ph) / (lam**2 * 5))) < 1e-12
    noise = rng.standard_normal(g.shape)
    st = PlasmaState.from_fields(
        scalar_field(g, 1 + 0.01 * (noise - noise.mean())), Field(g, np.zeros((2,) + g.shape)), FluidParams(lam=lam)
    )
    assert abs(st.V.values.mean()) < 1e-14
    assert st.poisson_residual() <= 1e-10


def test_poisson_incompatible_mean():
    g = SpectralGrid(2, 8)
    with pytest.raises(CompatibilityError, match="1.000e-03"):
        poisson_solve(scalar_field(g, np.full(g.shape, 1.001)), 0.1)


def test_rhs_fixed_point():
    ds, du = rhs(rest_state(SpectralGrid(2, 16)))
    assert np.max(np.abs(ds.values)) == 0 and np.max(np.abs(du.values)) == 0


def test_rhs_linear_gradient_mode():
    g = SpectralGrid(2, 16)
    x = g.coordinates()
    eps = 1e-7
    phi = scalar_field(g, eps * np.cos(x[0] + x[1]))
    u = grad(phi)
    st = PlasmaState.from_fields(scalar_field(g, np.ones(g.shape)), u, FluidParams(lam=1.0))
    ds, du = rhs(st)
    # rho = 1 so V = 0 and pressure has no gradient; only the viscous term survives
    expect = -3.0 * 2.0 * u.values
    assert np.max(np.abs(du.values - expect)) < 1e-6 * np.max(np.abs(expect))
    assert np.max(np.abs(ds.values - 2.0 * phi.values)) < 1e-6 * eps


def test_rhs_density_floor():
    g = SpectralGrid(2, 8)
    rho = np.ones(g.shape)
    rho[0, 0] = 5e-9
    rho[1, 1] += 1 - 5e-9
    st = PlasmaState.from_fields(scalar_field(g, rho), Field(g, np.zeros((2,) + g.shape)), FluidParams())
    with pytest.raises(RegimeError):
        rhs(st)


def test_constant_state_is_stationary():
    g = SpectralGrid(2, 16)
    st = rest_state(g)
    dt = dt_max(st)
    for _ in range(1000):
        st = step(st, dt)
    assert np.max(np.abs(st.rho.values - 1)) <= 1e-12
    assert np.max(np.abs(st.u.values)) <= 1e-12


def test_shear_mode_decays_exactly():
    g = SpectralGrid(2, 16)
    st = shear_state(g)
    T = 0.5
    traj = run(st, T, 0.01)
    amp = np.max(np.abs(traj.u[-1][1]))
    assert abs(amp - 0.3 * math.exp(-T)) <= 1e-8


def test_step_rejects_large_dt():
    st = rest_state(SpectralGrid(2, 16), lam=0.1)
    with pytest.raises(StabilityError, match="dt_max"):
        step(st, 1.0)


def test_mass_conservation_and_poisson_consistency():
    g = SpectralGrid(2, 32)
    st, _ = scenario("ill_prepared", g, FluidParams(lam=0.1), amplitude=0.1)
    m0 = st.rho.values.mean()
    dt = 0.1 / 32
    for _ in range(50):
        st = step(st, dt)
    assert abs(st.rho.values.mean() - m0) <= 1e-12
    assert st.poisson_residual() <= 1e-9


def test_energy_examples(rng):
    g = SpectralGrid(2, 16)
    e = energy(rest_state(g))
    assert (e.kinetic, e.internal, e.electric) == (0, 0, 0)
    a = 0.4
    e = energy(shear_state(g, amp=a))
    assert e.kinetic == pytest.approx(a**2 * g.volume / 4, rel=1e-13)
    st, _ = scenario("ill_prepared", g, FluidParams(lam=0.2), amplitude=0.1)
    ref = 0.5 * 0.2**2 * l2_norm(grad(poisson_solve(st.rho, 0.2))) ** 2
    assert energy(st).electric == pytest.approx(ref, rel=1e-12)
    assert energy(st).internal >= 0


def test_energy_inequality_along_run():
    g = SpectralGrid(2, 32)
    st, rec = scenario("ill_prepared", g, FluidParams(lam=0.1), amplitude=0.1)
    traj = run(st, 0.2, 1.5e-3)
    tot = traj.diagnostics["total"]
    assert np.max(np.diff(tot)) <= 1e-8 * rec["initial_energy"]


def test_zero_run_diagnostics_vanish():
    traj = run(rest_state(SpectralGrid(2, 8)), 0.05, 0.01)
    for c in DIAGNOSTIC_COLUMNS[2:]:
        assert np.all(traj.diagnostics[c] == 0)


def test_sigma_oscillation_period():
    g = SpectralGrid(2, 16)
    lam = 0.1
    st, _ = scenario("acoustic_single_mode", g, FluidParams(lam=lam), amplitude=1e-5)
    traj = run(st, 3.0, lam / 32)
    s = traj.sigma[:, 0, 0]
    up = np.flatnonzero((s[:-1] < 0) & (s[1:] >= 0))
    t = traj.times
    cross = t[up] - s[up] * (t[up + 1] - t[up]) / (s[up + 1] - s[up])
    period = np.mean(np.diff(cross))
    expect = 2 * math.pi * lam / math.sqrt(1 + 5 / 3 * lam**2)
    # damping shifts the period at order (mu lam)^2
    assert period == pytest.approx(expect, rel=0.03)


def test_save_trajectory_layout(tmp_path):
    g = SpectralGrid(2, 8)
    traj = run(shear_state(g), 0.04, 0.01, snapshot_stride=2)
    save_trajectory(tmp_path, traj)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["times"] == pytest.approx([0.0, 0.02, 0.04])
    f = load_field(tmp_path / man["files"]["u"][1])
    assert np.allclose(f.values, traj.u[1], rtol=0, atol=1e-15)
    header = (tmp_path / "diagnostics.csv").read_text().splitlines()[0]
    assert header == "step,t,kinetic,internal,electric,dissipation,total,qu_l2,pu_l2,sigma_l2,sigma_max"
    assert diagnostics_csv(traj.diagnostics).count("\n") == 6
