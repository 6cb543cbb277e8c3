import math

import numpy as np
import pytest

from quasineutral.acceptance import synthetic_kg
from quasineutral.correctors import (
    SamplingError,
    average_H,
    build_W,
    complement_G,
    decompose,
    electric_source,
    extract_correctors,
    gradient_impurity,
    initial_momentum_gradient,
    load_decomposition_fields,
    modulate_T,
    residual_field,
    save_decomposition,
    split_velocity,
    time_bump,
    weak_pairing,
)
from quasineutral.nsp import FluidParams, PlasmaState, rhs, run
from quasineutral.scenarios import random_solenoidal, scenario
from quasineutral.series import FieldSeries, spacetime_l2
from quasineutral.spectral import Field, SpectralGrid, StructureError, scalar_field

LAM = 0.05


def series_of(g, times, values):
    return FieldSeries(g, times, np.asarray(values))


def uniform_times(lam, periods=3.0, per_period=64):
    h = 2 * math.pi * lam / per_period
    return np.arange(int(periods * per_period) + 1) * h


@pytest.fixture
def g():
    return SpectralGrid(2, 8)


def gradient_amplitude(g):
    x = g.coordinates()
    # A = grad(exp(i(x1 + x2)) + 0.5 exp(-2 i x2)), a complex gradient field
    return np.stack([1j * np.exp(1j * (x[0] + x[1])), 1j * np.exp(1j * (x[0] + x[1])) - 1j * np.exp(-2j * x[1])])


def test_modulation_algebra(g, rng):
    t = uniform_times(LAM)
    s = series_of(g, t, rng.standard_normal((len(t), 1) + g.shape))
    back = modulate_T(modulate_T(s, LAM, 1), LAM, -1)
    assert np.max(np.abs(back.values - s.values)) <= 1e-15
    assert np.allclose(np.abs(modulate_T(s, LAM, 1).values), np.abs(s.values), rtol=1e-15)
    with pytest.raises(ValueError):
        modulate_T(s, LAM, 0)


def test_modulated_constant_integrates_to_zero(g):
    t = uniform_times(LAM, periods=2.0)
    s = modulate_T(series_of(g, t, np.ones((len(t), 1) + g.shape)), LAM, 1)
    from quasineutral.series import trapezoid_weights

    integral = np.tensordot(trapezoid_weights(len(t), t[1] - t[0]), s.values[:, 0, 0, 0], axes=1)
    assert abs(integral) < 1e-14


def test_average_constant_and_tone(g):
    t = uniform_times(LAM)
    c = series_of(g, t, np.full((len(t), 1) + g.shape, 2.5))
    h, _ = average_H(c, LAM)
    assert np.allclose(h.values, 2.5, atol=1e-14)
    gg, _ = complement_G(c, LAM)
    assert np.max(np.abs(gg.values)) < 1e-13
    tone = series_of(g, t, np.exp(1j * t / LAM)[:, None, None, None] * np.ones((1, 1) + g.shape))
    h, shrunk = average_H(tone, LAM)
    inside = ~shrunk
    dtl = (t[1] - t[0]) / LAM
    assert np.max(np.abs(h.values[inside])) <= dtl**2


def test_average_two_tone(g):
    t = uniform_times(LAM)
    a, b = 0.7, 1.3
    vals = (a + b * np.exp(1j * t / LAM))[:, None, None, None] * np.ones((1, 1) + g.shape)
    s = series_of(g, t, vals)
    h, shrunk = average_H(s, LAM)
    gg, _ = complement_G(s, LAM)
    dtl = (t[1] - t[0]) / LAM
    assert np.max(np.abs(h.values[~shrunk] - a)) <= 2 * b * dtl**2
    expect = b * np.exp(1j * t / LAM)
    assert np.max(np.abs(gg.values[~shrunk, 0, 0, 0] - expect[~shrunk])) <= 2 * b * dtl**2
    assert np.max(np.abs(gg.values + h.values - s.values)) <= 1e-15


def test_average_flags_trailing_windows(g):
    t = uniform_times(LAM, periods=2.0)
    _, shrunk = average_H(series_of(g, t, np.zeros((len(t), 1) + g.shape)), LAM)
    assert not shrunk[0] and shrunk[-1]
    assert np.count_nonzero(~shrunk) == 65


def test_average_commutes_with_gradient(g, rng):
    t = uniform_times(LAM, periods=2.0)
    phi = rng.standard_normal((len(t), 1) + g.shape)
    s = series_of(g, t, phi)
    gr = lambda v: g.ifft_real(np.moveaxis(g.grad_hat(g.fft(v[:, 0])), 0, 1))
    a = average_H(series_of(g, t, gr(phi)), LAM)[0].values
    b = gr(average_H(s, LAM)[0].values)
    assert np.max(np.abs(a - b)) <= 1e-12


def test_average_rejects_coarse_sampling(g):
    t = np.arange(10) * (2 * math.pi * LAM / 8)
    with pytest.raises(SamplingError, match="need dt"):
        average_H(series_of(g, t, np.zeros((10, 1) + g.shape)), LAM)


def test_build_w_trivial_and_antiderivative(g):
    params = FluidParams(lam=LAM)
    st = PlasmaState.from_fields(scalar_field(g, np.ones(g.shape)), Field(g, random_solenoidal(g, 0.1, 2)), params)
    t = uniform_times(LAM)
    zero = series_of(g, t, np.zeros((len(t), 2) + g.shape))
    assert np.max(np.abs(build_W(zero, st).values)) < 1e-15
    x = g.coordinates()
    grad_phi = np.stack([-np.sin(x[0]), np.zeros(g.shape)])
    c = 2.0
    e1 = series_of(g, t, (c * np.cos(t / LAM))[:, None, None, None] * grad_phi)
    W = build_W(e1, st).values
    exact = (LAM * c * np.sin(t / LAM))[:, None, None, None] * grad_phi
    assert np.max(np.abs(W - exact)) <= 1e-3 * LAM * c
    with pytest.raises(StructureError):
        build_W(e1, None)


def test_initial_momentum_gradient_matches_field_rate():
    g = SpectralGrid(2, 16)
    st, _ = scenario("ill_prepared", g, FluidParams(lam=0.1), amplitude=0.1)
    # lam^2 E_t = -Q(rho u): compare with the potential rate from the continuity equation
    rho_t, _ = rhs(st)
    vt_hat = -g.inv_k2 * g.fft(rho_t.values[0]) / 0.1**2
    Et = g.ifft_real(g.grad_hat(vt_hat))
    assert np.max(np.abs(0.1**2 * Et + initial_momentum_gradient(st))) <= 1e-12


def test_two_tone_extraction(g):
    A = gradient_amplitude(g)
    t = uniform_times(LAM)
    ph = np.exp(1j * t / LAM)[:, None, None, None]
    E = series_of(g, t, ((ph * A + np.conj(ph) * np.conj(A)) / LAM).real)
    plus, minus, shrunk = extract_correctors(E, LAM, "windowed")
    assert np.max(np.abs(plus.values[~shrunk] - A)) <= 1e-2 * np.max(np.abs(A))
    assert np.max(np.abs(minus.values - np.conj(plus.values))) <= 1e-12
    _, scaled = residual_field(E, plus, minus, LAM)
    assert np.max(np.abs(scaled.values[~shrunk])) <= 2e-2 * np.max(np.abs(A))
    assert gradient_impurity(plus) <= 1e-8


def test_zero_field_gives_zero_correctors(g):
    t = uniform_times(LAM)
    E = series_of(g, t, np.zeros((len(t), 2) + g.shape))
    plus, minus, _ = extract_correctors(E, LAM)
    assert np.max(np.abs(plus.values)) == 0 and np.max(np.abs(minus.values)) == 0
    res, _ = residual_field(E, plus, minus, LAM)
    assert np.array_equal(res.values, E.values.astype(complex))


def test_modulated_tone_tracks_envelope(g):
    A = gradient_amplitude(g)
    t = uniform_times(LAM, periods=6.0)
    env = 1 + 0.5 * np.sin(t)
    ph = np.exp(1j * t / LAM)
    E = series_of(g, t, (2 * (ph * env)[:, None, None, None] * A / LAM).real)
    plus, _, shrunk = extract_correctors(E, LAM)
    err = np.max(np.abs(plus.values[~shrunk] - env[~shrunk, None, None, None] * A))
    # window mean of a slope-0.5 envelope lags by pi lam
    assert err <= 0.5 * math.pi * LAM * 1.1 * np.max(np.abs(A)) + 1e-2


def test_windowed_and_duhamel_agree_on_linear_problem():
    E, plus, minus, Et0, src, T = synthetic_kg(points=16, lam=0.05)
    keep = E.times <= T + 1e-12
    wp, _, _ = extract_correctors(E, 0.05, "windowed")
    dp, dm, _ = extract_correctors(E, 0.05, "duhamel", source=src, Et0=Et0)

    def cut(s):
        return FieldSeries(s.grid, s.times[keep], s.values[keep])

    rel = spacetime_l2(cut(wp).with_values(cut(wp).values - cut(dp).values)) / spacetime_l2(cut(dp))
    assert rel <= 0.02
    # trapezoid quadrature of the Duhamel integral: error O((dt/lam)^2)
    assert np.max(np.abs(dp.values - plus.values)) <= 1e-2 * np.max(np.abs(plus.values))
    assert gradient_impurity(dp) <= 1e-8 and gradient_impurity(dm) <= 1e-8
    with pytest.raises(StructureError):
        extract_correctors(E, 0.05, "duhamel")


def test_split_velocity_identities(g, rng):
    t = uniform_times(LAM)
    u = series_of(g, t, rng.standard_normal((len(t), 2) + g.shape))
    zero = u.with_values(np.zeros_like(u.values))
    assert np.array_equal(split_velocity(u, zero).values, u.values)
    assert np.max(np.abs(split_velocity(u, u).values)) == 0
    with pytest.raises(StructureError):
        split_velocity(u, FieldSeries(g, t + 1.0, u.values))


def test_weak_pairing_oscillatory_decay(g):
    vals = []
    for lam in (0.1, 0.05, 0.025):
        t = np.arange(0, 1 + 1e-12, 2 * math.pi * lam / 64)
        s = series_of(g, t, np.exp(1j * t / lam)[:, None, None, None] * np.ones((1, 1) + g.shape))
        bump = series_of(g, t, time_bump(t, 0.0, 1.0)[:, None, None, None] * np.ones((1, 1) + g.shape))
        vals.append(abs(weak_pairing(s, bump)))
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] <= 0.025 * g.volume
    zero = series_of(g, t, np.zeros((len(t), 1) + g.shape))
    assert weak_pairing(zero, bump) == 0


def test_source_matches_field_equation():
    # lam^2 E_tt + E = F for the scaled field, checked by differencing a fine run
    g = SpectralGrid(2, 16)
    lam = 0.2
    st, _ = scenario("ill_prepared", g, FluidParams(lam=lam), amplitude=0.05)
    h = 2e-4
    traj = run(st, 2 * h, h)
    E = traj.electric_field()
    Ett = (E[2] - 2 * E[1] + E[0]) / h**2
    F = electric_source(traj.state(1))
    assert np.max(np.abs(lam**2 * Ett + E[1] - F)) <= 1e-4 * np.max(np.abs(E[1]))


def test_decomposition_invariants_and_round_trip(tmp_path):
    g = SpectralGrid(2, 16)
    lam = 0.1
    st, _ = scenario("ill_prepared", g, FluidParams(lam=lam), amplitude=0.1)
    dt = lam / 32
    T = 0.3
    traj = run(st, T + 2 * math.pi * lam, dt, snapshot_stride=1)
    d = decompose(traj, t_end=T)
    assert np.max(np.abs(d.E1.values + d.E2.values - d.E.values)) <= 1e-10
    u = traj.u[: len(d.E)]
    assert np.max(np.abs(d.v.values + d.W.values - u)) <= 1e-10
    assert gradient_impurity(d.Eplus) <= 1e-8 and gradient_impurity(d.Eminus) <= 1e-8
    assert np.max(np.abs(d.Eminus.values - np.conj(d.Eplus.values))) <= 1e-12
    assert not np.any(d.shrunken)
    save_decomposition(tmp_path, d, every=2)
    manifest, fields = load_decomposition_fields(tmp_path)
    assert manifest["lambda"] == lam and manifest["method"] == "windowed"
    assert "phase_convention" in manifest
    assert np.allclose(fields["Eplus"].values, d.Eplus.values[::2], rtol=0, atol=1e-15)
