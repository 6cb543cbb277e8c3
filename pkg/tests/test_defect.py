import json
import math

import numpy as np
import pytest

from quasineutral.correctors import smooth_test_fields
from quasineutral.defect import (
    angular_spectrum,
    bin_centers,
    concentration,
    direction_bins,
    low_frequency_mass,
    orthogonality_check,
    pairing_with_symbol,
)
from quasineutral.series import FieldSeries, trapezoid_weights
from quasineutral.spectral import ParameterError, SpectralGrid, StructureError


def mode_series(g, k, times, amp=1.0):
    x = g.coordinates()
    ph = np.tensordot(np.asarray(k, float), x, axes=1)
    v = 1j * np.asarray(k, float).reshape((-1,) + (1,) * g.dim) * amp * np.exp(1j * ph)
    return FieldSeries(g, times, np.broadcast_to(v, (len(times),) + v.shape).copy())


def random_residual(g, times, seed, kmax=6.0):
    rng = np.random.default_rng(seed)
    shape = (len(times), g.dim) + g.shape
    hat = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * (g.kmag <= kmax)
    return FieldSeries(g, times, g.ifft(hat))


@pytest.fixture
def times():
    return np.linspace(0.0, 1.0, 11)


def test_zero_residual(times):
    g = SpectralGrid(2, 16)
    z = FieldSeries(g, times, np.zeros((len(times), 2) + g.shape))
    spec = angular_spectrum(z, 16)
    assert spec.total_mass == 0
    assert low_frequency_mass(z, 4.0) == 0
    with pytest.raises(StructureError):
        angular_spectrum(FieldSeries(g, np.empty(0), np.zeros((0, 2) + g.shape)))


def test_single_mode_rank_one(times):
    g = SpectralGrid(2, 16)
    k = np.array([2.0, 1.0])
    spec = angular_spectrum(mode_series(g, k, times), 32)
    active = np.flatnonzero(spec.masses > 1e-12 * spec.total_mass)
    assert len(active) == 1
    m = spec.matrices[active[0]]
    khat = k / np.linalg.norm(k)
    assert np.allclose(m / np.trace(m), np.outer(khat, khat), atol=1e-14)
    assert spec.total_mass == pytest.approx(g.volume * (k @ k), rel=1e-12)


def test_matrices_psd_and_identity_pairing(times):
    for dim, n in ((2, 16), (3, 8)):
        g = SpectralGrid(dim, n)
        spec = angular_spectrum(random_residual(g, times, 1, kmax=3.0), 32)
        eig = np.linalg.eigvalsh(spec.matrices)
        assert np.min(eig) >= -1e-12 * spec.total_mass
        assert pairing_with_symbol(spec, np.eye(dim)) == spec.total_mass
        assert pairing_with_symbol(spec, np.zeros((dim, dim))) == 0


def test_total_mass_matches_direct_sum(times):
    g = SpectralGrid(2, 16)
    r = random_residual(g, times, 2)
    spec = angular_spectrum(r, 32)
    c = g.fft(r.values) / g.n_total
    e = g.volume * np.sum(np.abs(c) ** 2, axis=1)
    e[:, 0, 0] = 0
    w = trapezoid_weights(len(times), times[1] - times[0])
    direct = float(np.tensordot(w, e, axes=1).sum() / w.sum())
    assert abs(spec.total_mass - direct) <= 1e-10 * direct


def test_projector_symbol_oracle(times):
    g = SpectralGrid(2, 16)
    r = random_residual(g, times, 3)
    spec = angular_spectrum(r, 32)
    p1 = np.diag([1.0, 0.0])
    c = g.fft(r.values) / g.n_total
    e = g.volume * np.sum(np.abs(c) ** 2, axis=1)
    weight = np.where(g.kmag > 0, g.khat[0] ** 2, 0.0)
    w = trapezoid_weights(len(times), times[1] - times[0])
    direct = float(np.tensordot(w, e * weight, axes=1).sum() / w.sum())
    assert abs(pairing_with_symbol(spec, p1) - direct) <= 1e-12 * direct
    with pytest.raises(StructureError):
        pairing_with_symbol(spec, np.zeros((3, 2, 2)))


def test_projector_pairings_sum_to_total(times):
    g = SpectralGrid(3, 8)
    spec = angular_spectrum(random_residual(g, times, 4, kmax=3.0), 20)
    parts = [pairing_with_symbol(spec, np.diag(v)) for v in np.eye(3)]
    assert abs(sum(parts) - spec.total_mass) <= 1e-12 * spec.total_mass


def test_isotropic_residual_spreads_evenly():
    g = SpectralGrid(2, 64)
    times = np.linspace(0, 1, 41)
    rng = np.random.default_rng(5)
    # radially symmetric amplitude with random phases, fresh every sample
    amp = np.exp(-((g.kmag - 12.0) ** 2) / 8.0) * (g.kmag > 0)
    shape = (len(times), 2) + g.shape
    phases = np.exp(2j * math.pi * rng.random(shape))
    hat = amp * phases * g.khat
    spec = angular_spectrum(FieldSeries(g, times, g.ifft(hat)), 8)
    m = spec.masses
    assert np.max(m) / np.min(m) <= 1.10


def test_bins_partition_directions():
    g = SpectralGrid(3, 8)
    idx, centers = direction_bins(g, 12)
    assert centers.shape == (12, 3)
    assert np.allclose(np.linalg.norm(centers, axis=1), 1.0)
    assert idx[0, 0, 0] == -1 and np.all(idx.ravel()[1:] >= 0)
    c2 = bin_centers(2, 4)
    assert np.allclose(c2, [[1, 0], [0, 1], [-1, 0], [0, -1]], atol=1e-15)
    with pytest.raises(ParameterError):
        bin_centers(2, 1)


def test_single_direction_concentration():
    g = SpectralGrid(2, 32)
    times = np.linspace(0, 1, 5)
    rng = np.random.default_rng(0)
    x = g.coordinates()
    vals = np.zeros((len(times), 2) + g.shape, complex)
    for j in range(1, 6):
        vals += rng.standard_normal() * 1j * j * np.stack([np.exp(1j * j * x[0]), np.zeros(g.shape)])
    spec = angular_spectrum(FieldSeries(g, times, vals), 32)
    assert concentration(spec, [1.0, 0.0]) >= 0.99


def test_low_frequency_mass_cases(times):
    g = SpectralGrid(2, 32)
    outside = mode_series(g, [5.0, 0.0], times)
    assert low_frequency_mass(outside, 4.0) <= 1e-12 * 5.0
    inside = mode_series(g, [3.0, 0.0], times)
    # |c_k| summed over components, integrated over [0, 1]
    assert low_frequency_mass(inside, 4.0) == pytest.approx(3.0, rel=1e-12)
    with pytest.raises(ParameterError, match="cutoff"):
        low_frequency_mass(inside, 20.0)


def test_orthogonality_cross_terms_decay():
    g = SpectralGrid(2, 8)
    x = g.coordinates()
    A = np.stack([np.cos(x[0]), np.zeros(g.shape)]).astype(complex)
    out = []
    for lam in (0.1, 0.05):
        t = np.linspace(0, 1, 801)
        plus = FieldSeries(g, t, np.broadcast_to(A, (len(t),) + A.shape).copy())
        minus = plus.with_values(np.conj(plus.values))
        zero = plus.with_values(np.zeros_like(plus.values))
        tests = smooth_test_fields(g, t, 0.0, 1.0)
        rep = orthogonality_check(plus, minus, zero, tests, lam)
        assert all(r["res_plus"] == 0 and r["res_minus"] == 0 for r in rep["pairings"])
        assert rep["surrogate"] is True
        out.append(rep["max_cross"])
    # bump Fourier transform at 2/lam decays faster than any power
    assert out[1] < out[0] / 8


def test_spectrum_json_schema(times):
    g = SpectralGrid(2, 16)
    doc = json.loads(angular_spectrum(mode_series(g, [1.0, 1.0], times), 8).to_json())
    assert doc["surrogate"] is True
    assert doc["window"] == [0.0, 1.0]
    assert set(doc["bins"][0]) == {"center_direction", "matrix", "mass"}
    assert len(doc["bins"]) == 8
