import json
import math

import numpy as np
import pytest

from quasineutral import harness
from quasineutral.config import ExperimentConfig
from quasineutral.harness import (
    SweepBundle,
    load_bundle,
    plan_run,
    report,
    run_member,
    simulate,
    summary,
    sweep,
)
from quasineutral.nsp import DIAGNOSTIC_COLUMNS


def small(**kw):
    base = dict(points=16, lambda_list=[0.2, 0.1, 0.05], T=0.3, n_bins=8, low_freq_radius=3.0, holder_max_lag=0.1)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def bundle():
    return sweep(small())


def test_plan_lands_on_T_and_resolves_period():
    cfg = ExperimentConfig()
    for lam in cfg.lambda_list:
        plan = plan_run(cfg, lam)
        n = cfg.T / plan.sample_dt
        assert abs(n - round(n)) < 1e-9
        assert plan.sample_dt <= 2 * math.pi * lam / 16
        assert plan.dt <= cfg.dt(lam) * (1 + 1e-12)
        assert plan.horizon >= cfg.T + 2 * math.pi * lam - 1e-12


def test_empty_bundle_report(tmp_path):
    empty = SweepBundle(None)
    report(empty, tmp_path)
    assert (tmp_path / "metrics.csv").read_text().count("\n") == 1
    assert (tmp_path / "fits.csv").read_text() == "name,exponent,prefactor,residual,samples\n"
    assert (tmp_path / "rates" / "qu_decay.csv").read_text() == "lambda,value\n"
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["schema"] == 1 and s["total"] == 0 and s["items"] == []


def test_single_member_sweep_matches_single_run():
    cfg = small(lambda_list=[0.1], correctors=False, defect=False)
    b = sweep(cfg)
    traj, rec, _ = simulate(cfg, 0.1)
    m = b.members[0]
    assert m.status == "ok"
    assert np.array_equal(np.asarray(m.diagnostics["total"]), traj.diagnostics["total"])
    assert m.initial == rec
    assert b.fits == {}


def test_sweep_metrics(bundle):
    assert [m.status for m in bundle.members] == ["ok"] * 3
    r = [m.metrics["corrector_residual"] for m in bundle.members]
    assert r[0] > r[1] > r[2]
    assert set(bundle.fits) >= {"qu_decay", "corrector_residual", "low_frequency_mass"}
    assert len(bundle.limit_comparison) == 3
    for m in bundle.members:
        assert m.metrics["energy_max_increase"] <= 1e-8  # already relative to E(0)
        assert m.spectrum is not None


def test_failed_member_is_isolated(monkeypatch):
    real = harness.simulate

    def flaky(config, lam):
        if lam == 0.1:
            raise FloatingPointError("blew up")
        return real(config, lam)

    monkeypatch.setattr(harness, "simulate", flaky)
    b = sweep(small(lambda_list=[0.2, 0.1], correctors=False, defect=False))
    assert [m.status for m in b.members] == ["ok", "failed"]
    assert "blew up" in b.members[1].error
    ok = run_member(small(lambda_list=[0.2], correctors=False, defect=False), 0.2)
    assert b.members[0].metrics == ok.metrics


def test_report_contents(bundle, tmp_path):
    report(bundle, tmp_path)
    header = (tmp_path / "metrics.csv").read_text().splitlines()[0].split(",")
    assert header[:2] == ["lambda", "status"] and "corrector_residual" in header
    diag = (tmp_path / "members" / "lambda_0.1" / "diagnostics.csv").read_text().splitlines()
    assert diag[0] == ",".join(DIAGNOSTIC_COLUMNS)
    spec = json.loads((tmp_path / "members" / "lambda_0.1" / "defect_spectrum.json").read_text())
    assert spec["surrogate"] is True
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["surrogate_dimension"] is True
    assert [m["lambda"] for m in s["members"]] == [0.2, 0.1, 0.05]


def test_report_is_deterministic(bundle, tmp_path):
    again = sweep(small())
    report(bundle, tmp_path / "a")
    report(again, tmp_path / "b")
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes(), f.name


def test_bundle_round_trip(bundle, tmp_path):
    report(bundle, tmp_path / "a")
    loaded = load_bundle(tmp_path / "a" / "bundle.json")
    report(loaded, tmp_path / "b")
    for name in ("metrics.csv", "fits.csv", "summary.json", "bundle.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert summary(loaded)["total"] == 0
