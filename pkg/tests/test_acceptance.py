"""Desk-profile acceptance run: one PASS/FAIL line per item at pinned tolerances.

The sweeps take several minutes on one core; they run once per session.
Set QUASINEUTRAL_ACCEPTANCE_OUT to keep the reports.
"""

import json
import os
from pathlib import Path

import pytest

from quasineutral.acceptance import desk_sweeps, run_acceptance
from quasineutral.harness import report


@pytest.fixture(scope="module")
def outcome(tmp_path_factory):
    sweeps = desk_sweeps("desk")
    items = {it.id: it for it in run_acceptance(sweeps=sweeps)}
    out = Path(os.environ.get("QUASINEUTRAL_ACCEPTANCE_OUT") or tmp_path_factory.mktemp("acceptance"))
    bundle = sweeps["ill_prepared"]
    bundle.acceptance = [it.to_dict() for it in items.values()]
    report(bundle, out)
    report(sweeps["well_prepared"], out / "well_prepared")
    return items, out


def _check(outcome, capsys, item_id):
    items, _ = outcome
    item = items[item_id]
    with capsys.disabled():
        print("\n" + item.line())
    assert item.passed, item.line()


def test_projector_algebra(outcome, capsys):
    _check(outcome, capsys, "A1")


def test_poisson_exactness(outcome, capsys):
    _check(outcome, capsys, "A2")


def test_constant_state_fixed_point(outcome, capsys):
    _check(outcome, capsys, "A3")


def test_integrator_order(outcome, capsys):
    _check(outcome, capsys, "A4")


def test_plasma_acoustic_dispersion(outcome, capsys):
    _check(outcome, capsys, "A5")


def test_energy_inequality(outcome, capsys):
    _check(outcome, capsys, "A6")


def test_well_prepared_convergence(outcome, capsys):
    _check(outcome, capsys, "A7")


def test_plasma_oscillation_frequency(outcome, capsys):
    _check(outcome, capsys, "A8")


def test_corrector_residual_decay(outcome, capsys):
    _check(outcome, capsys, "A9")


def test_corrector_dynamics(outcome, capsys):
    _check(outcome, capsys, "A9b")


def test_time_equicontinuity(outcome, capsys):
    _check(outcome, capsys, "A10")


def test_extraction_oracle(outcome, capsys):
    _check(outcome, capsys, "A11")


def test_defect_surrogate(outcome, capsys):
    _check(outcome, capsys, "A12")


def test_summary_lists_every_item(outcome):
    items, out = outcome
    s = json.loads((out / "summary.json").read_text())
    assert s["schema"] == 1
    assert [it["id"] for it in s["items"]] == list(items)
    assert s["total"] == 13 and s["passed"] == sum(it.passed for it in items.values())
