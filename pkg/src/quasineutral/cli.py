"""Command line entry point: ``quasineutral <subcommand> [--config FILE] [--out DIR] ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, profile_config
from .spectral import Field, atomic_write_text, save_field

log = logging.getLogger("quasineutral")


def load_config(args) -> ExperimentConfig:
    overrides = {}
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
    profile = overrides.pop("profile", None) or args.profile
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out:
        overrides["out_dir"] = args.out
    return profile_config(profile, **overrides)


def _lam(cfg: ExperimentConfig, args) -> float:
    return args.lam if args.lam is not None else min(cfg.lambda_list)


def _json(path: Path, obj) -> None:
    from .harness import _dumps

    atomic_write_text(path, _dumps(obj))


def cmd_simulate(cfg, args) -> int:
    from .harness import simulate
    from .nsp import save_trajectory

    lam = _lam(cfg, args)
    traj, record, plan = simulate(cfg, lam)
    out = Path(cfg.out_dir)
    save_trajectory(out, traj)
    _json(out / "initial.json", record)
    print(f"lambda={lam:g}: {len(traj.times)} snapshots, dt={plan.dt:.4g}, written to {out}")
    return 0


def cmd_sweep(cfg, args) -> int:
    from .harness import report, sweep

    bundle = sweep(cfg)
    report(bundle, cfg.out_dir)
    for m in bundle.members:
        print(f"lambda={m.lam:g}: {m.status}" + (f" ({m.error})" if m.error else ""))
    return 0 if all(m.status == "ok" for m in bundle.members) else 1


def _decomposition(cfg, lam):
    from .correctors import decompose
    from .harness import simulate

    traj, _, plan = simulate(cfg, lam)
    return traj, plan, decompose(traj, cfg.extraction, t_end=cfg.T)


def cmd_extract(cfg, args) -> int:
    from .correctors import save_decomposition

    lam = _lam(cfg, args)
    _, _, d = _decomposition(cfg, lam)
    save_decomposition(cfg.out_dir, d, every=args.every)
    print(f"lambda={lam:g}: {len(d.E)} samples decomposed, written to {cfg.out_dir}")
    return 0


def cmd_limit(cfg, args) -> int:
    from .harness import corrector_mismatch, reference_velocity
    from .limit import coupled_limit_run, corrector_diffusivity

    lam = _lam(cfg, args)
    traj, plan, d = _decomposition(cfg, lam)
    v_ref = reference_velocity(traj, plan, float(d.E.times[-1]))
    dif = cfg.corrector_diffusivity
    dif = corrector_diffusivity(cfg.mu, cfg.nu) if dif is None else dif
    i0 = int(np.argmin(np.abs(d.E.times - cfg.corrector_start)))
    g = traj.grid
    lt = coupled_limit_run(
        Field(g, v_ref.values[i0]),
        Field(g, d.Eplus.values[i0]),
        float(d.E.times[-1] - d.E.times[i0]),
        plan.sample_dt / 4,
        viscosity=cfg.mu,
        diffusivity=dif,
        store_every=4,
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"v": [], "Eplus": []}
    for i in range(len(lt.times)):
        for name in files:
            fname = f"{name}_{i:05d}.bin"
            save_field(out / fname, Field(g, getattr(lt, name)[i]))
            files[name].append(fname)
    mismatch, t0 = corrector_mismatch(d, v_ref, cfg.corrector_start, dif, cfg.mu)
    manifest = {
        "lambda": lam,
        "start_time": t0,
        "times": [float(t0 + t) for t in lt.times],
        "diffusivity": dif,
        "mismatch_vs_extracted": mismatch,
        "files": files,
    }
    _json(out / "manifest.json", manifest)
    print(f"lambda={lam:g}: corrector mismatch at t={float(d.E.times[-1]):g} is {mismatch:.4f}")
    return 0


def cmd_defect(cfg, args) -> int:
    from .correctors import residual_field, smooth_test_fields
    from .defect import angular_spectrum, low_frequency_mass, orthogonality_check

    lam = _lam(cfg, args)
    traj, _, d = _decomposition(cfg, lam)
    _, lam_res = residual_field(d.E, d.Eplus, d.Eminus, lam)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = angular_spectrum(lam_res, cfg.n_bins)
    atomic_write_text(out / "defect_spectrum.json", spec.to_json())
    tests = smooth_test_fields(traj.grid, d.E.times, 0.0, float(d.E.times[-1]))
    orth = orthogonality_check(d.Eplus, d.Eminus, lam_res, tests, lam)
    orth["low_frequency_mass"] = low_frequency_mass(lam_res, cfg.low_freq_radius)
    orth["low_freq_radius"] = cfg.low_freq_radius
    _json(out / "orthogonality.json", orth)
    print(f"lambda={lam:g}: total angular mass {spec.total_mass:.4g}, max cross pairing {orth['max_cross']:.4g}")
    return 0


def cmd_report(cfg, args) -> int:
    from .harness import load_bundle, report

    src = Path(args.bundle) if args.bundle else Path(cfg.out_dir) / "bundle.json"
    if not src.exists():
        print(f"no bundle at {src}; run the sweep subcommand first", file=sys.stderr)
        return 2
    bundle = load_bundle(src)
    report(bundle, cfg.out_dir)
    print(f"report written to {cfg.out_dir}")
    return 0


def cmd_acceptance(cfg, args) -> int:
    from .acceptance import desk_sweeps, run_acceptance
    from .harness import report

    overrides = json.loads(cfg.to_json())
    for key in ("scenario", "correctors", "defect", "profile"):
        overrides.pop(key)
    sweeps = desk_sweeps(cfg.profile, **overrides)
    items = run_acceptance(sweeps=sweeps)
    bundle = sweeps["ill_prepared"]
    bundle.acceptance = [it.to_dict() for it in items]
    report(bundle, cfg.out_dir)
    report(sweeps["well_prepared"], Path(cfg.out_dir) / "well_prepared")
    for it in items:
        print(it.line())
    return 0 if all(it.passed for it in items) else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "extract": cmd_extract,
    "limit": cmd_limit,
    "defect": cmd_defect,
    "report": cmd_report,
    "acceptance": cmd_acceptance,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quasineutral", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON file with ExperimentConfig fields")
        s.add_argument("--out", help="output directory (overrides out_dir)")
        s.add_argument("--profile", choices=("desk", "heavy"), default="desk")
        s.add_argument("--seed", type=int)
        if name in ("simulate", "extract", "limit", "defect"):
            s.add_argument("--lambda", dest="lam", type=float, help="member to run (default: smallest)")
        if name == "extract":
            s.add_argument("--every", type=int, default=1, help="keep every n-th sample")
        if name == "report":
            s.add_argument("--bundle", help="bundle.json to re-emit (default: OUT/bundle.json)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return COMMANDS[args.command](cfg, args)


if __name__ == "__main__":
    sys.exit(main())
