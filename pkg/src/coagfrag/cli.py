"""Command-line front end.

Five subcommands: ``validate`` echoes the derived constants of a config,
``run`` integrates one recipe into a run directory, ``sweep`` drives
threshold scans, critical-mass scans and grid-convergence studies, ``check``
replays the a-posteriori estimates against recorded artifacts, and
``report`` renders figures next to the CSV.

Exit codes: 0 on success, 2 for config or validation problems, 3 when the
integrator aborts, 4 when a check fails on otherwise readable artifacts.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from coagfrag.diagnostics import (
    contraction_check,
    gelation_scan,
    high_moment_check,
    low_moment_check,
    lyapunov_check,
    weak_residual,
)
from coagfrag.files import (
    ConfigError,
    ExperimentConfig,
    atomic_write_text,
    load_run,
    read_experiment,
    write_run,
)
from coagfrag.grid import moments
from coagfrag.integrator import run
from coagfrag.kernel import AssumptionViolation, delta_rho, derived_constants
from coagfrag.reference import l1_overlap_distance

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_CHECK = 4

_SCAN_MINIMUM = 3   # a halving trend needs at least two doublings


def _print(line: str = "") -> None:
    print(line, flush=True)


# ---------------------------------------------------------------------------
# validate


def cmd_validate(args) -> int:
    exp = read_experiment(args.config)
    spec = exp.run.spec
    c = derived_constants(spec, m0=exp.run.m0, m1=exp.run.m1)
    grid = exp.run.initial.grid
    rho = moments(exp.run.initial, (1.0,)).of[1.0]
    drho = delta_rho(spec, rho)
    regime = "sub-critical" if drho > 0.0 else "super-critical"

    _print(f"coefficients: lam = {spec.lam:g}, alpha = {spec.alpha:g}, "
           f"nu = {spec.daughter.nu:g}, K0 = {spec.K0:g}, a0 = {spec.a0:g}")
    _print(f"gamma = {spec.gamma!r}")
    _print(f"b_ln = {c.b_ln!r}")
    _print(f"rho_star = {c.rho_star!r}")
    _print(f"rho = {rho!r} ({regime}, delta_rho = {drho!r})")
    _print(f"m0 = {c.m0!r} in (max(-nu-1, 0), min(alpha, 1)) = "
           f"({max(-spec.daughter.nu - 1.0, 0.0):g}, {min(spec.alpha, 1.0):g})")
    _print(f"m1 = {c.m1!r} in [max(m0, 2-lam), 1) = "
           f"[{max(c.m0, 2.0 - spec.lam):g}, 1)")
    _print(f"grid: {grid.n} cells on [{grid.x_min:g}, {grid.x_max:g}], "
           f"truncation j = "
           f"{'none' if exp.run.trunc.j is None else format(exp.run.trunc.j, 'g')}")
    _print(f"run: t_end = {exp.run.t_end:g}, rel_tol = {exp.run.rel_tol:g}, "
           f"output_stride = {exp.run.output_stride:g}")
    if exp.kind != "single":
        lists = {"j_sweep": exp.j_list, "rho_sweep": exp.rho_list,
                 "convergence_study": exp.resolutions}[exp.kind]
        _print(f"experiment: {exp.kind} over {lists}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run


def _overrides_from(args) -> dict:
    over = {}
    if getattr(args, "snapshot_every", None) is not None:
        over["run.snapshot_every"] = args.snapshot_every
    return over


def cmd_run(args) -> int:
    exp = read_experiment(args.config, _overrides_from(args))
    out = Path(args.out) if args.out else exp.out
    ts = run(exp.run)
    write_run(out, ts)
    _print(f"wrote {out}: {ts.n_records} records, {int(ts.steps[-1])} accepted "
           f"steps, final mass {float(ts.mass[-1])!r}, truncation loss "
           f"{float(ts.cum_loss[-1])!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def _run_point(config: str, overrides: dict, out_dir: str) -> str:
    """Worker: one sweep point from config + overrides into out_dir."""
    exp = read_experiment(config, overrides)
    write_run(out_dir, run(exp.run))
    return out_dir


def _run_points(args, points: list[tuple[Path, dict]]) -> list[Path]:
    """Run every (out_dir, overrides) point, possibly in a process pool."""
    jobs = [(str(args.config), {**_overrides_from(args), **over}, str(out))
            for out, over in points]
    if args.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            list(pool.map(_run_point, *zip(*jobs)))
    else:
        for job in jobs:
            _run_point(*job)
    # aggregation always goes through the artifacts, never through memory
    return [out for out, _ in points]


def _scan_verdict(dirs: list[Path]) -> dict:
    series = [load_run(d) for d in dirs]
    if len(series) >= _SCAN_MINIMUM:
        report = gelation_scan(series)
        return report.to_dict()
    return {"verdict": "Inconclusive",
            "reason": f"{len(series)} run(s), a threshold scan needs "
                      f"{_SCAN_MINIMUM}"}


def _sweep_j(args, exp: ExperimentConfig, out: Path) -> dict:
    points = [(out / f"j_{j:g}", {"run.j": j}) for j in exp.j_list]
    verdict = _scan_verdict(_run_points(args, points))
    _print(f"j_sweep over {exp.j_list}: {verdict['verdict']}")
    return {"kind": "j_sweep", "j_list": list(exp.j_list), **verdict}


def _sweep_rho(args, exp: ExperimentConfig, out: Path) -> dict:
    entries = []
    for rho in exp.rho_list:
        points = [(out / f"rho_{rho:g}" / f"j_{j:g}",
                   {"initial.rho": rho, "run.j": j}) for j in exp.j_list]
        verdict = _scan_verdict(_run_points(args, points))
        _print(f"rho = {rho:g}: {verdict['verdict']}")
        entries.append({"rho": rho, **verdict})
    return {"kind": "rho_sweep", "j_list": list(exp.j_list), "points": entries}


def _sweep_convergence(args, exp: ExperimentConfig, out: Path) -> dict:
    # a configured n_cells would shadow the swept resolution, so drop it
    points = [(out / f"cpd_{r}", {"grid.cells_per_decade": str(r),
                                  "grid.n_cells": None})
              for r in exp.resolutions]
    dirs = _run_points(args, points)
    finals = [load_run(d).final_state for d in dirs]
    pairs = []
    for k in range(len(finals) - 1):
        dist = l1_overlap_distance(finals[k], finals[k + 1])
        pairs.append({"coarse": exp.resolutions[k],
                      "fine": exp.resolutions[k + 1], "distance": dist})
        _print(f"cpd {exp.resolutions[k]:>4} vs {exp.resolutions[k + 1]:>4}: "
               f"L1 gap {dist:.6e}")
    for k in range(len(pairs) - 1):
        d0, d1 = pairs[k]["distance"], pairs[k + 1]["distance"]
        pairs[k + 1]["ratio_vs_previous"] = d0 / d1 if d1 > 0.0 else math.inf
    return {"kind": "convergence_study",
            "resolutions": list(exp.resolutions), "pairs": pairs}


def cmd_sweep(args) -> int:
    exp = read_experiment(args.config)
    if exp.kind == "single":
        raise ConfigError("experiment kind is 'single'; use the run command")
    out = Path(args.out) if args.out else exp.out
    out.mkdir(parents=True, exist_ok=True)
    payload = {"j_sweep": _sweep_j, "rho_sweep": _sweep_rho,
               "convergence_study": _sweep_convergence}[exp.kind](args, exp, out)
    atomic_write_text(out / "sweep.json", json.dumps(payload, indent=2) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# check


def cmd_check(args) -> int:
    ts = load_run(args.run_dir)
    results = []

    named = [("lyapunov", lyapunov_check), ("low_moment", low_moment_check),
             ("high_moment", high_moment_check)]
    for name, fn in named:
        try:
            results.append(fn(ts).to_dict())
        except AssumptionViolation as exc:
            results.append({"name": name, "skipped": str(exc)})
    try:
        results.append(weak_residual(ts).to_dict())
    except ValueError as exc:
        results.append({"name": "weak_residual", "skipped": str(exc)})
    if args.other is not None:
        # grid or recipe mismatches propagate as errors, not check failures
        results.append(contraction_check(ts, load_run(args.other)).to_dict())

    failed = 0
    for entry in results:
        if "skipped" in entry:
            _print(f"{entry['name']:>14}: SKIP ({entry['skipped']})")
            continue
        ok = entry["pass"]
        failed += 0 if ok else 1
        _print(f"{entry['name']:>14}: {'PASS' if ok else 'FAIL'} "
               f"(worst margin {entry['worst_margin']:.6e} at "
               f"t = {entry['worst_time']:g})")
    atomic_write_text(Path(args.run_dir) / "verdicts.json",
                      json.dumps(results, indent=2) + "\n")
    return EXIT_CHECK if failed else EXIT_OK


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    from coagfrag import plots   # matplotlib import stays off the hot paths

    ts = load_run(args.run_dir)
    out = Path(args.out) if args.out else Path(args.run_dir)
    for path in plots.render_run_report(ts, out):
        _print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coagfrag",
        description="Deterministic coagulation-fragmentation solver with "
                    "mass-balance accounting and a-posteriori checks.")
    parser.add_argument("-q", "--quiet", action="store_true",
                        help="only warnings and errors on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse a config and echo derived constants")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="integrate one recipe into a run directory")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="run directory (default from config)")
    p.add_argument("--snapshot-every", type=float, default=None,
                   help="snapshot cadence override, in model time")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="threshold scan, critical-mass scan or "
                                     "grid convergence study")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes for independent points")
    p.add_argument("--snapshot-every", type=float, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="replay the a-posteriori estimates "
                                     "against recorded artifacts")
    p.add_argument("run_dir", help="run directory to check")
    p.add_argument("other", nargs="?", default=None,
                   help="second run directory for the contraction estimate")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("report", help="render figures next to the CSV")
    p.add_argument("run_dir")
    p.add_argument("--out", default=None, help="figure directory (default: run_dir)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        return args.func(args)
    except RuntimeError as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
