"""Command-line interface: run, check, verify, sweep."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .correlators import IDENTITIES, IdentityMismatch, auxiliary_observables, derivative_crosscheck
from .dynamics import IntegrationError
from .model import check_u1_symmetry
from .positivep import UnsupportedModel
from .runner import _check_times, atomic_write, csv_text, run_exact, run_scenario, write_outputs
from .scenario import (
    BUNDLED, ScenarioError, from_dict, parse_scenario, set_parameter, to_dict,
)

EXIT_OK = 0
EXIT_NOT_CONSERVED = 10
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
VERIFY_THRESHOLD = 1e-3
OUTPUT_DIR_ENV = "U1CORR_OUTPUT_DIR"

log = logging.getLogger("u1corr")


def _load(args):
    scen = parse_scenario(args.scenario)
    if getattr(args, "cutoff_override", None) is not None:
        scen = scen.with_cutoff(args.cutoff_override)
    return scen


def _default_out(name: str) -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV, ".")) / f"{name}.csv"


def cmd_run(args) -> int:
    scen = _load(args)
    out = Path(args.out) if args.out else _default_out(scen.name)
    run = run_scenario(scen, tol=args.tol, workers=args.workers)
    for path in write_outputs(out, run):
        print(f"wrote {path}")
    for m, rep in run.reports.items():
        print(f"g_tot_{m}: max |dev| {rep.max_abs_dev:.3e}, rel {rep.max_rel_dev:.3e}, "
              f"conserved={rep.conserved}")
    if run.trajectory is not None:
        print(f"leakage_max {run.trajectory.leakage_max:.3e}")
    if run.ensemble is not None:
        print(f"excluded trajectories {run.ensemble.n_excluded}/{run.ensemble.n_traj}"
              f"{'' if run.ensemble.reliable else ' (UNRELIABLE)'}")
    return EXIT_OK


def cmd_check(args) -> int:
    scen = _load(args)
    rep = check_u1_symmetry(scen.model(), tol=args.tol, sample_times=_check_times(scen))
    print(f"scenario            {scen.name}")
    print(f"commutator_norm     {rep.commutator_norm:.3e}")
    for key in ("is_u1_symmetric", "linear_dissipation", "uniform_rates", "gain_free"):
        print(f"{key:<20}{getattr(rep, key)}")
    print(f"predicted_conserved {rep.predicted_conserved}")
    return EXIT_OK if rep.predicted_conserved else EXIT_NOT_CONSERVED


def cmd_verify(args) -> int:
    scen = _load(args)
    model = scen.model()
    aux = auxiliary_observables(model, args.identity)
    run = run_exact(scen, tol=args.tol, extra_observables=aux)
    resid = derivative_crosscheck(run.trajectory, model, args.identity)
    ok = resid < VERIFY_THRESHOLD
    print(f"{args.identity} on {scen.name}: {IDENTITIES[args.identity].description}")
    print(f"max relative residual {resid:.3e} (threshold {VERIFY_THRESHOLD:.0e}) -> {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NOT_CONSERVED


def _sweep_one(task):
    data, out = task
    scen = from_dict(data)
    run = run_scenario(scen, workers=1)
    write_outputs(out, run)
    devs = [run.reports[m].max_abs_dev for m in scen.orders]
    return devs, float(run.columns["N_total"][-1])


def cmd_sweep(args) -> int:
    scen = _load(args)
    base = to_dict(scen)
    text = args.values.strip()
    try:
        values = [float(v) for v in text.replace(",", " ").split()] if text else []
    except ValueError:
        raise ScenarioError(f"--values: cannot parse {args.values!r}") from None
    out_dir = Path(args.out_dir)
    set_parameter(base, args.param, 0.0)  # validates the path even for an empty sweep
    tasks = []
    for k, v in enumerate(values):
        data = set_parameter(base, args.param, v)
        from_dict(data)
        tasks.append((data, out_dir / f"{scen.name}_{k:03d}.csv"))
    if args.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    summary = {"value": np.array(values, dtype=float)}
    for i, m in enumerate(scen.orders):
        summary[f"g_tot_{m}_dev"] = np.array([r[0][i] for r in results], dtype=float)
    summary["final_N_total"] = np.array([r[1] for r in results], dtype=float)
    path = out_dir / "summary.csv"
    atomic_write(path, csv_text(summary))
    print(f"wrote {path} ({len(values)} runs)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="u1corr", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_arg(sp):
        sp.add_argument("scenario", help=f"scenario file or bundled name ({', '.join(BUNDLED)})")
        sp.add_argument("--cutoff-override", type=int, default=None)

    r = sub.add_parser("run", help="simulate a scenario and write CSV + metadata")
    scenario_arg(r)
    r.add_argument("--out", default=None, help=f"CSV path (default ${OUTPUT_DIR_ENV}/<name>.csv)")
    r.add_argument("--tol", type=float, default=None)
    r.add_argument("--workers", type=int, default=None)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="U(1) symmetry analysis; exit 0 if conservation is predicted, 10 if not")
    scenario_arg(c)
    c.add_argument("--tol", type=float, default=1e-10)
    c.set_defaults(func=cmd_check)

    v = sub.add_parser("verify", help="check an analytic derivative identity against the simulation")
    scenario_arg(v)
    v.add_argument("--identity", required=True, choices=sorted(IDENTITIES))
    v.add_argument("--tol", type=float, default=None)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("sweep", help="run a scenario over values of one numeric field")
    scenario_arg(s)
    s.add_argument("--param", required=True, help="dotted path, e.g. terms.0.rate")
    s.add_argument("--values", required=True, help="comma-separated values (may be empty)")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (IdentityMismatch, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (IntegrationError, UnsupportedModel, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
