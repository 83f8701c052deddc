"""Run orchestration shared by the CLI: engines -> column tables -> CSV + metadata."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import tempfile
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import positivep
from .correlators import (
    DEFAULT_THRESHOLD, ConservationReport, build_correlator_set, conservation_report,
    derived_series, pair_indices, standard_observables,
)
from .dynamics import CONVENTION, initial_state, integrate
from .model import check_u1_symmetry
from .scenario import Scenario, to_dict


def csv_header(space, orders) -> list:
    labels = space.labels
    cols = ["t"] + [f"n_{x}" for x in labels]
    cols += [f"G2_{labels[i]}_{labels[j]}" for i, j in pair_indices(space)]
    cols += ["N_total"] + [f"J_{m}" for m in orders] + [f"g_tot_{m}" for m in orders] + ["leakage"]
    return cols


@dataclass
class RunOutput:
    columns: dict
    meta: dict
    stderr: dict | None = None
    records: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)  # m -> ConservationReport
    trajectory: object = None
    ensemble: object = None

    @property
    def header(self) -> list:
        return list(self.columns)


def _versions() -> dict:
    try:
        own = metadata.version("u1corr")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"u1corr": own, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _reports_from_series(g_series: dict, stderr: dict, n_sigma: float = 3.0) -> dict:
    """Statistical conservation verdict: every deviation from t=0 within n_sigma errors."""
    out = {}
    for name, g in g_series.items():
        se = stderr[name]
        m = int(name.split("_")[-1])
        bad = np.nonzero(~np.isfinite(g))[0]
        stop = bad[0] if bad.size else g.size
        s = g[:stop]
        if s.size == 0:
            out[m] = ConservationReport(m, s, math.nan, math.nan, False, True)
            continue
        dev = np.abs(s - s[0])
        rel = dev.max() / abs(s[0]) if s[0] != 0 else dev.max()
        within = bool(np.all(dev <= n_sigma * np.hypot(se[:stop], se[0]) + 1e-12))
        out[m] = ConservationReport(m, s, float(dev.max()), float(rel), within, bool(bad.size))
    return out


def _base_meta(scen: Scenario) -> dict:
    model = scen.model()
    sym = check_u1_symmetry(model, sample_times=_check_times(scen))
    return {
        "scenario": to_dict(scen),
        "convention": CONVENTION,
        "versions": _versions(),
        "engine": scen.engine.kind,
        "symmetry": sym.as_dict(),
    }


def _check_times(scen: Scenario):
    return np.linspace(0.0, scen.t_end / scen.gamma, 17)


def run_exact(scen: Scenario, tol: float | None = None, extra_observables: dict | None = None,
              threshold: float = DEFAULT_THRESHOLD):
    model = scen.model()
    space = model.space
    times = scen.times()
    ops = standard_observables(space, scen.orders)
    ops.update(extra_observables or {})
    rho0 = initial_state(space, scen.initial_specs())
    traj = integrate(model, rho0, times, tol=tol or scen.engine.tol, observables=ops,
                     max_leakage=scen.engine.max_leakage)
    rec = traj.records
    derived = derived_series(space, rec, scen.orders)
    columns = {}
    for name in csv_header(space, scen.orders):
        if name == "t":
            columns[name] = times
        elif name in derived:
            columns[name] = derived[name]
        else:
            columns[name] = np.asarray(rec[name], dtype=float)
    meta = _base_meta(scen)
    reports = {}
    for m in scen.orders:
        reports[m] = conservation_report(traj, build_correlator_set(space, m), threshold)
    meta.update({
        "tol": tol or scen.engine.tol,
        "leakage_max": traj.leakage_max,
        "min_eigenvalue": traj.min_eigenvalue,
        "n_steps": traj.n_steps,
        "final_trace": float(np.trace(traj.final_state).real),
        "conservation": {str(m): r.as_dict() for m, r in reports.items()},
    })
    return RunOutput(columns=columns, meta=meta, records=rec, reports=reports, trajectory=traj)


def run_positive_p(scen: Scenario, workers: int | None = None):
    model = scen.model()
    space = model.space
    times = scen.times()
    eng = scen.engine
    ens = positivep.pp_run(model, scen.coherent_amplitudes(), times, eng.n_traj, eng.seed,
                           dt=eng.dt / scen.gamma, orders=scen.orders, workers=workers or eng.workers)
    columns, errors = {}, {}
    for name in csv_header(space, scen.orders):
        if name == "t":
            columns[name] = errors[name] = times
        elif name == "leakage":
            columns[name] = errors[name] = np.full(times.size, np.nan)
        else:
            columns[name], errors[name] = ens.estimates[name]
    meta = _base_meta(scen)
    g = {f"g_tot_{m}": columns[f"g_tot_{m}"] for m in scen.orders}
    reports = _reports_from_series(g, errors)
    meta.update({
        "seed": ens.seed,
        "n_traj": ens.n_traj,
        "dt_effective": ens.dt,
        "n_excluded": ens.n_excluded,
        "reliable": ens.reliable,
        "backend": ens.backend,
        "diffusion_factorization": positivep.DIFFUSION_FACTORIZATION,
        "max_imag_over_stderr": {
            k: float(np.nanmax(np.abs(v[0]) / np.where(v[1] > 0, v[1], np.nan), initial=0.0))
            for k, v in ens.imag.items()
        },
        "conservation": {str(m): r.as_dict() for m, r in reports.items()},
    })
    return RunOutput(columns=columns, meta=meta, stderr=errors, reports=reports, ensemble=ens)


def run_scenario(scen: Scenario, tol: float | None = None, workers: int | None = None) -> RunOutput:
    if scen.engine.kind == "positive_p":
        return run_positive_p(scen, workers=workers)
    return run_exact(scen, tol=tol)


# -- output -------------------------------------------------------------------

def _fmt(x) -> str:
    x = float(x)
    return "" if not math.isfinite(x) else format(x, ".17g")


def csv_text(columns: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(columns)
    w.writerow(names)
    n = len(next(iter(columns.values()))) if columns else 0
    for k in range(n):
        w.writerow([_fmt(columns[c][k]) for c in names])
    return buf.getvalue()


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def meta_path(out: Path) -> Path:
    return Path(out).with_suffix(".meta.json")


def stderr_path(out: Path) -> Path:
    return Path(out).with_suffix(".stderr.csv")


def write_outputs(out: Path, run: RunOutput) -> list:
    out = Path(out)
    atomic_write(out, csv_text(run.columns))
    written = [out]
    if run.stderr is not None:
        atomic_write(stderr_path(out), csv_text(run.stderr))
        written.append(stderr_path(out))
    atomic_write(meta_path(out), json.dumps(_clean(run.meta), indent=2, allow_nan=False) + "\n")
    written.append(meta_path(out))
    return written


def _clean(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj
