"""Compiled vs pure-numpy positive-P stepper on the coupled Kerr cavity model.

Usage: python benchmarks/bench_positivep.py [--traj 250] [--steps 2000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from u1corr import _ppfallback
from u1corr.positivep import pp_drift_diffusion
from u1corr.scenario import parse_scenario

try:
    from u1corr import _ppkernel
except ImportError:
    _ppkernel = None


def inputs(n_traj, n_steps, seed=0):
    scen = parse_scenario("fig1")
    dd = pp_drift_diffusion(scen.model())
    m = dd.n_modes
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n_traj, n_steps, 2 * m))
    a0 = np.ascontiguousarray(np.tile(scen.coherent_amplitudes(), (n_traj, 1)))
    b0 = np.ascontiguousarray(a0.conj())
    drive = np.zeros((2 * n_steps + 1, m), dtype=complex)
    args = (noise, np.ascontiguousarray(dd.lin), dd.kerr, np.ascontiguousarray(dd.kerr_amp),
            dd.gain_amp, drive, 1e-3, 50, 1e6)
    return a0, b0, args


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--traj", type=int, default=250)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    a0, b0, rest = inputs(args.traj, args.steps)
    work = args.traj * args.steps
    t_py, (pa, pb, _) = best_of(lambda: _ppfallback.propagate(a0, b0, *rest), args.repeat)
    print(f"python    {t_py:8.3f} s  {t_py / work * 1e9:8.1f} ns/trajectory-step")
    if _ppkernel is None:
        print("compiled  not built (pip install -e . --no-build-isolation)")
        return
    t_c, (ca, cb, _) = best_of(lambda: _ppkernel.propagate(a0, b0, *rest), args.repeat)
    print(f"compiled  {t_c:8.3f} s  {t_c / work * 1e9:8.1f} ns/trajectory-step")
    print(f"speedup   {t_py / t_c:8.1f}x")
    diff = max(np.nanmax(np.abs(ca - pa)), np.nanmax(np.abs(cb - pb)))
    print(f"max |compiled - python| = {diff:.2e}")


if __name__ == "__main__":
    main()
