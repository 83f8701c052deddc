"""Positive-P stochastic sampler for bosonic linear + Kerr models.

Each trajectory evolves independent amplitudes (alpha_i, beta_i) per mode.
Normally ordered moments are ensemble means of beta...alpha products.  The
stepping kernel is compiled (``_ppkernel``) when available, with a numpy
fallback; set ``U1CORR_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import Detuning, Drive, Hopping, Kerr, ModelSpec

if os.environ.get("U1CORR_PURE_PYTHON"):
    from ._ppfallback import propagate as _propagate
    BACKEND = "python"
else:
    try:
        from ._ppkernel import propagate as _propagate
        BACKEND = "compiled"
    except ImportError:  # extension not built
        from ._ppfallback import propagate as _propagate
        BACKEND = "python"

ESCAPE_RADIUS = 1e6
UNRELIABLE_FRACTION = 1e-3
CHUNK = 250
DIFFUSION_FACTORIZATION = (
    "kerr: sqrt(-2ig) alpha dW1 on alpha, conj(sqrt(-2ig)) beta dW2 on beta "
    "(principal root, independent real Wiener increments); "
    "gain: sqrt(gamma)(dW3 +/- i dW4)"
)


class UnsupportedModel(ValueError):
    pass


@dataclass(frozen=True)
class PPDriftDiffusion:
    """Ito drift / diffusion coefficients for one model.

    d alpha = (lin @ alpha - 2i g alpha^2 beta - i D(t)) dt + noise
    d beta  = (conj(lin) @ beta + 2i g beta^2 alpha + i conj(D(t))) dt + noise
    """
    lin: np.ndarray
    kerr: np.ndarray
    gain: np.ndarray
    drives: tuple  # (mode, f, envelope)

    @property
    def n_modes(self) -> int:
        return self.lin.shape[0]

    @property
    def kerr_amp(self) -> np.ndarray:
        return np.sqrt(-2j * self.kerr)

    @property
    def gain_amp(self) -> np.ndarray:
        return np.sqrt(self.gain)

    def drive_vector(self, t: float) -> np.ndarray:
        d = np.zeros(self.n_modes, dtype=complex)
        for mode, f, env in self.drives:
            d[mode] += f * env(t)
        return d

    def drift(self, alpha, beta, t: float = 0.0):
        d = self.drive_vector(t)
        da = self.lin @ alpha - 2j * self.kerr * alpha ** 2 * beta - 1j * d
        db = self.lin.conj() @ beta + 2j * self.kerr * beta ** 2 * alpha + 1j * np.conj(d)
        return da, db

    def diffusion(self, alpha, beta) -> np.ndarray:
        """Diffusion matrix over (alpha_1..alpha_M, beta_1..beta_M)."""
        m = self.n_modes
        out = np.zeros((2 * m, 2 * m), dtype=complex)
        for i in range(m):
            out[i, i] = -2j * self.kerr[i] * alpha[i] ** 2
            out[m + i, m + i] = 2j * self.kerr[i] * beta[i] ** 2
            out[i, m + i] = out[m + i, i] = 2 * self.gain[i]
        return out


def pp_drift_diffusion(spec: ModelSpec) -> PPDriftDiffusion:
    space = spec.space
    if not all(m.is_boson for m in space.modes):
        raise UnsupportedModel("positive-P engine supports bosonic modes only")
    m = space.n_modes
    lin = np.zeros((m, m), dtype=complex)
    kerr = np.zeros(m)
    gain = np.zeros(m)
    drives = []
    for term in spec.terms:
        if isinstance(term, Detuning):
            lin[term.mode, term.mode] += -1j * term.omega
        elif isinstance(term, Hopping):
            lin[term.i, term.j] += -1j * term.tau
            lin[term.j, term.i] += -1j * term.tau
        elif isinstance(term, Kerr):
            kerr[term.mode] += term.g
        elif isinstance(term, Drive):
            drives.append((term.mode, term.f, term.envelope))
        else:
            raise UnsupportedModel(f"term {type(term).__name__} not supported by positive-P")
    for ch in spec.channels:
        if ch.photons != 1:
            raise UnsupportedModel("multi-photon loss is not supported by positive-P")
        if ch.kind == "loss":
            lin[ch.mode, ch.mode] -= ch.rate
        else:
            lin[ch.mode, ch.mode] += ch.rate
            gain[ch.mode] += ch.rate
    return PPDriftDiffusion(lin=lin, kerr=kerr, gain=gain, drives=tuple(drives))


# -- estimators ---------------------------------------------------------------

def _observable_layout(n_modes: int, orders) -> list:
    names = [f"n{i}" for i in range(n_modes)]
    names += [f"P{i}_{j}" for i in range(n_modes) for j in range(i, n_modes)]
    names += [f"J{m}" for m in orders]
    return names


def _sample_values(alpha, beta, orders) -> np.ndarray:
    """Per-trajectory complex moment samples, shape (K, R, n_obs)."""
    m = alpha.shape[-1]
    n = beta * alpha
    cols = [n[..., i] for i in range(m)]
    cols += [n[..., i] * n[..., j] for i in range(m) for j in range(i, m)]
    total = n.sum(axis=-1)
    cols += [total ** k for k in orders]
    return np.stack(cols, axis=-1)


@dataclass
class _Sums:
    count: int
    s1: np.ndarray  # (R, 2*n_obs) sums of [Re v, Im v], v shifted by the noise-free values
    s2: np.ndarray  # (R, 2*n_obs, 2*n_obs) sums of outer products of the same
    excluded: int

    def merge(self, other: "_Sums") -> "_Sums":
        return _Sums(self.count + other.count, self.s1 + other.s1, self.s2 + other.s2,
                     self.excluded + other.excluded)


def _chunk_task(args) -> _Sums:
    (start, stop, seed, alpha0, dd_arrays, drive_grid, dt, n_steps, record_every, orders, escape,
     shift) = args
    lin, kerr, kerr_amp, gain_amp = dd_arrays
    m = lin.shape[0]
    q = 4 * m if np.any(gain_amp) else 2 * m
    k = stop - start
    noise = np.empty((k, n_steps, q))
    for r, traj in enumerate(range(start, stop)):
        # trajectory `traj` owns the stream spawned at key (traj,), independent of chunking
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(traj,))))
        noise[r] = rng.standard_normal((n_steps, q))
    a0 = np.tile(np.asarray(alpha0, dtype=complex), (k, 1))
    b0 = a0.conj()
    out_a, out_b, escaped = _propagate(a0, b0, noise, lin, kerr, kerr_amp, gain_amp,
                                       drive_grid, dt, record_every, escape)
    keep = ~escaped
    vals = _sample_values(out_a[keep], out_b[keep], orders) - shift
    x = np.concatenate([vals.real, vals.imag], axis=-1)  # (K', R, 2*n_obs)
    s1 = x.sum(axis=0)
    s2 = np.einsum("krp,krq->rpq", x, x)
    return _Sums(int(keep.sum()), s1, s2, int(escaped.sum()))


@dataclass
class PPEnsemble:
    times: np.ndarray
    n_traj: int
    seed: int
    dt: float
    n_excluded: int
    orders: tuple
    n_modes: int
    backend: str
    estimates: dict = field(default_factory=dict)  # name -> (mean, stderr)
    imag: dict = field(default_factory=dict)  # name -> (mean imag part, stderr)

    @property
    def reliable(self) -> bool:
        return self.n_excluded <= UNRELIABLE_FRACTION * self.n_traj

    def mean(self, name: str) -> np.ndarray:
        return self.estimates[name][0]

    def stderr(self, name: str) -> np.ndarray:
        return self.estimates[name][1]


def _delta_estimate(mu, cov, n, grad_fn, value_fn):
    """Value and delta-method standard error of a smooth function of means."""
    val = value_fn(mu)
    g = grad_fn(mu)  # (R, P)
    var = np.einsum("rp,rpq,rq->r", g, cov, g) / n
    return val, np.sqrt(np.maximum(var, 0.0))


def _estimates(sums: _Sums, n_modes: int, orders, shift, labels=None):
    names = _observable_layout(n_modes, orders)
    p = len(names)
    n = sums.count
    if n == 0:
        raise RuntimeError("every trajectory diverged; no estimate available")
    centred = sums.s1 / n
    cov = sums.s2 / n - np.einsum("rp,rq->rpq", centred, centred)
    if n > 1:
        cov = cov * n / (n - 1)
    mu = centred + np.concatenate([shift.real, shift.imag], axis=-1)
    idx = {name: k for k, name in enumerate(names)}
    est, imag = {}, {}
    labels = labels or [f"m{i}" for i in range(n_modes)]

    def linear(coeffs):
        g = np.zeros((mu.shape[0], 2 * p))
        for k, c in coeffs.items():
            g[:, k] = c
        return _delta_estimate(mu, cov, n, lambda _: g, lambda m_: m_ @ g[0])

    def ratio(num, den_coeffs, power):
        def value(m_):
            den = sum(c * m_[:, k] for k, c in den_coeffs.items())
            return m_[:, num] / den ** power

        def grad(m_):
            den = sum(c * m_[:, k] for k, c in den_coeffs.items())
            g = np.zeros((m_.shape[0], 2 * p))
            g[:, num] = 1.0 / den ** power
            for k, c in den_coeffs.items():
                g[:, k] += -power * m_[:, num] * c / den ** (power + 1)
            return g

        return _delta_estimate(mu, cov, n, grad, value)

    for i in range(n_modes):
        k = idx[f"n{i}"]
        est[f"n_{labels[i]}"] = linear({k: 1.0})
        imag[f"n_{labels[i]}"] = linear({p + k: 1.0})
    for i in range(n_modes):
        for j in range(i, n_modes):
            k = idx[f"P{i}_{j}"]
            est[f"P_{labels[i]}_{labels[j]}"] = linear({k: 1.0})
            imag[f"P_{labels[i]}_{labels[j]}"] = linear({p + k: 1.0})
            den = {idx[f"n{i}"]: 1.0}
            den[idx[f"n{j}"]] = den.get(idx[f"n{j}"], 0.0) + 1.0
            est[f"G2_{labels[i]}_{labels[j]}"] = ratio(k, den, 2)
    ntot = {idx[f"n{i}"]: 1.0 for i in range(n_modes)}
    est["N_total"] = linear(ntot)
    imag["N_total"] = linear({p + k: 1.0 for k in ntot})
    for m in orders:
        k = idx[f"J{m}"]
        est[f"J_{m}"] = linear({k: 1.0})
        imag[f"J_{m}"] = linear({p + k: 1.0})
        est[f"g_tot_{m}"] = ratio(k, ntot, m)
    return est, imag


def step_grid(times, dt: float):
    """Uniform output grid -> (effective dt <= dt, steps between records, total steps)."""
    times = np.asarray(times, dtype=float)
    if times.size == 1:
        return dt, 1, 0
    spacing = np.diff(times)
    if not np.allclose(spacing, spacing[0], rtol=1e-9, atol=0) or spacing[0] <= 0:
        raise ValueError("positive-P output times must be a uniform increasing grid")
    every = max(1, math.ceil(spacing[0] / dt - 1e-9))
    return spacing[0] / every, every, every * (times.size - 1)


def pp_run(spec: ModelSpec, alpha0, times, n_traj: int, seed: int, dt: float = 1e-3,
           orders=(2,), workers: int = 1, escape: float = ESCAPE_RADIUS) -> PPEnsemble:
    """Run ``n_traj`` positive-P trajectories from the coherent amplitudes ``alpha0``.

    Results are bit-identical for a given (spec, seed, n_traj, dt, times)
    regardless of ``workers``: trajectories are processed in fixed chunks and
    chunk sums are merged in chunk order.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if dt <= 0:
        raise ValueError("dt must be positive")
    dd = pp_drift_diffusion(spec)
    alpha0 = np.asarray(alpha0, dtype=complex)
    if alpha0.shape != (dd.n_modes,):
        raise ValueError(f"need {dd.n_modes} coherent amplitudes, got shape {alpha0.shape}")
    times = np.asarray(times, dtype=float)
    dt_eff, every, n_steps = step_grid(times, dt)
    half = times[0] + 0.5 * dt_eff * np.arange(2 * n_steps + 1)
    drive_grid = np.ascontiguousarray(np.array([dd.drive_vector(t) for t in half]).reshape(-1, dd.n_modes))
    arrays = (np.ascontiguousarray(dd.lin), np.ascontiguousarray(dd.kerr),
              np.ascontiguousarray(dd.kerr_amp), np.ascontiguousarray(dd.gain_amp))
    # noise-free reference path; samples are accumulated relative to it
    ref_a, ref_b, _ = _propagate(alpha0[None, :].copy(), alpha0.conj()[None, :].copy(),
                                 np.zeros((1, n_steps, 2 * dd.n_modes)), *arrays, drive_grid,
                                 dt_eff, every, np.inf)
    shift = _sample_values(ref_a, ref_b, orders)[0]
    tasks = [(s, min(s + CHUNK, n_traj), seed, alpha0, arrays, drive_grid, dt_eff, n_steps,
              every, tuple(orders), escape, shift) for s in range(0, n_traj, CHUNK)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_task, tasks))
    else:
        parts = [_chunk_task(t) for t in tasks]
    total = parts[0]
    for part in parts[1:]:
        total = total.merge(part)
    est, imag = _estimates(total, dd.n_modes, orders, shift, list(spec.space.labels))
    return PPEnsemble(times=times, n_traj=n_traj, seed=seed, dt=dt_eff, n_excluded=total.excluded,
                      orders=tuple(orders), n_modes=dd.n_modes, backend=BACKEND,
                      estimates=est, imag=imag)
