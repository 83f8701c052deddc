"""Pure-numpy positive-P stepper, vectorized over trajectories.

Same scheme and argument layout as the compiled ``_ppkernel.propagate``.
"""
import numpy as np


def _drift(lin, kerr, drv, a, b):
    da = a @ lin.T - 2j * kerr * a * a * b - 1j * drv
    db = b @ lin.conj().T + 2j * kerr * b * b * a + 1j * np.conj(drv)
    return da, db


def propagate(alpha0, beta0, noise, lin, kerr, kerr_amp, gain_amp, drive, dt, record_every, escape):
    K, M = alpha0.shape
    S, Q = noise.shape[1], noise.shape[2]
    R = S // record_every + 1
    has_gain = Q >= 4 * M
    out_a = np.full((K, R, M), np.nan + 0j)
    out_b = np.full((K, R, M), np.nan + 0j)
    escaped = np.zeros(K, dtype=bool)
    a = np.array(alpha0, dtype=complex)
    b = np.array(beta0, dtype=complex)
    out_a[:, 0] = a
    out_b[:, 0] = b
    sq = np.sqrt(dt)
    h = dt
    for s in range(S):
        a0, b0 = a, b
        k1a, k1b = _drift(lin, kerr, drive[2 * s], a, b)
        k2a, k2b = _drift(lin, kerr, drive[2 * s + 1], a + 0.5 * h * k1a, b + 0.5 * h * k1b)
        k3a, k3b = _drift(lin, kerr, drive[2 * s + 1], a + 0.5 * h * k2a, b + 0.5 * h * k2b)
        k4a, k4b = _drift(lin, kerr, drive[2 * s + 2], a + h * k3a, b + h * k3b)
        a = a + (h / 6.0) * (k1a + 2 * k2a + 2 * k3a + k4a)
        b = b + (h / 6.0) * (k1b + 2 * k2b + 2 * k3b + k4b)
        xi = noise[:, s, :]
        a = a + kerr_amp * a0 * (xi[:, :M] * sq)
        b = b + np.conj(kerr_amp) * b0 * (xi[:, M:2 * M] * sq)
        if has_gain:
            a = a + gain_amp * sq * (xi[:, 2 * M:3 * M] + 1j * xi[:, 3 * M:4 * M])
            b = b + gain_amp * sq * (xi[:, 2 * M:3 * M] - 1j * xi[:, 3 * M:4 * M])
        bad = ~(np.isfinite(a).all(axis=1) & np.isfinite(b).all(axis=1)) \
            | (np.abs(a) > escape).any(axis=1) | (np.abs(b) > escape).any(axis=1)
        escaped |= bad
        # frozen rows never get recorded again, matching the compiled early exit
        a[escaped] = np.nan
        b[escaped] = np.nan
        if (s + 1) % record_every == 0:
            r = (s + 1) // record_every
            live = ~escaped
            out_a[live, r] = a[live]
            out_b[live, r] = b[live]
    return out_a, out_b, escaped
