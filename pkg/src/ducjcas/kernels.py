"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with identical semantics.  The numba
path is used by default; set ``DUCJCAS_DISABLE_NUMBA=1`` in the environment
(before import) to force the numpy path.  ``BACKEND`` reports the choice.

The public names (``line_spectrum`` etc.) dispatch to the selected backend;
``*_numpy`` and ``*_numba`` are always importable so the two can be
compared in tests and benchmarks.
"""

from __future__ import annotations

import logging
import os

import numpy as np

log = logging.getLogger(__name__)

_DISABLED = os.environ.get("DUCJCAS_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba

    logging.getLogger("numba").setLevel(logging.WARNING)
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

BACKEND = "numba" if (HAVE_NUMBA and not _DISABLED) else "numpy"


def _njit(func):
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, fastmath=False)(func)


# ---------------------------------------------------------------- numpy path


def line_spectrum_numpy(coef, xs, noise_basis):
    """MUSIC null-spectrum ``||E^H exp(j coef x)||^2`` for each ``x`` in ``xs``."""
    steer = np.exp(1j * np.outer(coef, xs))
    proj = noise_basis.conj().T @ steer
    return np.sum(proj.real**2 + proj.imag**2, axis=0)


def upa_spectrum_numpy(p_idx, q_idx, kappa, phis, thetas, noise_basis):
    """Null-spectrum of a planar array over the mesh ``phis x thetas``.

    Steering phase of element k is ``-kappa sin(theta) (p_k cos(phi) + q_k sin(phi))``.
    Returns an array of shape ``(len(phis), len(thetas))``.
    """
    out = np.empty((phis.size, thetas.size))
    en_h = noise_basis.conj().T
    st = np.sin(thetas)
    for i, phi in enumerate(phis):
        along = p_idx * np.cos(phi) + q_idx * np.sin(phi)
        steer = np.exp(-1j * kappa * np.outer(along, st))
        proj = en_h @ steer
        out[i] = np.sum(proj.real**2 + proj.imag**2, axis=0)
    return out


def local_maxima_1d_numpy(s):
    """Indices strictly greater than both neighbours (ends compare to one side)."""
    s = np.asarray(s, dtype=float)
    n = s.size
    if n < 2:
        return np.zeros(0, dtype=np.int64)
    left = np.empty(n, dtype=bool)
    right = np.empty(n, dtype=bool)
    left[0] = True
    left[1:] = s[1:] > s[:-1]
    right[-1] = True
    right[:-1] = s[:-1] > s[1:]
    return np.flatnonzero(left & right).astype(np.int64)


def local_maxima_2d_numpy(s):
    """(row, col) pairs strictly greater than their 4-neighbourhood."""
    s = np.asarray(s, dtype=float)
    pad = np.pad(s, 1, mode="constant", constant_values=-np.inf)
    c = pad[1:-1, 1:-1]
    mask = (c > pad[:-2, 1:-1]) & (c > pad[2:, 1:-1]) & (c > pad[1:-1, :-2]) & (c > pad[1:-1, 2:])
    rows, cols = np.nonzero(mask)
    return np.stack([rows, cols], axis=1).astype(np.int64)


def path_grid_numpy(amps, w_n, w_m, n_sub, n_sym):
    """``G[n, m] = sum_l amps[l] exp(j (w_m[l] m - w_n[l] n))``."""
    n = np.arange(n_sub)
    m = np.arange(n_sym)
    left = np.exp(-1j * np.outer(n, w_n)) * amps
    right = np.exp(1j * np.outer(w_m, m))
    return left @ right


# ---------------------------------------------------------------- numba path
#
# Projections are written on split real/imaginary arrays, ``conj(e) s`` giving
# ``(er sr + ei si) + j (er si - ei sr)``, so the inner reductions vectorise.


def _njit_fast(func):
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, fastmath=True)(func)


@_njit_fast
def _projection_power(er, ei, sr, si):
    """``||E^H s||^2`` with ``E^H`` given as real/imag ``K x N`` row-major blocks."""
    n_cols, n_el = er.shape
    acc = 0.0
    for c in range(n_cols):
        zr = 0.0
        zi = 0.0
        for k in range(n_el):
            zr += er[c, k] * sr[k] + ei[c, k] * si[k]
            zi += er[c, k] * si[k] - ei[c, k] * sr[k]
        acc += zr * zr + zi * zi
    return acc


@_njit
def line_spectrum_numba(coef, xs, noise_basis):
    n_el = noise_basis.shape[0]
    er = np.ascontiguousarray(noise_basis.real.T)
    ei = np.ascontiguousarray(noise_basis.imag.T)
    out = np.empty(xs.size)
    sr = np.empty(n_el)
    si = np.empty(n_el)
    for i in range(xs.size):
        x = xs[i]
        for k in range(n_el):
            ph = coef[k] * x
            sr[k] = np.cos(ph)
            si[k] = np.sin(ph)
        out[i] = _projection_power(er, ei, sr, si)
    return out


@_njit
def upa_spectrum_numba(p_idx, q_idx, kappa, phis, thetas, noise_basis):
    n_el = noise_basis.shape[0]
    er = np.ascontiguousarray(noise_basis.real.T)
    ei = np.ascontiguousarray(noise_basis.imag.T)
    out = np.empty((phis.size, thetas.size))
    along = np.empty(n_el)
    sr = np.empty(n_el)
    si = np.empty(n_el)
    for i in range(phis.size):
        cp = np.cos(phis[i])
        sp = np.sin(phis[i])
        for k in range(n_el):
            along[k] = p_idx[k] * cp + q_idx[k] * sp
        for j in range(thetas.size):
            st = -kappa * np.sin(thetas[j])
            for k in range(n_el):
                ph = st * along[k]
                sr[k] = np.cos(ph)
                si[k] = np.sin(ph)
            out[i, j] = _projection_power(er, ei, sr, si)
    return out


@_njit
def local_maxima_1d_numba(s):
    n = s.size
    buf = np.empty(n, dtype=np.int64)
    cnt = 0
    if n < 2:
        return buf[:0]
    for i in range(n):
        if i > 0 and not s[i] > s[i - 1]:
            continue
        if i < n - 1 and not s[i] > s[i + 1]:
            continue
        buf[cnt] = i
        cnt += 1
    return buf[:cnt]


@_njit
def local_maxima_2d_numba(s):
    rows, cols = s.shape
    buf = np.empty((rows * cols, 2), dtype=np.int64)
    cnt = 0
    for i in range(rows):
        for j in range(cols):
            v = s[i, j]
            if i > 0 and not v > s[i - 1, j]:
                continue
            if i < rows - 1 and not v > s[i + 1, j]:
                continue
            if j > 0 and not v > s[i, j - 1]:
                continue
            if j < cols - 1 and not v > s[i, j + 1]:
                continue
            buf[cnt, 0] = i
            buf[cnt, 1] = j
            cnt += 1
    return buf[:cnt]


@_njit
def path_grid_numba(amps, w_n, w_m, n_sub, n_sym):
    out = np.zeros((n_sub, n_sym), dtype=np.complex128)
    rows = np.empty(n_sub, dtype=np.complex128)
    cols = np.empty(n_sym, dtype=np.complex128)
    for l in range(amps.size):
        # phasors from the angle of each index; recurrences would drift
        for n in range(n_sub):
            rows[n] = amps[l] * np.exp(-1j * w_n[l] * n)
        for m in range(n_sym):
            cols[m] = np.exp(1j * w_m[l] * m)
        for n in range(n_sub):
            for m in range(n_sym):
                out[n, m] += rows[n] * cols[m]
    return out


# ---------------------------------------------------------------- dispatch


def _pick(name):
    return globals()[f"{name}_{BACKEND}"]


def line_spectrum(coef, xs, noise_basis):
    return _pick("line_spectrum")(
        np.ascontiguousarray(coef, dtype=np.float64),
        np.ascontiguousarray(xs, dtype=np.float64),
        np.ascontiguousarray(noise_basis, dtype=np.complex128),
    )


def upa_spectrum(p_idx, q_idx, kappa, phis, thetas, noise_basis):
    return _pick("upa_spectrum")(
        np.ascontiguousarray(p_idx, dtype=np.float64),
        np.ascontiguousarray(q_idx, dtype=np.float64),
        float(kappa),
        np.ascontiguousarray(phis, dtype=np.float64),
        np.ascontiguousarray(thetas, dtype=np.float64),
        np.ascontiguousarray(noise_basis, dtype=np.complex128),
    )


def local_maxima_1d(s):
    return _pick("local_maxima_1d")(np.ascontiguousarray(s, dtype=np.float64))


def local_maxima_2d(s):
    return _pick("local_maxima_2d")(np.ascontiguousarray(s, dtype=np.float64))


def path_grid(amps, w_n, w_m, n_sub, n_sym):
    return _pick("path_grid")(
        np.ascontiguousarray(amps, dtype=np.complex128),
        np.ascontiguousarray(w_n, dtype=np.float64),
        np.ascontiguousarray(w_m, dtype=np.float64),
        int(n_sub),
        int(n_sym),
    )
