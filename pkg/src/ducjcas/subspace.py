"""Subspace (MUSIC) estimation of angle, range and Doppler.

A spectrum model holds an orthonormal noise basis ``U_N`` and a steering
generator.  Its null-spectrum ``f(x) = ||U_N^H a(x)||^2`` vanishes at the
true parameters; peaks of ``S = 1 / f`` on a coarse grid seed a safeguarded
Newton descent on ``f`` using closed-form gradients and Hessians.

Steering conventions (``n`` subcarrier, ``m`` symbol):

* range    ``a_r(r)[n] = exp(-j 2 pi n df r / c)``
* Doppler  ``a_f(f)[m] = exp(+j 2 pi m T_s f)``
* angle    planar-array steering of :mod:`ducjcas.geometry`

Mono-static echoes carry twice the range and Doppler phase; echo models use
``a_r(2 r)`` and ``a_f(2 f)`` so that estimates come out as the physical
one-way range and ``v / lambda``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import kernels, numerics
from .geometry import SPEED_OF_LIGHT, Direction, UpaSpec
from .waveform import OfdmNumerology

log = logging.getLogger(__name__)

SNR_FLOOR = 1e-12
_TINY = 1e-300


# ---------------------------------------------------------------- statistics


def autocorrelation(snapshots) -> np.ndarray:
    """``X X^H / K`` for an observation-by-snapshot matrix ``X`` with ``K`` columns."""
    x = numerics.as_complex_matrix(snapshots)
    r = x @ x.conj().T / x.shape[1]
    return 0.5 * (r + r.conj().T)


def estimate_source_count(
    eigenvalues, mode: str = "fixed", k: int = 1, rho: float = 10.0, n_snapshots: int | None = None
) -> int:
    """Model order from descending eigenvalues.

    ``fixed`` returns ``k``.  ``gap`` counts eigenvalues above ``rho`` times
    the noise floor (at least one).  The floor is the mean of the eigenvalues
    not counted as sources, iterated until the count settles; unlike a
    lower-quantile floor it stays unbiased when the snapshot count is close
    to the dimension and the noise eigenvalues spread out.  With fewer snapshots than
    dimensions only the first ``n_snapshots`` eigenvalues are informative;
    the rest are structurally zero and are left out of the noise floor.
    Both modes are capped so that one noise dimension remains.
    """
    ev = np.asarray(eigenvalues, dtype=float)
    if ev.size == 0:
        raise ValueError("no eigenvalues")
    if n_snapshots is not None and n_snapshots < ev.size:
        ev = ev[: max(int(n_snapshots), 2)]
    cap = max(ev.size - 1, 1)
    if mode == "fixed":
        if k < 1:
            raise ValueError("fixed source count must be >= 1")
        return min(k, cap)
    if mode != "gap":
        raise ValueError(f"unknown model-order mode {mode!r}")
    ev = np.sort(ev)[::-1]
    count = 0
    for _ in range(ev.size):
        floor = float(np.mean(ev[min(count, cap):]))
        if floor <= 0:
            new = int(np.count_nonzero(ev > 0))
        else:
            new = int(np.count_nonzero(ev > rho * floor))
        if new == count:
            break
        count = new
    return int(np.clip(count, 1, cap))


def sensing_snr(eigenvalues, k: int, n_snapshots: int | None = None, floor: float = SNR_FLOOR) -> np.ndarray:
    """Per-source SNR ``(lambda_k - noise) / noise`` from descending eigenvalues.

    The noise level is the mean of the eigenvalues after the first ``k``.
    With fewer snapshots than dimensions the trailing eigenvalues are
    structurally zero; pass ``n_snapshots`` to restrict the noise mean to
    the first ``n_snapshots`` eigenvalues.  Values are clamped at ``floor``.
    """
    ev = np.asarray(eigenvalues, dtype=float)
    if k < 1 or k >= ev.size:
        raise ValueError(f"source count {k} must be in [1, {ev.size - 1}]")
    usable = ev.size if n_snapshots is None else max(min(ev.size, int(n_snapshots)), k + 1)
    noise = float(np.mean(ev[k:usable]))
    if noise <= 0:
        return np.full(k, 1.0 / floor)
    return np.maximum((ev[:k] - noise) / noise, floor)


# ---------------------------------------------------------------- spectrum models


class Derivatives(NamedTuple):
    value: float
    gradient: np.ndarray
    hessian: np.ndarray


def noise_basis(r, k: int) -> tuple[np.ndarray, np.ndarray]:
    """(descending eigenvalues, noise-subspace basis) of autocorrelation ``r`` for ``k`` sources."""
    dec = numerics.hermitian_eig(r)
    if not 1 <= k < dec.eigenvalues.size:
        raise ValueError(f"source count {k} leaves no noise subspace")
    return dec.eigenvalues, dec.eigenvectors[:, k:]


class LineSpectrum:
    """One-parameter null-spectrum with steering ``exp(j coef x)``.

    Parameters
    ----------
    basis : ndarray
        Orthonormal noise basis, ``N x K_n``.
    coef : ndarray
        Phase slope of each of the ``N`` elements.
    window : (float, float)
        Search domain ``[lo, hi)``; the steering is periodic over it.
    """

    ndim = 1

    def __init__(self, basis, coef, window):
        self.basis = np.ascontiguousarray(basis, dtype=np.complex128)
        self.coef = np.asarray(coef, dtype=float)
        if self.basis.shape[0] != self.coef.size:
            raise numerics.DimensionError("noise basis rows must match the steering length")
        self.window = (float(window[0]), float(window[1]))

    def steering(self, x) -> np.ndarray:
        return np.exp(1j * self.coef * float(np.ravel(x)[0]))

    def value(self, x) -> float:
        p = self.basis.conj().T @ self.steering(x)
        return float(np.vdot(p, p).real)

    def values(self, xs) -> np.ndarray:
        return kernels.line_spectrum(self.coef, np.asarray(xs, dtype=float), self.basis)

    def derivatives(self, x) -> Derivatives:
        a = self.steering(x)
        en_h = self.basis.conj().T
        p = en_h @ a
        dp = en_h @ (1j * self.coef * a)
        ddp = en_h @ (-(self.coef**2) * a)
        f = float(np.vdot(p, p).real)
        g = 2.0 * np.vdot(p, dp).real
        h = 2.0 * (np.vdot(dp, dp).real + np.vdot(p, ddp).real)
        return Derivatives(f, np.array([g]), np.array([[h]]))

    def wrap(self, x) -> tuple[np.ndarray, bool]:
        lo, hi = self.window
        v = float(np.ravel(x)[0])
        if lo <= v < hi:
            return np.array([v]), False
        return np.array([lo + np.mod(v - lo, hi - lo)]), True


def range_coefficients(numerology: OfdmNumerology, echo: bool = False) -> np.ndarray:
    scale = 2.0 if echo else 1.0
    n = np.arange(numerology.n_subcarriers)
    return -2 * np.pi * numerology.subcarrier_spacing * n * scale / SPEED_OF_LIGHT


def doppler_coefficients(numerology: OfdmNumerology, echo: bool = False) -> np.ndarray:
    scale = 2.0 if echo else 1.0
    m = np.arange(numerology.n_symbols)
    return 2 * np.pi * numerology.symbol_duration * m * scale


def range_window(numerology: OfdmNumerology, echo: bool = False) -> tuple[float, float]:
    return (0.0, numerology.max_range / (2.0 if echo else 1.0))


def doppler_window(numerology: OfdmNumerology, echo: bool = False) -> tuple[float, float]:
    w = numerology.max_doppler / (2.0 if echo else 1.0)
    return (-w, w)


def range_steering(numerology: OfdmNumerology, r: float, echo: bool = False) -> np.ndarray:
    return np.exp(1j * range_coefficients(numerology, echo) * r)


def doppler_steering(numerology: OfdmNumerology, f: float, echo: bool = False) -> np.ndarray:
    return np.exp(1j * doppler_coefficients(numerology, echo) * f)


def range_spectrum(basis, numerology: OfdmNumerology, echo: bool = False) -> LineSpectrum:
    return LineSpectrum(basis, range_coefficients(numerology, echo), range_window(numerology, echo))


def doppler_spectrum(basis, numerology: OfdmNumerology, echo: bool = False) -> LineSpectrum:
    return LineSpectrum(basis, doppler_coefficients(numerology, echo), doppler_window(numerology, echo))


class AngleSpectrum:
    """Planar-array null-spectrum over ``(phi, theta)``."""

    ndim = 2

    def __init__(self, basis, array: UpaSpec):
        self.basis = np.ascontiguousarray(basis, dtype=np.complex128)
        if self.basis.shape[0] != array.size:
            raise numerics.DimensionError("noise basis rows must match the array size")
        self.array = array
        self.p_idx, self.q_idx = array.indices()

    def _phases(self, x):
        phi, theta = float(x[0]), float(x[1])
        k = self.array.kappa
        cp, sp, ct, st = np.cos(phi), np.sin(phi), np.cos(theta), np.sin(theta)
        along = self.p_idx * cp + self.q_idx * sp
        cross = -self.p_idx * sp + self.q_idx * cp
        psi = -k * st * along
        d_phi = -k * st * cross
        d_theta = -k * ct * along
        d_pp = k * st * along
        d_tt = k * st * along
        d_pt = -k * ct * cross
        return psi, (d_phi, d_theta), ((d_pp, d_pt), (d_pt, d_tt))

    def steering(self, x) -> np.ndarray:
        psi, _, _ = self._phases(x)
        return np.exp(1j * psi)

    def value(self, x) -> float:
        p = self.basis.conj().T @ self.steering(x)
        return float(np.vdot(p, p).real)

    def values(self, phis, thetas) -> np.ndarray:
        return kernels.upa_spectrum(self.p_idx, self.q_idx, self.array.kappa, phis, thetas, self.basis)

    def derivatives(self, x) -> Derivatives:
        psi, d1, d2 = self._phases(x)
        a = np.exp(1j * psi)
        en_h = self.basis.conj().T
        p = en_h @ a
        dp = [en_h @ (1j * d * a) for d in d1]
        g = np.array([2.0 * np.vdot(p, dp[i]).real for i in range(2)])
        h = np.empty((2, 2))
        for i in range(2):
            for j in range(i, 2):
                ddp = en_h @ ((1j * d2[i][j] - d1[i] * d1[j]) * a)
                h[i, j] = h[j, i] = 2.0 * (np.vdot(dp[i], dp[j]).real + np.vdot(p, ddp).real)
        return Derivatives(float(np.vdot(p, p).real), g, h)

    def wrap(self, x) -> tuple[np.ndarray, bool]:
        phi, theta = float(x[0]), float(x[1])
        wrapped = False
        theta = np.mod(theta, 2 * np.pi)
        if theta > np.pi:  # fold elevation back into [0, pi]
            theta = 2 * np.pi - theta
            phi += np.pi
            wrapped = True
        if not -np.pi <= phi < np.pi:
            phi = np.mod(phi + np.pi, 2 * np.pi) - np.pi
            wrapped = True
        return np.array([phi, theta]), wrapped


# ---------------------------------------------------------------- Newton search


@dataclass
class Peak:
    params: np.ndarray
    value: float  # null-spectrum f at params
    seed: np.ndarray
    refined: bool = False
    converged: bool = False
    iterations: int = 0
    flags: list = field(default_factory=list)

    @property
    def strength(self) -> float:
        """Peak height of ``S = 1 / f``."""
        return 1.0 / max(self.value, _TINY)


def newton_refine(
    fun: Callable[[np.ndarray], Derivatives],
    x0,
    max_iter: int = 50,
    eps: float = 1e-9,
    trial_step=1.0,
    max_halvings: int = 10,
):
    """Safeguarded Newton descent on ``f`` starting from ``x0``.

    A Newton step ``-H^{-1} g`` is taken when ``H`` is positive definite and
    the step does not increase ``f``; otherwise a normalised gradient step of
    length ``trial_step`` is halved up to ``max_halvings`` times until ``f``
    does not increase.  Stops when an accepted step is no longer than
    ``eps`` or when no step decreases ``f``.

    Returns ``(x, f, converged, iterations, flags)``.
    """
    x = np.array(x0, dtype=float)
    cur = fun(x)
    flags = []
    if not np.isfinite(cur.value):
        return x, cur.value, False, 0, ["nonfinite"]
    step_scale = np.broadcast_to(np.asarray(trial_step, dtype=float), x.shape)
    for it in range(1, max_iter + 1):
        g, h = cur.gradient, cur.hessian
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
            flags.append("nonfinite-derivatives")
            return x, cur.value, False, it - 1, flags
        step = None
        try:
            if np.all(np.linalg.eigvalsh(h) > 0):
                step = -np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            step = None
        accepted = False
        if step is not None and np.all(np.isfinite(step)):
            cand = fun(x + step)
            if cand.value <= cur.value:
                accepted = True
        if not accepted:
            gn = np.linalg.norm(g)
            if gn == 0:
                return x, cur.value, True, it - 1, flags
            direction = -g / gn * step_scale
            for k in range(max_halvings + 1):
                step = direction * 0.5**k
                cand = fun(x + step)
                if cand.value <= cur.value:
                    accepted = True
                    break
            if not accepted:
                # nothing lowers f: we sit at a numerical minimum
                return x, cur.value, True, it - 1, flags
        x = x + step
        cur = cand
        if np.linalg.norm(step) <= eps:
            return x, cur.value, True, it, flags
    flags.append("max-iter")
    return x, cur.value, False, max_iter, flags


def _dedupe(peaks: list[Peak], radius: float) -> list[Peak]:
    """Drop peaks within ``radius`` of an earlier one; input order is priority."""
    out: list[Peak] = []
    for pk in peaks:
        if all(np.linalg.norm(pk.params - q.params) > radius for q in out):
            out.append(pk)
    return out


RANKINGS = ("refined", "grid")


def _finish(model, seeds, grid_values, refine, max_iter, eps, pitch, merge_radius, rank, max_peaks):
    if rank not in RANKINGS:
        raise ValueError(f"rank must be one of {RANKINGS}, got {rank!r}")
    if rank == "grid" or not refine:
        # strongest grid maxima first; only these are refined
        order = np.argsort(-np.asarray(grid_values), kind="stable")
        if max_peaks is not None:
            order = order[:max_peaks]
        seeds = [seeds[i] for i in order]
    peaks = []
    for seed in seeds:
        f0 = model.value(seed)
        if not refine:
            peaks.append(Peak(seed, f0, seed))
            continue
        x, f, conv, it, flags = newton_refine(model.derivatives, seed, max_iter, eps, pitch)
        x, wrapped = model.wrap(x)
        if wrapped:
            flags.append("wrapped")
            f = model.value(x)
        peaks.append(Peak(x, f, seed, True, conv, it, flags))
    if rank == "refined":
        peaks = sorted(peaks, key=lambda p: p.value)
    if refine:
        peaks = _dedupe(peaks, merge_radius)
    return peaks[:max_peaks] if max_peaks is not None else peaks


def search_1d(
    model: LineSpectrum,
    n_grid: int = 256,
    refine: bool = True,
    max_iter: int = 50,
    eps: float = 1e-9,
    merge_fraction: float = 1e-3,
    endpoint: bool = False,
    rank: str = "refined",
    max_peaks: int | None = None,
) -> list[Peak]:
    """Grid search for maxima of ``1 / f`` then optional Newton refinement.

    The grid spans ``model.window`` with ``n_grid`` points (the upper edge is
    excluded by default since the steering is periodic there).

    With ``rank="refined"`` every grid maximum is refined and the peaks are
    returned by descending refined ``S = 1 / f``.  With ``rank="grid"`` the
    order is that of the grid values, and only the first ``max_peaks`` grid
    maxima are refined; this keeps narrow noise peaks that the grid barely
    touches from overtaking broad true peaks after refinement.
    """
    if n_grid < 2:
        raise ValueError("need at least two grid points")
    lo, hi = model.window
    xs = np.linspace(lo, hi, n_grid, endpoint=endpoint)
    s = 1.0 / np.maximum(model.values(xs), _TINY)
    idx = kernels.local_maxima_1d(s)
    pitch = xs[1] - xs[0]
    seeds = [np.array([xs[i]]) for i in idx]
    return _finish(model, seeds, s[idx], refine, max_iter, eps, pitch, merge_fraction * pitch, rank, max_peaks)


def search_2d(
    model: AngleSpectrum,
    phi_range=(-np.pi, np.pi),
    theta_range=(0.0, np.pi / 2),
    n_grid: int = 64,
    refine: bool = True,
    max_iter: int = 50,
    eps: float = 1e-9,
    merge_fraction: float = 1e-3,
    rank: str = "refined",
    max_peaks: int | None = None,
) -> list[Peak]:
    """Two-step search over an ``n_grid x n_grid`` angle mesh (inclusive limits).

    ``rank`` and ``max_peaks`` behave as in :func:`search_1d`.
    """
    if n_grid < 2:
        raise ValueError("need at least two grid points")
    phis = np.linspace(phi_range[0], phi_range[1], n_grid)
    thetas = np.linspace(theta_range[0], theta_range[1], n_grid)
    s = 1.0 / np.maximum(model.values(phis, thetas), _TINY)
    idx = kernels.local_maxima_2d(s)
    pitch = np.array([phis[1] - phis[0], thetas[1] - thetas[0]])
    seeds = [np.array([phis[i], thetas[j]]) for i, j in idx]
    vals = np.array([s[i, j] for i, j in idx])
    return _finish(
        model, seeds, vals, refine, max_iter, eps, pitch, merge_fraction * float(np.min(pitch)), rank, max_peaks
    )


# ---------------------------------------------------------------- matching


class MatchResult(NamedTuple):
    pairing: np.ndarray  # pairing[k] = Doppler index matched to range k
    matrix: np.ndarray
    flagged: bool  # list lengths differed or a column was contested


def range_doppler_match(csi, ranges, dopplers, numerology: OfdmNumerology, echo: bool = False) -> MatchResult:
    """Pair range and Doppler estimates through ``|a_r(r)^H H a_f(f)^*|^2``.

    Each range row takes its largest Doppler column; contested columns are
    resolved greedily by descending matrix value.
    """
    h = np.asarray(csi, dtype=np.complex128)
    ranges = np.asarray(ranges, dtype=float).ravel()
    dopplers = np.asarray(dopplers, dtype=float).ravel()
    flagged = ranges.size != dopplers.size
    n = min(ranges.size, dopplers.size)
    ranges, dopplers = ranges[:n], dopplers[:n]
    if n == 0:
        return MatchResult(np.zeros(0, dtype=int), np.zeros((0, 0)), flagged)
    ar = np.stack([range_steering(numerology, r, echo) for r in ranges], axis=1)
    af = np.stack([doppler_steering(numerology, f, echo) for f in dopplers], axis=1)
    m = np.abs(ar.conj().T @ h @ af.conj()) ** 2
    pairing = np.argmax(m, axis=1)
    if np.unique(pairing).size != n:
        flagged = True
        pairing = np.full(n, -1)
        order = np.dstack(np.unravel_index(np.argsort(-m, axis=None), m.shape))[0]
        used_r, used_f = set(), set()
        for r_i, f_i in order:
            if r_i in used_r or f_i in used_f:
                continue
            pairing[r_i] = f_i
            used_r.add(r_i)
            used_f.add(f_i)
    return MatchResult(pairing.astype(int), m, flagged)


# ---------------------------------------------------------------- convenience


class LineEstimates(NamedTuple):
    values: np.ndarray  # refined parameters sorted by descending peak
    peaks: list
    eigenvalues: np.ndarray
    source_count: int


def estimate_lines(
    model_factory,
    snapshots,
    k: int,
    n_grid: int,
    refine: bool,
    max_iter: int = 50,
    eps: float = 1e-9,
) -> LineEstimates:
    """Autocorrelation, noise subspace, grid search and refinement for one 1D domain."""
    r = autocorrelation(snapshots)
    ev, basis = noise_basis(r, k)
    peaks = search_1d(model_factory(basis), n_grid=n_grid, refine=refine, max_iter=max_iter, eps=eps)[:k]
    vals = np.array([float(p.params[0]) for p in peaks])
    return LineEstimates(vals, peaks, ev, k)


def direction_of(peak: Peak) -> Direction:
    return Direction(float(peak.params[0]), float(peak.params[1]))
