"""Fusion of UL and DL estimates.

Targets seen by both links are associated through a normalised
location/Doppler distance and combined with inverse-variance weights,
using ``1 / SNR`` as the error variance of each side.  The same weighting
refines the communication CSI.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import DimensionError

UL = "UL"
DL_DOU = "DL-DoU"
DL_DOI = "DL-DoI"


@dataclass(frozen=True)
class TargetFeature:
    location: np.ndarray  # BS array frame, metres
    doppler: float  # Hz, v / lambda
    sensing_snr: float  # linear
    origin: str

    def __post_init__(self):
        if not self.sensing_snr > 0:
            raise ValueError("sensing SNR must be positive")


@dataclass
class FusedFeature:
    location: np.ndarray
    doppler: float
    is_user: bool
    contributors: list
    alpha: float | None = None
    distance: float | None = None  # matching distance, for post-hoc inspection
    flags: list = field(default_factory=list)


def optimal_weight(var1: float, var2: float) -> float:
    """``alpha* = var1 / (var1 + var2)``: weight on the second estimate."""
    if var1 <= 0 or var2 <= 0:
        raise ValueError("variances must be positive")
    return var1 / (var1 + var2)


def fused_variance(var1: float, var2: float) -> float:
    return var1 * var2 / (var1 + var2)


def fuse_estimates(v1, var1: float, v2, var2: float):
    """Minimum-variance blend ``v1 + alpha* (v2 - v1)``; works componentwise on arrays.

    Returns ``(fused, alpha)``.
    """
    alpha = optimal_weight(var1, var2)
    v1 = np.asarray(v1)
    fused = v1 + alpha * (np.asarray(v2) - v1)
    if fused.ndim == 0:
        fused = fused.item()
    return fused, alpha


def normalized_distance_matrix(set_a, set_b) -> np.ndarray:
    """``Z = Z_loc / max(Z_loc) + Z_f / max(Z_f)`` with squared distances.

    A term whose maximum is exactly zero carries no information and is
    dropped.
    """
    if len(set_a) == 0 or len(set_b) == 0:
        raise ValueError("both feature sets must be non-empty")
    la = np.array([f.location for f in set_a], dtype=float)
    lb = np.array([f.location for f in set_b], dtype=float)
    fa = np.array([f.doppler for f in set_a], dtype=float)
    fb = np.array([f.doppler for f in set_b], dtype=float)
    z_loc = np.sum((la[:, None, :] - lb[None, :, :]) ** 2, axis=2)
    z_f = (fa[:, None] - fb[None, :]) ** 2
    z = np.zeros_like(z_loc)
    for term in (z_loc, z_f):
        mx = term.max()
        if mx > 0:
            z += term / mx
    return z


def fuse_sensing(ul_set, dl_set) -> list[FusedFeature]:
    """Associate each UL point with its closest DL-DoU point and fuse them.

    Matched pairs come first (the first is the user); DL points that no UL
    point selected are appended unchanged.  With an empty DL set the UL
    points pass through unfused and flagged.
    """
    out: list[FusedFeature] = []
    if len(ul_set) == 0:
        return [FusedFeature(np.asarray(d.location, float), d.doppler, False, [d.origin]) for d in dl_set]
    if len(dl_set) == 0:
        return [
            FusedFeature(np.asarray(u.location, float), u.doppler, k == 0, [u.origin], flags=["no-dl-match"])
            for k, u in enumerate(ul_set)
        ]
    z = normalized_distance_matrix(ul_set, dl_set)
    used = set()
    for k, u in enumerate(ul_set):
        j = int(np.argmin(z[k]))
        d = dl_set[j]
        var_u, var_d = 1.0 / u.sensing_snr, 1.0 / d.sensing_snr
        loc, alpha = fuse_estimates(u.location, var_u, d.location, var_d)
        dop, _ = fuse_estimates(u.doppler, var_u, d.doppler, var_d)
        flags = ["dl-reused"] if j in used else []
        used.add(j)
        out.append(FusedFeature(loc, float(dop), k == 0, [u.origin, d.origin], alpha, float(z[k, j]), flags))
    for j, d in enumerate(dl_set):
        if j not in used:
            out.append(FusedFeature(np.asarray(d.location, float), d.doppler, False, [d.origin]))
    return out


@dataclass(frozen=True)
class CsiEstimate:
    grid: np.ndarray  # N_c x M_s
    source: str  # ULP, DLP or fused
    snr: float  # linear


def fuse_csi(ul: CsiEstimate, dl: CsiEstimate) -> CsiEstimate:
    """Inverse-variance blend of two CSI grids with one scalar weight per block.

    The output SNR is ``snr_ul + snr_dl``, the SNR of the minimum-variance
    combination of two independent unbiased estimates.
    """
    if ul.grid.shape != dl.grid.shape:
        raise DimensionError(f"CSI grids differ in shape: {ul.grid.shape} vs {dl.grid.shape}")
    alpha = optimal_weight(1.0 / ul.snr, 1.0 / dl.snr)
    grid = ul.grid + alpha * (dl.grid - ul.grid)
    return CsiEstimate(grid, "fused", ul.snr + dl.snr)
