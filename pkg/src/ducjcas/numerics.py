"""Dense complex linear algebra used by the estimators and beamformers.

Thin, validated wrappers around LAPACK (via numpy) that fix the ordering
conventions the rest of the package relies on: eigenvalues and singular
values are always returned in descending order.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class DimensionError(ValueError):
    """Matrix has the wrong shape for the requested operation."""


class SymmetryError(ValueError):
    """Matrix expected to be Hermitian is not."""


class EigDecomposition(NamedTuple):
    eigenvalues: np.ndarray  # real, descending
    eigenvectors: np.ndarray  # columns paired with eigenvalues


class SvdDecomposition(NamedTuple):
    left: np.ndarray
    singular_values: np.ndarray  # descending
    right: np.ndarray  # V, not V^H

    def reconstruct(self) -> np.ndarray:
        k = self.singular_values.size
        return (self.left[:, :k] * self.singular_values) @ self.right[:, :k].conj().T


def as_complex_matrix(m) -> np.ndarray:
    """Validate and convert ``m`` to a 2-D complex128 array with finite entries."""
    a = np.asarray(m, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains NaN or Inf entries")
    return a


def hermitian_eig(m, require_hermitian: bool = True, atol: float = 1e-8) -> EigDecomposition:
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending.

    Parameters
    ----------
    m : array_like
        Square matrix.
    require_hermitian : bool
        If True, raise :class:`SymmetryError` when ``max|m - m^H|`` exceeds
        ``atol`` (relative to ``max|m|`` when that is above one).
    """
    a = as_complex_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"eigendecomposition needs a square matrix, got {a.shape}")
    asym = np.max(np.abs(a - a.conj().T))
    if require_hermitian:
        scale = max(1.0, float(np.max(np.abs(a))))
        if asym > atol * scale:
            raise SymmetryError(f"matrix is not Hermitian (max asymmetry {asym:.3e})")
    # eigh reads one triangle only; symmetrise so tiny asymmetries are averaged.
    w, v = np.linalg.eigh(0.5 * (a + a.conj().T))
    return EigDecomposition(w[::-1].copy(), v[:, ::-1].copy())


def svd(m) -> SvdDecomposition:
    """Full SVD ``m = U diag(s) V^H`` with unitary ``U`` and ``V``."""
    a = as_complex_matrix(m)
    u, s, vh = np.linalg.svd(a, full_matrices=True)
    return SvdDecomposition(u, s, vh.conj().T)


def pseudo_inverse(m, tol: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudo-inverse.

    Singular values below ``tol * sigma_max`` are treated as zero.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = as_complex_matrix(m)
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]), dtype=np.complex128)
    keep = s > tol * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vh.conj().T * s_inv) @ u.conj().T


def nullspace_basis(m, rank: int) -> np.ndarray:
    """Orthonormal basis of the right nullspace of a matrix of known rank.

    The rank is supplied by the caller (it is known structurally, e.g. one
    for a single channel row) instead of being inferred from a threshold.
    Returns a ``cols x (cols - rank)`` matrix ``B`` with ``m @ B ~ 0``.
    """
    a = as_complex_matrix(m)
    cols = a.shape[1]
    if rank < 0:
        raise ValueError("rank must be non-negative")
    if rank >= cols:
        raise DimensionError(f"rank {rank} leaves no nullspace in {cols} columns")
    dec = svd(a)
    return dec.right[:, rank:].copy()


def left_nullspace_basis(m, rank: int) -> np.ndarray:
    """Orthonormal basis ``B`` with ``B^H m ~ 0`` (trailing left singular vectors)."""
    a = as_complex_matrix(m)
    rows = a.shape[0]
    if rank >= rows:
        raise DimensionError(f"rank {rank} leaves no left nullspace in {rows} rows")
    dec = svd(a)
    return dec.left[:, rank:].copy()
