"""Uniform planar array steering vectors and polar/cartesian conversions.

Element ``(p, q)`` of a ``P x Q`` array maps to flat index ``p * Q + q``
(p-major).  Every module uses this ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8


class GeometryError(ValueError):
    """Degenerate geometry (coincident points, zero offsets)."""


class Direction(NamedTuple):
    """Azimuth ``phi`` in [-pi, pi] and elevation ``theta`` in [0, pi], radians."""

    phi: float
    theta: float

    @classmethod
    def from_degrees(cls, phi_deg: float, theta_deg: float) -> "Direction":
        return cls(np.deg2rad(phi_deg), np.deg2rad(theta_deg))


@dataclass(frozen=True)
class UpaSpec:
    P: int
    Q: int
    spacing: float  # metres
    wavelength: float  # metres

    def __post_init__(self):
        if self.P < 1 or self.Q < 1:
            raise ValueError("array dimensions must be >= 1")
        if self.spacing <= 0 or self.wavelength <= 0:
            raise ValueError("spacing and wavelength must be positive")

    @property
    def size(self) -> int:
        return self.P * self.Q

    @property
    def kappa(self) -> float:
        """Phase slope ``2 pi d_a / lambda``."""
        return 2.0 * np.pi * self.spacing / self.wavelength

    def indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-element ``(p, q)`` index vectors in flat (p-major) order."""
        p, q = np.meshgrid(np.arange(self.P), np.arange(self.Q), indexing="ij")
        return p.ravel().astype(float), q.ravel().astype(float)


def steering_phase(array: UpaSpec, direction: Direction) -> np.ndarray:
    p, q = array.indices()
    phi, theta = direction
    return -array.kappa * np.sin(theta) * (p * np.cos(phi) + q * np.sin(phi))


def steering_vector(array: UpaSpec, direction: Direction) -> np.ndarray:
    """Unit-modulus steering vector of length ``P*Q``."""
    return np.exp(1j * steering_phase(array, direction))


def steering_matrix(array: UpaSpec, directions: Sequence[Direction]) -> np.ndarray:
    """``P*Q x L`` matrix whose columns are the steering vectors of ``directions``."""
    if len(directions) == 0:
        raise ValueError("need at least one direction")
    return np.stack([steering_vector(array, Direction(*d)) for d in directions], axis=1)


def location_from_polar(r: float, direction: Direction) -> np.ndarray:
    """Cartesian point at range ``r`` along ``direction`` (node-local frame)."""
    if r < 0:
        raise ValueError("range must be non-negative")
    phi, theta = direction
    st = np.sin(theta)
    return np.array([r * st * np.cos(phi), r * st * np.sin(phi), r * np.cos(theta)])


def polar_from_offset(offset) -> tuple[float, Direction]:
    """Inverse of :func:`location_from_polar`; ``phi`` is 0 on the z axis."""
    v = np.asarray(offset, dtype=float)
    r = float(np.linalg.norm(v))
    if r == 0.0:
        raise GeometryError("zero offset has no direction")
    theta = float(np.arccos(np.clip(v[2] / r, -1.0, 1.0)))
    if np.hypot(v[0], v[1]) == 0.0:
        phi = 0.0
    else:
        phi = float(np.arctan2(v[1], v[0]))
    return r, Direction(phi, theta)


@dataclass(frozen=True)
class ArrayFrame:
    """Orientation of an array: its local x, y and boresight (z) axes in world coordinates.

    The default is the identity (array in the world x-y plane, boresight up).
    """

    x_axis: tuple = (1.0, 0.0, 0.0)
    y_axis: tuple = (0.0, 1.0, 0.0)
    z_axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        r = self.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9) or np.linalg.det(r) < 0:
            raise ValueError("array frame axes must be orthonormal and right-handed")

    @property
    def rotation(self) -> np.ndarray:
        """Rows are the local axes, so ``local = rotation @ world``."""
        return np.array([self.x_axis, self.y_axis, self.z_axis], dtype=float)

    def to_local(self, world_vec) -> np.ndarray:
        return self.rotation @ np.asarray(world_vec, dtype=float)

    def to_world(self, local_vec) -> np.ndarray:
        return self.rotation.T @ np.asarray(local_vec, dtype=float)
