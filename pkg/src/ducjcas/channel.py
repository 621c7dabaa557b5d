"""Block-fading channel synthesis for one coherence block.

Three channels share one set of path geometries:

* the UL JCAS channel (BS array x user array) with a LoS path and one
  single-bounce path per scatterer,
* the DL communication channel, its exact transpose,
* the mono-static DL echo channel (BS array x BS array), one path per
  reflector, the user included.

Reflection factors are drawn once per block (comm paths in scene order,
then echo paths) and are constant over every ``(n, m)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .geometry import SPEED_OF_LIGHT, ArrayFrame, Direction, GeometryError, UpaSpec, polar_from_offset, steering_vector
from .waveform import OfdmNumerology

USER = "user"
SCATTERER_DOU = "scatterer-dou"
SCATTERER_DOI = "scatterer-doi"


@dataclass(frozen=True)
class Scatterer:
    kind: str  # SCATTERER_DOU or SCATTERER_DOI
    position: tuple
    velocity: tuple = (0.0, 0.0, 0.0)
    reflect_variance: float = 1.0

    def __post_init__(self):
        if self.kind not in (SCATTERER_DOU, SCATTERER_DOI):
            raise ValueError(f"unknown scatterer kind {self.kind!r}")
        if self.reflect_variance <= 0:
            raise ValueError("reflect variance must be positive")


@dataclass(frozen=True)
class SceneGeometry:
    """World-frame positions (m) and velocities (m/s) of BS, user and scatterers."""

    bs_position: tuple
    user_position: tuple
    scatterers: tuple = ()
    bs_velocity: tuple = (0.0, 0.0, 0.0)
    user_velocity: tuple = (0.0, 0.0, 0.0)
    user_reflect_variance: float = 1.0
    bs_frame: ArrayFrame = field(default_factory=ArrayFrame)
    user_frame: ArrayFrame = field(default_factory=ArrayFrame)


@dataclass(frozen=True)
class PathParameters:
    """Deterministic parameters of one physical reflector / path.

    ``comm_*`` describe the UL JCAS path (LoS for the user, single bounce
    user -> scatterer -> BS otherwise); ``echo_*`` the mono-static echo.
    Amplitudes exclude the random reflection factor.  Dopplers are positive
    for closing geometry.
    """

    kind: str
    position: np.ndarray  # world
    velocity: np.ndarray
    reflect_variance: float
    bs_range: float  # BS <-> reflector distance
    bs_radial_velocity: float  # closing speed BS <-> reflector
    bs_direction: Direction  # seen from the BS array (local frame)
    user_direction: Direction  # departure direction at the user array
    comm_delay: float
    comm_doppler: float
    comm_amplitude: float
    echo_delay: float
    echo_doppler: float
    echo_amplitude: float

    @property
    def location_local(self) -> np.ndarray:
        """Reflector position in the BS array frame, relative to the BS."""
        from .geometry import location_from_polar

        return location_from_polar(self.bs_range, self.bs_direction)


def closing_speed(pos_a, vel_a, pos_b, vel_b) -> float:
    """Rate at which the distance between a and b shrinks (m/s)."""
    d = np.asarray(pos_b, float) - np.asarray(pos_a, float)
    r = np.linalg.norm(d)
    if r == 0:
        raise GeometryError("coincident endpoints")
    rel = np.asarray(vel_b, float) - np.asarray(vel_a, float)
    return float(-np.dot(rel, d) / r)


def _distance(a, b) -> float:
    r = float(np.linalg.norm(np.asarray(b, float) - np.asarray(a, float)))
    if r == 0:
        raise GeometryError("coincident endpoints")
    return r


def derive_path_parameters(scene: SceneGeometry, wavelength: float) -> list[PathParameters]:
    """Delays, Dopplers, amplitudes and angles for the user and every scatterer.

    The user comes first, scatterers follow in scene order.
    """
    lam = wavelength
    four_pi = 4.0 * np.pi
    bs, ue = np.asarray(scene.bs_position, float), np.asarray(scene.user_position, float)
    vbs, vue = np.asarray(scene.bs_velocity, float), np.asarray(scene.user_velocity, float)

    r0 = _distance(bs, ue)
    v0 = closing_speed(bs, vbs, ue, vue)
    _, aoa0 = polar_from_offset(scene.bs_frame.to_local(ue - bs))
    _, aod0 = polar_from_offset(scene.user_frame.to_local(bs - ue))
    echo_amp0 = np.sqrt(lam**2 / (four_pi**3 * r0**4))
    paths = [
        PathParameters(
            kind=USER,
            position=ue,
            velocity=vue,
            reflect_variance=scene.user_reflect_variance,
            bs_range=r0,
            bs_radial_velocity=v0,
            bs_direction=aoa0,
            user_direction=aod0,
            comm_delay=r0 / SPEED_OF_LIGHT,
            comm_doppler=v0 / lam,
            comm_amplitude=np.sqrt(lam**2 / (four_pi * r0) ** 2),
            echo_delay=2.0 * r0 / SPEED_OF_LIGHT,
            echo_doppler=2.0 * v0 / lam,
            echo_amplitude=echo_amp0,
        )
    ]
    for s in scene.scatterers:
        sp, sv = np.asarray(s.position, float), np.asarray(s.velocity, float)
        r1 = _distance(ue, sp)
        r2 = _distance(sp, bs)
        v1 = closing_speed(ue, vue, sp, sv)
        v2 = closing_speed(sp, sv, bs, vbs)
        _, aoa = polar_from_offset(scene.bs_frame.to_local(sp - bs))
        _, aod = polar_from_offset(scene.user_frame.to_local(sp - ue))
        paths.append(
            PathParameters(
                kind=s.kind,
                position=sp,
                velocity=sv,
                reflect_variance=s.reflect_variance,
                bs_range=r2,
                bs_radial_velocity=v2,
                bs_direction=aoa,
                user_direction=aod,
                comm_delay=(r1 + r2) / SPEED_OF_LIGHT,
                comm_doppler=(v1 + v2) / lam,
                comm_amplitude=np.sqrt(lam**2 / (four_pi**3 * r1**2 * r2**2)),
                echo_delay=2.0 * r2 / SPEED_OF_LIGHT,
                echo_doppler=2.0 * v2 / lam,
                echo_amplitude=np.sqrt(lam**2 / (four_pi**3 * r2**4)),
            )
        )
    return paths


def draw_noise(shape, variance: float, rng) -> np.ndarray:
    """i.i.d. circularly-symmetric complex Gaussian samples of the given variance."""
    if variance < 0:
        raise ValueError("noise variance must be non-negative")
    if variance == 0:
        return np.zeros(shape, dtype=np.complex128)
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_cscg(variance: float, rng) -> complex:
    return complex(draw_noise((), variance, rng))


@dataclass
class ChannelRealization:
    """All three channels of one coherence block plus their ground truth."""

    paths: list[PathParameters]
    bs_array: UpaSpec
    user_array: UpaSpec
    numerology: OfdmNumerology
    comm_gains: np.ndarray  # complex amplitude per path (LoS unit factor)
    echo_gains: np.ndarray
    include_nlos: bool = True

    @classmethod
    def draw(
        cls,
        scene: SceneGeometry,
        bs_array: UpaSpec,
        user_array: UpaSpec,
        numerology: OfdmNumerology,
        rng,
        include_nlos: bool = True,
        fading: bool = True,
    ) -> "ChannelRealization":
        """Draw reflection factors for one block.

        With ``fading=False`` every reflection factor is 1 (deterministic
        amplitudes), which is what the noiseless oracles use.
        """
        paths = derive_path_parameters(scene, numerology.wavelength)
        comm = np.zeros(len(paths), dtype=np.complex128)
        echo = np.zeros(len(paths), dtype=np.complex128)
        comm[0] = paths[0].comm_amplitude
        for i, p in enumerate(paths[1:], start=1):
            beta = draw_cscg(p.reflect_variance, rng) if fading else 1.0
            comm[i] = p.comm_amplitude * beta if include_nlos else 0.0
        for i, p in enumerate(paths):
            beta = draw_cscg(p.reflect_variance, rng) if fading else 1.0
            echo[i] = p.echo_amplitude * beta
        return cls(paths, bs_array, user_array, numerology, comm, echo, include_nlos)

    # -- steering per path -------------------------------------------------

    def bs_steering(self) -> np.ndarray:
        """``P_tQ_t x L`` steering of each path at the BS array."""
        return np.stack([steering_vector(self.bs_array, p.bs_direction) for p in self.paths], axis=1)

    def user_steering(self) -> np.ndarray:
        return np.stack([steering_vector(self.user_array, p.user_direction) for p in self.paths], axis=1)

    def _phase(self, delay, doppler, n, m):
        num = self.numerology
        return np.exp(1j * 2 * np.pi * doppler * m * num.symbol_duration) * np.exp(
            -1j * 2 * np.pi * n * num.subcarrier_spacing * delay
        )

    # -- per-(n, m) channel matrices ----------------------------------------

    def ul_channel_at(self, n: int, m: int) -> np.ndarray:
        """UL JCAS channel ``P_tQ_t x P_rQ_r`` at subcarrier n, symbol m."""
        a_bs, a_ue = self.bs_steering(), self.user_steering()
        h = np.zeros((self.bs_array.size, self.user_array.size), dtype=np.complex128)
        for l, p in enumerate(self.paths):
            if self.comm_gains[l] == 0:
                continue
            g = self.comm_gains[l] * self._phase(p.comm_delay, p.comm_doppler, n, m)
            h += g * np.outer(a_bs[:, l], a_ue[:, l])
        return h

    def dl_comm_channel_at(self, n: int, m: int) -> np.ndarray:
        """DL communication channel, the transpose of the UL one (reciprocity)."""
        return self.ul_channel_at(n, m).T

    def dl_echo_channel_at(self, n: int, m: int) -> np.ndarray:
        """Mono-static echo channel ``P_tQ_t x P_tQ_t`` (AoA equals AoD per path)."""
        a_bs = self.bs_steering()
        h = np.zeros((self.bs_array.size, self.bs_array.size), dtype=np.complex128)
        for l, p in enumerate(self.paths):
            g = self.echo_gains[l] * self._phase(p.echo_delay, p.echo_doppler, n, m)
            h += g * np.outer(a_bs[:, l], a_bs[:, l])
        return h

    # -- whole-grid path phasors (used by the pipeline) ----------------------

    def comm_path_grids(self) -> np.ndarray:
        """``L x N_c x M_s`` complex gain of every comm path over the grid."""
        return self._path_grids([p.comm_delay for p in self.paths], [p.comm_doppler for p in self.paths], self.comm_gains)

    def echo_path_grids(self) -> np.ndarray:
        return self._path_grids([p.echo_delay for p in self.paths], [p.echo_doppler for p in self.paths], self.echo_gains)

    def _path_grids(self, delays, dopplers, gains) -> np.ndarray:
        num = self.numerology
        out = np.empty((len(self.paths), num.n_subcarriers, num.n_symbols), dtype=np.complex128)
        for l in range(len(self.paths)):
            w_n = np.array([2 * np.pi * num.subcarrier_spacing * delays[l]])
            w_m = np.array([2 * np.pi * dopplers[l] * num.symbol_duration])
            out[l] = kernels.path_grid(np.array([gains[l]]), w_n, w_m, num.n_subcarriers, num.n_symbols)
        return out

    def truth_by_kind(self, kinds: Sequence[str]) -> list[PathParameters]:
        return [p for p in self.paths if p.kind in kinds]
