"""Transmit and receive beamformers.

Covers the least-squares transmit beam, the multi-direction zero-forcing
receive combiner, the rank-one reference echo channels, and the
nullspace-constrained DL sensing beamformers (comm-echo receiver, probe
transmitter, probe-echo receiver).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics
from .geometry import Direction, UpaSpec, steering_matrix, steering_vector

log = logging.getLogger(__name__)

#: condition number above which the combiner Gram matrix gets diagonal loading
COMBINER_COND_LIMIT = 1e12
COMBINER_LOADING = 1e-10
#: cosine between reference steering vectors above which DoU and DoI are inseparable
COLINEAR_LIMIT = 1.0 - 1e-9


class BeamformingError(ValueError):
    """The constrained beamformers cannot separate the two reference directions."""

    def __init__(self, message: str, subspace_angle: float):
        super().__init__(f"{message} (subspace angle {subspace_angle:.3e} rad)")
        self.subspace_angle = subspace_angle


@dataclass(frozen=True)
class Beamformer:
    weights: np.ndarray
    kind: str  # txLS, rxCombiner, dlCommTx, dlProbeTx, echoRxDoU, echoRxDoI
    target: Direction | None = None

    def gain(self, steering: np.ndarray, transmit: bool) -> complex:
        """``a^T w`` for a transmit beam, ``w^H a`` for a receive beam."""
        if transmit:
            return complex(steering @ self.weights)
        return complex(self.weights.conj() @ steering)


@dataclass(frozen=True)
class ReferenceChannel:
    matrix: np.ndarray
    direction: Direction
    expected_range: float
    steering: np.ndarray
    amplitude: float


def ls_transmit_bf(array: UpaSpec, direction: Direction) -> Beamformer:
    """Pseudo-inverse of the row ``a^T(p)``, normalised: ``a* / ||a||``."""
    a = steering_vector(array, direction)
    w = a.conj() / np.linalg.norm(a)
    return Beamformer(w, "txLS", direction)


@dataclass(frozen=True)
class CombinerResult:
    weights: np.ndarray  # PQ x L, unit-norm columns
    regularized: bool


def rx_combiner_matrix(directions: Sequence[Direction], array: UpaSpec) -> CombinerResult:
    """Zero-forcing receive combiner for ``L`` directions, columns normalised.

    ``A A^H`` is rank ``L < PQ``, so the combiner is evaluated through the
    push-through form ``A (A^H A)^{-1}``, which spans the same columns.  The
    Gram matrix is diagonally loaded when its condition number exceeds
    ``COMBINER_COND_LIMIT``.
    """
    if len(directions) >= array.size:
        raise numerics.DimensionError(f"{len(directions)} directions need more than {array.size} elements")
    a = steering_matrix(array, directions)
    gram = a.conj().T @ a
    regularized = False
    if np.linalg.cond(gram) > COMBINER_COND_LIMIT:
        load = COMBINER_LOADING * np.trace(gram).real / array.size
        gram = gram + load * np.eye(gram.shape[0])
        regularized = True
        log.warning("combiner Gram matrix ill-conditioned; diagonal loading %.3e applied", load)
    w = a @ np.linalg.solve(gram, np.eye(gram.shape[0]))
    w = w / np.linalg.norm(w, axis=0, keepdims=True)
    return CombinerResult(w, regularized)


def reference_channel(direction: Direction, expected_range: float, array: UpaSpec, wavelength: float) -> ReferenceChannel:
    """Rank-one mono-static echo model ``sqrt(lambda^2 / ((4 pi)^3 r^4)) a(p) a^T(p)``."""
    if expected_range <= 0:
        raise ValueError("expected range must be positive")
    amp = float(np.sqrt(wavelength**2 / ((4 * np.pi) ** 3 * expected_range**4)))
    a = steering_vector(array, direction)
    return ReferenceChannel(amp * np.outer(a, a), direction, expected_range, a, amp)


@dataclass(frozen=True)
class DlBeamformers:
    comm_echo_rx: Beamformer  # receives the DoU echo, nulls DoI
    probe_echo_rx: Beamformer  # receives the DoI echo, nulls DoU
    probe_tx: Beamformer  # probes DoI, nulls the user

    @property
    def echo_combiner(self) -> np.ndarray:
        """``PQ x 2`` receive matrix, columns (DoU, DoI)."""
        return np.stack([self.comm_echo_rx.weights, self.probe_echo_rx.weights], axis=1)


def _unit(v):
    n = np.linalg.norm(v)
    return v / n


def _check_separable(h_rs: ReferenceChannel, h_is: ReferenceChannel):
    a, b = h_rs.steering, h_is.steering
    cos = abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
    if cos > COLINEAR_LIMIT:
        angle = float(np.arccos(min(cos, 1.0)))
        raise BeamformingError("DoU and DoI reference channels are colinear", angle)


def dl_jcas_beamformers(h_rs: ReferenceChannel, h_is: ReferenceChannel, comm_tx: Beamformer, ul_csi_vector) -> DlBeamformers:
    """Nullspace-constrained DL sensing beamformers.

    Parameters
    ----------
    h_rs : ReferenceChannel
        Reference echo channel toward the direction of interest (DoI).
    h_is : ReferenceChannel
        Reference echo channel toward the user (DoU).
    comm_tx : Beamformer
        DL data transmit beam.
    ul_csi_vector : array_like
        Estimated UL spatial channel of the user (length ``PQ``); by
        reciprocity its transpose is the DL channel row the probe must null.

    Returns
    -------
    DlBeamformers
        Each weight vector has unit norm.  The comm-echo receiver satisfies
        ``w^H H_RS = 0``, the probe-echo receiver ``w^H H_IS = 0`` and the
        probe transmitter ``h^T w = 0``.
    """
    h = np.asarray(ul_csi_vector, dtype=np.complex128).ravel()
    if not np.any(h):
        raise ValueError("UL CSI vector is zero; the DL channel nullspace is undefined")
    _check_separable(h_rs, h_is)

    v_c = numerics.nullspace_basis(h[None, :], 1)  # DL channel row h^T
    u_rs = numerics.left_nullspace_basis(h_rs.matrix, 1)
    u_is = numerics.left_nullspace_basis(h_is.matrix, 1)

    # comm echo receiver: best response to H_IS w_TX^D inside the H_RS left nullspace
    target = u_rs.conj().T @ (h_is.matrix @ comm_tx.weights)
    dec = numerics.svd(target[:, None])
    w_d = _unit(u_rs @ dec.left[:, 0])

    # probe pair: dominant singular pair of the projected DoI reference channel
    proj = u_is.conj().T @ h_rs.matrix @ v_c
    dec = numerics.svd(proj)
    w_ds_rx = _unit(u_is @ dec.left[:, 0])
    w_ds_tx = _unit(v_c @ dec.right[:, 0])

    return DlBeamformers(
        comm_echo_rx=Beamformer(w_d, "echoRxDoU", h_is.direction),
        probe_echo_rx=Beamformer(w_ds_rx, "echoRxDoI", h_rs.direction),
        probe_tx=Beamformer(w_ds_tx, "dlProbeTx", h_rs.direction),
    )


def probe_tx_per_re(csi_vectors, probe_steering) -> np.ndarray:
    """Probe transmit beams computed per resource element.

    For a rank-one DoI reference channel the dominant right singular vector
    of the projected channel is the normalised projection of ``a*`` onto
    the nullspace of the channel row; this evaluates it for every column of
    ``csi_vectors`` (``PQ x K``) at once, with the phase fixed so that the
    probe gain ``a^T w`` is real positive.
    """
    h = np.asarray(csi_vectors, dtype=np.complex128)
    a_c = np.asarray(probe_steering, dtype=np.complex128).conj()
    # projector onto {w : h^T w = 0} is I - h* h^T / ||h||^2
    hn = np.sum(np.abs(h) ** 2, axis=0)
    if np.any(hn == 0):
        raise ValueError("zero CSI vector in per-RE probe construction")
    coef = (h.T @ a_c) / hn
    w = a_c[:, None] - h.conj() * coef[None, :]
    return w / np.linalg.norm(w, axis=0, keepdims=True)
