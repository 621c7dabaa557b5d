"""OFDM numerology, Gray-coded QAM and symbol-grid generation.

The simulator works directly on per-subcarrier, per-symbol values; there is
no IFFT / cyclic-prefix synthesis.  Grids are ``N_c x M_s`` arrays indexed
``[n, m]`` (subcarrier, symbol).

Bit labelling (documented, fixed): a symbol of an ``M``-QAM constellation
carries ``log2(M)`` bits, MSB first.  The first half drives the in-phase
axis, the second half the quadrature axis.  On each axis the Gray label
``g`` of level index ``i`` is ``i ^ (i >> 1)`` and the level is
``(L - 1) - 2 i`` for ``L = sqrt(M)`` levels, so an all-zero label sits on
the most positive level.  For 4-QAM the bit pair ``00`` maps to
``(1 + 1j) / sqrt(2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .geometry import SPEED_OF_LIGHT


@dataclass(frozen=True)
class OfdmNumerology:
    subcarrier_spacing: float  # Hz
    n_subcarriers: int
    n_symbols: int
    carrier_frequency: float  # Hz
    guard_fraction: float = 1.0 / 8.0

    def __post_init__(self):
        if self.subcarrier_spacing <= 0:
            raise ValueError("subcarrier spacing must be positive")
        if self.n_subcarriers < 1 or self.n_symbols < 1:
            raise ValueError("grid dimensions must be >= 1")
        if self.carrier_frequency <= 0 or self.guard_fraction < 0:
            raise ValueError("invalid carrier frequency or guard fraction")

    @property
    def symbol_duration(self) -> float:
        """``T_s = (1 + guard_fraction) / delta_f``; sets the Doppler steering pitch."""
        return (1.0 + self.guard_fraction) / self.subcarrier_spacing

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def bandwidth(self) -> float:
        return self.n_subcarriers * self.subcarrier_spacing

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_subcarriers, self.n_symbols)

    @property
    def max_range(self) -> float:
        """Unambiguous one-way range ``c / delta_f``."""
        return SPEED_OF_LIGHT / self.subcarrier_spacing

    @property
    def max_doppler(self) -> float:
        """Doppler window is ``[-max_doppler, max_doppler)``."""
        return 0.5 / self.symbol_duration


class QamConstellation:
    """Square Gray-coded QAM with unit average energy."""

    def __init__(self, order: int):
        if order not in (4, 16, 64):
            raise ValueError(f"unsupported QAM order {order}")
        self.order = order
        self.bits_per_symbol = int(np.log2(order))
        self._axis_bits = self.bits_per_symbol // 2
        levels = int(np.sqrt(order))
        idx = np.arange(levels)
        self._levels = ((levels - 1) - 2 * idx).astype(float)
        self._gray = idx ^ (idx >> 1)
        self.scale = 1.0 / np.sqrt(2.0 * (order - 1) / 3.0)
        # axis value indexed by Gray label
        self._level_of_label = np.empty(levels)
        self._level_of_label[self._gray] = self._levels

    @cached_property
    def points(self) -> np.ndarray:
        """Constellation points indexed by their integer label."""
        labels = np.arange(self.order)
        i_lab = labels >> self._axis_bits
        q_lab = labels & ((1 << self._axis_bits) - 1)
        return self.scale * (self._level_of_label[i_lab] + 1j * self._level_of_label[q_lab])

    @cached_property
    def label_bits(self) -> np.ndarray:
        """``order x bits_per_symbol`` bit table, MSB first."""
        labels = np.arange(self.order)
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        return ((labels[:, None] >> shifts) & 1).astype(np.uint8)

    def map_bits(self, bits) -> np.ndarray:
        b = np.asarray(bits, dtype=np.uint8).reshape(-1, self.bits_per_symbol)
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        return self.points[b @ weights]

    def nearest(self, values) -> np.ndarray:
        """Label of the nearest point (minimum Euclidean distance) per value."""
        v = np.asarray(values).ravel()
        d = np.abs(v[:, None] - self.points[None, :]) ** 2
        return np.argmin(d, axis=1)

    def labels_to_bits(self, labels) -> np.ndarray:
        return self.label_bits[np.asarray(labels)].ravel()


class DemodResult(NamedTuple):
    bits: np.ndarray
    symbols: np.ndarray  # equalised soft symbols, N_c x M_s
    erased: np.ndarray  # bool mask of entries with zero CSI


def generate_preamble(numerology: OfdmNumerology, seed) -> np.ndarray:
    """Unit-modulus pseudo-random QPSK-phase grid, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    k = rng.integers(0, 4, size=numerology.shape)
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * k))


def random_bits(numerology: OfdmNumerology, constellation: QamConstellation, rng) -> np.ndarray:
    n = numerology.n_subcarriers * numerology.n_symbols * constellation.bits_per_symbol
    return rng.integers(0, 2, size=n, dtype=np.uint8)


def modulate_data(bits, constellation: QamConstellation, numerology: OfdmNumerology) -> np.ndarray:
    """Map a bitstream onto an ``N_c x M_s`` grid, filling subcarriers first."""
    bits = np.asarray(bits)
    need = numerology.n_subcarriers * numerology.n_symbols * constellation.bits_per_symbol
    if bits.size != need:
        raise ValueError(f"expected {need} bits, got {bits.size}")
    syms = constellation.map_bits(bits)
    return syms.reshape(numerology.n_symbols, numerology.n_subcarriers).T


def demodulate_data(received, csi, power: float, constellation: QamConstellation) -> DemodResult:
    """Zero-forcing equalisation ``y / (sqrt(P) h)`` followed by a minimum-distance decision.

    Entries with zero CSI cannot be equalised; they are flagged in ``erased``
    and decided as label 0 (counted as errors by the caller if wrong).
    """
    y = np.asarray(received, dtype=np.complex128)
    h = np.asarray(csi, dtype=np.complex128)
    if y.shape != h.shape:
        raise ValueError(f"received grid {y.shape} and CSI {h.shape} differ in shape")
    erased = h == 0
    denom = np.sqrt(power) * np.where(erased, 1.0, h)
    eq = np.where(erased, 0.0, y / denom)
    labels = constellation.nearest(eq.T.ravel())
    labels[erased.T.ravel()] = 0
    return DemodResult(constellation.labels_to_bits(labels), eq, erased)


def count_bit_errors(tx_bits, rx_bits) -> int:
    return int(np.count_nonzero(np.asarray(tx_bits) != np.asarray(rx_bits)))
