"""One coherence block: UL preamble, UL data, DL preamble, DL data.

* ULP: the user sends a preamble; the BS estimates per-antenna CSI, the
  user AoA (planar MUSIC), builds a receive combiner, and estimates the
  user range and Doppler from the combined CSI.
* ULD: optional UL data demodulation with the ULP CSI.
* DLP: the BS sends a preamble on the reciprocal beam; the user estimates
  its DL CSI.
* DLD: the BS sends data toward the user plus a probe toward the direction
  of interest, then separates the two echo streams with nullspace-constrained
  receive beams and estimates range and Doppler in each.

Grids are ``N_c x M_s``; stacked per-antenna CSI uses column ``m N_c + n``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import subspace as ss
from .beamforming import (
    Beamformer,
    DlBeamformers,
    dl_jcas_beamformers,
    ls_transmit_bf,
    probe_tx_per_re,
    reference_channel,
    rx_combiner_matrix,
)
from .channel import ChannelRealization, draw_noise
from .fusion import DL_DOI, DL_DOU, UL, CsiEstimate
from .geometry import Direction, location_from_polar
from .waveform import QamConstellation, modulate_data, random_bits

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Powers:
    """Transmit powers and noise, all in watts."""

    ul_preamble: float
    dl_preamble: float
    dl_data: float
    dl_probe: float
    noise_variance: float

    def __post_init__(self):
        if min(self.ul_preamble, self.dl_preamble) <= 0:
            raise ValueError("preamble powers must be positive")
        if self.dl_data < 0 or self.dl_probe < 0:
            raise ValueError("DL data / probe powers must be non-negative")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be non-negative")


def split_dl_power(total: float, data: float) -> tuple[float, float]:
    """``(data, probe)`` with ``probe = total - data``; rejects splits outside ``[0, total]``."""
    if not 0 <= data <= total * (1 + 1e-12):
        raise ValueError(f"DL data power {data} W outside [0, {total}] W")
    return data, max(total - data, 0.0)


@dataclass(frozen=True)
class EstimatorSettings:
    refine: bool = True  # Newton refinement (off for the on-grid baseline)
    angle_grid: int = 64
    range_grid: int | None = 256  # None: one point per DFT cell (N_c)
    doppler_grid: int | None = 256  # None: one point per DFT cell (M_s)
    max_iter: int = 50
    eps_angle: float = 1e-10
    eps_range: float = 1e-7
    eps_doppler: float = 1e-6
    phi_range: tuple = (-np.pi, np.pi)
    theta_range: tuple = (0.0, np.pi / 2)
    order_mode: str = "fixed"  # fixed or gap
    gap_rho: float = 10.0
    angle_sources: int = 1
    dou_sources: int = 1
    doi_sources: int = 1
    per_re_nullspace: bool = False
    peak_ranking: str = "refined"  # refined or grid, see subspace.search_1d


@dataclass
class Detection:
    range: float
    doppler: float  # Hz; velocity is lambda * doppler
    snr: float
    direction: Direction

    @property
    def location(self) -> np.ndarray:
        return location_from_polar(max(self.range, 0.0), self.direction)


@dataclass
class DetectionSet:
    domain: str
    entries: list = field(default_factory=list)
    failed: bool = False
    flags: list = field(default_factory=list)


@dataclass
class UlpResult:
    csi_stack: np.ndarray  # P_tQ_t x N_c M_s per-antenna LS CSI
    eigenvalues: np.ndarray
    aoa: list  # Directions sorted by peak height; first is the user
    combiner: np.ndarray | None
    csi: CsiEstimate | None
    detections: DetectionSet
    csi_vector: np.ndarray | None  # dominant eigenvector of the spatial autocorrelation
    user_tx: Beamformer
    oracle: bool = False

    @property
    def failed(self) -> bool:
        return self.detections.failed


@dataclass
class DlpResult:
    csi: CsiEstimate
    comm_tx: np.ndarray
    user_rx: np.ndarray


@dataclass
class DldResult:
    dou: DetectionSet
    doi: DetectionSet
    beamformers: DlBeamformers
    user_signal: np.ndarray  # user-side combined DL data signal, N_c x M_s
    bits: np.ndarray
    data_power: float
    echo_streams: np.ndarray  # 2 x N_c x M_s (DoU, DoI), symbol-divided


# ---------------------------------------------------------------- helpers


def _flatten_grids(grids: np.ndarray) -> np.ndarray:
    """``L x N_c x M_s`` -> ``L x N_c M_s`` with column ``m N_c + n``."""
    return grids.transpose(0, 2, 1).reshape(grids.shape[0], -1)


def _unflatten(v: np.ndarray, n_sub: int, n_sym: int) -> np.ndarray:
    return np.asarray(v).reshape(n_sym, n_sub).T


def _unit_symbols(shape, rng) -> np.ndarray:
    k = rng.integers(0, 4, size=shape)
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * k))


def _grid_size(setting, cells):
    return cells if setting is None else setting


def _order(eigenvalues, settings: EstimatorSettings, fixed: int, n_snapshots: int | None = None) -> int:
    return ss.estimate_source_count(eigenvalues, settings.order_mode, fixed, settings.gap_rho, n_snapshots)


def estimate_range_doppler(csi: np.ndarray, numerology, settings: EstimatorSettings, k: int | None, echo: bool):
    """Range and Doppler MUSIC on one ``N_c x M_s`` grid, then matching.

    With ``k=None`` the model order follows ``settings.order_mode`` with one
    source as the fixed fallback.  Returns ``(pairs, eigenvalues_r, k)``
    where ``pairs`` lists ``(range, doppler)`` sorted by range-peak height.
    """
    n_sub, n_sym = csi.shape
    r_r = ss.autocorrelation(csi)
    r_f = ss.autocorrelation(csi.T)
    ev_r = ss.numerics.hermitian_eig(r_r)
    if k is None:
        k = _order(ev_r.eigenvalues, settings, 1, n_sym)
    k = max(1, min(k, n_sub - 1, n_sym - 1))
    basis_r = ev_r.eigenvectors[:, k:]
    _, basis_f = ss.noise_basis(r_f, k)
    pk_r = ss.search_1d(
        ss.range_spectrum(basis_r, numerology, echo),
        n_grid=_grid_size(settings.range_grid, n_sub),
        refine=settings.refine,
        max_iter=settings.max_iter,
        eps=settings.eps_range,
        rank=settings.peak_ranking,
        max_peaks=k,
    )
    pk_f = ss.search_1d(
        ss.doppler_spectrum(basis_f, numerology, echo),
        n_grid=_grid_size(settings.doppler_grid, n_sym),
        refine=settings.refine,
        max_iter=settings.max_iter,
        eps=settings.eps_doppler,
        rank=settings.peak_ranking,
        max_peaks=k,
    )
    ranges = [float(p.params[0]) for p in pk_r]
    dopplers = [float(p.params[0]) for p in pk_f]
    if not ranges or not dopplers:
        return [], ev_r.eigenvalues, k
    match = ss.range_doppler_match(csi, ranges, dopplers, numerology, echo)
    pairs = [(ranges[i], dopplers[j]) for i, j in enumerate(match.pairing) if j >= 0]
    return pairs, ev_r.eigenvalues, k


def _detections(domain, pairs, eigenvalues, k, n_sym, direction) -> DetectionSet:
    if not pairs:
        return DetectionSet(domain, [], failed=True, flags=["no-peaks"])
    snr = ss.sensing_snr(eigenvalues, min(k, eigenvalues.size - 1), n_snapshots=n_sym)
    entries = [Detection(r, f, float(snr[min(i, snr.size - 1)]), direction) for i, (r, f) in enumerate(pairs)]
    return DetectionSet(domain, entries)


def _csi_snr(eigenvalues, n_sym) -> float:
    return float(ss.sensing_snr(eigenvalues, 1, n_snapshots=n_sym)[0])


# ---------------------------------------------------------------- periods


def run_ulp(real: ChannelRealization, powers: Powers, settings: EstimatorSettings, rng, oracle: bool = False) -> UlpResult:
    """UL preamble period.  ``oracle=True`` replaces a failed AoA search by the true user direction."""
    num = real.numerology
    n_sub, n_sym = num.shape
    user_tx = ls_transmit_bf(real.user_array, real.paths[0].user_direction)
    chi = real.user_steering().T @ user_tx.weights  # transmit gain per path
    stack = real.bs_steering() @ (chi[:, None] * _flatten_grids(real.comm_path_grids()))

    preamble = _unit_symbols(n_sub * n_sym, rng)
    amp = np.sqrt(powers.ul_preamble)
    received = amp * preamble * stack + draw_noise(stack.shape, powers.noise_variance, rng)
    csi_stack = received / (amp * preamble)

    r = ss.autocorrelation(csi_stack)
    dec = ss.numerics.hermitian_eig(r)
    k = _order(dec.eigenvalues, settings, settings.angle_sources, csi_stack.shape[1])
    model = ss.AngleSpectrum(dec.eigenvectors[:, k:], real.bs_array)
    peaks = ss.search_2d(
        model,
        settings.phi_range,
        settings.theta_range,
        settings.angle_grid,
        refine=settings.refine,
        max_iter=settings.max_iter,
        eps=settings.eps_angle,
        rank=settings.peak_ranking,
        max_peaks=k,
    )
    aoa = [ss.direction_of(p) for p in peaks]
    used_oracle = False
    if not aoa:
        if not oracle:
            det = DetectionSet(UL, failed=True, flags=["no-aoa-peak"])
            return UlpResult(csi_stack, dec.eigenvalues, [], None, None, det, None, user_tx)
        aoa = [real.paths[0].bs_direction]
        used_oracle = True

    comb = rx_combiner_matrix(aoa, real.bs_array)
    w_rx = comb.weights[:, 0]
    csi = _unflatten(w_rx.conj() @ csi_stack, n_sub, n_sym)
    pairs, ev_r, _ = estimate_range_doppler(csi, num, settings, 1, echo=False)
    det = _detections(UL, pairs, ev_r, 1, n_sym, aoa[0])
    if used_oracle:
        det.flags.append("oracle-aoa")
    if comb.regularized:
        det.flags.append("combiner-regularized")
    est = CsiEstimate(csi, "ULP", _csi_snr(ev_r, n_sym))
    return UlpResult(csi_stack, dec.eigenvalues, aoa, comb.weights, est, det, dec.eigenvectors[:, 0], user_tx, used_oracle)


def run_uld(real: ChannelRealization, power: float, noise_variance: float, ulp: UlpResult, constellation: QamConstellation, rng):
    """UL data period: returns ``(bits, combined received grid)`` at the BS."""
    num = real.numerology
    n_sub, n_sym = num.shape
    bits = random_bits(num, constellation, rng)
    data = modulate_data(bits, constellation, num)
    chi = real.user_steering().T @ ulp.user_tx.weights
    stack = real.bs_steering() @ (chi[:, None] * _flatten_grids(real.comm_path_grids()))
    flat = data.T.ravel()
    rx = np.sqrt(power) * flat * stack + draw_noise(stack.shape, noise_variance, rng)
    y = ulp.combiner[:, 0].conj() @ rx
    return bits, _unflatten(y, n_sub, n_sym)


def _dl_comm_gain(real: ChannelRealization, w_tx: np.ndarray, w_rx: np.ndarray) -> np.ndarray:
    """Per-path ``(w_rx^H a_user)(a_bs^T w_tx)`` for the reciprocal DL channel."""
    return (w_rx.conj() @ real.user_steering()) * (real.bs_steering().T @ w_tx)


def run_dlp(real: ChannelRealization, powers: Powers, ulp: UlpResult, rng) -> DlpResult:
    """DL preamble period on the reciprocal beams ``conj(w_rx^U)`` / ``conj(w_tx^U)``."""
    num = real.numerology
    n_sub, n_sym = num.shape
    w_tx = ulp.combiner[:, 0].conj()
    w_rx = ulp.user_tx.weights.conj()
    gain = _dl_comm_gain(real, w_tx, w_rx)
    h = gain @ _flatten_grids(real.comm_path_grids())
    preamble = _unit_symbols(n_sub * n_sym, rng)
    amp = np.sqrt(powers.dl_preamble)
    noise = draw_noise((real.user_array.size, h.size), powers.noise_variance, rng)
    y = amp * preamble * h + w_rx.conj() @ noise
    csi = _unflatten(y / (amp * preamble), n_sub, n_sym)
    r_r = ss.autocorrelation(csi)
    ev = ss.numerics.hermitian_eig(r_r).eigenvalues
    return DlpResult(CsiEstimate(csi, "DLP", _csi_snr(ev, n_sym)), w_tx, w_rx)


def run_dld(
    real: ChannelRealization,
    powers: Powers,
    ulp: UlpResult,
    settings: EstimatorSettings,
    probe_direction: Direction,
    constellation: QamConstellation,
    rng,
    expected_range: float | None = None,
) -> DldResult:
    """DL data period with simultaneous probing of the direction of interest."""
    num = real.numerology
    n_sub, n_sym = num.shape
    n_re = n_sub * n_sym
    bs = real.bs_array
    user_dir = ulp.aoa[0]
    r_e = expected_range
    if r_e is None:
        r_e = ulp.detections.entries[0].range if ulp.detections.entries else real.paths[0].bs_range
    r_e = max(r_e, 1e-3)

    comm_tx = Beamformer(ulp.combiner[:, 0].conj(), "dlCommTx", user_dir)
    h_is = reference_channel(user_dir, r_e, bs, num.wavelength)
    h_rs = reference_channel(probe_direction, r_e, bs, num.wavelength)
    bfs = dl_jcas_beamformers(h_rs, h_is, comm_tx, ulp.csi_vector)

    # separate streams so probe symbols and noise do not depend on the QAM order
    bit_rng, probe_rng, noise_rng = rng.spawn(3)
    bits = random_bits(num, constellation, bit_rng)
    d_data = modulate_data(bits, constellation, num).T.ravel()
    d_probe = _unit_symbols(n_re, probe_rng)
    p_d, p_s = np.sqrt(powers.dl_data), np.sqrt(powers.dl_probe)

    a_bs = real.bs_steering()  # PQ x L
    if settings.per_re_nullspace:
        w_probe = probe_tx_per_re(ulp.csi_stack, h_rs.steering)  # PQ x N_RE
        probe_gain = a_bs.T @ w_probe  # L x N_RE
    else:
        w_probe = bfs.probe_tx.weights
        probe_gain = (a_bs.T @ w_probe)[:, None]
    data_gain = (a_bs.T @ comm_tx.weights)[:, None]
    illum = p_d * d_data * data_gain + p_s * d_probe * probe_gain  # a_l^T x per RE

    comb = bfs.echo_combiner  # PQ x 2
    rx_gain = comb.conj().T @ a_bs  # 2 x L
    echo = rx_gain @ (_flatten_grids(real.echo_path_grids()) * illum)
    echo = echo + comb.conj().T @ draw_noise((bs.size, n_re), powers.noise_variance, noise_rng)

    streams = np.zeros((2, n_sub, n_sym), dtype=np.complex128)
    dou = DetectionSet(DL_DOU, failed=True, flags=["no-data-power"])
    doi = DetectionSet(DL_DOI, failed=True, flags=["no-probe-power"])
    if p_d > 0:
        streams[0] = _unflatten(echo[0] / (p_d * d_data), n_sub, n_sym)
        k = None if settings.order_mode == "gap" else settings.dou_sources
        pairs, ev, k = estimate_range_doppler(streams[0], num, settings, k, echo=True)
        dou = _detections(DL_DOU, pairs, ev, k, n_sym, user_dir)
    if p_s > 0:
        streams[1] = _unflatten(echo[1] / (p_s * d_probe), n_sub, n_sym)
        k = None if settings.order_mode == "gap" else settings.doi_sources
        pairs, ev, k = estimate_range_doppler(streams[1], num, settings, k, echo=True)
        doi = _detections(DL_DOI, pairs, ev, k, n_sym, probe_direction)

    # user side: data plus probe leakage through the DL channel, then combining
    w_rx = ulp.user_tx.weights.conj()
    a_ue = real.user_steering()
    path_tx = p_d * d_data * data_gain + p_s * d_probe * probe_gain  # L x N_RE
    comm = _flatten_grids(real.comm_path_grids())
    y = (w_rx.conj() @ a_ue) @ (comm * path_tx)
    y = y + w_rx.conj() @ draw_noise((real.user_array.size, n_re), powers.noise_variance, noise_rng)
    return DldResult(dou, doi, bfs, _unflatten(y, n_sub, n_sym), bits, powers.dl_data, streams)
