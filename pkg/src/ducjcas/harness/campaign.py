"""Monte-Carlo campaign over the DL data-power sweep.

Every trial draws one coherence block and runs the UL periods once per
scheme; the DL data period is then repeated for every swept data power.
Randomness is keyed on ``(seed, trial, stream)`` only, so both schemes and
every sweep point see the same channel, noise and data (common random
numbers), and results do not depend on execution order or worker count.

Cases (squared errors summed over the targets of a direction):

====  ===========  ==========================================
case  scheme       targets
====  ===========  ==========================================
1     separated    direction of the user (user + DoU scatterers)
2     duc          direction of the user, after UL/DL fusion
3     separated    direction of interest
4     duc          direction of interest
5     separated    1 + 3
6     duc          2 + 4
====  ===========  ==========================================
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .. import pipeline as pl
from ..channel import SCATTERER_DOI, SCATTERER_DOU, USER, ChannelRealization
from ..fusion import UL, TargetFeature, fuse_csi, fuse_sensing
from ..waveform import QamConstellation, count_bit_errors, demodulate_data
from .config import ScenarioConfig, config_from_dict, dbm_to_watt

log = logging.getLogger(__name__)

CASES = {"separated": (1, 3, 5), "duc": (2, 4, 6)}
STREAM_CHANNEL, STREAM_ULP, STREAM_DLP, STREAM_DLD = range(4)


@dataclass
class TrialRecord:
    trial: int
    scheme: str
    case: int
    ptd_dbm: float
    location_se: float
    velocity_se: float
    failed: bool
    flags: tuple = ()


@dataclass
class BerRecord:
    trial: int
    label: str  # duc (fused CSI), duc-single (DUC beams, DLP CSI), separated
    ptd_dbm: float
    errors: int
    bits: int


@dataclass
class TrialResult:
    trial: int
    records: list = field(default_factory=list)
    ber: list = field(default_factory=list)


def stream(seed: int, trial: int, which: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial, which)))


# ---------------------------------------------------------------- scoring


def score_direction(estimates, truths, wavelength: float):
    """Summed squared location / velocity errors against the true targets.

    ``estimates`` is a list of ``(location, doppler)``.  Estimates are
    assigned to targets by minimum total location distance; when there are
    fewer estimates than targets, each unassigned target is scored against
    its nearest estimate.  Returns ``None`` without estimates.
    """
    if not estimates:
        return None
    est_loc = np.array([np.asarray(e[0], float) for e in estimates])
    est_vel = wavelength * np.array([float(e[1]) for e in estimates])
    tru_loc = np.array([t.location_local for t in truths])
    tru_vel = np.array([t.bs_radial_velocity for t in truths])
    cost = np.sum((tru_loc[:, None, :] - est_loc[None, :, :]) ** 2, axis=2)
    rows, cols = linear_sum_assignment(cost)
    assign = np.full(len(truths), -1)
    assign[rows] = cols
    for i in np.flatnonzero(assign < 0):
        assign[i] = int(np.argmin(cost[i]))
    loc = float(sum(cost[i, assign[i]] for i in range(len(truths))))
    vel = float(sum((est_vel[assign[i]] - tru_vel[i]) ** 2 for i in range(len(truths))))
    return loc, vel


def _features(ds: pl.DetectionSet):
    return [TargetFeature(e.location, e.doppler, e.snr, ds.domain) for e in ds.entries]


# ---------------------------------------------------------------- one trial


class TrialRunner:
    """Holds the per-campaign derived objects; runs trials by index."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.num = cfg.numerology_obj()
        self.bs = cfg.bs_array()
        self.ue = cfg.user_array()
        self.scene = cfg.scene()
        self.probe = cfg.probe_direction()
        self.noise = cfg.noise.variance()
        self.p_ul = dbm_to_watt(cfg.powers.ul_max_dbm)
        self.p_dl = dbm_to_watt(cfg.powers.dl_max_dbm)
        self.ptd = cfg.ptd_points()
        self.const = QamConstellation(cfg.campaign.qam_order)
        self.settings = {
            "duc": cfg.estimator.build(refine=True),
            "separated": pl.EstimatorSettings(
                **{
                    **cfg.estimator.build(refine=False).__dict__,
                    "angle_grid": cfg.baseline.angle_grid,
                    "range_grid": cfg.baseline.range_grid,
                    "doppler_grid": cfg.baseline.doppler_grid,
                }
            ),
        }

    def _powers(self, ptd_dbm: float) -> pl.Powers:
        data, probe = pl.split_dl_power(self.p_dl, min(dbm_to_watt(ptd_dbm), self.p_dl))
        return pl.Powers(self.p_ul, self.p_dl, data, probe, self.noise)

    def run(self, trial: int) -> TrialResult:
        cfg = self.cfg
        seed = cfg.campaign.seed
        real = ChannelRealization.draw(
            self.scene,
            self.bs,
            self.ue,
            self.num,
            stream(seed, trial, STREAM_CHANNEL),
            include_nlos=cfg.geometry.include_nlos,
            fading=cfg.campaign.fading,
        )
        dou_truth = real.truth_by_kind((USER, SCATTERER_DOU))
        doi_truth = real.truth_by_kind((SCATTERER_DOI,))
        lam = self.num.wavelength
        out = TrialResult(trial)
        for scheme in cfg.campaign.schemes:
            st = self.settings[scheme]
            base_powers = self._powers(self.ptd[0])
            ulp = pl.run_ulp(real, base_powers, st, stream(seed, trial, STREAM_ULP), oracle=cfg.campaign.oracle_debug)
            c_dou, c_doi, c_sum = CASES[scheme]
            if ulp.failed:
                for ptd in self.ptd:
                    for c in (c_dou, c_doi, c_sum):
                        out.records.append(TrialRecord(trial, scheme, c, ptd, np.nan, np.nan, True, ("ulp-failed",)))
                continue
            dlp = pl.run_dlp(real, base_powers, ulp, stream(seed, trial, STREAM_DLP))
            fused_csi = fuse_csi(ulp.csi, dlp.csi) if scheme == "duc" else None
            for ptd in self.ptd:
                powers = self._powers(ptd)
                dld = pl.run_dld(real, powers, ulp, st, self.probe, self.const, stream(seed, trial, STREAM_DLD))
                if scheme == "duc":
                    fused = fuse_sensing(_features(ulp.detections), _features(dld.dou))
                    dou_est = [(f.location, f.doppler) for f in fused]
                else:
                    dou_est = [(e.location, e.doppler) for e in dld.dou.entries]
                doi_est = [(e.location, e.doppler) for e in dld.doi.entries]
                s_dou = score_direction(dou_est, dou_truth, lam) if dou_truth else (0.0, 0.0)
                s_doi = score_direction(doi_est, doi_truth, lam) if doi_truth else (0.0, 0.0)
                flags = tuple(ulp.detections.flags)
                for c, s in ((c_dou, s_dou), (c_doi, s_doi)):
                    if s is None:
                        out.records.append(TrialRecord(trial, scheme, c, ptd, np.nan, np.nan, True, flags + ("no-estimates",)))
                    else:
                        out.records.append(TrialRecord(trial, scheme, c, ptd, s[0], s[1], False, flags))
                if s_dou is None or s_doi is None:
                    out.records.append(TrialRecord(trial, scheme, c_sum, ptd, np.nan, np.nan, True, flags + ("no-estimates",)))
                else:
                    out.records.append(
                        TrialRecord(trial, scheme, c_sum, ptd, s_dou[0] + s_doi[0], s_dou[1] + s_doi[1], False, flags)
                    )
                if cfg.campaign.ber and powers.dl_data > 0:
                    n_bits = dld.bits.size
                    if scheme == "duc":
                        pairs = (("duc", fused_csi.grid), ("duc-single", dlp.csi.grid))
                    else:
                        pairs = (("separated", dlp.csi.grid),)
                    for label, csi in pairs:
                        dem = demodulate_data(dld.user_signal, csi, powers.dl_data, self.const)
                        out.ber.append(BerRecord(trial, label, ptd, count_bit_errors(dld.bits, dem.bits), n_bits))
        return out


_WORKER: TrialRunner | None = None


def _init_worker(cfg_dict):
    global _WORKER
    _WORKER = TrialRunner(config_from_dict(cfg_dict))


def _run_in_worker(trial: int) -> TrialResult:
    return _WORKER.run(trial)


def run_trials(cfg: ScenarioConfig, workers: int | None = None) -> list[TrialResult]:
    """All trials of the campaign, ordered by trial index."""
    workers = cfg.campaign.workers if workers is None else workers
    trials = range(cfg.campaign.trials)
    if workers <= 1:
        runner = TrialRunner(cfg)
        return [runner.run(t) for t in trials]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(cfg.to_dict(),)) as ex:
        results = list(ex.map(_run_in_worker, trials, chunksize=max(1, len(trials) // (4 * workers))))
    return sorted(results, key=lambda r: r.trial)


# ---------------------------------------------------------------- aggregation


@dataclass(frozen=True)
class ResultRow:
    case: str
    ptd_dbm: float
    ms: int
    qam_order: int
    metric: str
    value_db: float
    trials: int
    stderr: float  # standard error of the mean, linear units of the metric


@dataclass
class CampaignResult:
    rows: list
    failures: dict  # "scheme/case/ptd" -> failed-trial count
    trials: list


def _db(x: float) -> float:
    if x > 0:
        return float(10.0 * np.log10(x))
    return float("-inf") if x == 0 else float("nan")


def _mean_stderr(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(np.mean(v)), se


def aggregate(cfg: ScenarioConfig, results: list[TrialResult]) -> CampaignResult:
    ms, qam = cfg.numerology.n_symbols, cfg.campaign.qam_order
    rows, failures = [], {}
    records = [r for res in results for r in res.records]
    keys = sorted({(r.case, r.ptd_dbm) for r in records})
    for case, ptd in keys:
        sel = [r for r in records if r.case == case and r.ptd_dbm == ptd]
        ok = [r for r in sel if not r.failed]
        n_fail = len(sel) - len(ok)
        scheme = sel[0].scheme
        if n_fail:
            failures[f"{scheme}/case{case}/{ptd:g}dBm"] = n_fail
        for metric, attr in (("location_smse", "location_se"), ("velocity_smse", "velocity_se")):
            mean, se = _mean_stderr([getattr(r, attr) for r in ok])
            rows.append(ResultRow(str(case), ptd, ms, qam, metric, _db(mean), len(ok), se))
    bers = [b for res in results for b in res.ber]
    for label, ptd in sorted({(b.label, b.ptd_dbm) for b in bers}):
        sel = [b for b in bers if b.label == label and b.ptd_dbm == ptd]
        errors = sum(b.errors for b in sel)
        bits = sum(b.bits for b in sel)
        _, se = _mean_stderr([b.errors / b.bits for b in sel])
        rows.append(ResultRow(label, ptd, ms, qam, "ber", _db(errors / bits), len(sel), se))
    return CampaignResult(rows, failures, results)


def run_campaign(cfg: ScenarioConfig, workers: int | None = None) -> CampaignResult:
    return aggregate(cfg, run_trials(cfg, workers))


def case_means(result: CampaignResult, metric: str) -> dict:
    """``{case: {ptd: linear mean}}`` for quick inspection and tests."""
    out: dict = {}
    for r in result.rows:
        if r.metric == metric:
            out.setdefault(r.case, {})[r.ptd_dbm] = 10 ** (r.value_db / 10) if np.isfinite(r.value_db) else 0.0
    return out
