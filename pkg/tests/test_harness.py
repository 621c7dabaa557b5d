import copy
import math

import numpy as np
import pytest
import yaml

from ducjcas import pipeline as pl
from ducjcas.channel import SCATTERER_DOU, USER
from ducjcas.harness import cli
from ducjcas.harness.campaign import (
    CASES,
    CampaignResult,
    ResultRow,
    TrialRunner,
    aggregate,
    run_campaign,
    run_trials,
    score_direction,
)
from ducjcas.harness.config import (
    ConfigError,
    SweepConfig,
    dbm_to_watt,
    default_config,
    dump_config,
    load_config,
    parse_config,
    watt_to_dbm,
)
from ducjcas.harness.emit import COLUMNS, emit_results, read_csv, rows_to_csv
from ducjcas.subspace import range_steering, doppler_steering

from .conftest import los_only_realization


def small_config(trials=2, **campaign):
    cfg = copy.deepcopy(default_config())
    cfg.numerology.n_subcarriers = 32
    cfg.numerology.n_symbols = 16
    cfg.powers.sweep = SweepConfig(18.0, 24.0, 6.0)
    cfg.campaign.trials = trials
    for k, v in campaign.items():
        setattr(cfg.campaign, k, v)
    return cfg.validate()


# ---------------------------------------------------------------- config


def test_default_scenario_values():
    cfg = default_config()
    assert cfg.numerology.carrier_frequency_hz == 63e9
    assert cfg.numerology.subcarrier_spacing_hz == 480e3
    assert (cfg.arrays.bs.rows, cfg.arrays.bs.cols, cfg.arrays.user.rows, cfg.arrays.user.cols) == (8, 8, 1, 1)
    assert (cfg.powers.ul_max_dbm, cfg.powers.dl_max_dbm) == (20.0, 27.0)
    assert cfg.noise.variance() == pytest.approx(4.9177e-12)
    assert cfg.full_scale.n_subcarriers == 256
    assert cfg.ptd_points() == [14.0, 16.0, 18.0, 20.0, 22.0, 24.0, 26.0]


def test_shipped_example_matches_defaults():
    shipped = parse_config(cli.example_config_text()).to_dict()
    default = default_config().to_dict()
    # the file writes -40 km/h to ten decimals
    for a, b in zip(shipped["geometry"]["scatterers"], default["geometry"]["scatterers"]):
        assert a.pop("velocity") == pytest.approx(b.pop("velocity"), abs=1e-9)
    assert shipped == default


def test_dbm_conversion():
    assert dbm_to_watt(30.0) == 1.0
    assert dbm_to_watt(20.0) == pytest.approx(0.1)
    assert watt_to_dbm(dbm_to_watt(27.0)) == pytest.approx(27.0)


def test_noise_from_kftb():
    cfg = parse_config("schema_version: 1\nnoise:\n  variance_w: null\n")
    assert cfg.noise.variance() == pytest.approx(4.9177e-12, rel=1e-4)


def test_round_trip_dump_parse():
    cfg = small_config()
    assert parse_config(dump_config(cfg)).to_dict() == cfg.to_dict()


def test_unsigned_exponents_are_numbers():
    cfg = parse_config("schema_version: 1\nnumerology:\n  carrier_frequency_hz: 28.0e9\n")
    assert cfg.numerology.carrier_frequency_hz == 28e9


@pytest.mark.parametrize(
    "text,key,line",
    [
        ("schema_version: 1\ncampaign:\n  trials: many\n", "campaign.trials", 3),
        ("schema_version: 1\ncampaign:\n  trails: 4\n", "campaign.trails", 3),
        ("schema_version: 1\ngeometry:\n  user:\n    position: [1, 2]\n", "geometry.user.position", 4),
        ("schema_version: 1\nestimator:\n  order_mode: guess\n", "estimator.order_mode", None),
        ("schema_version: 2\n", "schema_version", None),
        ("numerology: {}\n", "schema_version", None),
    ],
)
def test_config_errors_name_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.key == key
    assert err.value.line == line
    assert key in str(err.value)


def test_malformed_yaml_reports_line():
    with pytest.raises(ConfigError) as err:
        parse_config("schema_version: 1\ncampaign: [\n")
    assert err.value.line is not None


def test_sweep_above_maximum_rejected():
    with pytest.raises(ConfigError):
        parse_config("schema_version: 1\npowers:\n  sweep: {start_dbm: 20.0, stop_dbm: 30.0, step_db: 2.0}\n")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


# ---------------------------------------------------------------- scoring


def test_score_direction_assignment(scenario):
    real = los_only_realization(scenario)
    lam = real.numerology.wavelength
    truths = real.truth_by_kind((USER, SCATTERER_DOU))
    assert len(truths) == 2
    locs = [t.location_local for t in truths]
    vels = [t.bs_radial_velocity / lam for t in truths]
    exact = score_direction([(locs[1], vels[1]), (locs[0], vels[0])], truths, lam)
    assert exact == pytest.approx((0.0, 0.0), abs=1e-18)
    # one estimate for two targets: both are scored against it
    loc, _ = score_direction([(locs[0], vels[0])], truths, lam)
    assert loc == pytest.approx(np.sum((locs[0] - locs[1]) ** 2))
    assert score_direction([], truths, lam) is None


# ---------------------------------------------------------------- campaign


@pytest.fixture(scope="module")
def small_results():
    return run_trials(small_config())


def test_case_identities_per_trial(small_results):
    for res in small_results:
        by_key = {(r.case, r.ptd_dbm): r for r in res.records}
        for scheme, (a, b, s) in CASES.items():
            for ptd in (18.0, 24.0):
                ra, rb, rs = by_key[(a, ptd)], by_key[(b, ptd)], by_key[(s, ptd)]
                if ra.failed or rb.failed:
                    assert rs.failed
                    continue
                assert rs.location_se == ra.location_se + rb.location_se
                assert rs.velocity_se == ra.velocity_se + rb.velocity_se
                assert min(ra.location_se, rb.location_se, ra.velocity_se) >= 0


def test_campaign_deterministic_and_worker_independent(small_results):
    cfg = small_config()
    again = run_trials(cfg)
    parallel = run_trials(cfg, workers=2)
    text = rows_to_csv(aggregate(cfg, small_results).rows)
    assert rows_to_csv(aggregate(cfg, again).rows) == text
    assert rows_to_csv(aggregate(cfg, parallel).rows) == text


def test_aggregate_rows(small_results):
    cfg = small_config()
    res = aggregate(cfg, small_results)
    metrics = {r.metric for r in res.rows}
    assert metrics == {"location_smse", "velocity_smse", "ber"}
    cases = {r.case for r in res.rows if r.metric == "location_smse"}
    assert cases == {"1", "2", "3", "4", "5", "6"}
    assert {r.case for r in res.rows if r.metric == "ber"} == {"duc", "duc-single", "separated"}
    for r in res.rows:
        assert (r.ms, r.qam_order) == (16, 4)


def test_failed_trials_excluded_and_counted():
    from ducjcas.harness.campaign import TrialRecord, TrialResult

    t0 = TrialResult(0, [TrialRecord(0, "duc", 2, 24.0, 4.0, 1.0, False)])
    t1 = TrialResult(1, [TrialRecord(1, "duc", 2, 24.0, math.nan, math.nan, True, ("ulp-failed",))])
    res = aggregate(small_config(), [t0, t1])
    loc = [r for r in res.rows if r.metric == "location_smse"][0]
    assert loc.trials == 1 and loc.value_db == pytest.approx(10 * np.log10(4.0))
    assert res.failures == {"duc/case2/24dBm": 1}


def _noiseless_single_target_config():
    cfg = small_config(trials=1, fading=False)
    cfg.noise.variance_w = 0.0
    cfg.geometry.include_nlos = False
    cfg.geometry.scatterers = [s for s in cfg.geometry.scatterers if s.kind == "doi"]
    cfg.powers.sweep = SweepConfig(24.0, 24.0, 1.0)
    return cfg.validate()


def test_noiseless_duc_reaches_refinement_floor():
    cfg = _noiseless_single_target_config()
    rec = {(r.scheme, r.case): r for r in TrialRunner(cfg).run(0).records}
    # user direction: UL and DL estimates are both exact
    assert rec[("duc", 2)].location_se <= 1e-6
    assert rec[("duc", 2)].velocity_se <= 1e-6
    # the separated on-grid scheme is limited by its grid
    assert rec[("separated", 1)].location_se > 100 * rec[("duc", 2)].location_se


def test_noiseless_ber_equal_for_both_schemes():
    cfg = _noiseless_single_target_config()
    res = TrialRunner(cfg).run(0)
    assert {b.label: b.errors for b in res.ber} == {"duc": 0, "duc-single": 0, "separated": 0}


def test_on_grid_error_bounded_by_half_pitch(scenario):
    num = scenario.numerology_obj()
    r_true, f_true = 90.2638, 1234.5
    h = np.outer(range_steering(num, r_true), doppler_steering(num, f_true))
    on_grid = pl.EstimatorSettings(refine=False, range_grid=256, doppler_grid=256)
    refined = pl.EstimatorSettings(range_grid=256, doppler_grid=256)
    pitch_r = num.max_range / 256
    pitch_f = 2 * num.max_doppler / 256
    (r0, f0), = pl.estimate_range_doppler(h, num, on_grid, 1, echo=False)[0]
    (r1, f1), = pl.estimate_range_doppler(h, num, refined, 1, echo=False)[0]
    assert abs(r0 - r_true) <= pitch_r / 2 + 1e-9 and abs(f0 - f_true) <= pitch_f / 2 + 1e-9
    assert abs(r1 - r_true) <= 1e-3 * pitch_r and abs(f1 - f_true) <= 1e-3 * pitch_f
    # a coarser grid can only widen the quantisation bound
    coarse = pl.EstimatorSettings(refine=False, range_grid=64, doppler_grid=64)
    (r2, _), = pl.estimate_range_doppler(h, num, coarse, 1, echo=False)[0]
    assert abs(r2 - r_true) <= num.max_range / 64 / 2 + 1e-9


# ---------------------------------------------------------------- emit


def test_empty_table_gives_header_only():
    assert rows_to_csv([]) == ",".join(COLUMNS) + "\n"


def test_one_row_csv(tmp_path):
    row = ResultRow("5", 24.0, 32, 4, "location_smse", 10 * math.log10(2.5), 100, 0.1)
    text = rows_to_csv([row])
    assert len(text.splitlines()) == 2
    p = tmp_path / "x.csv"
    p.write_text(text)
    assert read_csv(p) == [row]


def test_emit_round_trip(tmp_path, small_results):
    cfg = small_config()
    res = aggregate(cfg, small_results)
    paths = emit_results(res, cfg, tmp_path / "out")
    names = sorted(p.name for p in paths)
    assert names == ["ber.csv", "manifest.yaml", "smse_location.csv", "smse_velocity.csv"]
    loaded = read_csv(tmp_path / "out" / "smse_location.csv")
    assert loaded == [r for r in res.rows if r.metric == "location_smse"]
    manifest = yaml.safe_load((tmp_path / "out" / "manifest.yaml").read_text())
    assert manifest["seed"] == cfg.campaign.seed
    assert manifest["baseline_grids"] == {"angle": 64, "range": 256, "doppler": 256}
    assert manifest["config"] == cfg.to_dict()


def test_emit_reports_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError) as err:
        emit_results(CampaignResult([], {}, []), small_config(), blocker / "sub")
    assert str(blocker) in str(err.value)


# ---------------------------------------------------------------- CLI


def test_parse_sweep():
    assert cli.parse_sweep("ptd=14:26:2").points() == [14.0, 16.0, 18.0, 20.0, 22.0, 24.0, 26.0]
    for bad in ("ptd=1:2", "pt=1:2:1", "ptd=5:1:1", "ptd=1:2:0"):
        with pytest.raises(Exception):
            cli.parse_sweep(bad)


def test_cli_example_config(capsys):
    assert cli.main(["example-config"]) == 0
    assert "schema_version: 1" in capsys.readouterr().out


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema_version: 1\ncampaign:\n  trials: 0\n")
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "campaign.trials" in capsys.readouterr().err


def test_cli_run_and_output_error(tmp_path, capsys):
    cfg_path = tmp_path / "small.yaml"
    cfg_path.write_text(dump_config(small_config(trials=1)))
    args = ["run", "--config", str(cfg_path), "--trials", "1", "--sweep", "ptd=24:24:1", "--scheme", "duc"]
    assert cli.main(args + ["--out", str(tmp_path / "res")]) == 0
    rows = read_csv(tmp_path / "res" / "smse_location.csv")
    assert {r.case for r in rows} == {"2", "4", "6"} and {r.ptd_dbm for r in rows} == {24.0}
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert cli.main(args + ["--out", str(blocker)]) == 3
    assert "output error" in capsys.readouterr().err


def test_run_campaign_returns_rows():
    res = run_campaign(small_config(trials=1, schemes=["separated"], ber=False))
    assert {r.case for r in res.rows} == {"1", "3", "5"}
    assert all(r.metric != "ber" for r in res.rows)
