import numpy as np
import pytest

from ducjcas.channel import (
    SCATTERER_DOI,
    SCATTERER_DOU,
    USER,
    ChannelRealization,
    Scatterer,
    SceneGeometry,
    closing_speed,
    derive_path_parameters,
    draw_noise,
)
from ducjcas.geometry import SPEED_OF_LIGHT, GeometryError, UpaSpec, polar_from_offset
from ducjcas.harness.config import BOLTZMANN
from ducjcas.waveform import OfdmNumerology

from .conftest import los_only_realization

LAM = SPEED_OF_LIGHT / 63e9
NUM = OfdmNumerology(480e3, 16, 8, 63e9)
BS4 = UpaSpec(2, 2, LAM / 2, LAM)
UE1 = UpaSpec(1, 1, LAM / 2, LAM)


def test_los_amplitude_example(scenario):
    paths = derive_path_parameters(scenario.scene(), LAM)
    user = paths[0]
    assert user.kind == USER
    assert user.bs_range == pytest.approx(90.2638, abs=1e-4)
    assert user.comm_amplitude == pytest.approx(4.198e-6, rel=1e-3)
    assert user.comm_amplitude == pytest.approx(LAM / (4 * np.pi * user.bs_range))
    assert user.echo_delay == pytest.approx(602.1e-9, abs=0.1e-9)
    assert user.echo_amplitude == pytest.approx(1.312e-8, rel=1e-3)
    assert [p.kind for p in paths] == [USER, SCATTERER_DOU, SCATTERER_DOI]


def test_static_scene_has_no_doppler():
    scene = SceneGeometry((0, 0, 0), (100, 0, 0), (Scatterer(SCATTERER_DOI, (50, 50, 0)),))
    for p in derive_path_parameters(scene, LAM):
        assert p.comm_doppler == 0 and p.echo_doppler == 0


def test_closing_target_doppler_example():
    v = 40 / 3.6
    scene = SceneGeometry((0, 0, 0), (100, 0, 0), user_velocity=(-v, 0, 0))
    user = derive_path_parameters(scene, LAM)[0]
    assert user.bs_radial_velocity == pytest.approx(11.111, abs=1e-3)
    assert user.comm_doppler == pytest.approx(2334.9, abs=0.1)
    assert user.echo_doppler == pytest.approx(4669.8, abs=0.2)
    assert closing_speed((0, 0, 0), (0, 0, 0), (100, 0, 0), (v, 0, 0)) == pytest.approx(-v)


def test_nlos_path_sums_hops():
    scene = SceneGeometry((0, 0, 0), (100, 0, 0), (Scatterer(SCATTERER_DOU, (60, 30, 0)),))
    _, s = derive_path_parameters(scene, LAM)
    r1 = np.linalg.norm(np.subtract((60, 30, 0), (100, 0, 0)))
    r2 = np.linalg.norm((60, 30, 0))
    assert s.comm_delay == pytest.approx((r1 + r2) / SPEED_OF_LIGHT)
    assert s.comm_amplitude == pytest.approx(np.sqrt(LAM**2 / ((4 * np.pi) ** 3 * r1**2 * r2**2)))
    assert s.echo_delay == pytest.approx(2 * r2 / SPEED_OF_LIGHT)
    assert s.bs_range == pytest.approx(r2)


def test_coincident_points_rejected():
    with pytest.raises(GeometryError):
        derive_path_parameters(SceneGeometry((0, 0, 0), (0, 0, 0)), LAM)
    with pytest.raises(ValueError):
        Scatterer("tree", (1, 1, 1))


def test_noise_statistics():
    rng = np.random.default_rng(5)
    assert not draw_noise((3, 4), 0.0, rng).any()
    var = BOLTZMANN * 10 * 290 * 122.88e6
    assert var == pytest.approx(4.9177e-12, rel=1e-4)
    w = draw_noise(1_000_000, var, rng)
    assert np.var(w) == pytest.approx(var, rel=0.01)
    assert np.var(w.real) == pytest.approx(var / 2, rel=0.01)
    with pytest.raises(ValueError):
        draw_noise(3, -1.0, rng)


def _two_path_scene():
    return SceneGeometry(
        (0, 0, 0),
        (100, 5, 3),
        (Scatterer(SCATTERER_DOU, (60, 30, 2), (1, 0, 0)),),
        user_velocity=(-3, 0, 0),
    )


def test_single_los_path_rank_one_at_origin():
    real = ChannelRealization.draw(_two_path_scene(), BS4, UE1, NUM, np.random.default_rng(0), include_nlos=False)
    h = real.ul_channel_at(0, 0)
    p = real.paths[0]
    assert np.allclose(h, p.comm_amplitude * np.outer(real.bs_steering()[:, 0], real.user_steering()[:, 0]), rtol=1e-12, atol=0)
    assert np.linalg.matrix_rank(h, tol=1e-20) == 1


def test_reciprocity_and_rank():
    real = ChannelRealization.draw(_two_path_scene(), UpaSpec(2, 2, LAM / 2, LAM), UpaSpec(1, 2, LAM / 2, LAM), NUM, np.random.default_rng(1))
    for n, m in [(0, 0), (3, 5), (15, 7)]:
        h = real.ul_channel_at(n, m)
        assert np.array_equal(real.dl_comm_channel_at(n, m), h.T)
        assert np.linalg.matrix_rank(h, tol=1e-12 * np.abs(h).max()) <= 2


def test_per_path_phase_progression():
    real = ChannelRealization.draw(_two_path_scene(), BS4, UE1, NUM, np.random.default_rng(0), include_nlos=False)
    tau = real.paths[0].comm_delay
    f_d = real.paths[0].comm_doppler
    h0, h1, h2 = real.ul_channel_at(2, 3), real.ul_channel_at(3, 3), real.ul_channel_at(2, 4)
    assert np.allclose(h1 / h0, np.exp(-2j * np.pi * NUM.subcarrier_spacing * tau))
    assert np.allclose(h2 / h0, np.exp(2j * np.pi * f_d * NUM.symbol_duration))
    norms = [np.linalg.norm(real.ul_channel_at(n, m)) for n in range(4) for m in range(3)]
    assert np.allclose(norms, norms[0])


def test_echo_channel_symmetric_steering():
    real = ChannelRealization.draw(_two_path_scene(), BS4, UE1, NUM, np.random.default_rng(0))
    a = real.bs_steering()
    h = real.dl_echo_channel_at(0, 0)
    expected = sum(real.echo_gains[l] * np.outer(a[:, l], a[:, l]) for l in range(len(real.paths)))
    assert np.allclose(h, expected, rtol=1e-12, atol=1e-24)
    assert np.allclose(h, h.T, rtol=1e-12, atol=1e-24)


def test_block_fading_draws():
    scene = _two_path_scene()
    r1 = ChannelRealization.draw(scene, BS4, UE1, NUM, np.random.default_rng(9))
    r2 = ChannelRealization.draw(scene, BS4, UE1, NUM, np.random.default_rng(9))
    r3 = ChannelRealization.draw(scene, BS4, UE1, NUM, np.random.default_rng(10))
    assert np.array_equal(r1.echo_gains, r2.echo_gains)
    assert not np.allclose(r1.echo_gains, r3.echo_gains)
    # the LoS factor is deterministic, reflection factors are not
    assert r1.comm_gains[0] == r3.comm_gains[0]
    # echo factors are drawn independently of the comm factors
    assert not np.isclose(abs(r1.comm_gains[1]) / r1.paths[1].comm_amplitude, abs(r1.echo_gains[1]) / r1.paths[1].echo_amplitude)


def test_draw_order_comm_then_echo():
    scene = _two_path_scene()
    real = ChannelRealization.draw(scene, BS4, UE1, NUM, np.random.default_rng(4))
    # one draw per scalar: real then imaginary part
    rng = np.random.default_rng(4)
    draws = [np.sqrt(0.5) * complex(*rng.standard_normal(2)) for _ in range(3)]
    assert real.comm_gains[1] == pytest.approx(real.paths[1].comm_amplitude * draws[0])
    assert real.echo_gains[0] == pytest.approx(real.paths[0].echo_amplitude * draws[1])
    assert real.echo_gains[1] == pytest.approx(real.paths[1].echo_amplitude * draws[2])


def test_path_grids_match_per_re_channels():
    real = ChannelRealization.draw(_two_path_scene(), BS4, UE1, NUM, np.random.default_rng(2))
    grids = real.comm_path_grids()
    a_bs, a_ue = real.bs_steering(), real.user_steering()
    for n, m in [(0, 0), (5, 2), (15, 7)]:
        h = sum(grids[l, n, m] * np.outer(a_bs[:, l], a_ue[:, l]) for l in range(len(real.paths)))
        assert np.allclose(h, real.ul_channel_at(n, m), rtol=1e-10, atol=1e-24)
    e = real.echo_path_grids()
    for n, m in [(1, 1), (9, 4)]:
        h = sum(e[l, n, m] * np.outer(a_bs[:, l], a_bs[:, l]) for l in range(len(real.paths)))
        assert np.allclose(h, real.dl_echo_channel_at(n, m), rtol=1e-10, atol=1e-24)


def test_fading_off_gives_nominal_amplitudes(scenario):
    real = los_only_realization(scenario)
    assert real.comm_gains[1] == 0 and real.comm_gains[2] == 0
    assert np.allclose(np.abs(real.echo_gains), [p.echo_amplitude for p in real.paths], rtol=1e-12, atol=0)


def test_truth_angles_in_array_frame(scenario):
    real = los_only_realization(scenario)
    frame = scenario.arrays.bs.frame()
    offset = np.array([140.0, 0.0, 2.0]) - np.array([50.0, 4.75, 7.0])
    _, d = polar_from_offset(frame.to_local(offset))
    assert real.paths[0].bs_direction == pytest.approx(d)
    assert np.allclose(real.paths[0].location_local, frame.to_local(offset))
    assert [p.kind for p in real.truth_by_kind((SCATTERER_DOI,))] == [SCATTERER_DOI]
