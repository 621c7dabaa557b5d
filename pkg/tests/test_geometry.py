import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ducjcas.geometry import (
    ArrayFrame,
    Direction,
    GeometryError,
    UpaSpec,
    location_from_polar,
    polar_from_offset,
    steering_matrix,
    steering_vector,
)

LAM = 2.99792458e8 / 63e9


def upa(p, q):
    return UpaSpec(p, q, LAM / 2, LAM)


angles = st.tuples(st.floats(-np.pi, np.pi), st.floats(0, np.pi))


def test_broadside_is_all_ones():
    assert np.allclose(steering_vector(upa(2, 2), Direction(0, 0)), 1)


def test_two_by_one_endfire():
    a = steering_vector(upa(2, 1), Direction(0, np.pi / 2))
    assert np.allclose(a, [1, -1])


def test_eight_by_eight_example():
    a = steering_vector(upa(8, 8), Direction.from_degrees(30, 60))
    assert np.linalg.norm(a) == pytest.approx(8.0)
    # element (p=1, q=0) sits at flat index Q = 8
    expected = -np.pi * np.cos(np.deg2rad(30)) * np.sin(np.deg2rad(60))
    assert np.angle(a[8]) == pytest.approx(expected)
    assert expected == pytest.approx(-0.75 * np.pi)


def test_p_major_flattening():
    arr = upa(3, 2)
    p, q = arr.indices()
    assert list(p) == [0, 0, 1, 1, 2, 2]
    assert list(q) == [0, 1, 0, 1, 0, 1]


@given(angles)
def test_unit_modulus_and_norm(ang):
    a = steering_vector(upa(8, 8), Direction(*ang))
    assert np.allclose(np.abs(a), 1)
    assert np.linalg.norm(a) ** 2 == pytest.approx(64)


@given(angles)
def test_q_axis_reflection(ang):
    # flipping phi mirrors the q axis: element (p, q) of a(-phi) equals element (p, q) of
    # a(phi) with the q term negated
    arr = upa(3, 4)
    phi, theta = ang
    p, q = arr.indices()
    direct = np.exp(-1j * arr.kappa * np.sin(theta) * (p * np.cos(phi) - q * np.sin(phi)))
    assert np.allclose(steering_vector(arr, Direction(-phi, theta)), direct)


def test_steering_matrix_columns():
    arr = upa(8, 8)
    d = Direction.from_degrees(10, 80)
    m = steering_matrix(arr, [d])
    assert m.shape == (64, 1)
    assert np.allclose(m[:, 0], steering_vector(arr, d))
    twin = steering_matrix(arr, [d, d])
    assert np.linalg.matrix_rank(twin) == 1
    other = steering_matrix(arr, [Direction.from_degrees(0, 80), Direction.from_degrees(10, 80)])
    assert abs(np.vdot(other[:, 0], other[:, 1])) / 64 < 1
    with pytest.raises(ValueError):
        steering_matrix(arr, [])


def test_polar_examples():
    assert np.allclose(location_from_polar(100, Direction(0, np.pi / 2)), [100, 0, 0])
    assert np.allclose(location_from_polar(0, Direction(1.0, 2.0)), 0)
    r, d = polar_from_offset([0, 0, 5])
    assert (r, d.phi, d.theta) == (5, 0.0, 0.0)
    r, d = polar_from_offset([3, 4, 0])
    assert r == 5 and d.theta == pytest.approx(np.pi / 2) and d.phi == pytest.approx(np.arctan2(4, 3))
    with pytest.raises(GeometryError):
        polar_from_offset([0, 0, 0])
    with pytest.raises(ValueError):
        location_from_polar(-1, Direction(0, 0))


def test_bs_user_distance():
    offset = np.array([140.0, 0.0, 2.0]) - np.array([50.0, 4.75, 7.0])
    r, d = polar_from_offset(offset)
    assert r == pytest.approx(90.2638, abs=1e-4)
    assert np.allclose(location_from_polar(r, d), offset, atol=1e-12)


@given(st.tuples(*[st.floats(-1e3, 1e3)] * 3).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_polar_round_trip(v):
    r, d = polar_from_offset(v)
    assert np.allclose(location_from_polar(r, d), v, rtol=1e-10, atol=1e-10 * max(1.0, r))


def test_array_frame():
    f = ArrayFrame((0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (1.0, 0.0, 0.0))
    assert np.allclose(f.to_local([1, 0, 0]), [0, 0, 1])
    assert np.allclose(f.to_world(f.to_local([1, 2, 3])), [1, 2, 3])
    with pytest.raises(ValueError):
        ArrayFrame((1.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0))
    with pytest.raises(ValueError):  # left-handed
        ArrayFrame((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, -1.0))


def test_upa_validation():
    with pytest.raises(ValueError):
        UpaSpec(0, 1, 1.0, 1.0)
    with pytest.raises(ValueError):
        UpaSpec(1, 1, 0.0, 1.0)
    assert upa(8, 8).kappa == pytest.approx(np.pi)
