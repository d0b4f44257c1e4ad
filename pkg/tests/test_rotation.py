import math

import numpy as np
import pytest

from silpose.errors import InvalidInputError
from silpose.rotation import (
    EulerZYX,
    PurePoint,
    Quaternion,
    angle_between,
    angle_between_real,
    angles_to,
    axis_angle,
    fibonacci_axes,
    from_axis_angle,
    from_euler_zyx,
    multiply_arrays,
    oloid_group,
    random_orientation,
    rotate_point,
    rotate_points,
    tetrahedral_group,
    to_euler_zyx,
    uniform_angle_cdf,
)


def test_quarter_turn_about_z_moves_x_to_y():
    q = from_axis_angle((0, 0, 1), math.pi / 2)
    p = rotate_point(q, PurePoint(1, 0, 0))
    assert p.x == pytest.approx(0.0, abs=1e-12)
    assert p.y == pytest.approx(1.0)
    assert p.z == pytest.approx(0.0, abs=1e-12)
    assert angle_between(q, Quaternion.identity()) == pytest.approx(math.pi / 2)


def test_quaternions_are_sign_canonical():
    q = Quaternion(-0.5, 0.5, 0.5, 0.5)
    assert q.w >= 0, "stored quaternion should have w >= 0"
    assert angle_between(q, Quaternion(0.5, -0.5, -0.5, -0.5)) == pytest.approx(0.0, abs=1e-7)


def test_zero_quaternion_rejected():
    with pytest.raises(InvalidInputError):
        Quaternion(0.0, 0.0, 0.0, 0.0)


def test_non_unit_axis_rejected():
    with pytest.raises(InvalidInputError):
        from_axis_angle((0, 0, 2), 1.0)


def test_vectorized_rotation_matches_sandwich_product(rng):
    q = random_orientation(rng)
    pts = rng.standard_normal((20, 3))
    fast = rotate_points(q, pts)
    for p, f in zip(pts, fast):
        r = rotate_point(q, PurePoint(*p))
        assert np.allclose([r.x, r.y, r.z], f, atol=1e-12)


def test_composition_matches_array_product(rng):
    a, b = random_orientation(rng), random_orientation(rng)
    arr = multiply_arrays(a.as_array(), b.as_array())
    ab = (a * b).as_array()
    assert np.allclose(np.sign(arr[0] or 1.0) * arr, ab, atol=1e-12)


def test_angle_forms_agree_away_from_pi():
    q = axis_angle((1, 2, 3), 0.7)
    assert angle_between(q, Quaternion.identity()) == pytest.approx(angle_between_real(q, Quaternion.identity()))


def test_half_turn_has_angle_pi():
    q = from_axis_angle((1, 0, 0), math.pi)
    assert angle_between(q, Quaternion.identity()) == pytest.approx(math.pi)


def test_symmetry_reduction_removes_group_elements(rng):
    g = tetrahedral_group()
    q = random_orientation(rng)
    for s in g.elements:
        assert angle_between(q * s, q, g) == pytest.approx(0.0, abs=1e-6)
    assert len(g) == 12


def test_oloid_group_is_closed_with_four_elements():
    assert len(oloid_group()) == 4


def test_angles_to_matches_scalar_version(rng):
    g = tetrahedral_group()
    q = random_orientation(rng)
    others = [random_orientation(rng) for _ in range(10)]
    vec = angles_to(q, np.array([o.as_array() for o in others]), g)
    for o, v in zip(others, vec):
        assert v == pytest.approx(angle_between(q, o, g), abs=1e-6)


def test_euler_round_trip_and_gimbal_lock():
    e = EulerZYX(0.3, -0.4, 1.1)
    back = to_euler_zyx(from_euler_zyx(e))
    assert (back.psi, back.theta, back.phi) == pytest.approx((0.3, -0.4, 1.1))
    locked = to_euler_zyx(from_euler_zyx(EulerZYX(0.2, math.pi / 2, 0.3)))
    assert locked.gimbal_lock
    assert locked.theta == pytest.approx(math.pi / 2)


def test_fibonacci_axes_are_unit_and_spread():
    axes = np.array(fibonacci_axes(50))
    assert np.allclose(np.linalg.norm(axes, axis=1), 1.0)
    assert np.linalg.norm(axes.mean(axis=0)) < 0.05, "lattice should be balanced over the sphere"


def test_random_orientations_follow_uniform_angle_distribution():
    rng = np.random.default_rng(5)
    ident = Quaternion.identity()
    angles = np.array([angle_between(random_orientation(rng), ident) for _ in range(2000)])
    for theta in (math.pi / 4, math.pi / 2, 3 * math.pi / 4):
        assert np.mean(angles <= theta) == pytest.approx(uniform_angle_cdf(theta), abs=0.04)


def test_random_orientation_is_reproducible():
    assert random_orientation(7) == random_orientation(7)


def test_third_turn_about_diagonal_cycles_axes():
    q = axis_angle((1, 1, 1), 2 * math.pi / 3)
    p = rotate_point(q, PurePoint(1, 0, 0))
    assert (p.x, p.y, p.z) == pytest.approx((0.0, 1.0, 0.0), abs=1e-12)


def test_random_orientations_are_isotropic():
    rng = np.random.default_rng(8)
    zs = np.array([rotate_points(random_orientation(rng), np.array([[0.0, 0.0, 1.0]]))[0] for _ in range(20000)])
    assert np.linalg.norm(zs.mean(axis=0)) < 0.02


@pytest.mark.parametrize("group", [None, tetrahedral_group(), oloid_group()], ids=["plain", "tetrahedral", "oloid"])
def test_angle_between_is_a_pseudometric(group):
    rng = np.random.default_rng(29)
    for _ in range(1000):
        a, b, c = (random_orientation(rng) for _ in range(3))
        ab = angle_between(a, b, group)
        assert ab == pytest.approx(angle_between(b, a, group), abs=1e-9)
        assert angle_between(a, c, group) <= ab + angle_between(b, c, group) + 1e-9
