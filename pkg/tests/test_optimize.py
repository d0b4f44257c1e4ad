import math

import numpy as np
import pytest

from silpose import config
from silpose.camera import fit_rig_to_size, preset_rig
from silpose.errors import InvalidInputError
from silpose.geometry import bounding_radius, builtin_model
from silpose.optimize import (
    DEGREE_SCALE,
    classify_and_fit,
    hyper_volume,
    initial_simplex,
    nelder_mead,
    refine,
)
from silpose.orientlib import build_library
from silpose.render import render_silhouette
from silpose.rotation import Quaternion, angle_between, axis_angle, random_orientation


def test_hyper_volume_of_corner_simplex():
    s = 0.01
    pts = np.vstack([np.zeros(4), s * np.eye(4)])
    assert hyper_volume(pts) == pytest.approx((s * DEGREE_SCALE) ** 4 / 24.0)


def test_simplex_with_one_degree_edges_has_volume_one_over_24():
    # a quaternion step of pi/360 is a one-degree rotation
    pts = np.vstack([np.zeros(4), (1.0 / DEGREE_SCALE) * np.eye(4)])
    assert hyper_volume(pts) == pytest.approx(1.0 / 24.0)


def test_initial_simplex_around_identity_is_not_degenerate():
    pts = initial_simplex(Quaternion.identity(), math.radians(5.0))
    assert pts.shape == (5, 4)
    assert np.allclose(pts[0], (1.0, 0.0, 0.0, 0.0))
    assert hyper_volume(pts) > 0.0


def test_nelder_mead_finds_minimum_of_angular_bowl():
    target = random_orientation(4)
    start = axis_angle((1, 2, 0), math.radians(10.0)) * target

    def f(q):
        return math.degrees(angle_between(q, target)) ** 2

    res = nelder_mead(f, start, max_iter=2000)
    assert math.degrees(angle_between(res.q, target)) < 0.5
    assert res.evaluations > res.iterations
    assert res.simplex is not None and res.simplex.points.shape == (5, 4)
    assert res.hyper_volume_deg4 == pytest.approx(res.simplex.hyper_volume)
    assert res.converged == (res.hyper_volume_deg4 < config.NM_VOL_TOL)


def test_nelder_mead_stops_at_iteration_cap():
    res = nelder_mead(lambda q: q.x ** 2 + q.y ** 2, random_orientation(1), vol_tol=0.0, max_iter=5)
    assert not res.converged
    assert res.iterations == 5


def _observed(kind, q, size=50, rig_name="orthogonal_3"):
    m = builtin_model(kind)
    rig = fit_rig_to_size(preset_rig(rig_name), bounding_radius(m), size)
    return m, rig, [render_silhouette(m, q, cam, size) for cam in rig]


def test_refine_recovers_nearby_orientation():
    truth = random_orientation(17)
    m, rig, observed = _observed("chiral_right", truth, size=40)
    guess = axis_angle((0, 1, 1), math.radians(8.0)) * truth
    res = refine(m, rig, observed, [guess])
    assert res.particle_type == "chiral_right"
    assert res.guess_index == 0
    assert len(res.runs) == 1
    assert math.degrees(angle_between(res.q, truth, m.symmetry)) < 3.0


def test_refine_needs_a_guess():
    m, rig, observed = _observed("tetrad", random_orientation(1), size=30)
    with pytest.raises(InvalidInputError):
        refine(m, rig, observed, [])


def test_classify_tells_mirror_images_apart():
    right, left = builtin_model("chiral_right"), builtin_model("chiral_left")
    zoomed = fit_rig_to_size(preset_rig("orthogonal_3"), bounding_radius(right), 50)
    libraries = {m.name: build_library(m, zoomed, 30, 8, 32, workers=1) for m in (right, left)}
    truth = axis_angle((1, 0, 1), math.radians(5.0)) * libraries["chiral_right"].entry(37)
    observed = [render_silhouette(right, truth, cam, 50) for cam in zoomed]
    res = classify_and_fit([left, right], zoomed, observed, libraries, k=2)
    assert res.particle_type == "chiral_right"
    assert set(res.guess_errors) == {"chiral_left", "chiral_right"}
    assert math.degrees(angle_between(res.q, truth, right.symmetry)) < 5.0


def test_classify_needs_models():
    with pytest.raises(InvalidInputError):
        classify_and_fit([], preset_rig("single"), [])


def test_classify_tetrad_against_oloid():
    tetrad, oloid = builtin_model("tetrad"), builtin_model("oloid")
    radius = max(bounding_radius(tetrad), bounding_radius(oloid))
    rig = fit_rig_to_size(preset_rig("tetrahedral_4"), radius, 40)
    libraries = {m.name: build_library(m, rig, 20, 6, 32, workers=1) for m in (tetrad, oloid)}
    truth = random_orientation(6)
    observed = [render_silhouette(tetrad, truth, cam, 40) for cam in rig]
    res = classify_and_fit([tetrad, oloid], rig, observed, libraries, k=1)
    assert res.particle_type == "tetrad"
