import math

import numpy as np
import pytest

from silpose.camera import fit_rig_to_size, preset_rig
from silpose.cost import (
    align_pair,
    distance_transform,
    mask_error,
    normalize_cutout,
    rig_error,
    silhouette_error,
)
from silpose.errors import EmptyImageError, InvalidInputError
from silpose.geometry import bounding_radius, builtin_model
from silpose.render import SilhouetteImage, centroid, render_silhouette
from silpose.rotation import axis_angle, random_orientation


def _square(shift, size=40, side=10):
    p = np.zeros((size, size), dtype=bool)
    p[15:15 + side, 5 + shift:5 + shift + side] = True
    return p


def test_identical_masks_score_zero():
    a = _square(0)
    assert mask_error(a, a).error == 0.0


def test_small_hand_computed_case():
    a = np.array([[1, 1, 0, 0]], dtype=bool)
    b = np.array([[0, 1, 1, 0]], dtype=bool)
    # overlap is the second pixel; the two outer union pixels are one away
    assert mask_error(a, b).error == pytest.approx(2.0 / 4.0)


def test_error_never_drops_as_overlap_shrinks():
    base = _square(0)
    errs = [mask_error(base, _square(s)).error for s in range(0, 16)]
    assert all(e2 >= e1 for e1, e2 in zip(errs, errs[1:])), errs


def test_disjoint_masks_take_side_length_penalty():
    a, b = _square(0), _square(20)
    cost = mask_error(a, b)
    assert cost.disjoint
    union = (a | b).sum()
    assert cost.error == pytest.approx(40 * union / 1600)


def test_two_pixels_ten_apart_at_resolution_100():
    a = np.zeros((100, 100), dtype=bool)
    b = np.zeros((100, 100), dtype=bool)
    a[50, 40] = True
    b[50, 50] = True
    cost = mask_error(a, b)
    assert cost.disjoint
    assert cost.error == pytest.approx(100 * 2 / 10000)


def test_error_is_symmetric_for_random_pairs():
    rng = np.random.default_rng(11)
    for _ in range(100):
        a = rng.uniform(size=(24, 24)) < rng.uniform(0.05, 0.5)
        b = rng.uniform(size=(24, 24)) < rng.uniform(0.05, 0.5)
        a[rng.integers(24), rng.integers(24)] = True
        b[rng.integers(24), rng.integers(24)] = True
        assert mask_error(a, b).error == mask_error(b, a).error


def test_empty_mask_raises():
    with pytest.raises(EmptyImageError):
        mask_error(_square(0), np.zeros((40, 40), dtype=bool))


def test_shape_mismatch_raises():
    with pytest.raises(InvalidInputError):
        mask_error(np.ones((3, 3), dtype=bool), np.ones((4, 4), dtype=bool))


def test_distance_transform_of_empty_image_is_flagged():
    field = distance_transform(np.zeros((5, 5)))
    assert field.empty
    assert np.isinf(field.distances).all()
    d = distance_transform(np.eye(3)).distances
    assert d[0, 2] == pytest.approx(math.sqrt(2.0))


def test_silhouette_error_resamples_both_images():
    a = SilhouetteImage(_square(0).astype(float))
    b = SilhouetteImage(_square(1).astype(float))
    assert silhouette_error(a, b, resolution=20).error > 0
    assert silhouette_error(a, a, resolution=20).error == 0


def test_align_pair_centres_each_silhouette():
    a = SilhouetteImage(_square(0).astype(float))
    b = SilhouetteImage(_square(12).astype(float), (300.0, 40.0))
    ra, rb = align_pair(a, b, resolution=30)
    assert np.allclose(ra.pixels, rb.pixels), "translated copies should align exactly"
    assert np.allclose(centroid(ra, local=True), (15.0, 15.0), atol=0.5)


def test_normalize_cutout_removes_scale():
    m = builtin_model("tetrad")
    q = random_orientation(8)
    small = render_silhouette(m, q, fit_rig_to_size(preset_rig("single"), bounding_radius(m), 40)[0], 40)
    large = render_silhouette(m, q, fit_rig_to_size(preset_rig("single"), bounding_radius(m), 80)[0], 80)
    a = normalize_cutout(small, 32).pixels >= 0.5
    b = normalize_cutout(large, 32).pixels >= 0.5
    assert mask_error(a, b).error < 0.2


def test_rig_error_is_lowest_at_true_orientation():
    m = builtin_model("chiral_right")
    rig = fit_rig_to_size(preset_rig("orthogonal_3"), bounding_radius(m), 40)
    q = random_orientation(21)
    observed = [render_silhouette(m, q, cam, 40) for cam in rig]
    at_truth = rig_error(m, q, rig, observed, resolution=40)
    away = rig_error(m, axis_angle((0, 0, 1), 0.5) * q, rig, observed, resolution=40)
    assert len(at_truth.per_camera) == 3
    assert at_truth.total < 0.05
    assert away.total > at_truth.total + 0.1


def test_rig_error_checks_image_count():
    m = builtin_model("tetrad")
    rig = preset_rig("orthogonal_2")
    with pytest.raises(InvalidInputError):
        rig_error(m, random_orientation(0), rig, [])


def test_distance_transform_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(500):
        h, w = rng.integers(1, 26, size=2)
        b = rng.uniform(size=(h, w)) < rng.uniform(0.01, 0.3)
        b[rng.integers(h), rng.integers(w)] = True
        fg = np.argwhere(b)
        grid = np.argwhere(np.ones_like(b))
        brute = np.sqrt(((grid[:, None, :] - fg[None, :, :]) ** 2).sum(axis=2)).min(axis=1).reshape(h, w)
        assert np.allclose(distance_transform(b.astype(float)).distances, brute, rtol=0, atol=1e-12)
