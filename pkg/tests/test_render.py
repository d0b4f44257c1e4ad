import numpy as np
import pytest
from scipy.spatial import ConvexHull

from silpose.camera import CameraModel, fit_rig_to_size, preset_rig, project_point, project_points
from silpose.errors import EmptyImageError, InvalidInputError, RenderError
from silpose.geometry import WireframeModel, bounding_radius, builtin_model, model_points
from silpose.render import (
    SilhouetteImage,
    area,
    bbox,
    binarize,
    centroid,
    crop,
    render_frame,
    render_silhouette,
    resample_window,
    resize_box,
)
from silpose.rotation import Quaternion, axis_angle, random_orientation


def _camera(kind, size=40, rig="orthogonal_3", k=0):
    m = builtin_model(kind)
    return m, fit_rig_to_size(preset_rig(rig), bounding_radius(m), size)[k]


@pytest.mark.parametrize("kind", ["chiral_right", "tetrad", "oloid"])
def test_render_is_anti_aliased_and_inside_window(kind):
    m, cam = _camera(kind)
    img = render_silhouette(m, random_orientation(3), cam, 40)
    assert img.pixels.shape == (40, 40)
    p = img.pixels
    assert p.max() == pytest.approx(1.0)
    assert np.any((p > 0) & (p < 1)), "edge pixels should carry partial coverage"
    # bounding sphere fills 90% of the window, so the border stays empty
    assert p[0].sum() == 0 and p[-1].sum() == 0 and p[:, 0].sum() == 0 and p[:, -1].sum() == 0


def test_window_is_centred_on_projected_com():
    m, cam = _camera("tetrad")
    pos = (1.0, 0.0, 0.5)
    img = render_silhouette(m, axis_angle((0, 1, 0), 0.3), cam, 40, position=pos)
    uc, vc = project_point(cam, pos)
    assert img.origin_px[0] + 20 == pytest.approx(uc, abs=0.5)
    assert img.origin_px[1] + 20 == pytest.approx(vc, abs=0.5)


def test_symmetric_orientations_render_identically():
    m, cam = _camera("tetrad")
    q = random_orientation(11)
    a = render_silhouette(m, q, cam, 40).pixels
    for s in m.symmetry.elements[1:4]:
        b = render_silhouette(m, q * s, cam, 40).pixels
        assert np.abs(a - b).sum() < 0.01 * a.sum()


def test_area_grows_with_image_size():
    m = builtin_model("oloid")
    q = random_orientation(4)
    small = render_silhouette(m, q, fit_rig_to_size(preset_rig("single"), bounding_radius(m), 30)[0], 30)
    large = render_silhouette(m, q, fit_rig_to_size(preset_rig("single"), bounding_radius(m), 60)[0], 60)
    assert area(large) / area(small) == pytest.approx(4.0, rel=0.1)


def test_render_outside_window_raises():
    m, cam = _camera("tetrad")
    with pytest.raises(RenderError):
        render_silhouette(m, random_orientation(1), cam, window=(0, 0, 10, 10))


def test_frame_composites_two_particles():
    m, cam = _camera("tetrad", size=30)
    q = random_orientation(2)
    frame = render_frame(cam, [(m, q, (-6.0, 0.0, 0.0)), (m, q, (6.0, 0.0, 0.0))], (200, 200))
    single = render_silhouette(m, q, cam, 30)
    assert frame.pixels.shape == (200, 200)
    assert area(frame) == pytest.approx(2 * area(single), rel=0.05)


def test_resize_conserves_mass_per_area():
    img = SilhouetteImage(np.random.default_rng(0).uniform(size=(30, 20)))
    out = resize_box(img, (10, 15))
    assert out.pixels.shape == (15, 10)
    assert out.pixels.sum() == pytest.approx(img.pixels.sum() * (10 * 15) / (20 * 30))


def test_resample_window_outside_counts_as_empty():
    img = SilhouetteImage(np.ones((10, 10)))
    out = resample_window(img, -10.0, 0.0, 20.0, 10.0, 2, 1)
    assert out.pixels[0, 0] == pytest.approx(0.0)
    assert out.pixels[0, 1] == pytest.approx(1.0)
    assert out.origin_px == (-10.0, 0.0)


def test_resize_rejects_zero_size():
    with pytest.raises(InvalidInputError):
        resize_box(SilhouetteImage(np.ones((4, 4))), 0)


def test_centroid_bbox_and_crop():
    p = np.zeros((10, 10))
    p[2:4, 5:9] = 1.0
    img = SilhouetteImage(p, (100.0, 200.0))
    assert np.allclose(centroid(img, local=True), (7.0, 3.0))
    assert np.allclose(centroid(img), (107.0, 203.0))
    assert bbox(img) == (5, 2, 9, 4)
    c = crop(img, 4, 1, 12, 5)
    assert c.pixels.shape == (4, 8)
    assert area(c) == area(img)
    assert c.origin_px == (104.0, 201.0)


def test_empty_image_has_no_centroid():
    img = SilhouetteImage(np.zeros((5, 5)))
    with pytest.raises(EmptyImageError):
        centroid(img)
    with pytest.raises(EmptyImageError):
        bbox(img)


def test_binarize_thresholds_at_half():
    img = binarize(SilhouetteImage(np.array([[0.2, 0.5, 0.9]])))
    assert img.pixels.tolist() == [[0.0, 1.0, 1.0]]


def test_pixels_outside_unit_range_rejected():
    with pytest.raises(InvalidInputError):
        SilhouetteImage(np.full((3, 3), 2.0))


def test_straight_tube_area_matches_capsule_formula():
    rod = WireframeModel("rod", [[-2.0, 0.0, 0.0], [2.0, 0.0, 0.0]], ((0, 1),), 0.3)
    cam = CameraModel((0, -570, 0), (0, 1, 0), (0, 0, 1), 5700.0, (512, 512), (1024, 1024))
    img = render_silhouette(rod, Quaternion.identity(), cam, 64)
    length, radius = 40.0, 3.0
    expected = 2 * radius * length + np.pi * radius ** 2
    assert area(img) == pytest.approx(expected, rel=0.01)
    assert np.allclose(img.pixels, img.pixels[:, ::-1], atol=1e-12), "rod should be left-right symmetric"


def _facing_camera():
    # looks along +y from 570 away; one model unit is 10 px at the origin
    return CameraModel((0, -570, 0), (0, 1, 0), (0, 0, 1), 5700.0, (512, 512), (1024, 1024))


def _flat_ell():
    # lies in the plane y = 0, parallel to the sensor of the facing camera
    return WireframeModel("ell", [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 1.2]], ((0, 1), (0, 2)), 0.15)


def test_render_is_deterministic():
    m, cam = _camera("chiral_right")
    q = random_orientation(17)
    a = render_silhouette(m, q, cam, 40, position=(0.3, -0.2, 0.1))
    b = render_silhouette(m, q, cam, 40, position=(0.3, -0.2, 0.1))
    assert np.array_equal(a.pixels, b.pixels)
    assert a.origin_px == b.origin_px


def test_translation_parallel_to_sensor_shifts_silhouette():
    m, cam = _flat_ell(), _facing_camera()
    q = Quaternion.identity()
    base = render_silhouette(m, q, cam, 48)
    moved = render_silhouette(m, q, cam, 48, position=(0.7, 0.0, -0.3))
    assert moved.origin_px[0] - base.origin_px[0] == 7.0
    assert moved.origin_px[1] - base.origin_px[1] == 3.0
    assert np.abs(moved.pixels - base.pixels).sum() < 0.2
    assert np.allclose(centroid(moved) - centroid(base), (7.0, 3.0), atol=0.01)


def test_half_turn_about_optical_axis_flips_image():
    m, cam = _flat_ell(), _facing_camera()
    a = render_silhouette(m, Quaternion.identity(), cam, 48)
    b = render_silhouette(m, axis_angle((0, 1, 0), np.pi), cam, 48)
    assert a.origin_px == b.origin_px
    assert np.abs(b.pixels - a.pixels[::-1, ::-1]).sum() < 0.2
    assert not np.allclose(a.pixels, b.pixels), "the ell has no half-turn symmetry"


def test_oloid_silhouette_fills_hull_of_projected_circles():
    m, cam = _camera("oloid", size=80, rig="tetrahedral_4", k=1)
    q = random_orientation(23)
    img = render_silhouette(m, q, cam, 80)
    hull = ConvexHull(project_points(cam, model_points(m, q)))
    assert area(img) == pytest.approx(hull.volume, rel=0.01)
    rows, cols = np.indices(img.pixels.shape)
    centres = np.stack([cols.ravel() + 0.5 + img.origin_px[0], rows.ravel() + 0.5 + img.origin_px[1]], axis=1)
    inside = np.all(centres @ hull.equations[:, :2].T + hull.equations[:, 2] <= 0, axis=1).reshape(rows.shape)
    assert np.all(inside[img.pixels == 1.0])
    assert not np.any(inside[img.pixels == 0.0])
