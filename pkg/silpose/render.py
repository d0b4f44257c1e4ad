"""Anti-aliased synthetic silhouettes and the raster helpers shared by cost and track.

A silhouette is rendered in binary at SUPERSAMPLE times the output size and then
box-downsampled, so edge pixels carry the covered fraction of their area.
Wireframe tubes are filled capsules whose pixel radius comes from the tube
radius at the depth of the edge midpoint; oloids are the filled convex hull of
their projected circle samples.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import config
from .camera import CameraModel, depth, project_point, project_points
from .errors import EmptyImageError, InvalidInputError, RenderError
from .geometry import OloidModel, ParticleModel, bounding_radius, model_points
from .rotation import Quaternion

log = logging.getLogger(__name__)

Window = Tuple[int, int, int, int]   # x0, y0, width, height in sensor pixels


@dataclass(frozen=True, eq=False)
class SilhouetteImage:
    pixels: np.ndarray                  # (height, width), 1 = particle
    origin_px: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        p = np.array(self.pixels, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise InvalidInputError(f"silhouette needs a non-empty 2D raster, got shape {p.shape}")
        if p.min() < 0.0 or p.max() > 1.0:
            raise InvalidInputError(f"pixel values must lie in [0, 1], got [{p.min()}, {p.max()}]")
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)
        object.__setattr__(self, "origin_px", (float(self.origin_px[0]), float(self.origin_px[1])))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def with_pixels(self, pixels: np.ndarray) -> "SilhouetteImage":
        return SilhouetteImage(pixels, self.origin_px)


def area(img: SilhouetteImage) -> float:
    return float(img.pixels.sum())


def centroid(img: SilhouetteImage, local: bool = False) -> np.ndarray:
    """Intensity-weighted centroid (u, v); sensor coordinates unless local."""
    p = img.pixels
    total = p.sum()
    if total <= 0:
        raise EmptyImageError("centroid of an empty image")
    u = float((p.sum(axis=0) * (np.arange(img.width) + 0.5)).sum() / total)
    v = float((p.sum(axis=1) * (np.arange(img.height) + 0.5)).sum() / total)
    if local:
        return np.array([u, v])
    return np.array([u + img.origin_px[0], v + img.origin_px[1]])


def bbox(img: SilhouetteImage, threshold: float = 0.0) -> Tuple[int, int, int, int]:
    """(col0, row0, col1, row1), half-open, of pixels above threshold in local coordinates."""
    mask = img.pixels > threshold
    if not mask.any():
        raise EmptyImageError("bounding box of an empty image")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


def binarize(img: SilhouetteImage, threshold: float = config.COST_THRESHOLD) -> SilhouetteImage:
    return img.with_pixels((img.pixels >= threshold).astype(np.float64))


def _overlap_matrix(n_src: int, start: float, length: float, n_out: int) -> np.ndarray:
    """(n_out, n_src) weights of source pixels [i, i+1) inside each output bin."""
    step = length / n_out
    lo = start + step * np.arange(n_out)[:, None]
    hi = lo + step
    i = np.arange(n_src)[None, :]
    ov = np.clip(np.minimum(hi, i + 1.0) - np.maximum(lo, i), 0.0, None)
    return ov / step


def resample_window(img: SilhouetteImage, x0: float, y0: float, width: float, height: float,
                    out_w: int, out_h: int) -> SilhouetteImage:
    """Area-weighted box resampling of a local-coordinate window; outside pixels count as 0."""
    if out_w < 1 or out_h < 1:
        raise InvalidInputError(f"target size must be >= 1, got {out_w}x{out_h}")
    if width <= 0 or height <= 0:
        raise InvalidInputError(f"window must have positive extent, got {width}x{height}")
    wr = _overlap_matrix(img.height, y0, height, out_h)
    wc = _overlap_matrix(img.width, x0, width, out_w)
    out = np.clip(wr @ img.pixels @ wc.T, 0.0, 1.0)
    origin = (img.origin_px[0] + x0, img.origin_px[1] + y0)
    return SilhouetteImage(out, origin)


def resize_box(img: SilhouetteImage, out_size) -> SilhouetteImage:
    out_w, out_h = (out_size, out_size) if isinstance(out_size, (int, np.integer)) else out_size
    if out_w < 1 or out_h < 1:
        raise InvalidInputError(f"target size must be >= 1, got {out_size}")
    if (out_w, out_h) == (img.width, img.height):
        return img
    return resample_window(img, 0.0, 0.0, img.width, img.height, int(out_w), int(out_h))


def _sample_axis(start: int, n: int, s: int) -> np.ndarray:
    return start + (np.arange(n * s) + 0.5) / s


def _rasterize_capsules(ends: np.ndarray, radii: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    mask = np.zeros((len(ys), len(xs)), dtype=bool)
    step = xs[1] - xs[0] if len(xs) > 1 else 1.0
    for (p, q), r in zip(ends, radii):
        lo = np.minimum(p, q) - r
        hi = np.maximum(p, q) + r
        c0, c1 = np.searchsorted(xs, lo[0] - step), np.searchsorted(xs, hi[0] + step)
        r0, r1 = np.searchsorted(ys, lo[1] - step), np.searchsorted(ys, hi[1] + step)
        if c0 >= c1 or r0 >= r1:
            continue
        X = xs[None, c0:c1]
        Y = ys[r0:r1, None]
        v = q - p
        l2 = float(v @ v)
        if l2 > 0:
            t = np.clip(((X - p[0]) * v[0] + (Y - p[1]) * v[1]) / l2, 0.0, 1.0)
        else:
            t = np.zeros((1, 1))
        dx = X - (p[0] + t * v[0])
        dy = Y - (p[1] + t * v[1])
        mask[r0:r1, c0:c1] |= dx * dx + dy * dy <= r * r
    return mask


def _rasterize_hull(pts: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise RenderError(f"degenerate oloid projection: {exc}") from exc
    mask = np.zeros((len(ys), len(xs)), dtype=bool)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    c0, c1 = np.searchsorted(xs, lo[0]), np.searchsorted(xs, hi[0], side="right")
    r0, r1 = np.searchsorted(ys, lo[1]), np.searchsorted(ys, hi[1], side="right")
    if c0 >= c1 or r0 >= r1:
        return mask
    X = xs[None, c0:c1]
    Y = ys[r0:r1, None]
    inside = np.ones((r1 - r0, c1 - c0), dtype=bool)
    for a, b, c in hull.equations:
        inside &= a * X + b * Y + c <= 1e-12
    mask[r0:r1, c0:c1] = inside
    return mask


def window_size(m: ParticleModel, cam: CameraModel, position=(0.0, 0.0, 0.0)) -> int:
    """Square window side that holds the whole silhouette around its projected COM."""
    r = bounding_radius(m)
    d = depth(cam, position) - r
    if d <= 0:
        raise RenderError("particle intersects the camera plane")
    return 2 * int(math.ceil(cam.focal_length * r / d)) + 2 * config.RENDER_MARGIN_PX


def render_silhouette(m: ParticleModel, q: Quaternion, cam: CameraModel, out_size: Optional[int] = None,
                      position: Sequence[float] = (0.0, 0.0, 0.0), window: Optional[Window] = None,
                      supersample: int = config.SUPERSAMPLE) -> SilhouetteImage:
    """Render m at orientation q with its COM at `position`.

    Without an explicit window the output is an out_size x out_size crop of the
    sensor grid centred on the projected COM; origin_px is its top-left corner.
    """
    if window is None:
        if out_size is None:
            out_size = window_size(m, cam, position)
        if out_size < 1:
            raise InvalidInputError(f"out_size must be >= 1, got {out_size}")
        uc, vc = project_point(cam, position)
        window = (int(math.floor(uc - out_size / 2.0 + 0.5)), int(math.floor(vc - out_size / 2.0 + 0.5)),
                  int(out_size), int(out_size))
    x0, y0, w, h = window
    s = int(supersample)
    xs = _sample_axis(x0, w, s)
    ys = _sample_axis(y0, h, s)
    world = model_points(m, q, position)
    if isinstance(m, OloidModel):
        mask = _rasterize_hull(project_points(cam, world), xs, ys)
    else:
        uv = project_points(cam, world)
        edges = np.array(m.edges)
        ends = np.stack([uv[edges[:, 0]], uv[edges[:, 1]]], axis=1)
        mids = 0.5 * (world[edges[:, 0]] + world[edges[:, 1]])
        radii = cam.focal_length * m.tube_radius / ((mids - cam.position) @ cam.view_direction)
        mask = _rasterize_capsules(ends, radii, xs, ys)
    if not mask.any():
        raise RenderError(f"{m.name}: silhouette has zero extent in window {window}")
    pixels = mask.reshape(h, s, w, s).mean(axis=(1, 3))
    return SilhouetteImage(pixels, (float(x0), float(y0)))


def render_frame(cam: CameraModel, placements: Sequence[Tuple[ParticleModel, Quaternion, Sequence[float]]],
                 sensor_size: Optional[Tuple[int, int]] = None) -> SilhouetteImage:
    """Full-sensor raster of several particles; overlapping silhouettes take the max."""
    w, h = sensor_size or cam.sensor_size
    canvas = np.zeros((h, w))
    for m, q, pos in placements:
        try:
            img = render_silhouette(m, q, cam, position=pos)
        except RenderError:
            log.debug("particle %s outside the render window, skipped", m.name)
            continue
        x0, y0 = int(img.origin_px[0]), int(img.origin_px[1])
        cx0, cy0 = max(x0, 0), max(y0, 0)
        cx1, cy1 = min(x0 + img.width, w), min(y0 + img.height, h)
        if cx0 >= cx1 or cy0 >= cy1:
            continue
        patch = img.pixels[cy0 - y0:cy1 - y0, cx0 - x0:cx1 - x0]
        canvas[cy0:cy1, cx0:cx1] = np.maximum(canvas[cy0:cy1, cx0:cx1], patch)
    return SilhouetteImage(canvas)


def crop(img: SilhouetteImage, col0: int, row0: int, col1: int, row1: int) -> SilhouetteImage:
    """Integer crop in local coordinates, zero padded where it leaves the image."""
    out = np.zeros((row1 - row0, col1 - col0))
    sc0, sr0 = max(col0, 0), max(row0, 0)
    sc1, sr1 = min(col1, img.width), min(row1, img.height)
    if sc0 < sc1 and sr0 < sr1:
        out[sr0 - row0:sr1 - row0, sc0 - col0:sc1 - col0] = img.pixels[sr0:sr1, sc0:sc1]
    return SilhouetteImage(out, (img.origin_px[0] + col0, img.origin_px[1] + row0))
