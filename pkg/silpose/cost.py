"""Silhouette mismatch error and its sum over the cameras of a rig.

For two binarized images the overlap O = I1 & I2 and union U = I1 | I2 are
formed, D is the Euclidean distance of every pixel to the nearest overlap
pixel, and the error is sum(U * D) / (H * W). Identical silhouettes score 0;
every union pixel outside the overlap adds its distance to it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Tuple

import numpy as np
from scipy import ndimage

from . import config
from .camera import CameraRig
from .errors import EmptyImageError, InvalidInputError
from .geometry import ParticleModel
from .render import SilhouetteImage, bbox, binarize, centroid, render_silhouette, resample_window, resize_box
from .rotation import Quaternion

log = logging.getLogger(__name__)


class DistanceField(NamedTuple):
    distances: np.ndarray
    empty: bool                 # no foreground pixel; distances are all inf


@dataclass(frozen=True)
class SilhouetteCost:
    error: float
    disjoint: bool = False


@dataclass(frozen=True)
class CostBreakdown:
    per_camera: Tuple[float, ...]
    total: float
    disjoint: Tuple[int, ...] = field(default=())     # camera indices that took the penalty path


def _mask(img) -> np.ndarray:
    p = img.pixels if isinstance(img, SilhouetteImage) else np.asarray(img)
    return p >= 0.5


def distance_transform(binary) -> DistanceField:
    """Exact Euclidean distance from every pixel to the nearest value-1 pixel."""
    fg = _mask(binary)
    if not fg.any():
        return DistanceField(np.full(fg.shape, np.inf), True)
    return DistanceField(ndimage.distance_transform_edt(~fg), False)


def mask_error(b1: np.ndarray, b2: np.ndarray) -> SilhouetteCost:
    """The error for two boolean masks of equal shape."""
    if b1.shape != b2.shape:
        raise InvalidInputError(f"mask shapes differ: {b1.shape} vs {b2.shape}")
    if not b1.any() or not b2.any():
        raise EmptyImageError("silhouette is empty after binarization")
    h, w = b1.shape
    overlap = b1 & b2
    union = b1 | b2
    if not overlap.any():
        # every union pixel counted one image side (the resolution) away
        penalty = float(max(h, w))
        return SilhouetteCost(penalty * float(union.sum()) / (h * w), True)
    d = ndimage.distance_transform_edt(~overlap)
    return SilhouetteCost(float(d[union].sum()) / (h * w), False)


def silhouette_error(i1: SilhouetteImage, i2: SilhouetteImage, resolution: int = config.COST_RESOLUTION,
                     threshold: float = config.COST_THRESHOLD) -> SilhouetteCost:
    a = binarize(resize_box(i1, resolution), threshold).pixels > 0
    b = binarize(resize_box(i2, resolution), threshold).pixels > 0
    return mask_error(a, b)


def _extent(img: SilhouetteImage, c: np.ndarray) -> float:
    """Largest distance from a local centroid to the silhouette bounding box edges."""
    c0, r0, c1, r1 = bbox(img, 1e-9)
    return float(max(c[0] - c0, c1 - c[0], c[1] - r0, r1 - c[1]))


def normalize_cutout(img: SilhouetteImage, resolution: int = config.COST_RESOLUTION,
                     pad: float = config.CUTOUT_PAD) -> SilhouetteImage:
    """Square window around the centroid, just holding the silhouette, resampled to resolution."""
    c = centroid(img, local=True)
    half = _extent(img, c) * (1.0 + pad)
    return resample_window(img, c[0] - half, c[1] - half, 2 * half, 2 * half, resolution, resolution)


def align_pair(a: SilhouetteImage, b: SilhouetteImage, resolution: int = config.COST_RESOLUTION,
               pad: float = config.CUTOUT_PAD) -> Tuple[SilhouetteImage, SilhouetteImage]:
    """Both images resampled by one shared window size, each centred on its own centroid.

    The images must share a pixel scale; the apparent size difference survives.
    """
    ca = centroid(a, local=True)
    cb = centroid(b, local=True)
    half = max(_extent(a, ca), _extent(b, cb)) * (1.0 + pad)
    side = 2 * half
    return (resample_window(a, ca[0] - half, ca[1] - half, side, side, resolution, resolution),
            resample_window(b, cb[0] - half, cb[1] - half, side, side, resolution, resolution))


def rig_error(m: ParticleModel, q: Quaternion, rig: CameraRig, observed: Sequence[SilhouetteImage],
              position: Sequence[float] = (0.0, 0.0, 0.0), resolution: int = config.COST_RESOLUTION,
              threshold: float = config.COST_THRESHOLD) -> CostBreakdown:
    """Render m at q for every camera and sum the per-camera errors against the observations."""
    if len(observed) != len(rig):
        raise InvalidInputError(f"expected {len(rig)} observed images, got {len(observed)}")
    per_camera = []
    disjoint = []
    for k, (cam, obs) in enumerate(zip(rig, observed)):
        syn = render_silhouette(m, q, cam, position=position)
        a, b = align_pair(obs, syn, resolution)
        sc = silhouette_error(a, b, resolution, threshold)
        per_camera.append(sc.error)
        if sc.disjoint:
            disjoint.append(k)
    return CostBreakdown(tuple(per_camera), float(sum(per_camera)), tuple(disjoint))
