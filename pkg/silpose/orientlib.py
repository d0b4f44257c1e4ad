"""Library of standard orientations used to seed the orientation fit.

Orientations are the products of a Fibonacci set of rotation axes with evenly
spaced rotation angles. Each entry holds one silhouette per camera, self
normalized (centred on its centroid, scaled to the library resolution) and
binarized, so observations of any pixel size can be ranked against it.
Entries equivalent under the particle's symmetry group are dropped.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from . import config
from .camera import CameraRig, fit_rig_to_size, rig_fingerprint
from .cost import mask_error, normalize_cutout
from .errors import FormatError, InvalidInputError, LibraryMismatchError
from .geometry import ParticleModel, bounding_radius
from .render import SilhouetteImage, render_silhouette
from .rotation import Quaternion, angles_to, fibonacci_axes, from_axis_angle
from .workers import parallel_map

log = logging.getLogger(__name__)


class Guess(NamedTuple):
    q: Quaternion
    error: float
    index: int


@dataclass(frozen=True, eq=False)
class OrientationLibrary:
    particle_type: str
    fingerprint: str
    quaternions: np.ndarray          # (N, 4)
    masks: np.ndarray                # (N, cameras, resolution, resolution) bool
    n_axes: int
    n_angles: int
    resolution: int

    def __len__(self) -> int:
        return len(self.quaternions)

    def entry(self, i: int) -> Quaternion:
        return Quaternion.from_array(self.quaternions[i])


def library_orientations(n_axes: int, n_angles: int) -> List[Quaternion]:
    """Axis x angle grid; angles sit mid-bin in (-pi, pi) so 0 and +-pi never repeat."""
    if n_axes < 1 or n_angles < 1:
        raise InvalidInputError(f"library needs >= 1 axis and angle, got {n_axes} x {n_angles}")
    out = []
    for axis in fibonacci_axes(n_axes):
        for k in range(n_angles):
            theta = -math.pi + 2.0 * math.pi * (k + 0.5) / n_angles
            out.append(from_axis_angle(axis, theta))
    return out


def dedupe(qs: Sequence[Quaternion], sym, tol: float = config.LIBRARY_DUPLICATE_TOL) -> List[Quaternion]:
    kept: List[Quaternion] = []
    arr = np.zeros((len(qs), 4))
    for q in qs:
        if kept and angles_to(q, arr[:len(kept)], sym).min() < tol:
            continue
        arr[len(kept)] = q.as_array()
        kept.append(q)
    return kept


def library_rig(m: ParticleModel, rig: CameraRig, resolution: int) -> CameraRig:
    """The rig zoomed so the particle spans about the library resolution."""
    return fit_rig_to_size(rig, bounding_radius(m), resolution, fill=1.0)


def render_entry(m: ParticleModel, q: Quaternion, rig: CameraRig, resolution: int) -> np.ndarray:
    """(cameras, resolution, resolution) normalized masks of one orientation under an already fitted rig."""
    out = []
    for cam in rig:
        img = render_silhouette(m, q, cam)
        out.append(normalize_cutout(img, resolution).pixels >= config.COST_THRESHOLD)
    return np.stack(out)


class _EntryRenderer:
    def __init__(self, m, rig, resolution):
        self.m, self.rig, self.resolution = m, rig, resolution

    def __call__(self, q: Quaternion) -> np.ndarray:
        return render_entry(self.m, q, self.rig, self.resolution)


def build_library(m: ParticleModel, rig: CameraRig, n_axes: int = config.LIBRARY_AXES,
                  n_angles: int = config.LIBRARY_ANGLES, resolution: int = config.LIBRARY_RESOLUTION,
                  workers: Optional[int] = None) -> OrientationLibrary:
    qs = dedupe(library_orientations(n_axes, n_angles), m.symmetry)
    log.info("building library type=%s entries=%d cameras=%d", m.name, len(qs), len(rig))
    masks = parallel_map(_EntryRenderer(m, library_rig(m, rig, resolution), resolution), qs, workers)
    return OrientationLibrary(
        particle_type=m.name,
        fingerprint=rig_fingerprint(rig, viewpoint_only=True),
        quaternions=np.array([q.as_array() for q in qs]),
        masks=np.stack(masks),
        n_axes=n_axes,
        n_angles=n_angles,
        resolution=resolution,
    )


def observed_masks(observed: Sequence[SilhouetteImage], resolution: int) -> List[np.ndarray]:
    return [normalize_cutout(img, resolution).pixels >= config.COST_THRESHOLD for img in observed]


def best_guesses(lib: OrientationLibrary, observed: Sequence[SilhouetteImage], rig: CameraRig,
                 k: int = config.FIRST_GUESSES) -> List[Guess]:
    """The k library orientations with the lowest total error, ascending.

    `rig` is the rig that took `observed`; it must share the library's viewpoints.
    """
    if rig_fingerprint(rig, viewpoint_only=True) != lib.fingerprint:
        raise LibraryMismatchError(f"library for {lib.particle_type} was built for a different rig")
    if len(observed) != lib.masks.shape[1]:
        raise LibraryMismatchError(f"library has {lib.masks.shape[1]} cameras, got {len(observed)} images")
    obs = observed_masks(observed, lib.resolution)
    totals = np.zeros(len(lib))
    for i in range(len(lib)):
        totals[i] = sum(mask_error(o, lib.masks[i, c]).error for c, o in enumerate(obs))
    order = np.argsort(totals, kind="stable")[:max(1, k)]
    return [Guess(lib.entry(int(i)), float(totals[i]), int(i)) for i in order]


# Persistence

def library_path(cache_dir: str | Path, particle_type: str, fingerprint: str) -> Path:
    return Path(cache_dir) / f"library_{particle_type}_{fingerprint[:16]}.npz"


def save_library(lib: OrientationLibrary, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez_compressed(
            fh,
            format_version=np.int64(config.FORMAT_VERSION),
            particle_type=np.str_(lib.particle_type),
            fingerprint=np.str_(lib.fingerprint),
            params=np.array([lib.n_axes, lib.n_angles, lib.resolution], dtype=np.int64),
            quaternions=lib.quaternions,
            mask_shape=np.array(lib.masks.shape, dtype=np.int64),
            masks=np.packbits(lib.masks.reshape(-1)),
        )


def load_library(path: str | Path) -> OrientationLibrary:
    path = Path(path)
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise FormatError(path, "file", str(exc)) from exc
    with data:
        for key in ("format_version", "particle_type", "fingerprint", "params", "quaternions", "mask_shape", "masks"):
            if key not in data.files:
                raise FormatError(path, key, "missing array")
        if int(data["format_version"]) != config.FORMAT_VERSION:
            raise FormatError(path, "format_version", f"unsupported version {int(data['format_version'])}")
        shape = tuple(int(s) for s in data["mask_shape"])
        n = int(np.prod(shape))
        masks = np.unpackbits(data["masks"], count=n).astype(bool).reshape(shape)
        n_axes, n_angles, resolution = (int(v) for v in data["params"])
        quats = np.array(data["quaternions"], dtype=np.float64)
        if len(quats) != shape[0]:
            raise FormatError(path, "quaternions", f"{len(quats)} orientations for {shape[0]} mask entries")
        return OrientationLibrary(str(data["particle_type"]), str(data["fingerprint"]), quats, masks,
                                  n_axes, n_angles, resolution)


def load_or_build(m: ParticleModel, rig: CameraRig, cache_dir: Optional[str | Path] = config.LIBRARY_CACHE_DIR,
                  n_axes: int = config.LIBRARY_AXES, n_angles: int = config.LIBRARY_ANGLES,
                  resolution: int = config.LIBRARY_RESOLUTION, workers: Optional[int] = None) -> OrientationLibrary:
    """Cached library for (particle type, rig); rebuilt when the parameters or rig differ."""
    fp = rig_fingerprint(rig, viewpoint_only=True)
    path = library_path(cache_dir, m.name, fp) if cache_dir is not None else None
    if path is not None and path.exists():
        try:
            lib = load_library(path)
        except FormatError as exc:
            log.warning("library cache unreadable, rebuilding: %s", exc)
        else:
            if (lib.fingerprint, lib.particle_type, lib.n_axes, lib.n_angles, lib.resolution) == \
                    (fp, m.name, n_axes, n_angles, resolution):
                log.debug("library cache hit path=%s", path)
                return lib
            log.info("library cache stale path=%s", path)
    lib = build_library(m, rig, n_axes, n_angles, resolution, workers)
    if path is not None:
        save_library(lib, path)
    return lib
