"""Pinhole cameras, rays, triangulation and the preset camera arrangements.

Pixel convention: pixel (col i, row j) covers [i, i+1) x [j, j+1). The camera
frame has z along the viewing direction, y pointing down the sensor (-up) and
x = y cross z, so u grows to the right and v grows downwards.

Calibrations are taken as effective straight-ray pinhole parameters; no lens
distortion and no refraction at tank walls.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .errors import DegenerateError, FormatError, InvalidInputError, ProjectionError

log = logging.getLogger(__name__)

PRESETS = ("near_planar_4", "orthogonal_2", "orthogonal_3", "tetrahedral_4", "single")
_ORTHO_TOL = 1e-9


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    n = np.linalg.norm(v)
    if n < 1e-15:
        raise InvalidInputError("zero-length direction")
    return v / n


@dataclass(frozen=True, eq=False)
class CameraModel:
    position: np.ndarray
    view_direction: np.ndarray
    up: np.ndarray
    focal_length: float
    principal_point: np.ndarray
    sensor_size: Tuple[int, int]

    def __post_init__(self):
        pos = np.array(self.position, dtype=np.float64).reshape(3)
        view = _unit(self.view_direction)
        up = _unit(self.up)
        if abs(float(view @ up)) > _ORTHO_TOL:
            raise InvalidInputError(f"view_direction and up are not orthogonal (dot={float(view @ up):.3g})")
        if not self.focal_length > 0:
            raise InvalidInputError(f"focal_length must be > 0, got {self.focal_length}")
        pp = np.array(self.principal_point, dtype=np.float64).reshape(2)
        for name, arr in (("position", pos), ("view_direction", view), ("up", up), ("principal_point", pp)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "focal_length", float(self.focal_length))
        object.__setattr__(self, "sensor_size", (int(self.sensor_size[0]), int(self.sensor_size[1])))

    @property
    def axes(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        z = self.view_direction
        y = -self.up
        x = np.cross(y, z)
        return x, y, z

    def scaled(self, focal_factor: float) -> "CameraModel":
        return CameraModel(self.position, self.view_direction, self.up,
                           self.focal_length * focal_factor, self.principal_point, self.sensor_size)

    def to_dict(self) -> dict:
        return {
            "position": self.position.tolist(),
            "view_direction": self.view_direction.tolist(),
            "up": self.up.tolist(),
            "focal_length": self.focal_length,
            "principal_point": self.principal_point.tolist(),
            "sensor_size": list(self.sensor_size),
        }


def look_at(position, target=(0.0, 0.0, 0.0), up_hint=(0.0, 0.0, 1.0),
            focal_length: float = config.RIG_FOCAL_LENGTH,
            sensor_size: Tuple[int, int] = config.RIG_SENSOR_SIZE) -> CameraModel:
    position = np.asarray(position, dtype=np.float64)
    view = _unit(np.asarray(target, dtype=np.float64) - position)
    hint = np.asarray(up_hint, dtype=np.float64)
    if abs(float(_unit(hint) @ view)) > 0.99:
        hint = np.array([0.0, 1.0, 0.0]) if abs(view[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    up = _unit(hint - (hint @ view) * view)
    pp = (sensor_size[0] / 2.0, sensor_size[1] / 2.0)
    return CameraModel(position, view, up, focal_length, pp, sensor_size)


@dataclass(frozen=True, eq=False)
class CameraRig:
    cameras: Tuple[CameraModel, ...]
    name: str = "custom"

    def __post_init__(self):
        cams = tuple(self.cameras)
        if not cams:
            raise InvalidInputError("a camera rig needs at least one camera")
        object.__setattr__(self, "cameras", cams)

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self) -> Iterator[CameraModel]:
        return iter(self.cameras)

    def __getitem__(self, i: int) -> CameraModel:
        return self.cameras[i]


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.array(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "direction", _unit(self.direction))

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction

    def distance_to(self, p) -> float:
        d = np.asarray(p, dtype=np.float64) - self.origin
        return float(np.linalg.norm(d - (d @ self.direction) * self.direction))


@dataclass(frozen=True)
class Match:
    indices: Tuple[int, ...]      # centroid index per camera
    point: np.ndarray
    rms_gap: float


def depth(cam: CameraModel, p) -> float:
    return float((np.asarray(p, dtype=np.float64) - cam.position) @ cam.view_direction)


def project_points(cam: CameraModel, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    x, y, z = cam.axes
    d = pts - cam.position
    zc = d @ z
    if np.any(zc <= 1e-12):
        raise ProjectionError(f"{int(np.sum(zc <= 1e-12))} point(s) at or behind the camera plane")
    u = cam.focal_length * (d @ x) / zc + cam.principal_point[0]
    v = cam.focal_length * (d @ y) / zc + cam.principal_point[1]
    return np.stack([u, v], axis=1)


def project_point(cam: CameraModel, p) -> np.ndarray:
    return project_points(cam, p)[0]


def back_project(cam: CameraModel, px) -> Ray:
    u, v = float(px[0]), float(px[1])
    x, y, z = cam.axes
    d = ((u - cam.principal_point[0]) / cam.focal_length) * x \
        + ((v - cam.principal_point[1]) / cam.focal_length) * y + z
    return Ray(cam.position, d)


def triangulate(rays: Sequence[Ray]) -> Tuple[np.ndarray, float]:
    """Least-squares closest point to all rays and the rms point-to-ray distance."""
    if len(rays) < 2:
        raise DegenerateError(f"triangulation needs >= 2 rays, got {len(rays)}")
    dirs = np.array([r.direction for r in rays])
    if _all_parallel(dirs):
        raise DegenerateError("rays are parallel")
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for r in rays:
        m = np.eye(3) - np.outer(r.direction, r.direction)
        a += m
        b += m @ r.origin
    point = np.linalg.solve(a, b)
    gaps = np.array([r.distance_to(point) for r in rays])
    return point, float(np.sqrt(np.mean(gaps ** 2)))


def _all_parallel(dirs: np.ndarray) -> bool:
    c = np.clip(np.abs(dirs @ dirs.T), 0.0, 1.0)
    return bool(np.all(np.sqrt(1.0 - c ** 2) < config.PARALLEL_RAY_TOL))


def locate(rig: CameraRig, pixels: Sequence[Sequence[float]], depth_hint: Optional[float] = None) -> Tuple[np.ndarray, float]:
    """Triangulate one pixel per camera; single-camera rigs use the depth hint."""
    rays = [back_project(cam, px) for cam, px in zip(rig, pixels)]
    if len(rays) >= 2:
        return triangulate(rays)
    cam = rig[0]
    dist = depth_hint if depth_hint is not None else float(np.linalg.norm(cam.position))
    r = rays[0]
    # point on the ray at the requested depth along the optical axis
    t = dist / float(r.direction @ cam.view_direction)
    return r.at(t), 0.0


def _direction_camera(d, up_hint=(0.0, 0.0, 1.0), distance=config.RIG_WORKING_DISTANCE) -> CameraModel:
    d = _unit(d)
    return look_at(d * distance, (0.0, 0.0, 0.0), up_hint)


def preset_rig(name: str, distance: float = config.RIG_WORKING_DISTANCE) -> CameraRig:
    """Camera arrangements of the robustness studies, all aimed at the origin."""
    if name == "single":
        dirs = [(0.0, -1.0, 0.0)]
    elif name == "orthogonal_2":
        dirs = [(0.0, -1.0, 0.0), (1.0, 0.0, 0.0)]
    elif name == "orthogonal_3":
        dirs = [(0.0, -1.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0)]
    elif name == "tetrahedral_4":
        dirs = [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)]
    elif name == "near_planar_4":
        dirs = []
        for az, el in zip(config.NEAR_PLANAR_AZIMUTHS, config.NEAR_PLANAR_ELEVATIONS):
            a, e = math.radians(az), math.radians(el)
            dirs.append((math.cos(e) * math.sin(a), -math.cos(e) * math.cos(a), math.sin(e)))
    else:
        raise InvalidInputError(f"unknown rig preset {name!r}; expected one of {', '.join(PRESETS)}")
    cams = []
    for d in dirs:
        hint = (0.0, 1.0, 0.0) if abs(d[2]) > 0.9 else (0.0, 0.0, 1.0)
        cams.append(_direction_camera(d, hint, distance))
    return CameraRig(tuple(cams), name)


def subset(rig: CameraRig, indices: Sequence[int]) -> CameraRig:
    return CameraRig(tuple(rig[i] for i in indices), f"{rig.name}[{','.join(str(i) for i in indices)}]")


def fit_rig_to_size(rig: CameraRig, radius: float, image_size: int, fill: float = config.BENCH_FILL) -> CameraRig:
    """Zoom every camera so a sphere of `radius` at the origin spans fill*image_size px."""
    cams = []
    for cam in rig:
        dist = float(np.linalg.norm(cam.position))
        target_f = fill * image_size * dist / (2.0 * radius)
        cams.append(cam.scaled(target_f / cam.focal_length))
    return CameraRig(tuple(cams), rig.name)


def rig_fingerprint(rig: CameraRig, viewpoint_only: bool = False) -> str:
    """SHA-256 over the rounded camera parameters.

    With viewpoint_only the focal length, principal point and sensor size are
    left out: they scale or shift an image without changing the view.
    """
    cams = [c.to_dict() for c in rig]
    if viewpoint_only:
        cams = [{k: d[k] for k in ("position", "view_direction", "up")} for d in cams]
    payload = json.dumps([_rounded(d) for d in cams], sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _rounded(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, list):
            out[k] = [round(float(x), 9) for x in v]
        else:
            out[k] = round(float(v), 9)
    return out


def save_rig(rig: CameraRig, path: str | Path) -> None:
    data = {"format_version": config.FORMAT_VERSION, "name": rig.name, "cameras": [c.to_dict() for c in rig]}
    Path(path).write_text(json.dumps(data, indent=2))


def load_rig(path: str | Path) -> CameraRig:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(p, f"line {exc.lineno}", exc.msg) from exc
    except OSError as exc:
        raise FormatError(p, "file", str(exc)) from exc
    if data.get("format_version") != config.FORMAT_VERSION:
        raise FormatError(p, "format_version", f"unsupported version {data.get('format_version')!r}")
    cams = []
    for k, rec in enumerate(data.get("cameras") or []):
        try:
            cams.append(CameraModel(rec["position"], rec["view_direction"], rec["up"], rec["focal_length"],
                                    rec["principal_point"], tuple(rec["sensor_size"])))
        except KeyError as exc:
            raise FormatError(p, f"cameras[{k}]", f"missing field {exc.args[0]}") from exc
        except (InvalidInputError, TypeError, ValueError) as exc:
            raise FormatError(p, f"cameras[{k}]", str(exc)) from exc
    if not cams:
        raise FormatError(p, "cameras", "no camera records")
    return CameraRig(tuple(cams), data.get("name", p.stem))


def resolve_rig(spec: str) -> CameraRig:
    if spec in PRESETS:
        return preset_rig(spec)
    return load_rig(spec)


# Centroid matching

def candidate_matches(rig: CameraRig, per_camera_centroids: Sequence[Sequence[Sequence[float]]],
                      gap_tol: float) -> List[Match]:
    """Every camera tuple whose triangulated rms gap is within gap_tol."""
    if len(per_camera_centroids) != len(rig):
        raise InvalidInputError(f"expected {len(rig)} centroid lists, got {len(per_camera_centroids)}")
    counts = [len(c) for c in per_camera_centroids]
    if min(counts) == 0:
        return []
    rays = [[back_project(cam, c) for c in cents] for cam, cents in zip(rig, per_camera_centroids)]
    if len(rig) == 1:
        out = []
        for i, c in enumerate(per_camera_centroids[0]):
            point, _ = locate(rig, [c])
            out.append(Match((i,), point, 0.0))
        return out
    if math.prod(counts) <= config.MATCH_EXHAUSTIVE_LIMIT:
        tuples = itertools.product(*[range(n) for n in counts])
    else:
        log.debug("pair-seeded matching, %d candidate tuples", math.prod(counts))
        tuples = _pair_seeded_tuples(rig, per_camera_centroids, rays, gap_tol)
    out = []
    for idx in tuples:
        try:
            point, gap = triangulate([rays[k][i] for k, i in enumerate(idx)])
        except DegenerateError:
            continue
        if gap <= gap_tol:
            out.append(Match(tuple(idx), point, gap))
    return out


def _pair_seeded_tuples(rig, cents, rays, gap_tol):
    seen = set()
    for i0, r0 in enumerate(rays[0]):
        for i1, r1 in enumerate(rays[1]):
            try:
                p, gap = triangulate([r0, r1])
            except DegenerateError:
                continue
            if gap > gap_tol:
                continue
            idx = [i0, i1]
            for k in range(2, len(rig)):
                cam = rig[k]
                try:
                    px = project_point(cam, p)
                except ProjectionError:
                    break
                tol = config.MATCH_PIXEL_TOL + 2.0 * cam.focal_length * gap_tol / max(depth(cam, p), 1e-9)
                dists = np.linalg.norm(np.asarray(cents[k], dtype=np.float64) - px, axis=1)
                j = int(np.argmin(dists))
                if dists[j] > tol:
                    break
                idx.append(j)
            else:
                t = tuple(idx)
                if t not in seen:
                    seen.add(t)
                    yield t


def select_matches(candidates: Sequence[Match]) -> List[Match]:
    """Greedy minimum-gap selection; every centroid is used at most once."""
    used: List[set] = []
    chosen = []
    for m in sorted(candidates, key=lambda m: (m.rms_gap, m.indices)):
        if not used:
            used = [set() for _ in m.indices]
        if any(i in used[k] for k, i in enumerate(m.indices)):
            continue
        for k, i in enumerate(m.indices):
            used[k].add(i)
        chosen.append(m)
    return chosen


def match_centroids(rig: CameraRig, per_camera_centroids, gap_tol: float = config.MATCH_GAP_TOL) -> List[Match]:
    return select_matches(candidate_matches(rig, per_camera_centroids, gap_tol))
