"""Particle models in their reference orientation.

Two kinds of body are supported: wireframes (tubes of constant radius drawn
between vertex pairs; the chiral particles and the tetrad) and oloids (the
convex hull of two perpendicular circles). Models are immutable; rotating one
returns a new model.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np

from . import config
from .errors import FormatError, InvalidInputError
from .rotation import (
    PurePoint,
    Quaternion,
    SymmetryGroup,
    cyclic_group,
    group_from_arrays,
    oloid_group,
    rotate_points,
    tetrahedral_group,
)

BUILTIN_KINDS = ("chiral_left", "chiral_right", "tetrad", "oloid")


@dataclass(frozen=True, eq=False)
class WireframeModel:
    name: str
    vertices: np.ndarray                 # (N, 3) model units
    edges: Tuple[Tuple[int, int], ...]
    tube_radius: float
    com: np.ndarray = None               # length-weighted centroid when omitted
    symmetry: SymmetryGroup = field(default_factory=SymmetryGroup.identity)

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        verts.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        if not edges:
            raise InvalidInputError(f"model {self.name!r} needs at least one edge")
        for k, (a, b) in enumerate(edges):
            for idx in (a, b):
                if not 0 <= idx < len(verts):
                    raise InvalidInputError(
                        f"edges[{k}]: vertex index {idx} out of range for {len(verts)} vertices")
        if not self.tube_radius > 0:
            raise InvalidInputError(f"tube_radius must be > 0, got {self.tube_radius}")
        com = wireframe_com(verts, edges) if self.com is None else np.array(self.com, dtype=np.float64).reshape(3)
        com.setflags(write=False)
        object.__setattr__(self, "com", com)

    @property
    def points(self) -> Tuple[PurePoint, ...]:
        return tuple(PurePoint(*v) for v in self.vertices)

    def segments(self) -> np.ndarray:
        """(E, 2, 3) edge end points."""
        idx = np.array(self.edges)
        return self.vertices[idx]

    def equals(self, other, tol: float = 1e-12) -> bool:
        return (isinstance(other, WireframeModel) and self.name == other.name
                and self.edges == other.edges
                and self.vertices.shape == other.vertices.shape
                and np.allclose(self.vertices, other.vertices, atol=tol, rtol=0)
                and np.allclose(self.com, other.com, atol=tol, rtol=0)
                and abs(self.tube_radius - other.tube_radius) <= tol
                and len(self.symmetry) == len(other.symmetry))


@dataclass(frozen=True, eq=False)
class OloidModel:
    circle_radius: float
    samples_per_circle: int = config.OLOID_SAMPLES_PER_CIRCLE
    com: np.ndarray = None
    symmetry: SymmetryGroup = field(default_factory=SymmetryGroup.identity)
    orientation: Quaternion = field(default_factory=Quaternion.identity)
    name: str = "oloid"

    def __post_init__(self):
        if not self.circle_radius > 0:
            raise InvalidInputError(f"circle_radius must be > 0, got {self.circle_radius}")
        if self.samples_per_circle < config.OLOID_MIN_SAMPLES:
            raise InvalidInputError(
                f"samples_per_circle must be >= {config.OLOID_MIN_SAMPLES}, got {self.samples_per_circle}")
        com = np.zeros(3) if self.com is None else np.array(self.com, dtype=np.float64).reshape(3)
        com.setflags(write=False)
        object.__setattr__(self, "com", com)

    def circle_points(self) -> np.ndarray:
        """(2*samples, 3) points on both generating circles, current orientation.

        Circle A lies in the xy plane centred at (-r/2, 0, 0), circle B in the xz
        plane centred at (r/2, 0, 0); each passes through the other's centre.
        """
        r = self.circle_radius
        t = np.linspace(0.0, 2.0 * math.pi, self.samples_per_circle, endpoint=False)
        a = np.stack([-r / 2 + r * np.cos(t), r * np.sin(t), np.zeros_like(t)], axis=1)
        b = np.stack([r / 2 + r * np.cos(t), np.zeros_like(t), r * np.sin(t)], axis=1)
        return rotate_points(self.orientation, np.concatenate([a, b])) + self.com

    def equals(self, other, tol: float = 1e-12) -> bool:
        return (isinstance(other, OloidModel)
                and abs(self.circle_radius - other.circle_radius) <= tol
                and self.samples_per_circle == other.samples_per_circle
                and np.allclose(self.com, other.com, atol=tol, rtol=0))


ParticleModel = Union[WireframeModel, OloidModel]


def wireframe_com(vertices: np.ndarray, edges: Sequence[Tuple[int, int]]) -> np.ndarray:
    """Uniform line density: length-weighted centroid of the edge midpoints."""
    segs = np.asarray(vertices)[np.array(edges)]
    lengths = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
    mids = segs.mean(axis=1)
    if lengths.sum() <= 0:
        return mids.mean(axis=0)
    return (mids * lengths[:, None]).sum(axis=0) / lengths.sum()


def shape_points(m: ParticleModel) -> np.ndarray:
    """Vertices or circle samples in model coordinates."""
    if isinstance(m, OloidModel):
        return m.circle_points()
    return m.vertices


def model_points(m: ParticleModel, q: Quaternion, position: Sequence[float] = (0.0, 0.0, 0.0)) -> np.ndarray:
    """World coordinates of the shape points with the COM placed at `position`."""
    pts = shape_points(m) - m.com
    return rotate_points(q, pts) + np.asarray(position, dtype=np.float64)


def rotate_model(m: ParticleModel, q: Quaternion) -> ParticleModel:
    com = rotate_points(q, m.com[None, :])[0]
    if isinstance(m, OloidModel):
        return OloidModel(m.circle_radius, m.samples_per_circle, com, m.symmetry, q * m.orientation, m.name)
    return WireframeModel(m.name, rotate_points(q, m.vertices), m.edges, m.tube_radius, com, m.symmetry)


def bounding_radius(m: ParticleModel) -> float:
    """Largest distance from the COM to the body surface."""
    d = np.linalg.norm(shape_points(m) - m.com, axis=1).max()
    if isinstance(m, WireframeModel):
        d += m.tube_radius
    return float(d)


def arm_length(m: ParticleModel) -> float:
    if isinstance(m, OloidModel):
        return float(m.circle_radius)
    segs = m.segments()
    return float(np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1).mean())


def chiral_vertices(handed: str) -> np.ndarray:
    """Shaft along z with one arm at each end, twisted +-arm_angle around the shaft.

    The right-handed arms turn counter-clockwise going up the shaft; the left
    particle is its mirror image through the y-z plane.
    """
    h = config.CHIRAL_SHAFT_LENGTH / 2.0
    a = config.CHIRAL_ARM_LENGTH
    c, s = math.cos(config.CHIRAL_ARM_ANGLE), math.sin(config.CHIRAL_ARM_ANGLE)
    verts = np.array([
        [a * c, -a * s, -h],
        [0.0, 0.0, -h],
        [0.0, 0.0, h],
        [a * c, a * s, h],
    ])
    if handed == "left":
        verts[:, 0] *= -1.0
    return verts


def builtin_model(kind: str) -> ParticleModel:
    if kind in ("chiral_left", "chiral_right"):
        verts = chiral_vertices(kind.split("_")[1])
        # 180 deg about x swaps the two arms
        sym = cyclic_group((1.0, 0.0, 0.0), 2, "chiral")
        return WireframeModel(kind, verts, ((0, 1), (1, 2), (2, 3)), config.CHIRAL_TUBE_RADIUS, None, sym)
    if kind == "tetrad":
        dirs = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64) / math.sqrt(3.0)
        verts = np.vstack([np.zeros(3), dirs * config.TETRAD_ARM_LENGTH])
        sym = tetrahedral_group() if config.TETRAD_SYMMETRY else SymmetryGroup.identity()
        return WireframeModel("tetrad", verts, ((0, 1), (0, 2), (0, 3), (0, 4)), config.TETRAD_TUBE_RADIUS, None, sym)
    if kind == "oloid":
        sym = oloid_group() if config.OLOID_SYMMETRY else SymmetryGroup.identity()
        return OloidModel(config.OLOID_CIRCLE_RADIUS, config.OLOID_SAMPLES_PER_CIRCLE, None, sym)
    raise InvalidInputError(f"unknown particle kind {kind!r}; expected one of {', '.join(BUILTIN_KINDS)}")


def model_to_dict(m: ParticleModel) -> dict:
    sym = [list(e.as_tuple()) for e in m.symmetry.elements]
    if isinstance(m, OloidModel):
        return {
            "format_version": config.FORMAT_VERSION,
            "type": "oloid",
            "name": m.name,
            "circle_radius": m.circle_radius,
            "samples_per_circle": m.samples_per_circle,
            "com": m.com.tolist(),
            "orientation": list(m.orientation.as_tuple()),
            "symmetry": sym,
        }
    return {
        "format_version": config.FORMAT_VERSION,
        "type": "wireframe",
        "name": m.name,
        "vertices": m.vertices.tolist(),
        "edges": [list(e) for e in m.edges],
        "tube_radius": m.tube_radius,
        "com": m.com.tolist(),
        "symmetry": sym,
    }


def model_from_dict(d: dict, path: str | Path = "<dict>") -> ParticleModel:
    def need(key):
        if key not in d:
            raise FormatError(path, key, "missing field")
        return d[key]

    version = need("format_version")
    if version != config.FORMAT_VERSION:
        raise FormatError(path, "format_version", f"unsupported version {version}")
    try:
        sym = group_from_arrays(d.get("symmetry") or [[1, 0, 0, 0]], d.get("name", "custom"))
    except (InvalidInputError, TypeError, IndexError) as exc:
        raise FormatError(path, "symmetry", str(exc)) from exc
    kind = need("type")
    if kind == "oloid":
        try:
            return OloidModel(float(need("circle_radius")), int(d.get("samples_per_circle", config.OLOID_SAMPLES_PER_CIRCLE)),
                              d.get("com"), sym, Quaternion.from_array(d.get("orientation", [1, 0, 0, 0])),
                              d.get("name", "oloid"))
        except InvalidInputError as exc:
            raise FormatError(path, "oloid", str(exc)) from exc
    if kind != "wireframe":
        raise FormatError(path, "type", f"unknown model type {kind!r}")
    try:
        verts = np.asarray(need("vertices"), dtype=np.float64).reshape(-1, 3)
    except (TypeError, ValueError) as exc:
        raise FormatError(path, "vertices", f"expected a list of [x, y, z] triples: {exc}") from exc
    edges = need("edges")
    if not isinstance(edges, list):
        raise FormatError(path, "edges", "expected a list of vertex index pairs")
    for k, e in enumerate(edges):
        if not isinstance(e, list) or len(e) != 2:
            raise FormatError(path, f"edges[{k}]", "an edge needs exactly two vertex indices")
        for idx in e:
            if isinstance(idx, bool) or not isinstance(idx, int):
                raise FormatError(path, f"edges[{k}]", f"vertex index must be an integer, got {idx!r}")
            if not 0 <= idx < len(verts):
                raise FormatError(path, f"edges[{k}]", f"vertex index {idx} out of range for {len(verts)} vertices")
    try:
        radius = float(need("tube_radius"))
    except (TypeError, ValueError) as exc:
        raise FormatError(path, "tube_radius", str(exc)) from exc
    if not radius > 0:
        raise FormatError(path, "tube_radius", f"tube_radius must be > 0, got {radius}")
    try:
        return WireframeModel(need("name"), verts, edges, radius, d.get("com"), sym)
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise FormatError(path, "wireframe", str(exc)) from exc


def save_model(m: ParticleModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(m), indent=2))


def load_model(path: str | Path) -> ParticleModel:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(p, f"line {exc.lineno}", exc.msg) from exc
    except OSError as exc:
        raise FormatError(p, "file", str(exc)) from exc
    if not isinstance(data, dict):
        raise FormatError(p, "root", "expected a JSON object")
    return model_from_dict(data, p)


def resolve_model(spec: str) -> ParticleModel:
    """A builtin kind name or a path to a model file."""
    if spec in BUILTIN_KINDS:
        return builtin_model(spec)
    return load_model(spec)
