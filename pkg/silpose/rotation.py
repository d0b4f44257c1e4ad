"""Quaternion algebra for particle orientations.

Orientations are unit quaternions (w, x, y, z). Points are rotated with the
sandwich product q p q^-1 where p is a pure quaternion (0, v). q and -q are the
same orientation, so stored quaternions are sign-canonical (w >= 0) and every
comparison is sign invariant.

Usage:
    q = from_axis_angle((0, 0, 1), math.pi / 2)
    rotate_point(q, PurePoint(1, 0, 0))        # -> PurePoint(0, 1, 0)
    angle_between(q, Quaternion.identity())    # -> pi / 2

Particle symmetry groups live here as well: orientations that differ by a
group element image identically, so angular errors are reduced over the group.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError

_UNIT_TOL = 1e-9
_GIMBAL_TOL = 1e-12
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
        if not math.isfinite(n) or n < 1e-12:
            raise InvalidInputError(f"cannot normalize quaternion with norm {n}")
        s = -1.0 / n if self.w < 0 else 1.0 / n
        object.__setattr__(self, "w", float(self.w * s))
        object.__setattr__(self, "x", float(self.x * s))
        object.__setattr__(self, "y", float(self.y * s))
        object.__setattr__(self, "z", float(self.z * s))

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "Quaternion":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.w, self.x, self.y, self.z)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(*_hamilton(self.as_tuple(), other.as_tuple()))

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def inverse(self) -> "Quaternion":
        # unit norm, so the reciprocal is the conjugate
        return self.conjugate()

    @property
    def angle(self) -> float:
        return 2.0 * math.atan2(math.sqrt(self.x ** 2 + self.y ** 2 + self.z ** 2), abs(self.w))


@dataclass(frozen=True)
class PurePoint:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


@dataclass(frozen=True)
class EulerZYX:
    psi: float    # about z, applied first
    theta: float  # about the new y
    phi: float    # about the new x
    gimbal_lock: bool = False


@dataclass(frozen=True)
class SymmetryGroup:
    elements: Tuple[Quaternion, ...] = field(default_factory=lambda: (Quaternion.identity(),))
    name: str = "identity"

    def __post_init__(self):
        elems = tuple(self.elements)
        object.__setattr__(self, "elements", elems)
        if not any(_same_rotation(e, Quaternion.identity()) for e in elems):
            raise InvalidInputError(f"symmetry group {self.name!r} lacks the identity")
        for a in elems:
            for b in elems:
                ab = a * b
                if not any(_same_rotation(ab, e) for e in elems):
                    raise InvalidInputError(f"symmetry group {self.name!r} is not closed under composition")

    @classmethod
    def identity(cls) -> "SymmetryGroup":
        return cls((Quaternion.identity(),), "identity")

    def __len__(self) -> int:
        return len(self.elements)

    def as_array(self) -> np.ndarray:
        return np.array([e.as_tuple() for e in self.elements], dtype=np.float64)


def _same_rotation(a: Quaternion, b: Quaternion, tol: float = 1e-9) -> bool:
    return abs(abs(a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z) - 1.0) < tol


def _hamilton(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def multiply_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of broadcastable (..., 4) arrays."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def normalize_array(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / n


def rotate_point(q: Quaternion, p: PurePoint) -> PurePoint:
    """Imaginary part of q p q^-1."""
    qp = _hamilton(q.as_tuple(), (0.0, p.x, p.y, p.z))
    r = _hamilton(qp, q.inverse().as_tuple())
    return PurePoint(r[1], r[2], r[3])


def rotate_points(q: Quaternion, pts: np.ndarray) -> np.ndarray:
    """Vectorized q p q^-1 for an (N, 3) array, expanded as v + 2w(u x v) + 2u x (u x v)."""
    pts = np.asarray(pts, dtype=np.float64)
    u = np.array([q.x, q.y, q.z])
    t = 2.0 * np.cross(u, pts)
    return pts + q.w * t + np.cross(u, t)


def from_axis_angle(u: Sequence[float], theta: float) -> Quaternion:
    ux, uy, uz = (float(c) for c in u)
    n = math.sqrt(ux * ux + uy * uy + uz * uz)
    if abs(n - 1.0) > _UNIT_TOL:
        raise InvalidInputError(f"rotation axis must have unit length, got |u|={n:.12g}")
    s = math.sin(theta / 2.0)
    return Quaternion(math.cos(theta / 2.0), ux * s, uy * s, uz * s)


def axis_angle(u: Sequence[float], theta: float) -> Quaternion:
    """from_axis_angle for an axis of any non-zero length."""
    a = np.asarray(u, dtype=np.float64)
    return from_axis_angle(a / np.linalg.norm(a), theta)


def angle_between(q1: Quaternion, q2: Quaternion, sym: SymmetryGroup | None = None) -> float:
    """Symmetry-reduced angle 2 arcsin(|imag(q1 (q2 s)^-1)|), minimised over s in sym.

    Evaluated as 2 atan2(|imag|, |real|), identical for unit quaternions and
    accurate all the way to pi.
    """
    elements = sym.elements if sym is not None else (Quaternion.identity(),)
    best = math.pi
    for s in elements:
        d = _hamilton(q1.as_tuple(), (q2 * s).inverse().as_tuple())
        ang = 2.0 * math.atan2(math.sqrt(d[1] ** 2 + d[2] ** 2 + d[3] ** 2), abs(d[0]))
        best = min(best, ang)
    return best


def angle_between_real(q1: Quaternion, q2: Quaternion) -> float:
    """The real-part form 2 arccos|real(q1 q2^-1)|; no symmetry reduction."""
    d = _hamilton(q1.as_tuple(), q2.inverse().as_tuple())
    return 2.0 * math.acos(min(1.0, abs(d[0])))


def angles_to(q: Quaternion, others: np.ndarray, sym: SymmetryGroup | None = None) -> np.ndarray:
    """angle_between(q, o, sym) for every row of an (N, 4) array."""
    others = np.asarray(others, dtype=np.float64).reshape(-1, 4)
    elems = sym.as_array() if sym is not None else np.array([[1.0, 0.0, 0.0, 0.0]])
    qa = q.as_array()
    best = np.full(len(others), math.pi)
    for s in elems:
        os_ = multiply_arrays(others, s)
        # q1 * conj(q2 s): the dot product is the real part
        real = np.abs(os_ @ qa)
        real = np.clip(real, 0.0, 1.0)
        imag = np.sqrt(np.clip(1.0 - real * real, 0.0, 1.0))
        best = np.minimum(best, 2.0 * np.arctan2(imag, real))
    return best


def random_orientation(rng_seed=None) -> Quaternion:
    """Uniform sample on SO(3): a normalized 4D Gaussian."""
    rng = np.random.default_rng(rng_seed)
    while True:
        g = rng.standard_normal(4)
        if np.linalg.norm(g) > 1e-6:
            return Quaternion.from_array(g)


def random_axis(rng) -> np.ndarray:
    g = rng.standard_normal(3)
    return g / np.linalg.norm(g)


def uniform_angle_cdf(theta: float) -> float:
    """P(rotation angle <= theta) for orientations uniform on SO(3)."""
    return (theta - math.sin(theta)) / math.pi


def to_euler_zyx(q: Quaternion) -> EulerZYX:
    w, x, y, z = q.as_tuple()
    s = 2.0 * (w * y - z * x)
    if abs(s) >= 1.0 - _GIMBAL_TOL:
        # only psi -/+ phi is defined; put it all into psi
        theta = math.copysign(math.pi / 2.0, s)
        psi = _wrap(2.0 * math.atan2(z, w))
        return EulerZYX(psi, theta, 0.0, gimbal_lock=True)
    psi = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    theta = math.asin(s)
    phi = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    return EulerZYX(psi, theta, phi)


def from_euler_zyx(e: EulerZYX) -> Quaternion:
    qz = Quaternion(math.cos(e.psi / 2), 0.0, 0.0, math.sin(e.psi / 2))
    qy = Quaternion(math.cos(e.theta / 2), 0.0, math.sin(e.theta / 2), 0.0)
    qx = Quaternion(math.cos(e.phi / 2), math.sin(e.phi / 2), 0.0, 0.0)
    return qz * qy * qx


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def fibonacci_axes(n: int) -> List[np.ndarray]:
    """n unit vectors on a Fibonacci spherical lattice."""
    if n < 1:
        raise InvalidInputError(f"need at least one axis, got {n}")
    out = []
    for i in range(n):
        z = 1.0 - (2.0 * i + 1.0) / n
        r = math.sqrt(max(0.0, 1.0 - z * z))
        phi = i * GOLDEN_ANGLE
        v = np.array([r * math.cos(phi), r * math.sin(phi), z])
        out.append(v / np.linalg.norm(v))
    return out


# Symmetry groups

def cyclic_group(axis: Sequence[float], order: int = 2, name: str = "cyclic") -> SymmetryGroup:
    elems = [Quaternion.identity()] + [axis_angle(axis, 2.0 * math.pi * k / order) for k in range(1, order)]
    return SymmetryGroup(tuple(elems), name)


def tetrahedral_group() -> SymmetryGroup:
    """The 12 proper rotations of a tetrahedron with vertices (1,1,1), (1,-1,-1), (-1,1,-1), (-1,-1,1)."""
    elems = [Quaternion.identity()]
    for v in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
        for ang in (2.0 * math.pi / 3.0, -2.0 * math.pi / 3.0):
            elems.append(axis_angle(v, ang))
    for a in ((1, 0, 0), (0, 1, 0), (0, 0, 1)):
        elems.append(from_axis_angle(a, math.pi))
    return SymmetryGroup(tuple(elems), "tetrahedral")


def oloid_group() -> SymmetryGroup:
    """Klein four-group of the oloid whose circle centres sit on the x axis.

    180 deg about x keeps each circle; 180 deg about (0, 1, +-1) swaps them.
    """
    elems = (
        Quaternion.identity(),
        from_axis_angle((1.0, 0.0, 0.0), math.pi),
        axis_angle((0.0, 1.0, 1.0), math.pi),
        axis_angle((0.0, 1.0, -1.0), math.pi),
    )
    return SymmetryGroup(elems, "oloid")


def group_from_arrays(rows: Iterable[Sequence[float]], name: str = "custom") -> SymmetryGroup:
    return SymmetryGroup(tuple(Quaternion.from_array(r) for r in rows), name)
