"""Nelder-Mead orientation refinement and particle-type classification.

The simplex has five vertices in raw quaternion coordinates. Candidates are
normalized only when evaluated, and the run stops once the simplex
hyper-volume drops below NM_VOL_TOL. The volume is measured in
degree-equivalent units (coordinates scaled by 360/pi), where a quaternion
displacement d is a rotation of about d * 360/pi degrees.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import config
from .camera import CameraRig
from .cost import rig_error
from .errors import InvalidInputError
from .geometry import ParticleModel
from .orientlib import OrientationLibrary, best_guesses, load_or_build
from .render import SilhouetteImage
from .rotation import Quaternion
from .workers import parallel_map

log = logging.getLogger(__name__)

DEGREE_SCALE = 360.0 / math.pi
_FACTORIAL_4 = 24.0


@dataclass(frozen=True, eq=False)
class SimplexState:
    points: np.ndarray          # (5, 4) raw vertices
    values: np.ndarray          # (5,)
    hyper_volume: float         # degree-equivalent units (deg^4)


@dataclass(frozen=True, eq=False)
class FitResult:
    q: Quaternion
    total_error: float
    particle_type: str = ""
    iterations: int = 0
    converged: bool = False
    hyper_volume_deg4: float = 0.0  # final simplex volume, degree-equivalent units
    evaluations: int = 0
    guess_index: int = -1
    guess_errors: Mapping[str, float] = field(default_factory=dict)
    runs: Tuple["FitResult", ...] = ()
    simplex: Optional[SimplexState] = None


def hyper_volume(points: np.ndarray) -> float:
    """4-volume of the simplex, |det(p_i - p_0)| / 4!, in degree-equivalent units.

    Equal to the Cayley-Menger volume of the five vertices.
    """
    e = (points[1:] - points[0]) * DEGREE_SCALE
    return abs(float(np.linalg.det(e))) / _FACTORIAL_4


def initial_simplex(q0: Quaternion, init_spread: float = config.NM_INIT_SPREAD) -> np.ndarray:
    """q0 and four points with one quaternion component offset by sin(spread/2).

    Vertices stay raw; they are normalized when evaluated. Normalizing here
    would collapse the vertex whose offset is radial onto q0.
    """
    base = q0.as_array()
    delta = math.sin(init_spread / 2.0)
    pts = [base]
    for i in range(4):
        p = base.copy()
        p[i] += delta
        pts.append(p)
    return np.array(pts)


def nelder_mead(f: Callable[[Quaternion], float], q0: Quaternion, init_spread: float = config.NM_INIT_SPREAD,
                vol_tol: float = config.NM_VOL_TOL, max_iter: int = config.NM_MAX_ITER) -> FitResult:
    alpha, gamma, rho, sigma = config.NM_REFLECT, config.NM_EXPAND, config.NM_CONTRACT, config.NM_SHRINK
    evaluations = 0

    def evaluate(p: np.ndarray) -> float:
        nonlocal evaluations
        evaluations += 1
        return float(f(Quaternion.from_array(p)))

    pts = initial_simplex(q0, init_spread)
    vals = np.array([evaluate(p) for p in pts])
    converged = False
    iterations = 0
    vol = math.inf
    for iterations in range(max_iter + 1):
        order = np.argsort(vals, kind="stable")
        pts, vals = pts[order], vals[order]
        vol = hyper_volume(pts)
        if vol < vol_tol:
            converged = True
            break
        if iterations == max_iter:
            break
        c = pts[:-1].mean(axis=0)
        worst = pts[-1]
        xr = c + alpha * (c - worst)
        fr = evaluate(xr)
        if fr < vals[0]:
            xe = c + gamma * (xr - c)
            fe = evaluate(xe)
            pts[-1], vals[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < vals[-2]:
            pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-1]:
            xc = c + rho * (xr - c)
            fc = evaluate(xc)
            if fc <= fr:
                pts[-1], vals[-1] = xc, fc
                continue
        else:
            xc = c + rho * (worst - c)
            fc = evaluate(xc)
            if fc < vals[-1]:
                pts[-1], vals[-1] = xc, fc
                continue
        for i in range(1, len(pts)):
            pts[i] = pts[0] + sigma * (pts[i] - pts[0])
            vals[i] = evaluate(pts[i])
    order = np.argsort(vals, kind="stable")
    pts, vals = pts[order], vals[order]
    if not converged:
        log.debug("nelder_mead stopped at max_iter=%d volume=%.3g deg^4", max_iter, vol)
    return FitResult(
        q=Quaternion.from_array(pts[0]),
        total_error=float(vals[0]),
        iterations=iterations,
        converged=converged,
        hyper_volume_deg4=float(vol),
        evaluations=evaluations,
        simplex=SimplexState(pts, vals, float(vol)),
    )


class RigObjective:
    """Total silhouette error of one model over a rig, as a function of orientation."""

    def __init__(self, m: ParticleModel, rig: CameraRig, observed: Sequence[SilhouetteImage],
                 position: Sequence[float] = (0.0, 0.0, 0.0)):
        self.m = m
        self.rig = rig
        self.observed = list(observed)
        self.position = tuple(float(v) for v in position)

    def __call__(self, q: Quaternion) -> float:
        return rig_error(self.m, q, self.rig, self.observed, self.position).total


class _GuessRun:
    def __init__(self, objective: RigObjective, init_spread: float, vol_tol: float, max_iter: int):
        self.objective = objective
        self.init_spread, self.vol_tol, self.max_iter = init_spread, vol_tol, max_iter

    def __call__(self, q0: Quaternion) -> FitResult:
        return nelder_mead(self.objective, q0, self.init_spread, self.vol_tol, self.max_iter)


def refine(m: ParticleModel, rig: CameraRig, observed: Sequence[SilhouetteImage], guesses: Sequence[Quaternion],
           position: Sequence[float] = (0.0, 0.0, 0.0), init_spread: float = config.NM_INIT_SPREAD,
           vol_tol: float = config.NM_VOL_TOL, max_iter: int = config.NM_MAX_ITER,
           workers: Optional[int] = 1) -> FitResult:
    """Nelder-Mead from every guess; the lowest-error converged run wins."""
    if not guesses:
        raise InvalidInputError("refine needs at least one guess")
    run = _GuessRun(RigObjective(m, rig, observed, position), init_spread, vol_tol, max_iter)
    runs = parallel_map(run, list(guesses), workers)
    pool = [i for i, r in enumerate(runs) if r.converged] or list(range(len(runs)))
    best = min(pool, key=lambda i: (runs[i].total_error, i))
    if not runs[best].converged:
        log.info("refine type=%s no run converged, best error=%.4g", m.name, runs[best].total_error)
    return replace(runs[best], particle_type=m.name, guess_index=best, runs=tuple(runs))


def classify_and_fit(models: Sequence[ParticleModel], rig: CameraRig, observed: Sequence[SilhouetteImage],
                     libraries: Optional[Mapping[str, OrientationLibrary]] = None,
                     position: Sequence[float] = (0.0, 0.0, 0.0), k: int = config.FIRST_GUESSES,
                     margin: float = config.CLASSIFY_MARGIN, workers: Optional[int] = 1) -> FitResult:
    """Pick the particle type whose library guesses fit best, then refine within it.

    When the runner-up type's first-guess error lies within `margin` (relative)
    of the winner, both are refined and the lower refined error decides.
    """
    if not models:
        raise InvalidInputError("classify_and_fit needs at least one model")
    libraries = dict(libraries or {})
    guesses: Dict[str, List] = {}
    for m in models:
        lib = libraries.get(m.name)
        if lib is None:
            lib = load_or_build(m, rig, cache_dir=None, workers=workers)
            libraries[m.name] = lib
        guesses[m.name] = best_guesses(lib, observed, rig, k)
    errors = {name: g[0].error for name, g in guesses.items()}
    ranked = sorted(models, key=lambda m: (errors[m.name], m.name))
    contenders = [ranked[0]]
    if len(ranked) > 1 and errors[ranked[1].name] <= errors[ranked[0].name] * (1.0 + margin):
        contenders.append(ranked[1])
    fits = [refine(m, rig, observed, [g.q for g in guesses[m.name]], position, workers=workers) for m in contenders]
    best = min(fits, key=lambda r: r.total_error)
    log.debug("classified type=%s guess_errors=%s contenders=%d", best.particle_type, errors, len(contenders))
    return replace(best, guess_errors=errors)
