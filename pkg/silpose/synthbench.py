"""Seeded synthetic benchmarks of the orientation pipeline.

Every case i of a bench draws its true orientation from default_rng([seed, i]),
so the same truths appear across image sizes, rigs and noise levels. Cases run
independently (optionally in worker processes) and are reduced in index order,
which keeps every written file identical for any worker count. Runtime is
logged only.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import config
from .camera import CameraModel, CameraRig, fit_rig_to_size, preset_rig, save_rig, subset
from .errors import InvalidInputError, SilposeError
from .geometry import ParticleModel, bounding_radius, builtin_model
from .optimize import classify_and_fit
from .orientlib import OrientationLibrary, load_or_build
from .rasterio import save_raster
from .render import SilhouetteImage, render_frame, render_silhouette
from .rotation import (
    EulerZYX,
    Quaternion,
    angle_between,
    axis_angle,
    from_euler_zyx,
    random_axis,
    random_orientation,
)
from .track import ParticleTrack, centroid_com_offset, com_offset
from .workers import parallel_map

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchSpec:
    kind: str = config.BENCH_KIND
    candidates: Tuple[str, ...] = ()       # classifier choices; empty means both handednesses for chiral kinds
    rig: str = config.BENCH_RIG
    cameras: Optional[Tuple[int, ...]] = None
    image_size: int = config.BENCH_IMAGE_SIZE
    n_orientations: int = config.BENCH_ORIENTATIONS
    noise_sigma: float = 0.0
    seed: int = config.SEED
    com_fraction: float = config.COUPLING_POSITION_FRACTION
    supply_type: bool = False              # pass the true type to the classifier
    n_axes: int = config.LIBRARY_AXES
    n_angles: int = config.LIBRARY_ANGLES
    library_resolution: int = config.LIBRARY_RESOLUTION

    def __post_init__(self):
        if self.n_orientations < 1:
            raise InvalidInputError(f"n_orientations must be >= 1, got {self.n_orientations}")
        if self.image_size < 8:
            raise InvalidInputError(f"image_size must be >= 8, got {self.image_size}")
        if self.noise_sigma < 0:
            raise InvalidInputError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    def candidate_kinds(self) -> Tuple[str, ...]:
        if self.supply_type:
            return (self.kind,)
        if self.candidates:
            return self.candidates
        if self.kind.startswith("chiral_"):
            return ("chiral_left", "chiral_right")
        return (self.kind,)


@dataclass(frozen=True, eq=False)
class CaseResult:
    index: int
    truth: Quaternion
    found: Optional[Quaternion]
    true_type: str
    found_type: str
    theta_err: float           # degrees, symmetry reduced
    theta_err_raw: float       # degrees
    total_error: float
    converged: bool
    iterations: int
    failed: bool = False


@dataclass(frozen=True, eq=False)
class BenchResult:
    name: str
    spec: BenchSpec
    cases: Tuple[CaseResult, ...]
    theta_err: np.ndarray
    mean: float
    median: float
    hist_edges: np.ndarray
    hist_density: np.ndarray
    failures: int
    misclassified: int
    runtime: float = field(default=0.0)

    @property
    def failure_fraction(self) -> float:
        return self.failures / max(1, len(self.cases))


def bench_rig(spec: BenchSpec, m: Optional[ParticleModel] = None) -> CameraRig:
    """Preset rig (optionally a camera subset) zoomed so the particle fills the image size."""
    m = m or builtin_model(spec.kind)
    rig = preset_rig(spec.rig)
    if spec.cameras is not None:
        rig = subset(rig, spec.cameras)
    return fit_rig_to_size(rig, bounding_radius(m), spec.image_size, config.BENCH_FILL)


def add_edge_noise(img: SilhouetteImage, sigma: float, rng) -> SilhouetteImage:
    """Gaussian noise on the grey rim pixels only; pure 0 and 1 pixels are untouched."""
    if sigma < 0:
        raise InvalidInputError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img
    p = img.pixels.copy()
    rim = (p > 0.0) & (p < 1.0)
    p[rim] += rng.normal(0.0, sigma, int(rim.sum()))
    return img.with_pixels(np.clip(p, 0.0, 1.0))


def case_truth(spec: BenchSpec, i: int) -> Tuple[Quaternion, np.random.Generator]:
    rng = np.random.default_rng([spec.seed, i])
    return random_orientation(rng), rng


def make_case(spec: BenchSpec, i: int, rig: Optional[CameraRig] = None) -> Tuple[Quaternion, List[SilhouetteImage]]:
    if not 0 <= i < spec.n_orientations:
        raise InvalidInputError(f"case index {i} outside 0..{spec.n_orientations - 1}")
    m = builtin_model(spec.kind)
    rig = rig or bench_rig(spec, m)
    truth, rng = case_truth(spec, i)
    observed = [add_edge_noise(render_silhouette(m, truth, cam, spec.image_size), spec.noise_sigma, rng)
                for cam in rig]
    return truth, observed


class _CaseRunner:
    def __init__(self, spec: BenchSpec, rig: CameraRig, libraries: Optional[Dict[str, OrientationLibrary]],
                 cache_dir):
        self.spec = spec
        self.rig = rig
        self.cache_dir = cache_dir
        # workers reload cached libraries instead of receiving them pickled
        self.libraries = None if cache_dir is not None else libraries

    def _libraries(self) -> Dict[str, OrientationLibrary]:
        if self.libraries is None:
            self.libraries = {k: load_or_build(builtin_model(k), self.rig, self.cache_dir, self.spec.n_axes,
                                               self.spec.n_angles, self.spec.library_resolution, workers=1)
                              for k in self.spec.candidate_kinds()}
        return self.libraries

    def __call__(self, i: int) -> CaseResult:
        spec = self.spec
        truth, observed = make_case(spec, i, self.rig)
        true_model = builtin_model(spec.kind)
        models = [builtin_model(k) for k in spec.candidate_kinds()]
        try:
            fit = classify_and_fit(models, self.rig, observed, self._libraries())
        except SilposeError as exc:
            log.warning("case=%d failed error=%s: %s", i, type(exc).__name__, exc)
            return CaseResult(i, truth, None, spec.kind, "", math.nan, math.nan, math.nan, False, 0, True)
        err = math.degrees(angle_between(fit.q, truth, true_model.symmetry))
        raw = math.degrees(angle_between(fit.q, truth))
        if fit.particle_type != spec.kind:
            err = raw = 180.0
        return CaseResult(i, truth, fit.q, spec.kind, fit.particle_type, err, raw, fit.total_error,
                          fit.converged, fit.iterations)


def libraries_for(spec: BenchSpec, rig: CameraRig, cache_dir=config.LIBRARY_CACHE_DIR,
                  workers: Optional[int] = None) -> Dict[str, OrientationLibrary]:
    return {k: load_or_build(builtin_model(k), rig, cache_dir, spec.n_axes, spec.n_angles,
                             spec.library_resolution, workers) for k in spec.candidate_kinds()}


def summarize(name: str, spec: BenchSpec, cases: Sequence[CaseResult], runtime: float = 0.0) -> BenchResult:
    errs = np.array([c.theta_err for c in cases], dtype=np.float64)
    finite = errs[np.isfinite(errs)]
    if len(finite):
        top = float(finite.max()) if finite.max() > 0 else 1.0
        density, edges = np.histogram(finite, bins=config.BENCH_HIST_BINS, range=(0.0, top), density=True)
    else:
        density, edges = np.zeros(config.BENCH_HIST_BINS), np.linspace(0.0, 1.0, config.BENCH_HIST_BINS + 1)
    failures = int(np.sum(~np.isfinite(errs) | (errs > config.BENCH_FAILURE_DEG)))
    misclassified = sum(1 for c in cases if not c.failed and c.found_type != c.true_type)
    return BenchResult(
        name=name,
        spec=spec,
        cases=tuple(cases),
        theta_err=errs,
        mean=float(finite.mean()) if len(finite) else math.nan,
        median=float(np.median(finite)) if len(finite) else math.nan,
        hist_edges=edges,
        hist_density=density,
        failures=failures,
        misclassified=misclassified,
        runtime=runtime,
    )


def run_bench(spec: BenchSpec, name: str = "bench", workers: Optional[int] = None,
              cache_dir=config.LIBRARY_CACHE_DIR,
              libraries: Optional[Dict[str, OrientationLibrary]] = None) -> BenchResult:
    """Cold-start pipeline (library guesses, then refinement) on every case of the spec."""
    t0 = time.perf_counter()
    rig = bench_rig(spec)
    if libraries is None:
        libraries = libraries_for(spec, rig, cache_dir, workers)
    runner = _CaseRunner(spec, rig, libraries, cache_dir)
    cases = parallel_map(runner, range(spec.n_orientations), workers)
    result = summarize(name, spec, cases, time.perf_counter() - t0)
    log.info("bench=%s cases=%d mean=%.4f median=%.4f failures=%d runtime=%.1fs", name, len(cases),
             result.mean, result.median, result.failures, result.runtime)
    return result


# Studies

def noise_sweep(spec: BenchSpec, levels: Sequence[float] = config.BENCH_NOISE_LEVELS,
                seeds: Optional[Sequence[int]] = None, **kw) -> Dict[Tuple[float, int], BenchResult]:
    """One bench per (sigma, seed); seeds default to BENCH_NOISE_SEEDS consecutive values from spec.seed."""
    out = {}
    for seed in seeds or tuple(spec.seed + k for k in range(config.BENCH_NOISE_SEEDS)):
        for s in levels:
            out[(s, seed)] = run_bench(replace(spec, noise_sigma=s, seed=seed), f"noise_{s:g}_seed{seed}", **kw)
    return out


@dataclass(frozen=True)
class NoiseLevel:
    sigma: float
    seeds: Tuple[int, ...]
    mean: float                # median over seeds of the per-seed mean, degrees
    median: float              # median over seeds of the per-seed median, degrees
    failure_fraction: float    # median over seeds


def summarize_noise(results: Mapping[Tuple[float, int], BenchResult]) -> List[NoiseLevel]:
    """Collapse the per-seed runs of a noise sweep to one row per sigma, ascending."""
    by_level: Dict[float, List[Tuple[int, BenchResult]]] = {}
    for (sigma, seed), r in results.items():
        by_level.setdefault(sigma, []).append((seed, r))
    rows = []
    for sigma in sorted(by_level):
        runs = sorted(by_level[sigma], key=lambda t: t[0])
        rows.append(NoiseLevel(
            sigma=sigma,
            seeds=tuple(seed for seed, _ in runs),
            mean=float(np.median([r.mean for _, r in runs])),
            median=float(np.median([r.median for _, r in runs])),
            failure_fraction=float(np.median([r.failure_fraction for _, r in runs])),
        ))
    return rows


def size_sweep(spec: BenchSpec, sizes: Sequence[int] = config.BENCH_IMAGE_SIZES, **kw) -> Dict[int, BenchResult]:
    return {n: run_bench(replace(spec, image_size=n), f"size_{n}", **kw) for n in sizes}


def camera_count_sweep(spec: BenchSpec, counts: Sequence[int] = config.BENCH_CAMERA_COUNTS,
                       **kw) -> Dict[int, BenchResult]:
    """Cameras 0..k-1 of the spec's rig for every k."""
    return {k: run_bench(replace(spec, cameras=tuple(range(k))), f"cameras_{k}", **kw) for k in counts}


def bench_arrangements(spec: BenchSpec, arrangements: Sequence[str] = config.BENCH_ARRANGEMENTS,
                       **kw) -> Dict[str, BenchResult]:
    """Every rig on the same truths; the single camera is told the particle type."""
    out = {}
    for name in arrangements:
        out[name] = run_bench(replace(spec, rig=name, cameras=None, supply_type=(name == "single")),
                              f"rig_{name}", **kw)
    return out


def appendix_b_shapes(spec: BenchSpec, kinds: Sequence[str] = ("chiral_right", "tetrad", "oloid"),
                      sizes: Sequence[int] = config.BENCH_IMAGE_SIZES, **kw) -> Dict[str, Dict[int, BenchResult]]:
    return {k: {n: run_bench(replace(spec, kind=k, candidates=(), image_size=n), f"shape_{k}_{n}", **kw)
                for n in sizes} for k in kinds}


@dataclass(frozen=True)
class CouplingReport:
    position_offset: float                 # world units
    deviation_deg: Tuple[float, ...]       # per camera
    mean_deviation_deg: float
    displacement_pct: Dict[int, Tuple[float, ...]]     # image size -> per-camera mean, % of image size


def camera_vector_deviation(rig: CameraRig, offset: float) -> List[float]:
    """Angle between the ray to the origin and the ray to a point offset across the view."""
    out = []
    for cam in rig:
        x, _, _ = cam.axes
        p = offset * x
        a = -cam.position
        b = p - cam.position
        c = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
        out.append(math.degrees(math.acos(min(1.0, max(-1.0, c)))))
    return out


def appendix_a_coupling(spec: BenchSpec, theta_by_size: Optional[Mapping[int, float]] = None,
                        sizes: Sequence[int] = config.BENCH_IMAGE_SIZES,
                        references: int = config.COUPLING_REFERENCES,
                        rotations: int = config.COUPLING_ROTATIONS, **kw) -> CouplingReport:
    """Position error to orientation error, and orientation error to COM displacement.

    theta_by_size maps image size to the mean orientation error in degrees;
    sizes without an entry are benchmarked first.
    """
    m = builtin_model(spec.kind)
    size_a = spec.image_size
    rig_a = bench_rig(replace(spec, image_size=size_a), m)
    offset = spec.com_fraction * 2.0 * bounding_radius(m)
    dev = camera_vector_deviation(rig_a, offset)
    theta_by_size = dict(theta_by_size or {})
    displacement: Dict[int, Tuple[float, ...]] = {}
    for n in sizes:
        if n not in theta_by_size:
            theta_by_size[n] = run_bench(replace(spec, image_size=n), f"coupling_size_{n}", **kw).mean
        theta = math.radians(theta_by_size[n])
        rig = bench_rig(replace(spec, image_size=n), m)
        sums = np.zeros(len(rig))
        count = 0
        for r in range(references):
            rng = np.random.default_rng([spec.seed, 1_000_000 + r])
            q_ref = random_orientation(rng)
            base = [com_offset(m, q_ref, cam, (0.0, 0.0, 0.0))[0] for cam in rig]
            for _ in range(rotations):
                q = axis_angle(random_axis(rng), theta) * q_ref
                for k, cam in enumerate(rig):
                    sums[k] += float(np.linalg.norm(com_offset(m, q, cam, (0.0, 0.0, 0.0))[0] - base[k]))
                count += 1
        displacement[n] = tuple(float(100.0 * s / max(1, count) / n) for s in sums)
        log.info("coupling size=%d theta=%.4f deg displacement_pct=%s", n, theta_by_size[n],
                 ", ".join(f"{d:.4f}" for d in displacement[n]))
    return CouplingReport(offset, tuple(dev), float(np.mean(dev)), displacement)


def com_offset_map(kind: str = config.BENCH_KIND, steps: int = config.COM_MAP_STEPS,
                   rig_name: str = "single", image_size: int = config.BENCH_IMAGE_SIZE) -> np.ndarray:
    """Rows (psi, theta, normalized centroid-to-COM distance) over a Z-Y-X grid, phi = 0, camera 0."""
    m = builtin_model(kind)
    cam = fit_rig_to_size(preset_rig(rig_name), bounding_radius(m), image_size)[0]
    rows = []
    for i in range(steps):
        psi = -math.pi + 2.0 * math.pi * i / steps
        for j in range(steps // 2 + 1):
            theta = -math.pi / 2.0 + math.pi * j / (steps // 2)
            q = from_euler_zyx(EulerZYX(psi, theta, 0.0))
            rows.append((psi, theta, centroid_com_offset(m, q, cam)))
    return np.array(rows)


# Synthetic sequences

@dataclass(frozen=True)
class SequenceSpec:
    kind: str = "tetrad"
    rig: str = "orthogonal_3"
    frames: int = config.SEQUENCE_FRAMES
    rate_deg: float = config.SEQUENCE_RATE_DEG
    image_size: int = config.SEQUENCE_IMAGE_SIZE
    sensor: Tuple[int, int] = config.SEQUENCE_SENSOR
    velocity: Tuple[float, float, float] = (0.02, 0.0, 0.0)     # world units per frame
    noise_sigma: float = 0.0
    seed: int = config.SEED
    suffix: str = ".pgm"


def sequence_rig(spec: SequenceSpec, m: ParticleModel) -> CameraRig:
    rig = fit_rig_to_size(preset_rig(spec.rig), bounding_radius(m), spec.image_size, config.BENCH_FILL)
    cams = tuple(CameraModel(c.position, c.view_direction, c.up, c.focal_length,
                             (spec.sensor[0] / 2.0, spec.sensor[1] / 2.0), spec.sensor) for c in rig)
    return CameraRig(cams, rig.name)


def sequence_truth(spec: SequenceSpec) -> List[Tuple[Quaternion, np.ndarray]]:
    rng = np.random.default_rng([spec.seed, 7])
    q0 = random_orientation(rng)
    step = axis_angle(random_axis(rng), math.radians(spec.rate_deg))
    out = []
    q = q0
    for n in range(spec.frames):
        out.append((q, np.asarray(spec.velocity, dtype=np.float64) * n))
        q = step * q
    return out


def make_sequence(spec: SequenceSpec, out_dir: str | Path) -> CameraRig:
    """Frames under cam<k>/frame_<nnnnn>, the calibration and the ground truth."""
    out = Path(out_dir)
    m = builtin_model(spec.kind)
    rig = sequence_rig(spec, m)
    truth = sequence_truth(spec)
    for k in range(len(rig)):
        (out / f"cam{k}").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([spec.seed, 11])
    with open(out / "truth.jsonl", "w") as fh:
        for n, (q, pos) in enumerate(truth):
            for k, cam in enumerate(rig):
                img = add_edge_noise(render_frame(cam, [(m, q, pos)]), spec.noise_sigma, rng)
                save_raster(out / f"cam{k}" / f"frame_{n:05d}{spec.suffix}", img.pixels)
            fh.write(json.dumps({"format_version": config.FORMAT_VERSION, "frame": n, "type": m.name,
                                 "x": float(pos[0]), "y": float(pos[1]), "z": float(pos[2]),
                                 "qw": q.w, "qx": q.x, "qy": q.y, "qz": q.z}, sort_keys=True) + "\n")
    save_rig(rig, out / "calibration.json")
    log.info("sequence written dir=%s frames=%d cameras=%d", out, spec.frames, len(rig))
    return rig


def read_truth(path: str | Path) -> Dict[int, Tuple[Quaternion, np.ndarray]]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                r = json.loads(line)
                out[int(r["frame"])] = (Quaternion(r["qw"], r["qx"], r["qy"], r["qz"]),
                                        np.array([r["x"], r["y"], r["z"]], dtype=np.float64))
    return out


def score_track(track: ParticleTrack, truth: Mapping[int, Tuple[Quaternion, np.ndarray]], sym=None) -> np.ndarray:
    """Per-sample orientation error in degrees against the ground truth."""
    return np.array([math.degrees(angle_between(s.q, truth[s.frame_index][0], sym))
                     for s in track.samples if s.frame_index in truth])


# Output files

def write_bench(result: BenchResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{result.name}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "true_type", "found_type", "theta_err_deg", "theta_err_raw_deg", "total_error",
                    "converged", "iterations", "failed", "qw", "qx", "qy", "qz"])
        for c in result.cases:
            q = c.found.as_tuple() if c.found is not None else (math.nan,) * 4
            w.writerow([c.index, c.true_type, c.found_type, repr(c.theta_err), repr(c.theta_err_raw),
                        repr(c.total_error), int(c.converged), c.iterations, int(c.failed), *map(repr, q)])
    summary = {
        "format_version": config.FORMAT_VERSION,
        "name": result.name,
        "spec": asdict(result.spec),
        "cases": len(result.cases),
        "mean_deg": result.mean,
        "median_deg": result.median,
        "failures": result.failures,
        "failure_fraction": result.failure_fraction,
        "misclassified": result.misclassified,
    }
    (out / f"{result.name}.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    with open(out / f"{result.name}_hist.dat", "w") as fh:
        fh.write("# bin_centre_deg density\n")
        centres = 0.5 * (result.hist_edges[1:] + result.hist_edges[:-1])
        for c, d in zip(centres, result.hist_density):
            fh.write(f"{float(c)!r} {float(d)!r}\n")


def write_table(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
