"""From raw multi-camera frames to particle tracks.

Per frame: segment every camera image into blobs, match blob centroids across
cameras, fit an orientation for every particle seen by all cameras (seeded
from the previous frame when the particle is already tracked, from the
orientation library otherwise), move the triangulated centroid to the centre
of mass, then link the frame's particles onto tracks.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from . import config
from .camera import CameraModel, CameraRig, candidate_matches, depth, locate, project_point, select_matches
from .errors import DegenerateError, FormatError, InvalidInputError, SilposeError
from .geometry import ParticleModel, arm_length, bounding_radius
from .optimize import FitResult, classify_and_fit, refine
from .orientlib import OrientationLibrary
from .rasterio import RASTER_SUFFIXES, load_raster
from .render import SilhouetteImage, area, centroid, render_silhouette
from .rotation import EulerZYX, Quaternion, SymmetryGroup, angle_between, to_euler_zyx

log = logging.getLogger(__name__)

POLARITIES = ("bright_particle", "dark_particle")
_FRAME_NAME = re.compile(r"^frame_(\d+)$")


@dataclass(frozen=True)
class SegmentationParams:
    intensity_threshold: float = config.SEGMENT_THRESHOLD
    min_area: int = config.SEGMENT_MIN_AREA
    max_area: int = config.SEGMENT_MAX_AREA
    polarity: str = "bright_particle"
    padding: int = config.SEGMENT_PADDING

    def __post_init__(self):
        if not self.min_area < self.max_area:
            raise InvalidInputError(f"min_area ({self.min_area}) must be < max_area ({self.max_area})")
        if self.polarity not in POLARITIES:
            raise InvalidInputError(f"polarity must be one of {POLARITIES}, got {self.polarity!r}")
        if not 0.0 <= self.intensity_threshold <= 1.0:
            raise InvalidInputError(f"intensity_threshold must lie in [0, 1], got {self.intensity_threshold}")


@dataclass(frozen=True, eq=False)
class Blob:
    camera_index: int
    bbox: Tuple[int, int, int, int]     # col0, row0, col1, row1 in sensor pixels, half-open
    centroid: np.ndarray                # intensity weighted, sensor pixels
    area: int                           # thresholded pixel count
    cutout: SilhouetteImage


@dataclass(frozen=True)
class FrameObservation:
    frame_index: int
    time: float
    blobs: Tuple[Tuple[Blob, ...], ...]     # per camera

    def __post_init__(self):
        if self.frame_index < 0:
            raise InvalidInputError(f"frame_index must be >= 0, got {self.frame_index}")


@dataclass(frozen=True, eq=False)
class ParticleFit:
    blob_indices: Tuple[int, ...]
    position: Optional[np.ndarray] = None       # after COM correction
    raw_position: Optional[np.ndarray] = None   # triangulated blob centroids
    fit: Optional[FitResult] = None
    seeded: bool = False
    flags: Tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.fit is not None and self.position is not None


@dataclass(frozen=True, eq=False)
class FrameResult:
    frame_index: int
    time: float
    particles: Tuple[ParticleFit, ...]
    unmatched: Tuple[Tuple[int, int], ...] = ()     # (camera, blob) seen by fewer than all cameras


@dataclass(frozen=True, eq=False)
class TrackState:
    track_id: int
    particle_type: str
    last_frame: int
    position: np.ndarray
    velocity: np.ndarray
    q: Quaternion

    def predicted(self, frame_index: int) -> np.ndarray:
        return self.position + self.velocity * (frame_index - self.last_frame)


@dataclass(frozen=True, eq=False)
class TrackSample:
    frame_index: int
    time: float
    position: np.ndarray
    q: Quaternion
    total_error: float
    converged: bool
    euler: EulerZYX
    step_deg: float = 0.0
    jump: bool = False
    flags: Tuple[str, ...] = ()


@dataclass(eq=False)
class ParticleTrack:
    track_id: int
    particle_type: str
    samples: List[TrackSample] = field(default_factory=list)

    @property
    def last_frame(self) -> int:
        return self.samples[-1].frame_index

    def state(self) -> TrackState:
        last = self.samples[-1]
        vel = np.zeros(3)
        if len(self.samples) > 1:
            prev = self.samples[-2]
            vel = (last.position - prev.position) / (last.frame_index - prev.frame_index)
        return TrackState(self.track_id, self.particle_type, last.frame_index, last.position, vel, last.q)


# Segmentation

def segment(image, p: SegmentationParams = SegmentationParams(), camera_index: int = 0) -> List[Blob]:
    """Connected particle regions of one grayscale camera image, in raster-scan label order."""
    img = image if isinstance(image, SilhouetteImage) else SilhouetteImage(np.clip(image, 0.0, 1.0))
    v = img.pixels if p.polarity == "bright_particle" else 1.0 - img.pixels
    fg = v >= p.intensity_threshold
    labels, n = ndimage.label(fg, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return []
    h, w = fg.shape
    blobs = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        region = labels[sl] == k
        count = int(region.sum())
        if not p.min_area <= count <= p.max_area:
            log.debug("camera=%d blob dropped area=%d", camera_index, count)
            continue
        r0, r1 = max(sl[0].start - p.padding, 0), min(sl[0].stop + p.padding, h)
        c0, c1 = max(sl[1].start - p.padding, 0), min(sl[1].stop + p.padding, w)
        own = labels[r0:r1, c0:c1] == k
        keep = ndimage.binary_dilation(own, structure=np.ones((3, 3), dtype=bool),
                                       iterations=config.SEGMENT_RIM_DILATION)
        # rim pixels belonging to another component are not ours
        keep &= (labels[r0:r1, c0:c1] == 0) | own
        origin = (img.origin_px[0] + c0, img.origin_px[1] + r0)
        cut = SilhouetteImage(np.where(keep, v[r0:r1, c0:c1], 0.0), origin)
        blobs.append(Blob(camera_index, (int(origin[0]), int(origin[1]), int(origin[0]) + c1 - c0,
                                         int(origin[1]) + r1 - r0), centroid(cut), count, cut))
    return blobs


def observe_frame(images: Sequence, frame_index: int, time: float = 0.0,
                  p: SegmentationParams = SegmentationParams()) -> FrameObservation:
    return FrameObservation(frame_index, time, tuple(tuple(segment(img, p, k)) for k, img in enumerate(images)))


# Centre of mass

@dataclass(frozen=True, eq=False)
class ComCorrection:
    position: np.ndarray
    raw_position: np.ndarray
    shifts_px: Tuple[np.ndarray, ...]
    degenerate: bool = False


def com_offset(m: ParticleModel, q: Quaternion, cam: CameraModel, position) -> Tuple[np.ndarray, float]:
    """(projected COM - silhouette centroid) in pixels and the synthetic silhouette area."""
    syn = render_silhouette(m, q, cam, position=position)
    return project_point(cam, position) - centroid(syn), area(syn)


def centroid_com_offset(m: ParticleModel, q: Quaternion, cam: CameraModel,
                        position: Sequence[float] = (0.0, 0.0, 0.0)) -> float:
    """Centroid to projected-COM distance divided by the projected arm length."""
    off, _ = com_offset(m, q, cam, position)
    arm_px = cam.focal_length * arm_length(m) / depth(cam, position)
    return float(np.linalg.norm(off) / arm_px)


def correct_com(m: ParticleModel, q: Quaternion, rig: CameraRig, blobs: Sequence[Blob],
                position: Optional[Sequence[float]] = None, iterate: int = config.COM_ITERATIONS) -> ComCorrection:
    """Shift each blob centroid onto the projected COM of a synthetic render and re-triangulate."""
    centroids = [b.centroid for b in blobs]
    if position is None:
        position, _ = locate(rig, centroids)
    raw = np.asarray(position, dtype=np.float64)
    pos = raw
    shifts: Tuple[np.ndarray, ...] = ()
    for _ in range(max(1, iterate)):
        shifted = []
        shift_list = []
        for cam, blob in zip(rig, blobs):
            off, syn_area = com_offset(m, q, cam, pos)
            scale = math.sqrt(area(blob.cutout) / syn_area) if syn_area > 0 else 1.0
            shift_list.append(off * scale)
            shifted.append(blob.centroid + off * scale)
        try:
            pos, _ = locate(rig, shifted, depth_hint=depth(rig[0], pos))
        except DegenerateError as exc:
            log.warning("com correction degenerate, keeping centroid position: %s", exc)
            return ComCorrection(raw, raw, shifts, degenerate=True)
        shifts = tuple(shift_list)
    return ComCorrection(np.asarray(pos), raw, shifts)


# Per-frame pipeline

def _contested(candidates, chosen) -> set:
    """Blobs a chosen group shares with a rival group whose other blobs nobody else claimed."""
    used = {(k, i) for m in chosen for k, i in enumerate(m.indices)}
    contested = set()
    for a in chosen:
        akeys = set(enumerate(a.indices))
        for b in candidates:
            bkeys = set(enumerate(b.indices))
            shared = akeys & bkeys
            rest = bkeys - shared
            if shared and rest and not rest & used:
                contested |= shared
    return contested


def _oversized(obs: FrameObservation, factor: float) -> set:
    areas = [b.area for cam in obs.blobs for b in cam]
    if len(areas) < 2:
        return set()
    limit = factor * float(np.median(areas))
    return {(k, i) for k, cam in enumerate(obs.blobs) for i, b in enumerate(cam) if b.area > limit}


def _seed_for(point: np.ndarray, prev: Sequence[TrackState], frame_index: int, max_jump: float,
              taken: set) -> Optional[TrackState]:
    best, best_d = None, max_jump
    for st in prev:
        if st.track_id in taken or st.last_frame != frame_index - 1:
            continue
        d = float(np.linalg.norm(st.predicted(frame_index) - point))
        if d <= best_d:
            best, best_d = st, d
    return best


def process_frame(obs: FrameObservation, models: Sequence[ParticleModel], rig: CameraRig,
                  prev: Sequence[TrackState] = (), libraries: Optional[Mapping[str, OrientationLibrary]] = None,
                  gap_tol: Optional[float] = None, max_jump: float = config.TRACK_MAX_JUMP,
                  com_iterations: int = config.COM_ITERATIONS) -> FrameResult:
    """Fit every particle seen by all cameras; per-particle failures are flagged, never raised."""
    if len(obs.blobs) != len(rig):
        raise InvalidInputError(f"frame {obs.frame_index}: {len(obs.blobs)} cameras observed, rig has {len(rig)}")
    by_name = {m.name: m for m in models}
    if gap_tol is None:
        gap_tol = config.MATCH_GAP_FRACTION * max(bounding_radius(m) for m in models)
    cents = [[b.centroid for b in cam] for cam in obs.blobs]
    candidates = candidate_matches(rig, cents, gap_tol)
    chosen = select_matches(candidates)
    overlap = _contested(candidates, chosen) | _oversized(obs, config.OVERLAP_AREA_FACTOR)

    particles: List[ParticleFit] = []
    used = set()
    taken: set = set()
    for match in chosen:
        keys = {(k, i) for k, i in enumerate(match.indices)}
        used |= keys
        if keys & overlap:
            log.info("frame=%d particle=%s skipped reason=overlap", obs.frame_index, match.indices)
            particles.append(ParticleFit(match.indices, raw_position=match.point, flags=("overlap",)))
            continue
        blobs = [obs.blobs[k][i] for k, i in enumerate(match.indices)]
        observed = [b.cutout for b in blobs]
        try:
            seed = _seed_for(match.point, prev, obs.frame_index, max_jump, taken)
            if seed is not None and seed.particle_type in by_name:
                taken.add(seed.track_id)
                fit = refine(by_name[seed.particle_type], rig, observed, [seed.q], match.point)
            else:
                seed = None
                fit = classify_and_fit(models, rig, observed, libraries, match.point)
            com = correct_com(by_name[fit.particle_type], fit.q, rig, blobs, match.point, com_iterations)
        except SilposeError as exc:
            log.warning("frame=%d particle=%s failed error=%s: %s", obs.frame_index, match.indices,
                        type(exc).__name__, exc)
            particles.append(ParticleFit(match.indices, raw_position=match.point, flags=("failed",)))
            continue
        flags = []
        if com.degenerate:
            flags.append("degenerate")
        if not fit.converged:
            flags.append("unconverged")
        particles.append(ParticleFit(match.indices, com.position, com.raw_position, fit, seed is not None,
                                     tuple(flags)))
    # overlapping groups that lost the greedy selection are reported as skipped too
    for cand in candidates:
        keys = {(k, i) for k, i in enumerate(cand.indices)}
        rest = keys - overlap
        if keys & overlap and rest and not rest & used:
            used |= rest
            log.info("frame=%d particle=%s skipped reason=overlap", obs.frame_index, cand.indices)
            particles.append(ParticleFit(cand.indices, raw_position=cand.point, flags=("overlap",)))
    unmatched = tuple((k, i) for k, cam in enumerate(obs.blobs) for i in range(len(cam)) if (k, i) not in used)
    if unmatched:
        log.debug("frame=%d unmatched blobs=%d", obs.frame_index, len(unmatched))
    return FrameResult(obs.frame_index, obs.time, tuple(particles), unmatched)


# Linking

class TrackLinker:
    """Incremental constant-velocity linker; a track ends at the first frame it misses."""

    def __init__(self, max_jump: float = config.TRACK_MAX_JUMP,
                 symmetries: Optional[Mapping[str, SymmetryGroup]] = None):
        self.max_jump = max_jump
        self.symmetries = dict(symmetries or {})
        self.tracks: List[ParticleTrack] = []
        self._next_id = 0

    def active(self, frame_index: int) -> List[ParticleTrack]:
        return [t for t in self.tracks if t.last_frame == frame_index - 1]

    def states(self) -> List[TrackState]:
        if not self.tracks:
            return []
        newest = max(t.last_frame for t in self.tracks)
        return [t.state() for t in self.tracks if t.last_frame == newest]

    def update(self, frame: FrameResult) -> None:
        dets = [p for p in frame.particles if p.ok]
        live = self.active(frame.frame_index)
        pairs = []
        for ti, t in enumerate(live):
            pred = t.state().predicted(frame.frame_index)
            for di, d in enumerate(dets):
                if d.fit.particle_type != t.particle_type:
                    continue
                dist = float(np.linalg.norm(d.position - pred))
                if dist <= self.max_jump:
                    pairs.append((dist, t.track_id, di, ti))
        pairs.sort()
        used_t, used_d = set(), set()
        for _, _, di, ti in pairs:
            if ti in used_t or di in used_d:
                continue
            used_t.add(ti)
            used_d.add(di)
            self._append(live[ti], frame, dets[di])
        for di, d in enumerate(dets):
            if di not in used_d:
                track = ParticleTrack(self._next_id, d.fit.particle_type)
                self._next_id += 1
                self.tracks.append(track)
                self._append(track, frame, d)

    def _append(self, track: ParticleTrack, frame: FrameResult, d: ParticleFit) -> None:
        step = 0.0
        jump = False
        if track.samples:
            sym = self.symmetries.get(track.particle_type)
            step = math.degrees(angle_between(track.samples[-1].q, d.fit.q, sym))
            history = [s.step_deg for s in track.samples[1:]][-config.JUMP_WINDOW:]
            if len(history) >= 3:
                jump = step > max(config.JUMP_FACTOR * float(np.median(history)), config.JUMP_FLOOR_DEG)
        if jump:
            log.info("track=%d frame=%d orientation jump step=%.3f deg", track.track_id, frame.frame_index, step)
        track.samples.append(TrackSample(frame.frame_index, frame.time, np.asarray(d.position), d.fit.q,
                                         d.fit.total_error, d.fit.converged, to_euler_zyx(d.fit.q), step, jump,
                                         d.flags))


def link_tracks(frames: Iterable[FrameResult], max_jump: float = config.TRACK_MAX_JUMP,
                symmetries: Optional[Mapping[str, SymmetryGroup]] = None) -> List[ParticleTrack]:
    linker = TrackLinker(max_jump, symmetries)
    for fr in frames:
        linker.update(fr)
    return linker.tracks


# Sequences on disk

def frame_files(root: str | Path, cameras: int) -> List[Tuple[int, List[Path]]]:
    """(frame number, per-camera paths) for <root>/cam<k>/frame_<nnnnn>.(pgm|png)."""
    root = Path(root)
    per_cam: List[Dict[int, Path]] = []
    for k in range(cameras):
        d = root / f"cam{k}"
        if not d.is_dir():
            raise FormatError(d, "directory", "camera directory missing")
        found = {}
        for f in d.iterdir():
            m = _FRAME_NAME.match(f.stem)
            if m and f.suffix.lower() in RASTER_SUFFIXES:
                found[int(m.group(1))] = f
        per_cam.append(found)
    frames = sorted(set.intersection(*(set(c) for c in per_cam))) if per_cam else []
    missing = sorted(set().union(*(set(c) for c in per_cam)) - set(frames))
    if missing:
        log.warning("frames missing on some cameras, skipped: %s", missing[:10])
    return [(n, [per_cam[k][n] for k in range(cameras)]) for n in frames]


def track_sequence(root: str | Path, rig: CameraRig, models: Sequence[ParticleModel],
                   libraries: Optional[Mapping[str, OrientationLibrary]] = None,
                   p: SegmentationParams = SegmentationParams(), frame_rate: float = 1.0,
                   max_jump: float = config.TRACK_MAX_JUMP,
                   com_iterations: int = config.COM_ITERATIONS) -> Tuple[List[FrameResult], List[ParticleTrack]]:
    linker = TrackLinker(max_jump, {m.name: m.symmetry for m in models})
    results = []
    for n, paths in frame_files(root, len(rig)):
        images = [load_raster(f) for f in paths]
        obs = observe_frame(images, n, n / frame_rate, p)
        fr = process_frame(obs, models, rig, linker.states(), libraries, max_jump=max_jump,
                           com_iterations=com_iterations)
        linker.update(fr)
        results.append(fr)
        log.info("frame=%d particles=%d fitted=%d", n, len(fr.particles), sum(1 for x in fr.particles if x.ok))
    return results, linker.tracks


# Track records

def sample_record(track: ParticleTrack, s: TrackSample) -> dict:
    flags = list(s.flags) + (["jump"] if s.jump else [])
    return {
        "format_version": config.FORMAT_VERSION,
        "track_id": track.track_id,
        "frame": s.frame_index,
        "time": s.time,
        "x": float(s.position[0]), "y": float(s.position[1]), "z": float(s.position[2]),
        "qw": s.q.w, "qx": s.q.x, "qy": s.q.y, "qz": s.q.z,
        "psi": s.euler.psi, "theta": s.euler.theta, "phi": s.euler.phi,
        "type": track.particle_type,
        "residual": s.total_error,
        "converged": s.converged,
        "step_deg": s.step_deg,
        "flags": flags,
    }


def write_tracks(path: str | Path, tracks: Sequence[ParticleTrack]) -> None:
    with open(path, "w") as fh:
        for t in tracks:
            for s in t.samples:
                fh.write(json.dumps(sample_record(t, s), sort_keys=True) + "\n")


def read_tracks(path: str | Path) -> List[ParticleTrack]:
    tracks: Dict[int, ParticleTrack] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                if r["format_version"] != config.FORMAT_VERSION:
                    raise FormatError(path, f"line {lineno}", f"unsupported version {r['format_version']}")
                q = Quaternion(r["qw"], r["qx"], r["qy"], r["qz"])
                flags = tuple(f for f in r.get("flags", []) if f != "jump")
                s = TrackSample(int(r["frame"]), float(r["time"]), np.array([r["x"], r["y"], r["z"]], dtype=float),
                                q, float(r["residual"]), bool(r["converged"]),
                                EulerZYX(r["psi"], r["theta"], r["phi"]), float(r.get("step_deg", 0.0)),
                                "jump" in r.get("flags", []), flags)
            except json.JSONDecodeError as exc:
                raise FormatError(path, f"line {lineno}", exc.msg) from exc
            except (KeyError, TypeError, ValueError, InvalidInputError) as exc:
                raise FormatError(path, f"line {lineno}", f"bad track record: {exc}") from exc
            track = tracks.setdefault(r["track_id"], ParticleTrack(r["track_id"], r["type"]))
            if track.samples and s.frame_index <= track.last_frame:
                raise FormatError(path, f"line {lineno}", "frame indices must increase within a track")
            track.samples.append(s)
    return [tracks[k] for k in sorted(tracks)]


def write_track_summary(path: str | Path, tracks: Sequence[ParticleTrack]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["track_id", "type", "first_frame", "last_frame", "frames", "mean_residual", "jumps", "flagged"])
        for t in tracks:
            res = [s.total_error for s in t.samples]
            w.writerow([t.track_id, t.particle_type, t.samples[0].frame_index, t.last_frame, len(t.samples),
                        f"{float(np.mean(res)):.6g}", sum(s.jump for s in t.samples),
                        sum(1 for s in t.samples if s.flags)])
