"""Run configuration and mode dispatch for the silhouette-pose command.

A run is described by a JSON file; every key has a default in config.py.
Flags on the command line override the file. Each run writes manifest.json
(config snapshot, package version, seed) next to its outputs.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from . import __version__, config
from .camera import PRESETS, fit_rig_to_size, resolve_rig
from .errors import ConfigError, SilposeError
from .geometry import BUILTIN_KINDS, bounding_radius, resolve_model
from .orientlib import library_path, load_or_build, save_library
from .rasterio import save_raster
from .render import render_silhouette
from .rotation import Quaternion, angle_between
from .synthbench import (
    BenchSpec,
    SequenceSpec,
    appendix_a_coupling,
    appendix_b_shapes,
    bench_arrangements,
    camera_count_sweep,
    com_offset_map,
    make_sequence,
    noise_sweep,
    read_truth,
    run_bench,
    size_sweep,
    summarize_noise,
    write_bench,
    write_table,
)
from .track import SegmentationParams, read_tracks, track_sequence, write_track_summary, write_tracks

log = logging.getLogger(__name__)

MODES = ("track", "bench", "render", "library", "report")
STUDIES = ("single", "noise", "image_size", "camera_count", "arrangements", "appendix_a", "appendix_b",
           "com_map", "sequence")

# key: (type, default, modes or None for all)
SCHEMA: Dict[str, Tuple[type, Any, Optional[Tuple[str, ...]]]] = {
    "mode": (str, None, None),
    "seed": (int, config.SEED, None),
    "workers": (int, config.WORKERS, None),
    "out": (str, "out", None),
    "cache_dir": (str, config.LIBRARY_CACHE_DIR, None),
    "rig": (str, config.BENCH_RIG, ("bench", "render", "library")),
    "calibration": (str, None, ("track", "library", "render")),
    "models": (list, None, ("track", "library")),
    "model": (str, None, ("render",)),
    "orientation": (list, [1.0, 0.0, 0.0, 0.0], ("render",)),
    "image_size": (int, config.BENCH_IMAGE_SIZE, ("bench", "render")),
    "format": (str, "pgm", ("render",)),
    "study": (str, "single", ("bench",)),
    "kind": (str, config.BENCH_KIND, ("bench",)),
    "candidates": (list, [], ("bench",)),
    "cameras": (list, None, ("bench",)),
    "n_orientations": (int, config.BENCH_ORIENTATIONS, ("bench",)),
    "noise_sigma": (float, 0.0, ("bench",)),
    "noise_levels": (list, list(config.BENCH_NOISE_LEVELS), ("bench",)),
    "seeds": (list, None, ("bench",)),
    "image_sizes": (list, list(config.BENCH_IMAGE_SIZES), ("bench",)),
    "camera_counts": (list, list(config.BENCH_CAMERA_COUNTS), ("bench",)),
    "arrangements": (list, list(config.BENCH_ARRANGEMENTS), ("bench",)),
    "shapes": (list, ["chiral_right", "tetrad", "oloid"], ("bench",)),
    "supply_type": (bool, False, ("bench",)),
    "library_axes": (int, config.LIBRARY_AXES, ("bench", "library", "track")),
    "library_angles": (int, config.LIBRARY_ANGLES, ("bench", "library", "track")),
    "library_resolution": (int, config.LIBRARY_RESOLUTION, ("bench", "library", "track")),
    "coupling_references": (int, config.COUPLING_REFERENCES, ("bench",)),
    "coupling_rotations": (int, config.COUPLING_ROTATIONS, ("bench",)),
    "com_map_steps": (int, config.COM_MAP_STEPS, ("bench",)),
    "sequence_kind": (str, "tetrad", ("bench",)),
    "sequence_rig": (str, "orthogonal_3", ("bench",)),
    "sequence_frames": (int, config.SEQUENCE_FRAMES, ("bench",)),
    "sequence_rate_deg": (float, config.SEQUENCE_RATE_DEG, ("bench",)),
    "sequence_image_size": (int, config.SEQUENCE_IMAGE_SIZE, ("bench",)),
    "images": (str, None, ("track",)),
    "polarity": (str, "bright_particle", ("track",)),
    "intensity_threshold": (float, config.SEGMENT_THRESHOLD, ("track",)),
    "min_area": (int, config.SEGMENT_MIN_AREA, ("track",)),
    "max_area": (int, config.SEGMENT_MAX_AREA, ("track",)),
    "frame_rate": (float, 1.0, ("track",)),
    "max_jump": (float, config.TRACK_MAX_JUMP, ("track",)),
    "com_iterations": (int, config.COM_ITERATIONS, ("track",)),
    "tracks": (str, None, ("report",)),
    "truth": (str, None, ("report",)),
}

REQUIRED = {
    "track": ("images", "calibration", "models"),
    "render": ("model",),
    "library": ("models",),
    "report": ("tracks",),
    "bench": (),
}

POSITIVE = ("image_size", "n_orientations", "library_axes", "library_angles", "library_resolution",
            "coupling_references", "coupling_rotations", "com_map_steps", "sequence_frames",
            "sequence_image_size", "min_area", "max_area", "frame_rate", "max_jump", "com_iterations")


@dataclass(frozen=True)
class RunConfig:
    mode: str
    values: Mapping[str, Any]
    source: Optional[str] = None

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def out(self) -> Path:
        return Path(self.values["out"])


def _line_of(text: str, key: str) -> Optional[int]:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _check_type(key: str, value: Any, expected: type, line: Optional[int]) -> Any:
    if expected is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if expected is int and isinstance(value, bool):
        raise ConfigError(key, f"expected int, got {value!r}", line)
    if not isinstance(value, expected):
        raise ConfigError(key, f"expected {expected.__name__}, got {type(value).__name__}", line)
    return value


def validate(values: Dict[str, Any], text: str = "", source: Optional[str] = None) -> RunConfig:
    mode = values.get("mode")
    if mode is None:
        raise ConfigError("mode", "missing required key")
    if mode not in MODES:
        raise ConfigError("mode", f"unknown mode {mode!r}; expected one of {', '.join(MODES)}", _line_of(text, "mode"))
    out: Dict[str, Any] = {}
    for key, value in values.items():
        line = _line_of(text, key)
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key", line)
        expected, _, modes = SCHEMA[key]
        if modes is not None and mode not in modes:
            raise ConfigError(key, f"not used by mode {mode!r}", line)
        out[key] = value if value is None else _check_type(key, value, expected, line)
    for key, (_, default, modes) in SCHEMA.items():
        if key not in out and (modes is None or mode in modes):
            out[key] = list(default) if isinstance(default, list) else default
    for key in REQUIRED[mode]:
        if out.get(key) is None:
            raise ConfigError(key, f"required for mode {mode!r}")
    for key in POSITIVE:
        if key in out and out[key] is not None and not out[key] > 0:
            raise ConfigError(key, f"must be > 0, got {out[key]}", _line_of(text, key))
    if out["workers"] < 0:
        raise ConfigError("workers", f"must be >= 0, got {out['workers']}", _line_of(text, "workers"))
    if out.get("noise_sigma") is not None and out.get("noise_sigma", 0.0) < 0:
        raise ConfigError("noise_sigma", "must be >= 0", _line_of(text, "noise_sigma"))
    if mode == "bench":
        if out["study"] not in STUDIES:
            raise ConfigError("study", f"unknown study {out['study']!r}; expected one of {', '.join(STUDIES)}",
                              _line_of(text, "study"))
        if out["image_size"] < 8:
            raise ConfigError("image_size", f"must be >= 8, got {out['image_size']}", _line_of(text, "image_size"))
    if mode == "track" and out["min_area"] >= out["max_area"]:
        raise ConfigError("min_area", "must be < max_area", _line_of(text, "min_area"))
    if mode == "render":
        if out["format"] not in ("pgm", "png"):
            raise ConfigError("format", f"expected pgm or png, got {out['format']!r}", _line_of(text, "format"))
        if len(out["orientation"]) != 4:
            raise ConfigError("orientation", "expected [qw, qx, qy, qz]", _line_of(text, "orientation"))
    for key in ("images", "calibration", "tracks", "truth"):
        if out.get(key) is not None and not Path(out[key]).exists():
            raise ConfigError(key, f"path does not exist: {out[key]}", _line_of(text, key))
    for spec in out.get("models") or []:
        if spec not in BUILTIN_KINDS and not Path(spec).exists():
            raise ConfigError("models", f"neither a builtin kind nor a file: {spec}", _line_of(text, "models"))
    rig = out.get("rig")
    if rig is not None and rig not in PRESETS and not Path(rig).exists():
        raise ConfigError("rig", f"neither a preset nor a calibration file: {rig}", _line_of(text, "rig"))
    return RunConfig(mode, out, source)


def parse_config(path: Optional[str | Path], overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Read a JSON run config; overrides (command-line flags) win over the file."""
    values: Dict[str, Any] = {}
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("config", str(exc)) from exc
        try:
            values = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", exc.msg, exc.lineno) from exc
        if not isinstance(values, dict):
            raise ConfigError("config", "top level must be a JSON object", 1)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return validate(values, text, str(path) if path is not None else None)


def write_manifest(cfg: RunConfig) -> None:
    cfg.out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": config.FORMAT_VERSION,
        "program": config.PROGRAM_NAME,
        "version": __version__,
        "seed": cfg["seed"],
        "config": dict(cfg.values),
    }
    (cfg.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


# Modes

def _bench_spec(cfg: RunConfig) -> BenchSpec:
    return BenchSpec(
        kind=cfg["kind"],
        candidates=tuple(cfg["candidates"]),
        rig=cfg["rig"],
        cameras=tuple(cfg["cameras"]) if cfg["cameras"] is not None else None,
        image_size=cfg["image_size"],
        n_orientations=cfg["n_orientations"],
        noise_sigma=cfg["noise_sigma"],
        seed=cfg["seed"],
        supply_type=cfg["supply_type"],
        n_axes=cfg["library_axes"],
        n_angles=cfg["library_angles"],
        library_resolution=cfg["library_resolution"],
    )


def _summary_rows(results) -> List[list]:
    return [[r.name, len(r.cases), r.mean, r.median, r.failures, r.misclassified] for r in results]


_SUMMARY_HEADER = ["name", "cases", "mean_deg", "median_deg", "failures", "misclassified"]


def run_bench_mode(cfg: RunConfig) -> None:
    spec = _bench_spec(cfg)
    study = cfg["study"]
    out = cfg.out
    kw = dict(workers=cfg["workers"], cache_dir=cfg["cache_dir"])
    if study == "single":
        write_bench(run_bench(spec, "bench", **kw), out)
        return
    if study == "noise":
        res = noise_sweep(spec, cfg["noise_levels"], cfg["seeds"], **kw)
    elif study == "image_size":
        res = size_sweep(spec, cfg["image_sizes"], **kw)
    elif study == "camera_count":
        res = camera_count_sweep(spec, cfg["camera_counts"], **kw)
    elif study == "arrangements":
        res = bench_arrangements(spec, cfg["arrangements"], **kw)
    elif study == "appendix_b":
        table = appendix_b_shapes(spec, cfg["shapes"], cfg["image_sizes"], **kw)
        res = {(k, n): r for k, row in table.items() for n, r in row.items()}
        write_table(out / "appendix_b.csv", ["kind", "image_size", "mean_deg", "median_deg"],
                    [[k, n, r.mean, r.median] for (k, n), r in res.items()])
    elif study == "appendix_a":
        report = appendix_a_coupling(spec, None, cfg["image_sizes"], cfg["coupling_references"],
                                     cfg["coupling_rotations"], **kw)
        data = {
            "format_version": config.FORMAT_VERSION,
            "position_offset": report.position_offset,
            "deviation_deg": list(report.deviation_deg),
            "mean_deviation_deg": report.mean_deviation_deg,
            "displacement_pct": {str(k): list(v) for k, v in report.displacement_pct.items()},
        }
        out.mkdir(parents=True, exist_ok=True)
        (out / "appendix_a.json").write_text(json.dumps(data, indent=2, sort_keys=True))
        return
    elif study == "com_map":
        rows = com_offset_map(spec.kind, cfg["com_map_steps"], image_size=spec.image_size)
        out.mkdir(parents=True, exist_ok=True)
        write_table(out / "com_map.csv", ["psi", "theta", "normalized_offset"], rows.tolist())
        return
    else:
        seq = SequenceSpec(kind=cfg["sequence_kind"], rig=cfg["sequence_rig"], frames=cfg["sequence_frames"],
                           rate_deg=cfg["sequence_rate_deg"], image_size=cfg["sequence_image_size"],
                           noise_sigma=spec.noise_sigma, seed=spec.seed)
        make_sequence(seq, out / "sequence")
        return
    for r in res.values():
        write_bench(r, out)
    write_table(out / f"{study}_summary.csv", _SUMMARY_HEADER, _summary_rows(res.values()))
    if study == "noise":
        write_table(out / "noise_levels.csv", ["sigma", "seeds", "mean_deg", "median_deg", "failure_fraction"],
                    [[lv.sigma, len(lv.seeds), lv.mean, lv.median, lv.failure_fraction] for lv in summarize_noise(res)])


def _rig_for(cfg: RunConfig):
    return resolve_rig(cfg.values.get("calibration") or cfg["rig"])


def run_render_mode(cfg: RunConfig) -> None:
    m = resolve_model(cfg["model"])
    q = Quaternion.from_array(cfg["orientation"])
    rig = fit_rig_to_size(_rig_for(cfg), bounding_radius(m), cfg["image_size"], config.BENCH_FILL)
    cfg.out.mkdir(parents=True, exist_ok=True)
    for k, cam in enumerate(rig):
        img = render_silhouette(m, q, cam, cfg["image_size"])
        save_raster(cfg.out / f"render_{m.name}_cam{k}.{cfg['format']}", img.pixels)
    log.info("rendered model=%s cameras=%d", m.name, len(rig))


def run_library_mode(cfg: RunConfig) -> None:
    rig = _rig_for(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    for spec in cfg["models"]:
        m = resolve_model(spec)
        lib = load_or_build(m, rig, cfg["cache_dir"], cfg["library_axes"], cfg["library_angles"],
                            cfg["library_resolution"], cfg["workers"])
        save_library(lib, library_path(cfg.out, lib.particle_type, lib.fingerprint))
        log.info("library type=%s entries=%d", lib.particle_type, len(lib))


def run_track_mode(cfg: RunConfig) -> None:
    rig = resolve_rig(cfg["calibration"])
    models = [resolve_model(s) for s in cfg["models"]]
    libraries = {m.name: load_or_build(m, rig, cfg["cache_dir"], cfg["library_axes"], cfg["library_angles"],
                                       cfg["library_resolution"], cfg["workers"]) for m in models}
    params = SegmentationParams(cfg["intensity_threshold"], cfg["min_area"], cfg["max_area"], cfg["polarity"])
    frames, tracks = track_sequence(cfg["images"], rig, models, libraries, params, cfg["frame_rate"],
                                    cfg["max_jump"], cfg["com_iterations"])
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    write_tracks(out / "tracks.jsonl", tracks)
    write_track_summary(out / "tracks_summary.csv", tracks)
    rows = []
    for fr in frames:
        flags = [f for p in fr.particles for f in p.flags]
        rows.append([fr.frame_index, len(fr.particles), sum(1 for p in fr.particles if p.ok),
                     flags.count("overlap"), flags.count("failed"), len(fr.unmatched)])
    write_table(out / "frames.csv", ["frame", "particles", "fitted", "overlap", "failed", "unmatched"], rows)
    log.info("tracking done frames=%d tracks=%d", len(frames), len(tracks))


def run_report_mode(cfg: RunConfig) -> None:
    tracks = read_tracks(cfg["tracks"])
    truth = read_truth(cfg["truth"]) if cfg["truth"] else None
    euler_rows, point_rows = [], []
    sym = {}
    for t in tracks:
        if truth is not None and t.particle_type not in sym:
            sym[t.particle_type] = resolve_model(t.particle_type).symmetry if t.particle_type in BUILTIN_KINDS else None
        for s in t.samples:
            row = [t.track_id, s.frame_index, s.time, math.degrees(s.euler.psi), math.degrees(s.euler.theta),
                   math.degrees(s.euler.phi), s.step_deg, int(s.jump)]
            if truth is not None:
                ref = truth.get(s.frame_index)
                row.append(math.degrees(angle_between(s.q, ref[0], sym[t.particle_type])) if ref else math.nan)
            euler_rows.append(row)
            point_rows.append([t.track_id, s.frame_index, *(float(v) for v in s.position)])
    header = ["track_id", "frame", "time", "psi_deg", "theta_deg", "phi_deg", "step_deg", "jump"]
    if truth is not None:
        header.append("theta_err_deg")
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_table(cfg.out / "euler.csv", header, euler_rows)
    write_table(cfg.out / "points.csv", ["track_id", "frame", "x", "y", "z"], point_rows)


DISPATCH = {
    "bench": run_bench_mode,
    "render": run_render_mode,
    "library": run_library_mode,
    "track": run_track_mode,
    "report": run_report_mode,
}


def run(cfg: RunConfig) -> int:
    """Execute one run; 0 on success, 2 on a reported error."""
    try:
        write_manifest(cfg)
        DISPATCH[cfg.mode](cfg)
    except SilposeError as exc:
        log.error("run failed mode=%s error=%s: %s", cfg.mode, type(exc).__name__, exc)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=config.PROGRAM_NAME,
                                     description="Multi-camera silhouette-based orientation tracking of particles.")
    parser.add_argument("mode", choices=MODES, help="what to run")
    parser.add_argument("--config", help="JSON run config (defaults from silpose/config.py)")
    parser.add_argument("--seed", type=int, help=f"random seed (default: config.SEED = {config.SEED})")
    parser.add_argument("--workers", type=int, help="worker processes, 0 = all processors")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=config.LOG_FORMAT)
    try:
        cfg = parse_config(args.config, {"mode": args.mode, "seed": args.seed, "workers": args.workers,
                                         "out": args.out})
    except SilposeError as exc:
        log.error("invalid config error=%s: %s", type(exc).__name__, exc)
        return 2
    return run(cfg)
