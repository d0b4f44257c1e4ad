"""Grayscale raster files: PGM and PNG.

PGM is read and written with Pillow (8-bit or 16-bit, binary or plain). PNG goes
through pygame surfaces; no display is needed for load/save. Values
are [0, 1] floats in memory and 0..255 on disk.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

os.environ.setdefault("PYGAME_HIDE_SUPPORT_PROMPT", "1")
import pygame  # noqa: E402
from PIL import Image  # noqa: E402

from .errors import FormatError  # noqa: E402

RASTER_SUFFIXES = (".pgm", ".png")


def to_bytes(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    Image.fromarray(to_bytes(pixels)).save(path, format="PPM")


def read_pgm(path: str | Path) -> np.ndarray:
    try:
        img = Image.open(path)
    except (OSError, SyntaxError) as exc:
        raise FormatError(path, "header", str(exc)) from exc
    with img:
        if img.format != "PPM":
            raise FormatError(path, "header", f"expected PGM, got {img.format}")
        try:
            img.load()
        except (OSError, ValueError) as exc:
            raise FormatError(path, "pixels", str(exc)) from exc
        if img.mode == "L":
            return np.asarray(img, dtype=np.float64) / 255.0
        if img.mode.startswith("I"):
            return np.asarray(img, dtype=np.float64) / 65535.0
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


def write_png(path: str | Path, pixels: np.ndarray) -> None:
    gray = to_bytes(pixels).T  # surfarray indexes (x, y)
    surf = pygame.surfarray.make_surface(np.stack([gray, gray, gray], axis=-1))
    pygame.image.save(surf, str(path))


def read_png(path: str | Path) -> np.ndarray:
    try:
        surf = pygame.image.load(str(path))
    except pygame.error as exc:
        raise FormatError(path, "file", str(exc)) from exc
    rgb = pygame.surfarray.array3d(surf).astype(np.float64)
    return rgb.mean(axis=2).T / 255.0


def save_raster(path: str | Path, pixels: np.ndarray) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        write_pgm(path, pixels)
    elif suffix == ".png":
        write_png(path, pixels)
    else:
        raise FormatError(path, "suffix", f"unsupported raster type {suffix!r}")


def load_raster(path: str | Path) -> np.ndarray:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".png":
        return read_png(path)
    raise FormatError(path, "suffix", f"unsupported raster type {suffix!r}")
