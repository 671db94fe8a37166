"""8-bit RGB PNG frames and frame directories."""

from __future__ import annotations

import re
from pathlib import Path
from typing import List

import numpy as np
from PIL import Image

FRAME_PATTERN = "frame_{:06d}.png"


def read_png(path) -> np.ndarray:
    """Load a PNG as float64 ``(H, W, 3)`` in ``[0, 1]``."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return arr.astype(np.float64) / 255.0


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, frame: np.ndarray) -> None:
    arr = to_uint8(frame)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode).save(path, optimize=False)


def list_pngs(directory) -> List[Path]:
    """PNG files in ``directory`` sorted by name (zero-padded names sort by time)."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".png")


def read_frames(directory) -> List[np.ndarray]:
    return [read_png(p) for p in list_pngs(directory)]


def write_frames(directory, frames, names=None) -> List[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = names or [FRAME_PATTERN.format(i + 1) for i in range(len(frames))]
    paths = []
    for name, f in zip(names, frames):
        p = d / name
        write_png(p, f)
        paths.append(p)
    return paths


def frame_number(path) -> int | None:
    m = re.search(r"(\d+)\.png$", str(path), re.IGNORECASE)
    return int(m.group(1)) if m else None
