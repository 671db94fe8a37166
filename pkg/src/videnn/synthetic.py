"""Procedural clean frames and near-static videos for desk-scale experiments.

Scenes are piecewise smooth: a low-frequency colored background with a few flat
rectangles and discs, kept inside ``[0.1, 0.9]`` so moderate noise rarely clips.
"""

from __future__ import annotations

from typing import List

import numpy as np


def _background(h, w, rng):
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    img = np.empty((h, w, 3))
    for c in range(3):
        fy, fx = rng.uniform(0.5, 2.5, 2)
        py, px = rng.uniform(0, 2 * np.pi, 2)
        img[..., c] = 0.5 + 0.18 * np.sin(2 * np.pi * fy * yy + py) * np.cos(2 * np.pi * fx * xx + px)
    return img


def _shapes(h, w, rng, n_shapes):
    shapes = []
    for _ in range(n_shapes):
        kind = rng.integers(2)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        size = rng.uniform(0.08, 0.25) * min(h, w)
        color = rng.uniform(0.15, 0.85, 3)
        shapes.append((kind, cy, cx, size, color))
    return shapes


def _paint(img, shapes, offset=(0.0, 0.0)):
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    for kind, cy, cx, size, color in shapes:
        cy, cx = cy + offset[0], cx + offset[1]
        if kind == 0:
            mask = (np.abs(yy - cy) < size / 2) & (np.abs(xx - cx) < size * 0.7)
        else:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < size ** 2
        img[mask] = color
    return img


def make_scene(h: int = 64, w: int = 64, seed: int = 0, n_shapes: int = 5) -> np.ndarray:
    rng = np.random.default_rng(seed)
    img = _background(h, w, rng)
    return np.clip(_paint(img, _shapes(h, w, rng, n_shapes)), 0.1, 0.9)


def make_video(n_frames: int = 20, h: int = 64, w: int = 64, seed: int = 0,
               n_static: int = 4, speed: float = 1.0) -> List[np.ndarray]:
    """Static background and shapes plus one object drifting ``speed`` px/frame."""
    rng = np.random.default_rng(seed)
    base = _paint(_background(h, w, rng), _shapes(h, w, rng, n_static))
    mover = _shapes(h, w, rng, 1)
    angle = rng.uniform(0, 2 * np.pi)
    frames = []
    for t in range(n_frames):
        off = (speed * t * np.sin(angle), speed * t * np.cos(angle))
        frames.append(np.clip(_paint(base.copy(), mover, off), 0.1, 0.9))
    return frames
