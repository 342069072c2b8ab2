"""Synthetic SAR-like scenes for desk-scale training.

Class 0 carries one large bright blob, class 1 three smaller ones, on a dim
textured sea-like background. The radius ranges differ but the bright-area
ranges overlap, so a random encoder separates the classes only partly.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ParamError
from .image import GrayImage

SCENE_SIZE = 64
BLOB_THRESHOLD = 0.7
# (blob count, radius range) per class
CLASS_LAYOUT = {0: (1, (6.0, 8.5)), 1: (3, (3.25, 4.75))}


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    fx, fy = rng.uniform(0.02, 0.12, 2)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    wave = 0.05 * np.sin(2.0 * math.pi * (fx * x + fy * y) + phase)
    return 0.2 + wave + rng.uniform(-0.08, 0.08, (size, size))


def _place_blobs(rng, count, radius_range, size):
    blobs = []
    while len(blobs) < count:
        r = rng.uniform(*radius_range)
        margin = r + 1.0
        cx, cy = rng.uniform(margin, size - 1 - margin, 2)
        # gap of 2 px keeps blobs apart under 8-connectivity
        if all(math.hypot(cx - bx, cy - by) > r + br + 2.0 for bx, by, br in blobs):
            blobs.append((cx, cy, r))
    return blobs


def gen_synthetic_scene(class_id: int, rng: np.random.Generator, size: int = SCENE_SIZE) -> GrayImage:
    if class_id not in CLASS_LAYOUT:
        raise ParamError(f"class_id must be 0 or 1, got {class_id!r}")
    img = _background(rng, size)
    count, radius_range = CLASS_LAYOUT[class_id]
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    for cx, cy, r in _place_blobs(rng, count, radius_range, size):
        level = rng.uniform(BLOB_THRESHOLD, 1.0)
        img[(x - cx) ** 2 + (y - cy) ** 2 <= r * r] = level
    return GrayImage(np.clip(img, 0.0, 1.0))


def gen_dataset(n: int, rng: np.random.Generator, size: int = SCENE_SIZE):
    """Balanced, shuffled scenes. Returns (list of GrayImage, labels array)."""
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    scenes = [gen_synthetic_scene(int(c), rng, size) for c in labels]
    return scenes, labels
