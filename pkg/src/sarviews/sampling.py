"""Semantic-aware local sampling.

Brightness heat map -> threshold mask -> one bounding box -> Poisson-disk
points inside the box -> fixed-size patches centered on those points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, ParamError
from .image import GrayImage, Rect, crop, gaussian_blur


@dataclass(frozen=True, eq=False)
class HeatMap:
    values: np.ndarray

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


@dataclass(frozen=True)
class SamplePoints:
    points: tuple[tuple[float, float], ...]
    min_dist: float
    box: Rect

    def __len__(self):
        return len(self.points)

    def as_array(self) -> np.ndarray:
        return np.array(self.points, dtype=np.float64).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class Patch:
    center: tuple[int, int]
    rect: Rect
    image: GrayImage


@dataclass(frozen=True, eq=False)
class PatchSet:
    patches: list[Patch]
    patch_size: tuple[int, int]
    box: Rect | None = None
    degenerate_mask: bool = False
    points: SamplePoints | None = None

    def __len__(self):
        return len(self.patches)

    def to_json(self) -> dict:
        pts = self.points.points if self.points is not None else [p.center for p in self.patches]
        return {
            "box": self.box.to_json() if self.box is not None else None,
            "degenerate_mask": bool(self.degenerate_mask),
            "points": [{"x": float(x), "y": float(y)} for x, y in pts],
            "patch_size": {"w": int(self.patch_size[0]), "h": int(self.patch_size[1])},
        }


@dataclass(frozen=True)
class SsgConfig:
    blur_sigma: float = 2.0
    threshold: float = 0.6
    r: float | None = None  # None -> max(patch_w, patch_h) / 2
    k: int = 30
    patch_w: int = 32
    patch_h: int = 32

    @property
    def min_dist(self) -> float:
        return float(self.r) if self.r is not None else max(self.patch_w, self.patch_h) / 2.0


def heat_map(img: GrayImage, blur_sigma: float = 2.0) -> HeatMap:
    """Blurred intensity rescaled to [0, 1]; a constant image gives all zeros."""
    arr = gaussian_blur(img, blur_sigma).pixels
    lo, hi = arr.min(), arr.max()
    if hi <= lo:
        return HeatMap(np.zeros_like(arr))
    return HeatMap((arr - lo) / (hi - lo))


def binary_mask(heat: HeatMap, threshold: float) -> BinaryMask:
    if not 0.0 <= threshold <= 1.0:
        raise ParamError(f"threshold must lie in [0, 1], got {threshold!r}")
    return BinaryMask(heat.values >= threshold)


def bounding_box(mask: BinaryMask) -> tuple[Rect, bool]:
    """Tightest rect around the set bits, and whether the mask was empty.

    An empty mask falls back to the full image and reports ``True``.
    """
    ys, xs = np.nonzero(mask.bits)
    if xs.size == 0:
        return Rect.full(mask.width, mask.height), True
    return Rect(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())), False


def poisson_disk(box: Rect, r: float, k: int = 30,
                 rng: np.random.Generator | None = None) -> SamplePoints:
    """Bridson dart throwing over the continuous area of ``box``.

    Pixel (x, y) covers [x, x+1) x [y, y+1), so the sampled domain is
    [x0, x1+1) x [y0, y1+1). Every pair of returned points is strictly
    more than ``r`` apart.
    """
    box = Rect(*box)
    if not r > 0 or not math.isfinite(r):
        raise ParamError(f"r must be finite and > 0, got {r!r}")
    if k < 1:
        raise ParamError(f"k must be >= 1, got {k!r}")
    if box.x1 < box.x0 or box.y1 < box.y0:
        raise DegenerateInput(f"degenerate box {tuple(box)}")
    if rng is None:
        rng = np.random.default_rng()

    ox, oy = float(box.x0), float(box.y0)
    w, h = float(box.width), float(box.height)
    cell = r / math.sqrt(2.0)
    gw, gh = math.ceil(w / cell), math.ceil(h / cell)
    # plain lists: scalar numpy indexing dominates the inner loop otherwise
    grid = [[-1] * gw for _ in range(gh)]
    r2 = r * r
    pts: list[tuple[float, float]] = []

    def far_enough(x, y):
        gx, gy = int(x / cell), int(y / cell)
        for j in range(max(gy - 2, 0), min(gy + 3, gh)):
            for i in range(max(gx - 2, 0), min(gx + 3, gw)):
                n = grid[j][i]
                if n >= 0:
                    px, py = pts[n]
                    if (px - x) ** 2 + (py - y) ** 2 <= r2:
                        return False
        return True

    def accept(x, y):
        grid[int(y / cell)][int(x / cell)] = len(pts)
        pts.append((x, y))
        active.append(len(pts) - 1)

    active: list[int] = []
    accept(rng.uniform(0.0, w), rng.uniform(0.0, h))
    while active:
        slot = int(rng.integers(len(active)))
        px, py = pts[active[slot]]
        radii = r * np.sqrt(1.0 + 3.0 * rng.random(k))  # area-uniform on [r, 2r]
        angles = rng.uniform(0.0, 2.0 * math.pi, k)
        for rad, ang in zip(radii.tolist(), angles.tolist()):
            x = px + rad * math.cos(ang)
            y = py + rad * math.sin(ang)
            if 0.0 <= x < w and 0.0 <= y < h and far_enough(x, y):
                accept(x, y)
                break
        else:
            active[slot] = active[-1]
            active.pop()
    return SamplePoints(tuple((x + ox, y + oy) for x, y in pts), float(r), box)


def patch_rect(center: tuple[int, int], patch_size: tuple[int, int], width: int, height: int) -> Rect:
    """w x h rect centered on ``center``, shifted (never shrunk) to fit the image."""
    pw, ph = patch_size
    cx, cy = center
    x0 = min(max(cx - pw // 2, 0), width - pw)
    y0 = min(max(cy - ph // 2, 0), height - ph)
    return Rect(x0, y0, x0 + pw - 1, y0 + ph - 1)


def extract_patches(img: GrayImage, pts: SamplePoints, patch_size: tuple[int, int]) -> PatchSet:
    pw, ph = patch_size
    if pw < 1 or ph < 1 or pw > img.width or ph > img.height:
        raise ParamError(f"patch {pw}x{ph} does not fit a {img.width}x{img.height} image")
    patches = []
    for x, y in pts.points:
        center = (int(math.floor(x)), int(math.floor(y)))
        rect = patch_rect(center, (pw, ph), img.width, img.height)
        patches.append(Patch(center, rect, crop(img, rect)))
    return PatchSet(patches, (pw, ph), box=pts.box, points=pts)


def ssg_views(img: GrayImage, cfg: SsgConfig = SsgConfig(),
              rng: np.random.Generator | None = None) -> PatchSet:
    heat = heat_map(img, cfg.blur_sigma)
    mask = binary_mask(heat, cfg.threshold)
    box, degenerate = bounding_box(mask)
    pts = poisson_disk(box, cfg.min_dist, cfg.k, rng)
    ps = extract_patches(img, pts, (cfg.patch_w, cfg.patch_h))
    return PatchSet(ps.patches, ps.patch_size, box=box, degenerate_mask=degenerate, points=pts)
