"""Gray-level co-occurrence matrices and the contrast / entropy / homogeneity features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, ParamError
from .image import QuantizedImage

DEFAULT_LEVELS = 16
AVERAGED_OFFSETS = ((1, 0), (0, 1), (1, 1), (1, -1))


@dataclass(frozen=True)
class GlcmOffset:
    dx: int = 1
    dy: int = 0
    symmetric: bool = True

    def __post_init__(self):
        if (self.dx, self.dy) == (0, 0):
            raise ParamError("GLCM offset must be non-zero")


@dataclass(frozen=True, eq=False)
class GlcmMatrix:
    levels: int
    p: np.ndarray


@dataclass(frozen=True)
class GlcmFeatures:
    contrast: float
    entropy: float
    homogeneity: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.contrast, self.entropy, self.homogeneity)


@dataclass(frozen=True)
class GlcmConfig:
    """How per-block features are computed: gray levels, offset, optional 4-direction averaging."""

    levels: int = DEFAULT_LEVELS
    offset: GlcmOffset = GlcmOffset()
    averaged: bool = False


def _pair_slices(n: int, d: int) -> tuple[slice, slice]:
    # source/target index ranges along one axis for displacement d
    if d >= 0:
        return slice(0, n - d), slice(d, n)
    return slice(-d, n), slice(0, n + d)


def compute_glcm(qimg: QuantizedImage, offset: GlcmOffset) -> GlcmMatrix:
    """Normalized co-occurrence counts over all in-bounds pairs ((x, y), (x+dx, y+dy))."""
    g = qimg.levels
    idx = qimg.indices
    h, w = idx.shape
    if abs(offset.dx) >= w or abs(offset.dy) >= h:
        raise DegenerateInput(f"no pixel pairs in a {w}x{h} image at offset ({offset.dx}, {offset.dy})")
    xs, xt = _pair_slices(w, offset.dx)
    ys, yt = _pair_slices(h, offset.dy)
    src = idx[ys, xs].ravel()
    dst = idx[yt, xt].ravel()
    counts = np.bincount(src * g + dst, minlength=g * g).reshape(g, g).astype(np.float64)
    if offset.symmetric:
        counts = counts + counts.T
    return GlcmMatrix(g, counts / counts.sum())


def glcm_features(m: GlcmMatrix) -> GlcmFeatures:
    p = m.p
    i, j = np.indices(p.shape)
    d2 = (i - j) ** 2
    nz = p[p > 0]
    return GlcmFeatures(
        contrast=float(np.sum(d2 * p)),
        entropy=float(-np.sum(nz * np.log(nz))) + 0.0,
        homogeneity=float(np.sum(p / (1.0 + d2))),
    )


def texture_features(qimg: QuantizedImage, cfg: GlcmConfig = GlcmConfig()) -> GlcmFeatures:
    """Features for one image under ``cfg``.

    In averaged mode the features of the four standard directions are
    averaged; directions without any pixel pair are skipped.
    """
    if not cfg.averaged:
        return glcm_features(compute_glcm(qimg, cfg.offset))
    feats = []
    for dx, dy in AVERAGED_OFFSETS:
        try:
            m = compute_glcm(qimg, GlcmOffset(dx, dy, cfg.offset.symmetric))
        except DegenerateInput:
            continue
        feats.append(glcm_features(m).as_tuple())
    if not feats:
        raise DegenerateInput(f"no pixel pairs in a {qimg.width}x{qimg.height} image")
    c, e, h = np.mean(feats, axis=0)
    return GlcmFeatures(float(c), float(e), float(h))
