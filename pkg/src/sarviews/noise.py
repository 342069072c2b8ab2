"""Texture-adaptive speckle: per-block GLCM features scale a multiplicative noise field.

Each block gets an amplitude std ``sigma' = sigma0 * F(C, E, H)`` and every
pixel is multiplied by ``v_a * exp(v_p)`` with ``v_a ~ N(1, sigma'^2)`` and
``v_p ~ N(0, phase_sigma^2)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateInput, ParamError
from .glcm import GlcmConfig, GlcmFeatures, texture_features
from .image import GrayImage, QuantizedImage, quantize

MIN_BLOCK = 8


@dataclass(frozen=True)
class NoiseParams:
    alpha: float = 1.0
    gamma: float = 1.0
    delta: float = 1.0
    beta1: float = 1.0
    beta2: float = 1.0
    beta3: float = 1.0
    sigma0: float = 0.15
    phase_sigma: float = 0.0
    block: int = 32

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value) or value < 0:
                raise ParamError(f"NoiseParams.{name} must be finite and >= 0, got {value!r}")
        if int(self.block) != self.block or self.block < MIN_BLOCK:
            raise ParamError(f"NoiseParams.block must be an integer >= {MIN_BLOCK}, got {self.block!r}")


def adjustment_factor(feat: GlcmFeatures, params: NoiseParams) -> float:
    """F = alpha*ln(1 + beta1*C) + gamma*sqrt(beta2*E) + delta*exp(beta3*H)."""
    return (params.alpha * math.log1p(params.beta1 * feat.contrast)
            + params.gamma * math.sqrt(params.beta2 * feat.entropy)
            + params.delta * math.exp(params.beta3 * feat.homogeneity))


def adjusted_sigma(sigma0: float, factor: float) -> float:
    if not (math.isfinite(sigma0) and math.isfinite(factor)) or sigma0 < 0 or factor < 0:
        raise ParamError("sigma0 and F must be finite and >= 0")
    return sigma0 * factor


def block_edges(n: int, block: int) -> list[tuple[int, int]]:
    """Half-open [start, stop) cells of size ``block`` along an axis of length n."""
    return [(s, min(s + block, n)) for s in range(0, n, block)]


def grid_shape(width: int, height: int, block: int) -> tuple[int, int]:
    """(rows, cols) of the block tiling."""
    return (math.ceil(height / block), math.ceil(width / block))


def _feature_window(start: int, stop: int, n: int) -> tuple[int, int]:
    # trailing cells narrower than MIN_BLOCK borrow pixels from their neighbour
    if stop - start >= MIN_BLOCK:
        return start, stop
    return max(0, stop - MIN_BLOCK), stop


@dataclass(frozen=True, eq=False)
class NoiseFieldReport:
    block: int
    contrast: np.ndarray
    entropy: np.ndarray
    homogeneity: np.ndarray
    factor: np.ndarray
    sigma_prime: np.ndarray

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.factor.shape

    def summary(self) -> dict:
        return {"min": float(self.factor.min()), "max": float(self.factor.max()),
                "mean": float(self.factor.mean())}

    def to_json(self) -> dict:
        blocks = []
        rows, cols = self.grid_shape
        for by in range(rows):
            for bx in range(cols):
                blocks.append({
                    "bx": bx, "by": by,
                    "C": float(self.contrast[by, bx]),
                    "E": float(self.entropy[by, bx]),
                    "H": float(self.homogeneity[by, bx]),
                    "F": float(self.factor[by, bx]),
                    "sigma_prime": float(self.sigma_prime[by, bx]),
                })
        return {"blocks": blocks, "summary": self.summary()}


def noise_field_report(img: GrayImage, params: NoiseParams,
                       glcm_cfg: GlcmConfig = GlcmConfig()) -> NoiseFieldReport:
    if img.width < MIN_BLOCK or img.height < MIN_BLOCK:
        raise DegenerateInput(f"image {img.width}x{img.height} smaller than {MIN_BLOCK}x{MIN_BLOCK}")
    block = int(params.block)
    q = quantize(img, glcm_cfg.levels)
    xs = block_edges(img.width, block)
    ys = block_edges(img.height, block)
    out = np.zeros((5, len(ys), len(xs)))
    for by, (y0, y1) in enumerate(ys):
        wy0, wy1 = _feature_window(y0, y1, img.height)
        for bx, (x0, x1) in enumerate(xs):
            wx0, wx1 = _feature_window(x0, x1, img.width)
            cell = QuantizedImage(q.indices[wy0:wy1, wx0:wx1], q.levels)
            feat = texture_features(cell, glcm_cfg)
            f = adjustment_factor(feat, params)
            out[:, by, bx] = (*feat.as_tuple(), f, adjusted_sigma(params.sigma0, f))
    return NoiseFieldReport(block, *out)


def _block_generators(rng: np.random.Generator, rows: int, cols: int):
    # one independent stream per block, keyed by (base seed, block row, block col)
    base = int(rng.integers(0, 2**63))
    return [[np.random.default_rng([base, by, bx]) for bx in range(cols)] for by in range(rows)]


def speckle_ratio_field(height: int, width: int, sigma_grid, phase_sigma: float,
                        rng: np.random.Generator, block: int = 32) -> np.ndarray:
    """Pre-clamp multiplicative field ``v_a * exp(v_p)`` for a block tiling."""
    sigma_grid = np.asarray(sigma_grid, dtype=np.float64)
    expected = grid_shape(width, height, block)
    if sigma_grid.shape != expected:
        raise ParamError(f"sigma grid shape {sigma_grid.shape} does not match tiling {expected}")
    if not np.all(np.isfinite(sigma_grid)) or sigma_grid.min() < 0:
        raise ParamError("sigma grid entries must be finite and >= 0")
    if not math.isfinite(phase_sigma) or phase_sigma < 0:
        raise ParamError(f"phase_sigma must be finite and >= 0, got {phase_sigma!r}")
    ratio = np.empty((height, width))
    gens = _block_generators(rng, *expected)
    for by, (y0, y1) in enumerate(block_edges(height, block)):
        for bx, (x0, x1) in enumerate(block_edges(width, block)):
            g = gens[by][bx]
            shape = (y1 - y0, x1 - x0)
            field = 1.0 + sigma_grid[by, bx] * g.standard_normal(shape)
            if phase_sigma > 0:
                field *= np.exp(phase_sigma * g.standard_normal(shape))
            ratio[y0:y1, x0:x1] = field
    return ratio


def inject_speckle(img: GrayImage, sigma_grid, phase_sigma: float,
                   rng: np.random.Generator, block: int = 32) -> GrayImage:
    """Multiply ``img`` by a fresh speckle field and clamp to [0, 1].

    Negative amplitude draws are kept and only clamped at the pixel level.
    """
    ratio = speckle_ratio_field(img.height, img.width, sigma_grid, phase_sigma, rng, block)
    return GrayImage(np.clip(img.pixels * ratio, 0.0, 1.0))


def generate_noise_view(img: GrayImage, params: NoiseParams = NoiseParams(),
                        glcm_cfg: GlcmConfig = GlcmConfig(),
                        rng: np.random.Generator | None = None) -> tuple[GrayImage, NoiseFieldReport]:
    if rng is None:
        rng = np.random.default_rng()
    report = noise_field_report(img, params, glcm_cfg)
    noisy = inject_speckle(img, report.sigma_prime, params.phase_sigma, rng, int(params.block))
    return noisy, report


def uniform_speckle_view(img: GrayImage, params: NoiseParams,
                         rng: np.random.Generator) -> tuple[GrayImage, np.ndarray]:
    """Texture-blind speckle baseline (sigma' = sigma0 everywhere). Returns the view and its ratio field."""
    block = int(params.block)
    grid = np.full(grid_shape(img.width, img.height, block), params.sigma0)
    ratio = speckle_ratio_field(img.height, img.width, grid, params.phase_sigma, rng, block)
    return GrayImage(np.clip(img.pixels * ratio, 0.0, 1.0)), ratio


def additive_gaussian_view(img: GrayImage, sigma: float, rng: np.random.Generator) -> GrayImage:
    """Additive white Gaussian noise baseline, the usual optical-image augmentation."""
    if not math.isfinite(sigma) or sigma < 0:
        raise ParamError(f"sigma must be finite and >= 0, got {sigma!r}")
    noisy = img.pixels + sigma * rng.standard_normal(img.shape)
    return GrayImage(np.clip(noisy, 0.0, 1.0))
