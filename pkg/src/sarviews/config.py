"""Run configuration: flat key=value files, flag overrides, and a JSON echo that parses back."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, fields, replace

from .errors import IoError, ParamError, UsageError
from .noise import NoiseParams
from .sampling import SsgConfig
from .trainer import TrainConfig

_TRAIN = TrainConfig()
_NOISE_KEYS = tuple(f.name for f in fields(NoiseParams))
_SSG_KEYS = ("blur_sigma", "threshold", "r", "k", "patch_w", "patch_h")
_TRAIN_KEYS = ("t", "m", "lambda1", "lambda2", "lr", "steps", "batch")
_TOP_KEYS = ("input", "output", "seed", "views", "workers", "gauss_sigma", "ssg_source")
SSG_SOURCES = ("clean", "noisy")
KEYS = _TOP_KEYS + _NOISE_KEYS + _SSG_KEYS + _TRAIN_KEYS

_INT_KEYS = {"seed", "views", "workers", "block", "k", "patch_w", "patch_h", "steps", "batch"}


@dataclass(frozen=True)
class RunConfig:
    input: str | None = None
    output: str | None = None
    seed: int = 0
    views: int = 2
    workers: int = 1
    gauss_sigma: float = 0.05
    ssg_source: str = "clean"  # "noisy": crop patches from the first noise view
    noise: NoiseParams = NoiseParams()
    ssg: SsgConfig = SsgConfig()
    t: float = _TRAIN.t
    m: float = _TRAIN.m
    lambda1: float = _TRAIN.lambda1
    lambda2: tuple[float, ...] = (_TRAIN.lambda2,)
    lr: float = _TRAIN.lr
    steps: int = _TRAIN.steps
    batch: int = _TRAIN.batch

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ParamError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.views < 1:
            raise ParamError(f"views per image must be >= 1, got {self.views}")
        if self.workers < 1:
            raise ParamError(f"workers must be >= 1, got {self.workers}")
        if self.ssg_source not in SSG_SOURCES:
            raise ParamError(f"ssg_source must be one of {SSG_SOURCES}, got {self.ssg_source!r}")
        if not self.gauss_sigma >= 0:
            raise ParamError(f"gauss_sigma must be >= 0, got {self.gauss_sigma}")
        if not 0.0 <= self.ssg.threshold <= 1.0 or self.ssg.k < 1 or self.ssg.blur_sigma < 0:
            raise ParamError("ssg settings need 0 <= threshold <= 1, k >= 1, blur_sigma >= 0")
        if self.ssg.patch_w < 1 or self.ssg.patch_h < 1 or (self.ssg.r is not None and not self.ssg.r > 0):
            raise ParamError("ssg settings need positive patch size and r")
        if not self.lambda2:
            raise ParamError("need at least one lambda2 value")
        for l2 in self.lambda2:
            self.train_config(l2)

    def train_config(self, lambda2: float | None = None) -> TrainConfig:
        l2 = self.lambda2[0] if lambda2 is None else lambda2
        return replace(_TRAIN, t=self.t, m=self.m, lambda1=self.lambda1, lambda2=float(l2),
                       lr=self.lr, steps=self.steps, batch=self.batch)

    def to_flat(self) -> dict:
        """Flat key -> value echo; ``from_flat`` inverts it exactly."""
        out = {k: getattr(self, k) for k in _TOP_KEYS + _TRAIN_KEYS}
        out["lambda2"] = list(self.lambda2)
        out.update({k: getattr(self.noise, k) for k in _NOISE_KEYS})
        out.update({k: getattr(self.ssg, k) for k in _SSG_KEYS})
        return out

    @classmethod
    def from_flat(cls, d: dict) -> RunConfig:
        unknown = set(d) - set(KEYS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        top = {k: d[k] for k in _TOP_KEYS + _TRAIN_KEYS if k in d}
        if "lambda2" in top:
            l2 = top["lambda2"]
            top["lambda2"] = tuple(float(v) for v in (l2 if isinstance(l2, (list, tuple)) else [l2]))
        noise = NoiseParams(**{k: d[k] for k in _NOISE_KEYS if k in d})
        ssg = SsgConfig(**{k: d[k] for k in _SSG_KEYS if k in d})
        return cls(noise=noise, ssg=ssg, **top)


def _convert(key: str, text: str):
    text = text.strip()
    try:
        if key in ("input", "output", "ssg_source"):
            return text
        if key == "lambda2":
            return tuple(float(v) for v in text.split(",") if v.strip())
        if key == "r" and text.lower() in ("", "none"):
            return None
        if key in _INT_KEYS:
            return int(text, 0)
        return float(text)
    except ValueError as exc:
        raise UsageError(f"bad value for {key!r}: {text!r}") from exc


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines (``#`` / ``;`` comments) to typed values."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config: {exc}") from exc
    raw = dict(parser["run"])
    unknown = set(raw) - set(KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return {k: _convert(k, v) for k, v in raw.items()}


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise IoError(f"cannot read config {os.fspath(path)!r}: {exc.strerror or exc}") from exc


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge file values with flag overrides (flags win, ``None`` means unset)."""
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig.from_flat(merged)
    except (TypeError, ParamError) as exc:
        raise UsageError(str(exc)) from exc
