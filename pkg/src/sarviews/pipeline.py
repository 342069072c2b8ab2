"""Batch augmentation, noise-variant comparison and the training demo."""

from __future__ import annotations

import datetime
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .errors import IoError, SarViewsError, UsageError
from .image import GrayImage, decode_image, encode_pgm
from .noise import (
    generate_noise_view,
    noise_field_report,
    speckle_ratio_field,
    uniform_speckle_view,
)
from .sampling import ssg_views
from .trainer import run_training

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".pgm", ".png")
MANIFEST_NAME = "manifest.json"
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & MASK64
    return h


def file_seed(seed: int, name: str) -> int:
    """Per-file seed: run seed XOR FNV-1a-64 of the UTF-8 file name."""
    return (seed ^ fnv1a64(name.encode("utf-8"))) & MASK64


def list_inputs(input_dir) -> list[Path]:
    root = Path(input_dir)
    if not root.is_dir():
        raise IoError(f"input directory {os.fspath(root)!r} does not exist")
    files = sorted(p for p in root.iterdir()
                   if p.is_file() and not p.name.startswith(".") and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise UsageError(f"no .pgm or .png files in {os.fspath(root)!r}")
    return files


def _write(path: Path, data: bytes):
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise IoError(f"cannot write {os.fspath(path)!r}: {exc.strerror or exc}") from exc


def _prepare_output(output_dir) -> Path:
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {os.fspath(out)!r}: {exc.strerror or exc}") from exc
    if not os.access(out, os.W_OK):
        raise IoError(f"output directory {os.fspath(out)!r} is not writable")
    return out


def _output_prefix(name: str) -> str:
    stem, dot, ext = name.rpartition(".")
    return f"{stem}_{ext.lower()}" if dot else name


def _failure(name: str, exc: Exception, digest: str | None) -> dict:
    return {"source": name, "status": "failed", "sha256": digest,
            "error": {"kind": type(exc).__name__, "message": str(exc),
                      "field": getattr(exc, "field", None)}}


def augment_one(path: Path, cfg: RunConfig, out: Path) -> dict:
    """Views for one input file. Decode and size problems become a failure record."""
    name = path.name
    try:
        raw = path.read_bytes()
    except OSError as exc:
        return _failure(name, IoError(f"cannot read {name!r}: {exc.strerror or exc}"), None)
    digest = hashlib.sha256(raw).hexdigest()
    seed = file_seed(cfg.seed, name)
    rng = np.random.default_rng(seed)
    prefix = _output_prefix(name)
    try:
        img = decode_image(raw)
        nsg = []
        for i in range(cfg.views):
            view, report = generate_noise_view(img, cfg.noise, rng=rng)
            nsg.append((f"{prefix}_nsg{i}.pgm", view, report.summary()))
        source = nsg[0][1] if cfg.ssg_source == "noisy" else img
        patches = ssg_views(source, cfg.ssg, rng)
    except SarViewsError as exc:
        return _failure(name, exc, digest)

    for fname, view, _ in nsg:
        _write(out / fname, encode_pgm(view))
    ssg_paths = []
    for j, patch in enumerate(patches.patches):
        fname = f"{prefix}_ssg{j}.pgm"
        _write(out / fname, encode_pgm(patch.image))
        ssg_paths.append(fname)
    ssg_meta = patches.to_json()
    ssg_meta["paths"] = ssg_paths
    ssg_meta["rects"] = [p.rect.to_json() for p in patches.patches]
    return {"source": name, "status": "ok", "sha256": digest, "seed": seed,
            "width": img.width, "height": img.height,
            "nsg": [{"path": f, "noise": s} for f, _, s in nsg],
            "ssg": ssg_meta}


def run_augment(cfg: RunConfig, now: datetime.datetime | None = None) -> dict:
    """Write NSG views and an SSG patch set per input plus ``manifest.json``.

    Records are ordered by file name and every random draw comes from the
    file's own seed, so processing order and worker count do not change
    any output byte.
    """
    if cfg.input is None or cfg.output is None:
        raise UsageError("augment needs both an input and an output directory")
    files = list_inputs(cfg.input)
    out = _prepare_output(cfg.output)
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(lambda p: augment_one(p, cfg, out), files))
    else:
        records = [augment_one(p, cfg, out) for p in files]
    records.sort(key=lambda r: r["source"])
    ok = [r for r in records if r["status"] == "ok"]
    for r in records:
        if r["status"] != "ok":
            log.warning("skipped %s: %s", r["source"], r["error"]["message"])
    manifest = {
        "tool": "sarviews",
        "version": __version__,
        "created": (now or datetime.datetime.now(datetime.timezone.utc)).isoformat(),
        "config": cfg.to_flat(),
        "records": records,
        "totals": {
            "inputs": len(records),
            "succeeded": len(ok),
            "failed": len(records) - len(ok),
            "nsg_views": sum(len(r["nsg"]) for r in ok),
            "patch_sets": len(ok),
            "patches": sum(len(r["ssg"]["paths"]) for r in ok),
        },
    }
    _write(out / MANIFEST_NAME, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return manifest


def manifest_paths(manifest: dict) -> list[str]:
    paths = []
    for r in manifest["records"]:
        if r["status"] == "ok":
            paths += [v["path"] for v in r["nsg"]] + r["ssg"]["paths"]
    return paths


# ---------------------------------------------------------------------------
# Noise comparison
# ---------------------------------------------------------------------------

def noise_variants(img: GrayImage, cfg: RunConfig, rng: np.random.Generator) -> dict:
    """Texture-adaptive speckle, texture-blind speckle and additive Gaussian noise.

    Each entry holds the view, its pre-clamp pixel-ratio field and the
    per-block sigma' grid (None for the Gaussian baseline).
    """
    block = int(cfg.noise.block)
    report = noise_field_report(img, cfg.noise)
    ratio = speckle_ratio_field(img.height, img.width, report.sigma_prime,
                                cfg.noise.phase_sigma, rng, block)
    glcm_view = GrayImage(np.clip(img.pixels * ratio, 0.0, 1.0))
    plain_view, plain_ratio = uniform_speckle_view(img, cfg.noise, rng)
    plain_grid = np.full(report.sigma_prime.shape, cfg.noise.sigma0)
    noise = cfg.gauss_sigma * rng.standard_normal(img.shape)
    gauss_view = GrayImage(np.clip(img.pixels + noise, 0.0, 1.0))
    lit = img.pixels > 0
    gauss_ratio = np.where(lit, (img.pixels + noise) / np.where(lit, img.pixels, 1.0), np.nan)
    return {
        "glcm_speckle": (glcm_view, ratio, report.sigma_prime),
        "plain_speckle": (plain_view, plain_ratio, plain_grid),
        "additive_gaussian": (gauss_view, gauss_ratio, None),
    }


def run_noise_compare(cfg: RunConfig, input_path=None) -> dict:
    source = input_path if input_path is not None else cfg.input
    if not source or cfg.output is None:
        raise UsageError("noise-compare needs an input image and an output directory")
    path = Path(source)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {os.fspath(path)!r}: {exc.strerror or exc}") from exc
    img = decode_image(raw)
    out = _prepare_output(cfg.output)
    rng = np.random.default_rng(file_seed(cfg.seed, path.name))
    variants = noise_variants(img, cfg, rng)
    strip = np.hstack([v[0].pixels for v in variants.values()])
    _write(out / "noise_compare.pgm", encode_pgm(GrayImage(strip)))
    stats = {}
    for name, (_, ratio, grid) in variants.items():
        defined = ratio[np.isfinite(ratio)]
        stats[name] = {
            "ratio_mean": float(defined.mean()) if defined.size else None,
            "ratio_std": float(defined.std()) if defined.size else None,
            "sigma_prime_variance": float(np.var(grid)) if grid is not None else None,
            "sigma_prime": grid.tolist() if grid is not None else None,
        }
    report = {"source": path.name, "order": list(variants), "gauss_sigma": cfg.gauss_sigma,
              "sigma0": cfg.noise.sigma0, "variants": stats}
    _write(out / "noise_compare.json", (json.dumps(report, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return report


# ---------------------------------------------------------------------------
# Training demo
# ---------------------------------------------------------------------------

def run_train_demo(cfg: RunConfig) -> list:
    """One toy training run per lambda2 value; JSON-lines report and fusion checkpoints per run."""
    if cfg.output is None:
        raise UsageError("train-demo needs an output directory")
    out = _prepare_output(cfg.output)
    reports, summary = [], []
    for l2 in cfg.lambda2:
        tcfg = cfg.train_config(l2)
        log.info("training with lambda2=%g for %d steps", l2, tcfg.steps)
        report = run_training(tcfg, cfg.seed)
        run_dir = _prepare_output(out / f"lambda2_{l2:g}")
        _write(run_dir / "train.jsonl", report.to_jsonl().encode("utf-8"))
        for tag, model in zip("ab", report.models):
            _write(run_dir / f"fusion_{tag}.bin", model.fusion.to_bytes())
        reports.append(report)
        summary.append({"lambda2": l2, **{k: v for k, v in report.summary().items() if k != "config"}})
    _write(out / "summary.json", (json.dumps({"runs": summary, "config": cfg.to_flat()},
                                             indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return reports
