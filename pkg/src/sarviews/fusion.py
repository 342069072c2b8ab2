"""Attention fusion head, temperature softmax, symmetric cross-entropy losses and EMA.

Every differentiable piece has a ``*_backward`` companion so the trainer can
run plain gradient descent without an autodiff framework.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParamError

LOG_EPS = 1e-12
_HEADER = struct.Struct("<3Q")


def _as_matrix(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ParamError(f"{name} must be a non-empty (n, d) matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParamError(f"{name} has non-finite entries")
    return arr


@dataclass(eq=False)
class FusionWeights:
    """Query/key projections (d_k x d) and value projection (d_v x 2d)."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray

    def __post_init__(self):
        self.wq = np.array(self.wq, dtype=np.float64)
        self.wk = np.array(self.wk, dtype=np.float64)
        self.wv = np.array(self.wv, dtype=np.float64)
        if self.wq.ndim != 2 or self.wq.shape != self.wk.shape:
            raise ParamError(f"wq {self.wq.shape} and wk {self.wk.shape} must share a (d_k, d) shape")
        if self.wv.ndim != 2 or self.wv.shape[1] != 2 * self.d:
            raise ParamError(f"wv must be (d_v, {2 * self.d}), got {self.wv.shape}")
        for name in ("wq", "wk", "wv"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ParamError(f"FusionWeights.{name} has non-finite entries")

    @property
    def d(self) -> int:
        return self.wq.shape[1]

    @property
    def d_k(self) -> int:
        return self.wq.shape[0]

    @property
    def d_v(self) -> int:
        return self.wv.shape[0]

    @classmethod
    def random(cls, d: int, d_k: int, d_v: int, rng: np.random.Generator, scale: float | None = None):
        s = scale if scale is not None else 1.0 / math.sqrt(d)
        return cls(rng.normal(0.0, s, (d_k, d)), rng.normal(0.0, s, (d_k, d)),
                   rng.normal(0.0, s / math.sqrt(2.0), (d_v, 2 * d)))

    @classmethod
    def zeros(cls, d: int, d_k: int, d_v: int):
        return cls(np.zeros((d_k, d)), np.zeros((d_k, d)), np.zeros((d_v, 2 * d)))

    def params(self) -> list[np.ndarray]:
        return [self.wq, self.wk, self.wv]

    def copy(self) -> FusionWeights:
        return FusionWeights(self.wq.copy(), self.wk.copy(), self.wv.copy())

    def to_bytes(self) -> bytes:
        """Header (d, d_k, d_v) as little-endian uint64, then wq, wk, wv row-major as little-endian float64."""
        body = np.concatenate([self.wq.ravel(), self.wk.ravel(), self.wv.ravel()]).astype("<f8")
        return _HEADER.pack(self.d, self.d_k, self.d_v) + body.tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> FusionWeights:
        if len(raw) < _HEADER.size:
            raise FormatError("fusion checkpoint shorter than its header", field="header")
        d, d_k, d_v = _HEADER.unpack_from(raw)
        n = 2 * d_k * d + d_v * 2 * d
        body = raw[_HEADER.size:]
        if len(body) != 8 * n:
            raise FormatError(f"fusion checkpoint body has {len(body)} bytes, expected {8 * n}", field="body")
        flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
        a, b = d_k * d, 2 * d_k * d
        return cls(flat[:a].reshape(d_k, d), flat[a:b].reshape(d_k, d), flat[b:].reshape(d_v, 2 * d))


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParamError(f"{name} must lie in [0, 1], got {v!r}")


def global_average_pool(tokens) -> np.ndarray:
    return _as_matrix(tokens, "tokens").mean(axis=0)


def row_softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass(eq=False)
class FusionCache:
    f1: np.ndarray
    f4: np.ndarray
    fcat: np.ndarray
    q: np.ndarray
    k: np.ndarray
    attn: np.ndarray
    v: np.ndarray
    out: np.ndarray


def fuse_attention_forward(f1, f4, w: FusionWeights) -> FusionCache:
    f1 = _as_matrix(f1, "f1")
    f4 = _as_matrix(f4, "f4")
    if f1.shape[1] != w.d or f4.shape[1] != w.d:
        raise ParamError(f"token dims {f1.shape[1]}, {f4.shape[1]} do not match weight dim {w.d}")
    pooled = f1.mean(axis=0)
    fcat = np.concatenate([np.broadcast_to(pooled, f4.shape), f4], axis=1)
    q = f1 @ w.wq.T
    k = f4 @ w.wk.T
    attn = row_softmax(q @ k.T / math.sqrt(w.d_k))
    v = fcat @ w.wv.T
    out = (attn @ v).mean(axis=0)
    return FusionCache(f1, f4, fcat, q, k, attn, v, out)


def fuse_attention(f1, f4, w: FusionWeights) -> np.ndarray:
    """Fuse local tokens ``f1`` (n1 x d) with global tokens ``f4`` (n4 x d).

    Queries come from f1, keys from f4, values from f4 with the pooled f1
    concatenated onto every row. The n1 attended rows are mean-pooled into
    one d_v vector.
    """
    return fuse_attention_forward(f1, f4, w).out


def fuse_attention_backward(cache: FusionCache, w: FusionWeights, grad_out):
    """Returns (d_f1, d_f4, FusionWeights of gradients)."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    n1, d = cache.f1.shape
    scale = 1.0 / math.sqrt(w.d_k)
    d_o = np.broadcast_to(grad_out / n1, (n1, grad_out.size))
    d_attn = d_o @ cache.v.T
    d_v = cache.attn.T @ d_o
    d_wv = d_v.T @ cache.fcat
    d_fcat = d_v @ w.wv
    d_s = cache.attn * (d_attn - np.sum(d_attn * cache.attn, axis=1, keepdims=True))
    d_q = d_s @ cache.k * scale
    d_k = d_s.T @ cache.q * scale
    d_wq = d_q.T @ cache.f1
    d_wk = d_k.T @ cache.f4
    d_f1 = d_q @ w.wq + d_fcat[:, :d].sum(axis=0) / n1
    d_f4 = d_k @ w.wk + d_fcat[:, d:]
    return d_f1, d_f4, FusionWeights(d_wq, d_wk, d_wv)


def temperature_softmax(v, t: float) -> np.ndarray:
    if not t > 0 or not math.isfinite(t):
        raise ParamError(f"temperature must be finite and > 0, got {t!r}")
    v = np.asarray(v, dtype=np.float64)
    z = v / t
    e = np.exp(z - z.max())
    return e / e.sum()


def temperature_softmax_backward(p: np.ndarray, t: float, grad_p) -> np.ndarray:
    grad_p = np.asarray(grad_p, dtype=np.float64)
    return p * (grad_p - np.dot(grad_p, p)) / t


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz))) + 0.0


def _check_pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ParamError(f"probability vectors must be 1-D of equal length, got {p.shape} and {q.shape}")
    return p, q


def symmetric_ce(p, q, eps: float = LOG_EPS) -> float:
    """-(1/2) * (<p, ln q> + <q, ln p>) with logs clamped at ``eps``."""
    p, q = _check_pair(p, q)
    lp = np.log(np.maximum(p, eps))
    lq = np.log(np.maximum(q, eps))
    return -0.5 * (float(np.dot(p, lq)) + float(np.dot(q, lp)))


def symmetric_ce_backward(p, q, grad=1.0, eps: float = LOG_EPS):
    """Gradients of ``symmetric_ce`` with respect to p and q."""
    p, q = _check_pair(p, q)
    lp = np.log(np.maximum(p, eps))
    lq = np.log(np.maximum(q, eps))
    inv_p = np.where(p > eps, 1.0 / np.maximum(p, eps), 0.0)
    inv_q = np.where(q > eps, 1.0 / np.maximum(q, eps), 0.0)
    d_p = -0.5 * (lq + q * inv_p)
    d_q = -0.5 * (p * inv_q + lp)
    return grad * d_p, grad * d_q


def cl_loss(za1, za2) -> float:
    """Contrastive term between one model's two views."""
    return symmetric_ce(za1, za2)


def ml_loss(za, zhat_b) -> float:
    """Mutual-learning term between a view embedding and the partner model's fused vector."""
    return symmetric_ce(za, zhat_b)


def total_loss(lcl: float, lml: float, w: LossWeights = LossWeights()) -> float:
    return w.lambda1 * lcl + w.lambda2 * lml


def ema_update(momentum_params, online_params, m: float) -> np.ndarray:
    """``m * momentum + (1 - m) * online``; returns a new array."""
    if not 0.0 <= m <= 1.0:
        raise ParamError(f"EMA decay must lie in [0, 1], got {m!r}")
    mom = np.asarray(momentum_params, dtype=np.float64)
    onl = np.asarray(online_params, dtype=np.float64)
    if mom.shape != onl.shape:
        raise ParamError(f"parameter shapes differ: {mom.shape} vs {onl.shape}")
    if m == 1.0:
        return mom.copy()
    if m == 0.0:
        return onl.copy()
    return m * mom + (1.0 - m) * onl
