"""Two-model contrastive / mutual-learning trainer at desk scale.

Each model owns an online MLP encoder, a momentum twin updated by EMA, and an
attention fusion head. Per scene both models see the same two views: a
texture-adaptive speckle view (view 1) and a set of semantic patches
(view 2). Losses per model::

    L1 = l1 * sce(z_a1, z_a2) + l2 * sce(z_a1, zhat_b2)
    L2 = l1 * sce(z_b1, z_b2) + l2 * sce(z_a2, zhat_b1)

where z_xv is the temperature softmax of model x's pooled local tokens of
view v and zhat_bv is model b's fused vector for view v. Gradient descent
runs on L1 + L2 over the online parameters of both models.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import NumericalError, ParamError
from .fusion import (
    FusionWeights,
    LossWeights,
    ema_update,
    fuse_attention_backward,
    fuse_attention_forward,
    symmetric_ce,
    symmetric_ce_backward,
    temperature_softmax,
    temperature_softmax_backward,
    total_loss,
)
from .image import GrayImage, block_mean
from .noise import NoiseParams, generate_noise_view
from .probes import knn_probe, linear_probe
from .sampling import SsgConfig, ssg_views
from .scenes import gen_dataset

LEAKY_SLOPE = 0.01
LOSS_TERMS = ("L1", "L2", "L_cl1", "L_cl2", "L_ml1", "L_ml2")


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------

class MlpEncoder:
    """Fully connected encoder; every layer is affine followed by a leaky rectifier."""

    def __init__(self, weights, biases, slope: float = LEAKY_SLOPE):
        if len(weights) != len(biases) or not weights:
            raise ParamError("need one bias per weight matrix and at least one layer")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ParamError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ParamError(f"layer {i} expects {w.shape[1]} inputs, previous layer gives "
                                 f"{self.weights[i - 1].shape[0]}")
        self.slope = slope

    @classmethod
    def random(cls, layer_dims, rng: np.random.Generator, slope: float = LEAKY_SLOPE):
        ws, bs = [], []
        for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]):
            ws.append(rng.normal(0.0, math.sqrt(2.0 / n_in), (n_out, n_in)))
            bs.append(np.zeros(n_out))
        return cls(ws, bs, slope)

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> MlpEncoder:
        return MlpEncoder([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.slope)

    def forward(self, x):
        h = np.asarray(x, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != self.in_dim:
            raise ParamError(f"encoder expects (n, {self.in_dim}) inputs, got {h.shape}")
        cache = []
        for w, b in zip(self.weights, self.biases):
            a = h @ w.T + b
            cache.append((h, a))
            h = np.where(a > 0, a, self.slope * a)
        return h, cache

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def features(self, x, depth: int | None = None) -> np.ndarray:
        """Activations after the first ``depth`` layers (all layers when None)."""
        h = np.asarray(x, dtype=np.float64)
        for w, b in list(zip(self.weights, self.biases))[:depth]:
            a = h @ w.T + b
            h = np.where(a > 0, a, self.slope * a)
        return h

    def backward(self, cache, d_out) -> list[np.ndarray]:
        """Parameter gradients in ``params()`` order."""
        grads = []
        d = np.asarray(d_out, dtype=np.float64)
        for (h, a), w in zip(reversed(cache), reversed(self.weights)):
            d_a = d * np.where(a > 0, 1.0, self.slope)
            grads = [d_a.T @ h, d_a.sum(axis=0)] + grads
            d = d_a @ w
        return grads


def fit_patch(img: GrayImage, side: int) -> np.ndarray:
    """Center-crop or edge-pad to side x side."""
    arr = img.pixels
    out = arr
    for axis in (0, 1):
        n = out.shape[axis]
        if n > side:
            start = (n - side) // 2
            out = np.take(out, np.arange(start, start + side), axis=axis)
        elif n < side:
            before = (side - n) // 2
            pad = [(0, 0), (0, 0)]
            pad[axis] = (before, side - n - before)
            out = np.pad(out, pad, mode="edge")
    return out


def encode(enc: MlpEncoder, inputs) -> np.ndarray:
    """Token matrix (n, d_out) for one image or a sequence of images/patches.

    Each input must have exactly ``enc.in_dim`` pixels once flattened.
    """
    if isinstance(inputs, GrayImage):
        inputs = [inputs]
    rows = []
    for item in inputs:
        arr = item.pixels if isinstance(item, GrayImage) else np.asarray(item, dtype=np.float64)
        if arr.size != enc.in_dim:
            raise ParamError(f"input has {arr.size} pixels, encoder expects {enc.in_dim}")
        rows.append(arr.ravel())
    return enc(np.stack(rows))


# ---------------------------------------------------------------------------
# Views
# ---------------------------------------------------------------------------

def tile_inputs(pixels: np.ndarray, side: int) -> np.ndarray:
    """Non-overlapping side x side tiles, flattened, row-major tile order."""
    h, w = (pixels.shape[0] // side) * side, (pixels.shape[1] // side) * side
    if h == 0 or w == 0:
        raise ParamError(f"image {pixels.shape} smaller than tile side {side}")
    t = pixels[:h, :w].reshape(h // side, side, w // side, side).swapaxes(1, 2)
    return t.reshape(-1, side * side)


def quadrant_inputs(img: GrayImage, side: int) -> np.ndarray:
    """The four image quadrants, each area-downsampled to side x side.

    These coarse tokens play the role of the deep, low-resolution global
    feature grid.
    """
    hh, hw = img.height // 2, img.width // 2
    factor = max(1, min(hh, hw) // side)
    rows = []
    for y0 in (0, hh):
        for x0 in (0, hw):
            quad = GrayImage(img.pixels[y0:y0 + hh, x0:x0 + hw])
            rows.append(fit_patch(block_mean(quad, factor), side).ravel())
    return np.stack(rows)


@dataclass(eq=False)
class SceneViews:
    local1: np.ndarray
    global1: np.ndarray
    local2: np.ndarray
    global2: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    batch: int = 16
    n_scenes: int = 200
    n_test: int = 200
    lr: float = 0.5
    t: float = 0.5
    m: float = 0.99
    lambda1: float = 1.0
    lambda2: float = 1.0
    side: int = 16
    hidden: int = 64
    k_dim: int = 16
    d_k: int = 8
    fuse_momentum: bool = True
    center: object = "standardize"  # False, True (mean only) or "standardize"
    noise: NoiseParams = NoiseParams()
    ssg: SsgConfig = SsgConfig(patch_w=16, patch_h=16)
    knn_k: int = 5
    probe_depth: int = -1
    probe_epochs: int = 300
    probe_lr: float = 0.5

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1 or self.n_scenes < self.batch or self.n_test < 1:
            raise ParamError("need steps >= 0, 1 <= batch <= n_scenes, n_test >= 1")
        if not self.lr >= 0 or not self.t > 0 or not 0 <= self.m <= 1:
            raise ParamError("need lr >= 0, t > 0, 0 <= m <= 1")
        if self.center not in (False, True, "standardize"):
            raise ParamError(f"center must be False, True or 'standardize', got {self.center!r}")
        LossWeights(self.lambda1, self.lambda2)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> TrainConfig:
        d = dict(d)
        if isinstance(d.get("noise"), dict):
            d["noise"] = NoiseParams(**d["noise"])
        if isinstance(d.get("ssg"), dict):
            d["ssg"] = SsgConfig(**d["ssg"])
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def make_views(scene: GrayImage, cfg: TrainConfig, rng: np.random.Generator) -> SceneViews:
    noisy, _ = generate_noise_view(scene, cfg.noise, rng=rng)
    patches = ssg_views(scene, cfg.ssg, rng)
    local2 = np.stack([fit_patch(p.image, cfg.side).ravel() for p in patches.patches])
    return SceneViews(
        local1=tile_inputs(noisy.pixels, cfg.side),
        global1=quadrant_inputs(noisy, cfg.side),
        local2=local2,
        global2=quadrant_inputs(scene, cfg.side),
    )


# ---------------------------------------------------------------------------
# Models and objective
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Model:
    encoder: MlpEncoder
    momentum: MlpEncoder
    fusion: FusionWeights

    @classmethod
    def random(cls, cfg: TrainConfig, rng: np.random.Generator) -> Model:
        enc = MlpEncoder.random([cfg.side * cfg.side, cfg.hidden, cfg.k_dim], rng)
        fus = FusionWeights.random(cfg.k_dim, cfg.d_k, cfg.k_dim, rng)
        return cls(enc, enc.copy(), fus)

    def online_params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.fusion.params()

    def copy(self) -> Model:
        return Model(self.encoder.copy(), self.momentum.copy(), self.fusion.copy())


def _split(arr, sizes):
    out, start = [], 0
    for n in sizes:
        out.append(arr[start:start + n])
        start += n
    return out


BN_EPS = 1e-5
LOGIT_KEYS = ("a1", "a2", "b1", "b2", "h1", "h2")


@dataclass(eq=False)
class SceneForward:
    """Pre-softmax vectors of one scene plus what backprop needs."""

    logits: dict
    sizes: tuple
    cache_a: list
    cache_b: list
    fuse1: object
    fuse2: object


def scene_forward(model_a: Model, model_b: Model, views: SceneViews,
                  fuse_momentum: bool = True) -> SceneForward:
    """Encode both views with both models.

    a1, a2, b1, b2 are the pooled local tokens of each model and view; h1, h2
    are model b's fused vectors. With ``fuse_momentum`` the fused tokens come
    from model b's momentum twin and carry no encoder gradient.
    """
    n1, n2 = len(views.local1), len(views.local2)
    g1, g2 = len(views.global1), len(views.global2)
    ta, cache_a = model_a.encoder.forward(np.vstack([views.local1, views.local2]))
    ta1, ta2 = _split(ta, (n1, n2))
    if fuse_momentum:
        tb, cache_b = model_b.encoder.forward(np.vstack([views.local1, views.local2]))
        tb1, tb2 = _split(tb, (n1, n2))
        tm = model_b.momentum(np.vstack([views.local1, views.global1, views.local2, views.global2]))
        fl1, fg1, fl2, fg2 = _split(tm, (n1, g1, n2, g2))
    else:
        tb, cache_b = model_b.encoder.forward(
            np.vstack([views.local1, views.global1, views.local2, views.global2]))
        fl1, fg1, fl2, fg2 = _split(tb, (n1, g1, n2, g2))
        tb1, tb2 = fl1, fl2
    c1 = fuse_attention_forward(fl1, fg1, model_b.fusion)
    c2 = fuse_attention_forward(fl2, fg2, model_b.fusion)
    logits = {"a1": ta1.mean(axis=0), "a2": ta2.mean(axis=0),
              "b1": tb1.mean(axis=0), "b2": tb2.mean(axis=0),
              "h1": c1.out, "h2": c2.out}
    return SceneForward(logits, (n1, g1, n2, g2), cache_a, cache_b, c1, c2)


def scene_backward(model_a: Model, model_b: Model, fwd: SceneForward, d_logits: dict,
                   fuse_momentum: bool = True):
    """Push logit gradients back to the online parameters of both models."""
    n1, g1, n2, g2 = fwd.sizes

    def spread(key, n):
        return np.broadcast_to(d_logits[key] / n, (n, d_logits[key].size))

    grads_a = model_a.encoder.backward(fwd.cache_a, np.vstack([spread("a1", n1), spread("a2", n2)]))
    df1_1, df4_1, dw1 = fuse_attention_backward(fwd.fuse1, model_b.fusion, d_logits["h1"])
    df1_2, df4_2, dw2 = fuse_attention_backward(fwd.fuse2, model_b.fusion, d_logits["h2"])
    if fuse_momentum:
        d_tb = np.vstack([spread("b1", n1), spread("b2", n2)])
    else:
        d_tb = np.vstack([spread("b1", n1) + df1_1, df4_1, spread("b2", n2) + df1_2, df4_2])
    grads_b = model_b.encoder.backward(fwd.cache_b, d_tb)
    grads_a = grads_a + [np.zeros_like(p) for p in model_a.fusion.params()]
    grads_b = grads_b + [a + b for a, b in zip(dw1.params(), dw2.params())]
    return grads_a, grads_b


def loss_terms(z: dict, weights: LossWeights, need_grad: bool = True):
    """The four symmetric cross-entropies and both model totals.

    Returns the loss dict and, if requested, gradients with respect to each
    probability vector in ``z``.
    """
    losses = {"L_cl1": symmetric_ce(z["a1"], z["a2"]), "L_ml1": symmetric_ce(z["a1"], z["h2"]),
              "L_cl2": symmetric_ce(z["b1"], z["b2"]), "L_ml2": symmetric_ce(z["a2"], z["h1"])}
    losses["L1"] = total_loss(losses["L_cl1"], losses["L_ml1"], weights)
    losses["L2"] = total_loss(losses["L_cl2"], losses["L_ml2"], weights)
    # component terms first so the error names the term that actually broke
    for name in LOSS_TERMS[2:] + LOSS_TERMS[:2]:
        if not math.isfinite(losses[name]):
            raise NumericalError(name, losses[name])
    if not need_grad:
        return losses, None
    l1, l2 = weights.lambda1, weights.lambda2
    d = {}
    d["a1"], d["a2"] = (l1 * g for g in symmetric_ce_backward(z["a1"], z["a2"]))
    d["b1"], d["b2"] = (l1 * g for g in symmetric_ce_backward(z["b1"], z["b2"]))
    gp, gq = symmetric_ce_backward(z["a1"], z["h2"])
    d["a1"], d["h2"] = d["a1"] + l2 * gp, l2 * gq
    gp, gq = symmetric_ce_backward(z["a2"], z["h1"])
    d["a2"], d["h1"] = d["a2"] + l2 * gp, l2 * gq
    return losses, d


def batch_objective(models: tuple[Model, Model], views_list, t: float, weights: LossWeights,
                    fuse_momentum: bool = True, center=True, need_grad: bool = True):
    """Batch-mean loss terms and gradients of mean(L1 + L2).

    With ``center`` every logit coordinate has its batch mean subtracted before
    the temperature softmax, so a constant encoder output maps to the
    uniform distribution instead of a zero-loss one-hot. ``"standardize"``
    also divides by the batch std, which keeps the models from collapsing
    onto a few shared coordinates.
    """
    model_a, model_b = models
    fwds = [scene_forward(model_a, model_b, v, fuse_momentum) for v in views_list]
    n = len(fwds)
    raw = {k: np.stack([f.logits[k] for f in fwds]) for k in LOGIT_KEYS}
    if center == "standardize":
        sd = {k: np.sqrt(v.var(axis=0) + BN_EPS) for k, v in raw.items()}
        raw = {k: (v - v.mean(axis=0)) / sd[k] for k, v in raw.items()}
    elif center:
        raw = {k: v - v.mean(axis=0) for k, v in raw.items()}
    probs = {k: [temperature_softmax(row, t) for row in v] for k, v in raw.items()}

    totals = dict.fromkeys(LOSS_TERMS, 0.0)
    d_logits = {k: np.zeros_like(v) for k, v in raw.items()}
    for i in range(n):
        losses, d_z = loss_terms({k: probs[k][i] for k in LOGIT_KEYS}, weights, need_grad)
        for k in LOSS_TERMS:
            totals[k] += losses[k] / n
        if need_grad:
            for k in LOGIT_KEYS:
                d_logits[k][i] = temperature_softmax_backward(probs[k][i], t, d_z[k]) / n
    if not need_grad:
        return totals, None
    if center == "standardize":
        d_logits = {k: (v - v.mean(axis=0) - raw[k] * np.mean(v * raw[k], axis=0)) / sd[k]
                    for k, v in d_logits.items()}
    elif center:
        d_logits = {k: v - v.mean(axis=0) for k, v in d_logits.items()}

    acc_a = [np.zeros_like(p) for p in model_a.online_params()]
    acc_b = [np.zeros_like(p) for p in model_b.online_params()]
    for i, f in enumerate(fwds):
        ga, gb = scene_backward(model_a, model_b, f, {k: d_logits[k][i] for k in LOGIT_KEYS},
                                fuse_momentum)
        for acc, g in zip(acc_a + acc_b, ga + gb):
            acc += g
    return totals, (acc_a, acc_b)


def train_step(models: tuple[Model, Model], batch, cfg: TrainConfig, rng: np.random.Generator):
    """One descent step on the batch mean of L1 + L2, then EMA of both momentum twins.

    ``batch`` holds scenes (GrayImage) or precomputed SceneViews. Models are
    updated in place and returned with the batch-mean loss terms.
    """
    if len(batch) == 0:
        raise ParamError("batch must be non-empty")
    views = [item if isinstance(item, SceneViews) else make_views(item, cfg, rng) for item in batch]
    losses, (grads_a, grads_b) = batch_objective(models, views, cfg.t, cfg.loss_weights,
                                                 cfg.fuse_momentum, cfg.center)
    if cfg.lr != 0:
        params = models[0].online_params() + models[1].online_params()
        for p, g in zip(params, grads_a + grads_b):
            p -= cfg.lr * g
    for model in models:
        for mom, onl in zip(model.momentum.params(), model.encoder.params()):
            mom[...] = ema_update(mom, onl, cfg.m)
    return models, losses


# ---------------------------------------------------------------------------
# Evaluation and full runs
# ---------------------------------------------------------------------------

def embed_scenes(enc: MlpEncoder, scenes, side: int, depth: int | None = -1) -> np.ndarray:
    """Per scene: mean of the fine-tile features concatenated with the mean of the quadrant features.

    ``depth=-1`` stops before the output layer, i.e. probes the backbone
    rather than the projection that feeds the softmax.
    """
    out = []
    for s in scenes:
        local = enc.features(tile_inputs(s.pixels, side), depth).mean(axis=0)
        glob = enc.features(quadrant_inputs(s, side), depth).mean(axis=0)
        out.append(np.concatenate([local, glob]))
    return np.stack(out)


def probe_accuracies(enc: MlpEncoder, train, test, cfg: TrainConfig, seed: int = 0) -> dict:
    (xtr, ytr), (xte, yte) = train, test
    etr = embed_scenes(enc, xtr, cfg.side, cfg.probe_depth or None)
    ete = embed_scenes(enc, xte, cfg.side, cfg.probe_depth or None)
    return {"knn": knn_probe(etr, ytr, ete, yte, cfg.knn_k),
            "linear": linear_probe(etr, ytr, ete, yte, cfg.probe_epochs, cfg.probe_lr, seed)}


@dataclass
class TrainReport:
    seed: int
    config: dict
    records: list[dict] = field(default_factory=list)
    knn_random: float | None = None
    linear_random: float | None = None
    knn: float | None = None
    linear: float | None = None
    models: tuple | None = field(default=None, repr=False, compare=False)

    def summary(self) -> dict:
        return {"type": "summary", "seed": self.seed, "steps": len(self.records),
                "knn": self.knn, "linear": self.linear,
                "knn_random": self.knn_random, "linear_random": self.linear_random,
                "config": self.config}

    def to_jsonl(self) -> str:
        lines = [json.dumps({"type": "step", **r}, sort_keys=True) for r in self.records]
        lines.append(json.dumps(self.summary(), sort_keys=True))
        return "\n".join(lines) + "\n"

    def loss_series(self, term: str = "L1") -> np.ndarray:
        return np.array([r[term] for r in self.records])


def run_training(cfg: TrainConfig = TrainConfig(), seed: int = 0, on_step=None) -> TrainReport:
    """Generate data, measure random-encoder probes, train, measure again."""
    data_ss, init_ss, step_ss = np.random.SeedSequence(seed).spawn(3)
    data_rng = np.random.default_rng(data_ss)
    train = gen_dataset(cfg.n_scenes, data_rng)
    test = gen_dataset(cfg.n_test, data_rng)
    init_rng = np.random.default_rng(init_ss)
    models = (Model.random(cfg, init_rng), Model.random(cfg, init_rng))

    report = TrainReport(seed=seed, config=cfg.to_json())
    base = probe_accuracies(models[0].encoder, train, test, cfg, seed)
    report.knn_random, report.linear_random = base["knn"], base["linear"]

    rng = np.random.default_rng(step_ss)
    scenes = train[0]
    for step in range(cfg.steps):
        idx = rng.choice(cfg.n_scenes, cfg.batch, replace=False)
        _, losses = train_step(models, [scenes[i] for i in idx], cfg, rng)
        record = {"step": step, **losses}
        report.records.append(record)
        if on_step is not None:
            on_step(record)

    if cfg.steps:
        final = probe_accuracies(models[0].encoder, train, test, cfg, seed)
        report.knn, report.linear = final["knn"], final["linear"]
    report.models = models
    return report


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
