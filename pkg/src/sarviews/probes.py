"""Frozen-embedding evaluation: k-nearest-neighbour vote and a softmax linear probe."""

from __future__ import annotations

import numpy as np

from .errors import ParamError


def _check_sets(train_emb, train_labels, test_emb, test_labels):
    xtr = np.asarray(train_emb, dtype=np.float64)
    xte = np.asarray(test_emb, dtype=np.float64)
    ytr = np.asarray(train_labels).astype(np.int64)
    yte = np.asarray(test_labels).astype(np.int64)
    if xtr.ndim != 2 or xte.ndim != 2 or len(xtr) == 0 or len(xte) == 0:
        raise ParamError("embeddings must be non-empty 2-D arrays")
    if xtr.shape[1] != xte.shape[1]:
        raise ParamError(f"embedding dims differ: {xtr.shape[1]} vs {xte.shape[1]}")
    if len(ytr) != len(xtr) or len(yte) != len(xte):
        raise ParamError("label count does not match embedding count")
    return xtr, ytr, xte, yte


def knn_predict(train_emb, train_labels, test_emb, k: int = 5) -> np.ndarray:
    xtr = np.asarray(train_emb, dtype=np.float64)
    ytr = np.asarray(train_labels).astype(np.int64)
    xte = np.asarray(test_emb, dtype=np.float64)
    if not 1 <= k <= len(xtr):
        raise ParamError(f"k={k} must lie in [1, {len(xtr)}]")
    d2 = (np.sum(xte ** 2, axis=1)[:, None] + np.sum(xtr ** 2, axis=1)[None, :]
          - 2.0 * xte @ xtr.T)
    dist = np.sqrt(np.maximum(d2, 0.0))
    preds = np.empty(len(xte), dtype=np.int64)
    for i, row in enumerate(dist):
        nearest = np.argsort(row, kind="stable")[:k]
        votes = {}
        for j in nearest:
            n, s = votes.get(ytr[j], (0, 0.0))
            votes[ytr[j]] = (n + 1, s + row[j])
        # most votes, then smallest summed distance, then lowest label
        preds[i] = min(votes, key=lambda c: (-votes[c][0], votes[c][1], c))
    return preds


def knn_probe(train_emb, train_labels, test_emb, test_labels, k: int = 5) -> float:
    xtr, ytr, xte, yte = _check_sets(train_emb, train_labels, test_emb, test_labels)
    return float(np.mean(knn_predict(xtr, ytr, xte, k) == yte))


def linear_probe(train_emb, train_labels, test_emb, test_labels,
                 epochs: int = 300, lr: float = 0.5, seed: int = 0) -> float:
    """Multinomial logistic regression on standardized frozen embeddings, full-batch gradient descent.

    Features are standardized with training-set statistics. Weights start
    from a small seeded normal draw, so a fixed seed gives a fixed result.
    """
    xtr, ytr, xte, yte = _check_sets(train_emb, train_labels, test_emb, test_labels)
    if epochs < 0 or not lr > 0:
        raise ParamError("epochs must be >= 0 and lr > 0")
    mu = xtr.mean(axis=0)
    sd = xtr.std(axis=0)
    sd[sd < 1e-12] = 1.0
    xtr = (xtr - mu) / sd
    xte = (xte - mu) / sd
    n_cls = int(max(ytr.max(), yte.max())) + 1
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 1e-3, (xtr.shape[1], n_cls))
    b = np.zeros(n_cls)
    onehot = np.eye(n_cls)[ytr]
    n = len(xtr)
    for _ in range(epochs):
        logits = xtr @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        w -= lr * (xtr.T @ g)
        b -= lr * g.sum(axis=0)
    pred = np.argmax(xte @ w + b, axis=1)
    return float(np.mean(pred == yte))
