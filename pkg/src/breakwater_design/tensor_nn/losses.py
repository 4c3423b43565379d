"""Loss functions returning ``(value, gradient)`` pairs.

Values are accumulated in float64; gradients come back in the input dtype.
"""

from __future__ import annotations

import numpy as np


def softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def pixel_cross_entropy(
    logits: np.ndarray, class_map: np.ndarray, weights: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Per-pixel softmax cross-entropy, weighted-averaged over pixels.

    ``logits`` is ``(N, K, H, W)``, ``class_map`` integer ``(N, H, W)`` and
    ``weights`` broadcastable to ``(N, H, W)`` (zero excludes a pixel).
    """
    n, k, h, w = logits.shape
    class_map = np.asarray(class_map)
    if class_map.shape != (n, h, w):
        raise ValueError(f"class map shape {class_map.shape} does not match logits {logits.shape}")
    if class_map.min() < 0 or class_map.max() >= k:
        raise ValueError(f"class indices must lie in [0, {k})")
    wts = np.ones((n, h, w)) if weights is None else np.broadcast_to(np.asarray(weights, dtype=np.float64), (n, h, w))
    total = wts.sum()
    if total <= 0:
        raise ValueError("cross-entropy weights sum to zero")
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    picked = np.take_along_axis(z, class_map[:, None], axis=1)[:, 0]
    nll = logsum - picked
    loss = float((wts * nll).sum() / total)
    grad = np.exp(z - logsum[:, None])
    np.put_along_axis(grad, class_map[:, None], np.take_along_axis(grad, class_map[:, None], axis=1) - 1.0, axis=1)
    grad *= (wts / total)[:, None]
    return loss, grad.astype(logits.dtype)


def weighted_mae(
    pred: np.ndarray, truth: np.ndarray, weights: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Mean absolute error over ``(N, T)`` targets with per-target weights."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"pred shape {pred.shape} does not match truth {truth.shape}")
    n, t = pred.shape
    wts = np.ones(t) if weights is None else np.asarray(weights, dtype=np.float64)
    if wts.shape != (t,):
        raise ValueError(f"weights must have shape ({t},), got {wts.shape}")
    norm = n * wts.sum()
    diff = pred.astype(np.float64) - truth
    loss = float((np.abs(diff) * wts).sum() / norm)
    grad = np.sign(diff) * wts / norm
    return loss, grad.astype(pred.dtype)


def binary_cross_entropy_with_logits(
    logits: np.ndarray, labels: np.ndarray, pos_weight: float = 1.0
) -> tuple[float, np.ndarray]:
    """Mean sigmoid cross-entropy; positives weighted by ``pos_weight``."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if z.shape != y.shape:
        raise ValueError("logits and labels differ in size")
    w = np.where(y > 0.5, pos_weight, 1.0)
    # log(1 + exp(-|z|)) keeps both branches finite
    softplus = np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))
    nll = softplus - y * z
    norm = w.sum()
    loss = float((w * nll).sum() / norm)
    grad = w * (sigmoid(z) - y) / norm
    return loss, grad.reshape(np.shape(logits)).astype(np.asarray(logits).dtype)


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
