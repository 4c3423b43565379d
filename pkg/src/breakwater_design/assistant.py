"""Confidence classifier deciding between the surrogate and the real model.

Records are labelled ``1`` (recompute with the real model) when the
surrogate's relative error on the aggregated target height exceeds a
threshold. A small CNN on the surrogate's input mask learns to predict that
label; its decision threshold is placed slightly below the crossing of the
TPR and TNR curves so that more risky candidates reach the real model.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .environment import DomainConfig
from .surrogate import N_CHANNELS, SurrogateModel, SurrogateNotReady, TrainingRecord, masks_for
from .tensor_nn import AdamState, Network, NetworkSpec, adam_step, binary_cross_entropy_with_logits, lr_schedule, sigmoid
from .tensor_nn.network import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

USE_REAL = "use_real"
USE_SURROGATE = "use_surrogate"
N_THRESHOLDS = 512


class SingleClassError(ValueError):
    pass


class AssistantNotReady(RuntimeError):
    pass


@dataclass
class LabeledRecord:
    record: TrainingRecord
    label: int
    error: float = 0.0


def relative_errors(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Relative error of the summed target height per record."""
    p = np.asarray(pred, dtype=np.float64).reshape(len(pred), -1).sum(axis=1)
    t = np.asarray(truth, dtype=np.float64).reshape(len(truth), -1).sum(axis=1)
    return np.abs(p - t) / np.maximum(t, 1e-12)


def label_dataset(
    surrogate: SurrogateModel,
    records: Sequence[TrainingRecord],
    dom: DomainConfig,
    err_threshold: float = 0.05,
) -> list[LabeledRecord]:
    """Label 1 where the surrogate's relative error is strictly above the threshold."""
    if surrogate.state != "ready":
        raise SurrogateNotReady(f"surrogate state is {surrogate.state!r}, not 'ready'")
    pred = surrogate.raw_target_predictions(masks_for(records, dom))
    truth = np.stack([r.target_heights for r in records])
    errors = relative_errors(pred, truth)
    return [LabeledRecord(r, int(e > err_threshold), float(e)) for r, e in zip(records, errors)]


# ---------------------------------------------------------------------------
# metrics and threshold selection


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties averaged)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("ROC-AUC needs both classes")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def rates(scores: Sequence[float], labels: Sequence[int], thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """TPR and TNR for the rule ``positive iff score >= t``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if labels.all() or not labels.any():
        raise SingleClassError("TPR/TNR need both classes")
    pos = np.sort(scores[labels])
    neg = np.sort(scores[~labels])
    tpr = 1.0 - np.searchsorted(pos, thresholds, side="left") / len(pos)
    tnr = np.searchsorted(neg, thresholds, side="left") / len(neg)
    return tpr, tnr


def threshold_grid(n: int = N_THRESHOLDS) -> np.ndarray:
    """``n`` evenly spaced thresholds strictly inside (0, 1)."""
    return np.linspace(0.0, 1.0, n + 2)[1:-1]


@dataclass
class Calibration:
    threshold: float
    crossing: float
    thresholds: np.ndarray = field(repr=False)
    tpr: np.ndarray = field(repr=False)
    tnr: np.ndarray = field(repr=False)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "tpr", "tnr"])
            for t, a, b in zip(self.thresholds, self.tpr, self.tnr):
                w.writerow([repr(float(t)), repr(float(a)), repr(float(b))])


def calibrate_threshold(
    scores: Sequence[float],
    labels: Sequence[int],
    offset: float = 0.1,
    n_thresholds: int = N_THRESHOLDS,
) -> Calibration:
    """Threshold ``(1 - offset) * t*`` where ``t*`` is the TPR/TNR crossing.

    The crossing is the argmin of ``|TPR - TNR|`` over the grid; when several
    thresholds tie, the midpoint of the tied range is used.
    """
    grid = threshold_grid(n_thresholds)
    tpr, tnr = rates(scores, labels, grid)
    gap = np.abs(tpr - tnr)
    tied = np.flatnonzero(gap <= gap.min() + 1e-12)
    crossing = 0.5 * (grid[tied[0]] + grid[tied[-1]])
    return Calibration((1.0 - offset) * crossing, crossing, grid, tpr, tnr)


# ---------------------------------------------------------------------------
# model


def assistant_spec(height: int, width: int, widths: Sequence[int] = (8, 16, 24, 32)) -> NetworkSpec:
    """Surrogate-style encoder followed by a dense logit.

    Layer ids match the surrogate encoder so its trained weights can seed
    the assistant.
    """
    w1, w2, w3, w4 = widths
    layers = [
        {"id": "enc1", "type": "conv", "in": N_CHANNELS, "out": w1},
        {"id": "pool1", "type": "maxpool2"},
        {"id": "enc2", "type": "conv", "in": w1, "out": w2},
        {"id": "pool2", "type": "maxpool2"},
        {"id": "enc3", "type": "conv", "in": w2, "out": w3},
        {"id": "pool3", "type": "maxpool2"},
        {"id": "bottom", "type": "conv", "in": w3, "out": w4},
        {"id": "pool4", "type": "maxpool2"},
        {"id": "score", "type": "dense", "in": w4 * (height // 16) * (width // 16), "out": 1},
    ]
    return NetworkSpec((N_CHANNELS, height, width), layers, {"logit": "score"})


@dataclass
class AssistantConfig:
    widths: tuple[int, ...] = (8, 16, 24, 32)
    epochs: int = 15
    batch_size: int = 12
    train_fraction: float = 0.8
    err_threshold: float = 0.05
    offset: float = 0.1
    base_lr: float = 1e-3
    lr_factor: float = 0.95
    lr_every: int = 5


class AssistantModel:
    def __init__(
        self,
        dom: DomainConfig,
        config: AssistantConfig | None = None,
        seed: int = 0,
        encoder_from: SurrogateModel | None = None,
    ):
        self.config = config or AssistantConfig()
        self.shape = dom.shape
        self.net = Network(assistant_spec(dom.height, dom.width, self.config.widths), seed=seed)
        if encoder_from is not None:
            self.copy_encoder(encoder_from)
        self.threshold: float | None = None
        self.state = "untrained"
        self.metrics: dict = {}

    def copy_encoder(self, surrogate: SurrogateModel) -> int:
        """Start from the surrogate's encoder weights where shapes agree."""
        params = self.net.params
        src = surrogate.net.params
        shared = {k: v for k, v in src.items() if k in params and params[k].shape == v.shape}
        self.net.set_params({**params, **shared})
        return len(shared)

    def scores(self, masks: np.ndarray) -> np.ndarray:
        """Probability that the surrogate errs, per mask."""
        logit = self.net.forward(np.asarray(masks, dtype=np.float32), record=False)["logit"]
        return sigmoid(logit[:, 0])

    def route_batch(self, masks: np.ndarray) -> list[str]:
        if self.state != "ready" or self.threshold is None:
            raise AssistantNotReady("assistant is not calibrated")
        return [USE_REAL if s >= self.threshold else USE_SURROGATE for s in self.scores(masks)]

    def route(self, mask: np.ndarray) -> str:
        return self.route_batch(np.asarray(mask)[None])[0]

    def save(self, path: str | Path) -> None:
        meta = {
            "kind": "assistant",
            "state": self.state,
            "threshold": self.threshold,
            "shape": list(self.shape),
            "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.config.__dict__.items()},
            "metrics": self.metrics,
        }
        save_checkpoint(path, self.net, meta)

    @classmethod
    def load(cls, path: str | Path) -> "AssistantModel":
        net, meta, _ = load_checkpoint(path)
        if meta.get("kind") != "assistant":
            raise ValueError(f"{path} is not an assistant checkpoint")
        cfg = dict(meta["config"])
        cfg["widths"] = tuple(cfg["widths"])
        model = cls.__new__(cls)
        model.config = AssistantConfig(**cfg)
        model.shape = tuple(meta["shape"])
        model.net = net
        model.threshold = meta["threshold"]
        model.state = meta["state"]
        model.metrics = meta.get("metrics", {})
        return model


def route(model: AssistantModel, mask: np.ndarray) -> str:
    return model.route(mask)


def stratified_split(labels: Sequence[int], train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Index split keeping the class ratio in both parts."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in (0, 1):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        n_train = int(round(train_fraction * len(idx)))
        if len(idx) >= 2:
            n_train = min(max(n_train, 1), len(idx) - 1)
        train.extend(idx[:n_train])
        test.extend(idx[n_train:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


def fit_classifier(
    model: AssistantModel,
    masks: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    seed: int,
    noise: bool = True,
) -> list[float]:
    """Train with class-balanced logistic loss; returns per-epoch mean loss."""
    cfg = model.config
    labels = np.asarray(labels, dtype=np.float64)
    n_pos = labels.sum()
    if n_pos == 0 or n_pos == len(labels):
        raise SingleClassError("assistant training needs both classes")
    pos_weight = (len(labels) - n_pos) / n_pos
    rng = np.random.default_rng(seed)
    opt = AdamState()
    history = []
    masks = np.asarray(masks, dtype=np.float32)
    for epoch in range(epochs):
        lr = lr_schedule(epoch, cfg.base_lr, cfg.lr_factor, cfg.lr_every)
        order = rng.permutation(len(labels))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = masks[idx].copy()
            if noise:
                batch[:, 1] = rng.standard_normal(batch[:, 1].shape, dtype=np.float32)
            logit = model.net.forward(batch)["logit"]
            loss, grad = binary_cross_entropy_with_logits(logit, labels[idx, None], pos_weight)
            grads = model.net.backward({"logit": grad})
            adam_step(model.net.params, grads, opt, lr)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


def train_assistant(
    labeled: Sequence[LabeledRecord],
    dom: DomainConfig,
    config: AssistantConfig | None = None,
    seed: int = 0,
    epochs: int | None = None,
    surrogate: SurrogateModel | None = None,
) -> tuple[AssistantModel, float]:
    """Train, calibrate on the held-out split and report its ROC-AUC.

    With ``surrogate`` the encoder starts from the surrogate's weights.
    """
    config = config or AssistantConfig()
    labels = np.array([r.label for r in labeled])
    if labels.min() == labels.max():
        raise SingleClassError("labelled dataset contains a single class")
    train_idx, test_idx = stratified_split(labels, config.train_fraction, seed)
    masks = masks_for([r.record for r in labeled], dom)
    model = AssistantModel(dom, config, seed=seed, encoder_from=surrogate)
    history = fit_classifier(
        model, masks[train_idx], labels[train_idx], config.epochs if epochs is None else epochs, seed
    )
    test_scores = model.scores(masks[test_idx])
    auc = roc_auc(test_scores, labels[test_idx])
    cal = calibrate_threshold(test_scores, labels[test_idx], config.offset)
    model.threshold = cal.threshold
    model.state = "ready"
    model.metrics = {
        "roc_auc": auc,
        "threshold": cal.threshold,
        "crossing": cal.crossing,
        "n_train": int(len(train_idx)),
        "n_test": int(len(test_idx)),
        "positive_rate": float(labels.mean()),
        "final_loss": history[-1] if history else None,
    }
    model.calibration = cal
    return model, auc
