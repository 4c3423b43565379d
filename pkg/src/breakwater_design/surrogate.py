"""CNN surrogate of the wave oracle.

A breakwater system is encoded as a three-channel image of the water area:
obstacles (candidate, static structures and land), a fresh standard-normal
noise channel in place of the unknown wave field, and normalized
bathymetry. An encoder-decoder network predicts per-pixel logits over
wave-height bins (the field head); the target head maps the expected height
at each target pixel through a learned per-target affine transform.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .environment import DomainConfig
from .geometry import BreakwaterSystem, rasterize
from .tensor_nn import AdamState, Network, NetworkSpec, adam_step, lr_schedule, pixel_cross_entropy, weighted_mae
from .tensor_nn.layers import neighbourhood
from .tensor_nn.losses import softmax
from .tensor_nn.network import load_checkpoint, save_checkpoint
from .wavesim import WaveField

log = logging.getLogger(__name__)

N_CHANNELS = 3
MAPE_FLOOR = 0.05


class SurrogateNotReady(RuntimeError):
    pass


class DatasetTooSmall(ValueError):
    pass


# ---------------------------------------------------------------------------
# input masks


def obstacle_channel(sys: BreakwaterSystem, dom: DomainConfig) -> np.ndarray:
    return (dom.fixed_obstacles | rasterize(sys, dom)).astype(np.float32)


def bathymetry_channel(dom: DomainConfig) -> np.ndarray:
    top = float(dom.bathymetry.max())
    if top <= 0:
        return np.zeros(dom.shape, dtype=np.float32)
    return np.clip(dom.bathymetry / top, 0.0, 1.0).astype(np.float32)


def noise_seed(run_seed: int, key: int) -> int:
    """Deterministic per-encoding noise seed."""
    return int(np.random.SeedSequence([int(run_seed), int(key)]).generate_state(1)[0])


def encode(sys: BreakwaterSystem, dom: DomainConfig, seed: int) -> np.ndarray:
    """``(3, H, W)`` float32 input mask; the noise channel depends on ``seed``."""
    rng = np.random.default_rng(seed)
    mask = np.empty((N_CHANNELS,) + dom.shape, dtype=np.float32)
    mask[0] = obstacle_channel(sys, dom)
    mask[1] = rng.standard_normal(dom.shape, dtype=np.float32)
    mask[2] = bathymetry_channel(dom)
    return mask


# ---------------------------------------------------------------------------
# datasets


@dataclass
class TrainingRecord:
    genotype: BreakwaterSystem
    heights: np.ndarray  # (H, W) oracle field
    target_heights: np.ndarray  # (T,)
    seed: int = 0
    split: str = "train"


@dataclass
class TrainingDataset:
    records: list[TrainingRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: TrainingRecord) -> None:
        self.records.append(record)

    def split(self, train_fraction: float = 0.8, seed: int = 0) -> None:
        """Tag records ``train``/``test`` by a seeded permutation."""
        n = len(self.records)
        order = np.random.default_rng(seed).permutation(n)
        n_train = int(round(train_fraction * n))
        for rank, idx in enumerate(order):
            self.records[idx].split = "train" if rank < n_train else "test"

    def subset(self, split: str) -> list[TrainingRecord]:
        return [r for r in self.records if r.split == split]

    def save(self, path: str | Path) -> None:
        if not self.records:
            raise ValueError("refusing to save an empty dataset")
        meta = {
            "version": 1,
            "genotypes": [r.genotype.to_lists() for r in self.records],
            "splits": [r.split for r in self.records],
        }
        buf = io.BytesIO()
        np.savez(
            buf,
            meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
            heights=np.stack([r.heights for r in self.records]),
            target_heights=np.stack([r.target_heights for r in self.records]),
            seeds=np.array([r.seed for r in self.records], dtype=np.int64),
        )
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "TrainingDataset":
        with np.load(Path(path)) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            heights, targets, seeds = data["heights"], data["target_heights"], data["seeds"]
            records = [
                TrainingRecord(
                    BreakwaterSystem.from_lists(g), heights[i].copy(), targets[i].copy(), int(seeds[i]), s
                )
                for i, (g, s) in enumerate(zip(meta["genotypes"], meta["splits"]))
            ]
        return cls(records)


# ---------------------------------------------------------------------------
# model


def surrogate_spec(height: int, width: int, n_bins: int = 16, widths: Sequence[int] = (8, 16, 24, 32)) -> NetworkSpec:
    """Three-level encoder-decoder with skip connections.

    The decoder rejoins the full-resolution encoder features through a 1x1
    convolution that produces the bin logits.
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
        {"id": "up3", "type": "upsample2"},
        {"id": "cat3", "type": "skip_concat", "from": "enc3"},
        {"id": "dec3", "type": "conv", "in": w4 + w3, "out": w3},
        {"id": "up2", "type": "upsample2"},
        {"id": "cat2", "type": "skip_concat", "from": "enc2"},
        {"id": "dec2", "type": "conv", "in": w3 + w2, "out": w2},
        {"id": "up1", "type": "upsample2"},
        {"id": "cat1", "type": "skip_concat", "from": "enc1"},
        {"id": "logits", "type": "conv", "in": w2 + w1, "out": n_bins, "k": 1, "act": "none"},
    ]
    return NetworkSpec((N_CHANNELS, height, width), layers, {"field": "logits"})


@dataclass
class SurrogateConfig:
    n_bins: int = 16
    widths: tuple[int, ...] = (8, 16, 24, 32)
    ce_weight: float = 1.0
    mae_weight: float = 5.0
    batch_size: int = 12
    epochs: int = 30
    train_fraction: float = 0.8
    readiness_mape: float = 10.0
    min_records: int = 50
    base_lr: float = 3e-3
    lr_factor: float = 0.95
    lr_every: int = 5
    resample_noise: bool = True  # fresh noise channel per batch; False uses each record's own encoding


class _DecoderPlan:
    """Gather indices that evaluate the decoder at the target cells only.

    Built once per target set. Each level lists the deduplicated cells where
    a decoder convolution is needed and, for every cell of their 3x3
    windows, where its upsampled and skip features live; out-of-grid window
    cells are masked to zero.
    """

    def __init__(self, key):
        targets, (h, w) = key
        self.key = key
        ty = np.array([t[1] for t in targets])
        tx = np.array([t[0] for t in targets])

        # logits (1x1) at the targets on the full grid
        c2, self.dec2_idx = np.unique((ty // 2) * (w // 2) + tx // 2, return_inverse=True)
        self.dec2_idx = self.dec2_idx.reshape(-1, 1)
        self.e1_idx = (ty * w + tx).reshape(-1, 1)

        # dec2 (3x3) at c2 on the half grid
        h2, w2 = h // 2, w // 2
        ny, nx = neighbourhood(c2 // w2, c2 % w2, 3)
        inside = (ny >= 0) & (ny < h2) & (nx >= 0) & (nx < w2)
        ny, nx = np.where(inside, ny, 0), np.where(inside, nx, 0)
        c3, self.dec3_idx = np.unique((ny // 2) * (w2 // 2) + nx // 2, return_inverse=True)
        self.dec3_idx = self.dec3_idx.reshape(ny.shape)
        self.e2_idx = ny * w2 + nx
        self.mask2 = inside.astype(np.float32)

        # dec3 (3x3) at c3 on the quarter grid
        h3, w3 = h2 // 2, w2 // 2
        ny, nx = neighbourhood(c3 // w3, c3 % w3, 3)
        inside = (ny >= 0) & (ny < h3) & (nx >= 0) & (nx < w3)
        ny, nx = np.where(inside, ny, 0), np.where(inside, nx, 0)
        self.bottom_idx = (ny // 2) * (w3 // 2) + nx // 2
        self.e3_idx = ny * w3 + nx
        self.mask3 = inside.astype(np.float32)


class SurrogateModel:
    """Dual-output CNN surrogate bound to one domain."""

    def __init__(self, dom: DomainConfig, config: SurrogateConfig | None = None, seed: int = 0):
        self.config = config or SurrogateConfig()
        self.shape = dom.shape
        self.targets = tuple(dom.targets)
        self.net = Network(surrogate_spec(dom.height, dom.width, self.config.n_bins, self.config.widths), seed=seed)
        n_t = len(self.targets)
        self.scale = np.ones(n_t, dtype=np.float32)
        self.offset = np.zeros(n_t, dtype=np.float32)
        self.bin_edges = np.linspace(0.0, 1.0, self.config.n_bins + 1)
        self.state = "untrained"
        self.water_weight = (~dom.land_mask).astype(np.float64)
        self.metrics: dict = {}

    # bins --------------------------------------------------------------

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    def set_bins(self, max_height: float) -> None:
        top = max(float(max_height), 1e-6) * 1.1
        self.bin_edges = np.linspace(0.0, top, self.config.n_bins + 1)

    def classify(self, heights: np.ndarray) -> np.ndarray:
        k = np.searchsorted(self.bin_edges, heights, side="right") - 1
        return np.clip(k, 0, self.config.n_bins - 1)

    # inference ---------------------------------------------------------

    def _target_index(self):
        xs, ys = zip(*self.targets)
        return np.array(ys), np.array(xs)

    def _heads(self, masks: np.ndarray, record: bool):
        logits = self.net.forward(masks, record=record)["field"]
        probs = softmax(logits, axis=1)
        centers = self.bin_centers.astype(probs.dtype)
        expected = np.tensordot(probs, centers, axes=([1], [0]))
        ty, tx = self._target_index()
        gathered = expected[:, ty, tx]
        targets = gathered * self.scale + self.offset
        return logits, probs, expected, gathered, targets

    def _decoder_plan(self) -> "_DecoderPlan":
        key = (self.targets, self.shape)
        if getattr(self, "_plan", None) is None or self._plan.key != key:
            self._plan = _DecoderPlan(key)
        return self._plan

    def _target_logits(self, masks: np.ndarray) -> np.ndarray:
        """Bin logits ``(N, n_bins, T)`` at the target cells only.

        The encoder runs in full; each decoder convolution is evaluated only
        on the cells that the targets depend on, which is exact because the
        decoder is local.
        """
        layer = {lid: lay for lid, _, lay in self.net.layers}
        x = np.asarray(masks).astype(self.net.dtype, copy=False)
        e1 = layer["enc1"].infer(x)
        e2 = layer["enc2"].infer(layer["pool1"].forward(e1))
        e3 = layer["enc3"].infer(layer["pool2"].forward(e2))
        bottom = layer["bottom"].infer(layer["pool3"].forward(e3))
        for _, _, lay in self.net.layers:
            lay._cache = None
        plan = self._decoder_plan()
        n = len(x)

        def flat(a):
            return a.reshape(n, a.shape[1], -1)

        win3 = np.concatenate([flat(bottom)[:, :, plan.bottom_idx], flat(e3)[:, :, plan.e3_idx]], axis=1) * plan.mask3
        dec3 = layer["dec3"].forward_windows(win3)
        win2 = np.concatenate([dec3[:, :, plan.dec3_idx], flat(e2)[:, :, plan.e2_idx]], axis=1) * plan.mask2
        dec2 = layer["dec2"].forward_windows(win2)
        win1 = np.concatenate([dec2[:, :, plan.dec2_idx], flat(e1)[:, :, plan.e1_idx]], axis=1)
        return layer["logits"].forward_windows(win1)

    def _fast_targets(self, masks: np.ndarray) -> np.ndarray:
        probs = softmax(self._target_logits(masks), axis=1)
        expected = np.einsum("nbt,b->nt", probs, self.bin_centers.astype(probs.dtype))
        return np.maximum(expected * self.scale + self.offset, 0.0).astype(np.float64)

    def predict_targets(self, masks: np.ndarray) -> np.ndarray:
        """Target heights ``(N, T)`` without computing the full field."""
        if self.state != "ready":
            raise SurrogateNotReady(f"surrogate state is {self.state!r}, not 'ready'")
        return self._fast_targets(masks)

    def predict_batch(self, masks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Expected-height fields ``(N, H, W)`` and target heights ``(N, T)``."""
        if self.state != "ready":
            raise SurrogateNotReady(f"surrogate state is {self.state!r}, not 'ready'")
        _, _, expected, _, targets = self._heads(np.asarray(masks, dtype=np.float32), record=False)
        return expected.astype(np.float64), np.maximum(targets, 0.0).astype(np.float64)

    def predict(self, mask: np.ndarray) -> tuple[WaveField, np.ndarray]:
        fields, targets = self.predict_batch(np.asarray(mask)[None])
        return WaveField(heights=fields[0], provenance="surrogate"), targets[0]

    def raw_target_predictions(self, masks: np.ndarray) -> np.ndarray:
        """Target-head output regardless of readiness (for evaluation)."""
        return self._fast_targets(masks)

    # persistence -------------------------------------------------------

    def save(self, path: str | Path) -> None:
        meta = {
            "kind": "surrogate",
            "state": self.state,
            "targets": [list(t) for t in self.targets],
            "shape": list(self.shape),
            "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.config.__dict__.items()},
            "metrics": self.metrics,
        }
        arrays = {
            "scale": self.scale,
            "offset": self.offset,
            "bin_edges": self.bin_edges,
            "water_weight": self.water_weight,
        }
        save_checkpoint(path, self.net, meta, arrays)

    @classmethod
    def load(cls, path: str | Path) -> "SurrogateModel":
        net, meta, arrays = load_checkpoint(path)
        if meta.get("kind") != "surrogate":
            raise ValueError(f"{path} is not a surrogate checkpoint")
        cfg = dict(meta["config"])
        cfg["widths"] = tuple(cfg["widths"])
        model = cls.__new__(cls)
        model.config = SurrogateConfig(**cfg)
        model.shape = tuple(meta["shape"])
        model.targets = tuple(tuple(t) for t in meta["targets"])
        model.net = net
        model.scale = arrays["scale"]
        model.offset = arrays["offset"]
        model.bin_edges = arrays["bin_edges"]
        model.water_weight = arrays["water_weight"]
        model.state = meta["state"]
        model.metrics = meta.get("metrics", {})
        return model


# ---------------------------------------------------------------------------
# metrics


def regression_metrics(pred: np.ndarray, truth: np.ndarray, floor: float = MAPE_FLOOR) -> dict:
    """MAPE (percent, over truths above ``floor``), MAE and error asymmetry."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size == 0:
        raise ValueError("cannot compute metrics on an empty split")
    keep = truth > floor
    mape = float(np.mean(np.abs(pred[keep] - truth[keep]) / truth[keep]) * 100.0) if keep.any() else 0.0
    err = pred - truth
    return {
        "mape": mape,
        "mae": float(np.mean(np.abs(err))),
        "over_fraction": float(np.mean(err > 0)),
        "under_fraction": float(np.mean(err < 0)),
        "n": int(pred.size),
    }


def masks_for(records: Sequence[TrainingRecord], dom: DomainConfig) -> np.ndarray:
    return np.stack([encode(r.genotype, dom, r.seed) for r in records])


def surrogate_metrics(model: SurrogateModel, records: Sequence[TrainingRecord], dom: DomainConfig) -> dict:
    if not records:
        raise ValueError("cannot compute metrics on an empty split")
    pred = model.raw_target_predictions(masks_for(records, dom))
    truth = np.stack([r.target_heights for r in records])
    return regression_metrics(pred, truth)


# ---------------------------------------------------------------------------
# training


def _train_step(model: SurrogateModel, masks, fields, targets, opt: AdamState, lr: float) -> float:
    cfg = model.config
    logits, probs, expected, gathered, pred = model._heads(masks, record=True)
    classes = model.classify(fields)
    ce, dlogits = pixel_cross_entropy(logits, classes, model.water_weight[None])
    mae, dpred = weighted_mae(pred, targets)
    dlogits = cfg.ce_weight * dlogits
    dpred = cfg.mae_weight * dpred.astype(np.float64)
    # target head: pred = scale * gathered + offset, gathered = sum_k p_k c_k
    dscale = (dpred * gathered).sum(axis=0)
    doffset = dpred.sum(axis=0)
    dgathered = dpred * model.scale
    ty, tx = model._target_index()
    centers = model.bin_centers
    p_t = probs[:, :, ty, tx].astype(np.float64)  # (N, K, T)
    dz = p_t * (centers[None, :, None] - gathered[:, None, :]) * dgathered[:, None, :]
    np.add.at(dlogits, (slice(None), slice(None), ty, tx), dz.astype(dlogits.dtype))
    grads = dict(model.net.backward({"field": dlogits}))
    grads["head.scale"] = dscale
    grads["head.offset"] = doffset
    params = model.net.params
    params["head.scale"] = model.scale
    params["head.offset"] = model.offset
    adam_step(params, grads, opt, lr)
    return cfg.ce_weight * ce + cfg.mae_weight * mae


def train(
    model: SurrogateModel,
    dataset: TrainingDataset,
    dom: DomainConfig,
    epochs: int | None = None,
    batch: int | None = None,
    seed: int = 0,
    min_records: int | None = None,
    split: bool = True,
    on_epoch=None,
) -> dict:
    """Fit the surrogate; returns metrics and sets ``state`` from test MAPE.

    With ``split`` the dataset is first re-tagged with the configured
    train/test ratio. ``on_epoch(epoch, loss)`` is called after each epoch.
    """
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    batch = cfg.batch_size if batch is None else batch
    min_records = cfg.min_records if min_records is None else min_records
    if len(dataset) < max(min_records, 1):
        raise DatasetTooSmall(f"need at least {min_records} records, got {len(dataset)}")
    if split:
        dataset.split(cfg.train_fraction, seed)
    train_recs = dataset.subset("train") or list(dataset.records)
    test_recs = dataset.subset("test")

    model.state = "training"
    rng = np.random.default_rng(seed)
    model.set_bins(max(float(r.heights.max()) for r in train_recs))
    obstacles = np.stack([obstacle_channel(r.genotype, dom) for r in train_recs])
    fixed_noise = None if cfg.resample_noise else masks_for(train_recs, dom)[:, 1]
    fields = np.stack([r.heights for r in train_recs])
    targets = np.stack([r.target_heights for r in train_recs]).astype(np.float64)
    bathy = bathymetry_channel(dom)
    opt = AdamState()
    history = []
    n = len(train_recs)
    for epoch in range(epochs):
        lr = lr_schedule(epoch, cfg.base_lr, cfg.lr_factor, cfg.lr_every)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            masks = np.empty((len(idx), N_CHANNELS) + dom.shape, dtype=np.float32)
            masks[:, 0] = obstacles[idx]
            if fixed_noise is None:
                masks[:, 1] = rng.standard_normal((len(idx),) + dom.shape, dtype=np.float32)
            else:
                masks[:, 1] = fixed_noise[idx]
            masks[:, 2] = bathy
            losses.append(_train_step(model, masks, fields[idx], targets[idx], opt, lr))
        history.append(float(np.mean(losses)))
        log.debug("surrogate epoch %d loss %.5f lr %.6f", epoch, history[-1], lr)
        if on_epoch is not None:
            on_epoch(epoch, history[-1])

    metrics = {"loss_history": history, "train": surrogate_metrics(model, train_recs, dom)}
    if test_recs:
        metrics["test"] = surrogate_metrics(model, test_recs, dom)
        ready = metrics["test"]["mape"] <= cfg.readiness_mape
    else:
        ready = metrics["train"]["mape"] <= cfg.readiness_mape
    model.state = "ready" if ready else "untrained"
    model.metrics = {k: v for k, v in metrics.items() if k != "loss_history"}
    return metrics
