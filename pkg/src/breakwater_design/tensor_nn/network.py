"""Sequential networks with skip connections and named output heads."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layers import Conv2D, Dense, GlobalAvgPool, Layer, MaxPool2, SkipConcat, Upsample2

CHECKPOINT_VERSION = 1


@dataclass
class NetworkSpec:
    """Layer list plus named heads.

    Each layer is a dict with an ``id`` and a ``type`` among ``conv``,
    ``maxpool2``, ``upsample2``, ``skip_concat``, ``global_avg_pool`` and
    ``dense``. Every layer consumes the previous layer's output;
    ``skip_concat`` additionally concatenates the output of layer ``from``.
    ``heads`` maps output names to layer ids.
    """

    input_shape: tuple[int, int, int]
    layers: list[dict]
    heads: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.layers = [dict(layer) for layer in self.layers]
        if not self.heads and self.layers:
            self.heads = {"out": self.layers[-1]["id"]}

    def validate(self) -> dict[str, tuple]:
        """Walk the shape chain; return each layer's output shape."""
        shapes: dict[str, tuple] = {}
        shape = self.input_shape
        for layer_def in self.layers:
            lid = layer_def.get("id")
            if not lid or lid in shapes:
                raise ValueError(f"layer ids must be unique and non-empty, got {lid!r}")
            layer = build_layer(layer_def)
            skip_shape = None
            if layer_def["type"] == "skip_concat":
                src = layer_def.get("from")
                if src not in shapes:
                    raise ValueError(f"skip_concat {lid!r} source {src!r} does not precede it")
                skip_shape = shapes[src]
            shape = layer.output_shape(shape, skip_shape)
            shapes[lid] = shape
        for name, lid in self.heads.items():
            if lid not in shapes:
                raise ValueError(f"head {name!r} refers to unknown layer {lid!r}")
        return shapes

    def to_json(self) -> str:
        return json.dumps(
            {"input_shape": list(self.input_shape), "layers": self.layers, "heads": self.heads},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        doc = json.loads(text)
        return cls(tuple(doc["input_shape"]), doc["layers"], doc["heads"])


def build_layer(d: dict) -> Layer:
    kind = d["type"]
    if kind == "conv":
        return Conv2D(d["in"], d["out"], d.get("k", 3), d.get("act", "relu"))
    if kind == "maxpool2":
        return MaxPool2()
    if kind == "upsample2":
        return Upsample2()
    if kind == "skip_concat":
        return SkipConcat()
    if kind == "global_avg_pool":
        return GlobalAvgPool()
    if kind == "dense":
        return Dense(d["in"], d["out"], d.get("act", "none"))
    raise ValueError(f"unknown layer type {kind!r}")


class Network:
    def __init__(self, spec: NetworkSpec, seed: int = 0, dtype=np.float32):
        spec.validate()
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.layers: list[tuple[str, dict, Layer]] = []
        for d in spec.layers:
            layer = build_layer(d)
            if hasattr(layer, "init"):
                layer.init(rng, self.dtype)
            self.layers.append((d["id"], d, layer))
        self._recorded = False

    # parameters ---------------------------------------------------------

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {f"{lid}.{k}": v for lid, _, layer in self.layers for k, v in layer.params.items()}

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for lid, _, layer in self.layers:
            for k in layer.params:
                value = np.asarray(params[f"{lid}.{k}"])
                if value.shape != layer.params[k].shape:
                    raise ValueError(f"parameter {lid}.{k} has shape {value.shape}, expected {layer.params[k].shape}")
                layer.params[k] = value.astype(self.dtype, copy=True)

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {f"{lid}.{k}": v for lid, _, layer in self.layers for k, v in layer.grads.items()}

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def astype(self, dtype) -> "Network":
        """Copy of this network with parameters cast to ``dtype``."""
        other = Network(self.spec, dtype=dtype)
        other.set_params(self.params)
        return other

    # passes -------------------------------------------------------------

    def forward(self, x: np.ndarray, record: bool = True) -> dict[str, np.ndarray]:
        x = np.asarray(x)
        if x.ndim != 4 or tuple(x.shape[1:]) != self.spec.input_shape:
            raise ValueError(f"input shape {x.shape} does not match (N,) + {self.spec.input_shape}")
        x = x.astype(self.dtype, copy=False)
        outputs: dict[str, np.ndarray] = {}
        for lid, d, layer in self.layers:
            skip = outputs[d["from"]] if d["type"] == "skip_concat" else None
            x = layer.forward(x, skip)
            outputs[lid] = x
        self._recorded = record
        if not record:
            for _, _, layer in self.layers:
                layer._cache = None
        return {name: outputs[lid] for name, lid in self.spec.heads.items()}

    __call__ = forward

    def backward(self, head_grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        if not self._recorded:
            raise RuntimeError("backward called without a recorded forward pass")
        pending: dict[str, np.ndarray] = {}
        for name, g in head_grads.items():
            lid = self.spec.heads[name]
            g = np.asarray(g, dtype=self.dtype)
            pending[lid] = pending[lid] + g if lid in pending else g
        ids = [lid for lid, _, _ in self.layers]
        for i in range(len(self.layers) - 1, -1, -1):
            lid, d, layer = self.layers[i]
            dout = pending.pop(lid, None)
            if dout is None:
                for k, v in layer.params.items():
                    layer.grads[k] = np.zeros_like(v)
                continue
            res = layer.backward(dout)
            if d["type"] == "skip_concat":
                res, dskip = res
                src = d["from"]
                pending[src] = pending[src] + dskip if src in pending else dskip
            if i > 0:
                prev = ids[i - 1]
                pending[prev] = pending[prev] + res if prev in pending else res
        return self.grads


def forward(net: Network, x: np.ndarray) -> dict[str, np.ndarray]:
    return net.forward(x)


def backward(net: Network, head_grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return net.backward(head_grads)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, net: Network, meta: dict | None = None, arrays: dict | None = None) -> None:
    """Store spec, parameters and extra state in a single ``.npz`` file."""
    payload = {f"param/{k}": v for k, v in net.params.items()}
    for k, v in (arrays or {}).items():
        payload[f"extra/{k}"] = np.asarray(v)
    header = {
        "version": CHECKPOINT_VERSION,
        "spec": net.spec.to_json(),
        "dtype": net.dtype.str,
        "meta": meta or {},
    }
    payload["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[Network, dict, dict]:
    with np.load(Path(path)) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        net = Network(NetworkSpec.from_json(header["spec"]), dtype=np.dtype(header["dtype"]))
        net.set_params({k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")})
        arrays = {k[len("extra/"):]: data[k].copy() for k in data.files if k.startswith("extra/")}
    return net, header["meta"], arrays
