"""Shared test oracles."""

from __future__ import annotations

import numpy as np

from breakwater_design.tensor_nn import Network, NetworkSpec

# one network per layer family, small enough for exhaustive finite differences
GRADCHECK_SPECS = {
    "conv3_relu+maxpool2+upsample2+skip_concat+conv1": NetworkSpec(
        (2, 8, 8),
        [
            {"id": "c1", "type": "conv", "in": 2, "out": 3, "k": 3, "act": "relu"},
            {"id": "p1", "type": "maxpool2"},
            {"id": "c2", "type": "conv", "in": 3, "out": 2, "k": 3, "act": "relu"},
            {"id": "u1", "type": "upsample2"},
            {"id": "s1", "type": "skip_concat", "from": "c1"},
            {"id": "c3", "type": "conv", "in": 5, "out": 2, "k": 1, "act": "none"},
        ],
    ),
    "conv3_linear+global_avg_pool+dense": NetworkSpec(
        (2, 8, 8),
        [
            {"id": "c1", "type": "conv", "in": 2, "out": 3, "k": 3, "act": "none"},
            {"id": "g1", "type": "global_avg_pool"},
            {"id": "d1", "type": "dense", "in": 3, "out": 2, "act": "none"},
        ],
    ),
    "maxpool2+dense_relu+dense": NetworkSpec(
        (1, 8, 8),
        [
            {"id": "p1", "type": "maxpool2"},
            {"id": "d1", "type": "dense", "in": 16, "out": 6, "act": "relu"},
            {"id": "d2", "type": "dense", "in": 6, "out": 1, "act": "none"},
        ],
    ),
}


def gradient_check(spec: NetworkSpec, seed: int = 0, h: float = 1e-6) -> float:
    """Worst relative error between backprop and central differences.

    The loss is a fixed random projection of the network output, so every
    output element receives a distinct upstream gradient.
    """
    rng = np.random.default_rng(seed)
    net = Network(spec, seed=seed, dtype=np.float64)
    x = rng.standard_normal((2,) + spec.input_shape)
    out_shape = net.forward(x)["out"].shape
    proj = rng.standard_normal(out_shape)

    def loss() -> float:
        return float((net.forward(x, record=False)["out"] * proj).sum())

    net.forward(x)
    grads = {k: v.copy() for k, v in net.backward({"out": proj}).items()}
    worst = 0.0
    for name, p in net.params.items():
        layer_id, key = name.split(".")
        param = next(l for lid, _, l in net.layers if lid == layer_id).params[key]
        for idx in np.ndindex(param.shape):
            old = param[idx]
            param[idx] = old + h
            up = loss()
            param[idx] = old - h
            down = loss()
            param[idx] = old
            num = (up - down) / (2 * h)
            ana = grads[name][idx]
            scale = max(abs(num), abs(ana), 1e-6)
            worst = max(worst, abs(num - ana) / scale)
    return worst
