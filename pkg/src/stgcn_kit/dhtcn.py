"""Dilated hierarchical temporal block.

``N`` stacked layers, layer ``n`` applying a symmetric dilated temporal
convolution (dilation ``2**n``), a ReLU and a batch normalization, followed by
a residual sum with the block input.  One filter set per layer is shared by
all joints; joints are never mixed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    BN_EPS, DTYPE, SYMMETRIC, TRAIN, RunningStats, ShapeError, as_tensor,
    batch_norm, batch_norm_backward, conv_temporal, conv_temporal_backward,
    relu, relu_backward,
)


@dataclass
class DhtcnLayer:
    kernel: np.ndarray  # (C, T_w1, C)
    gamma: np.ndarray
    beta: np.ndarray
    running: RunningStats
    dilation: int
    bias: np.ndarray | None = None


@dataclass
class DhtcnParams:
    layers: list[DhtcnLayer] = field(default_factory=list)

    def __post_init__(self):
        for n, layer in enumerate(self.layers):
            if layer.dilation != 2 ** n:
                raise ValueError(f"layer {n} has dilation {layer.dilation}, expected {2 ** n}")
            C = layer.kernel.shape[0]
            if layer.kernel.shape != (C, layer.kernel.shape[1], C):
                raise ShapeError(f"layer {n} kernel must be (C, T_w1, C), got {layer.kernel.shape}")
        if len({layer.kernel.shape for layer in self.layers}) > 1:
            raise ShapeError("all DH-TCN layers must share one kernel shape")

    @property
    def channels(self) -> int:
        return self.layers[0].kernel.shape[0]

    @property
    def window(self) -> int:
        return self.layers[0].kernel.shape[1]

    @property
    def dilations(self) -> list[int]:
        return [layer.dilation for layer in self.layers]


def dhtcn_init(channels: int, layers: int = 2, window: int = 9, seed: int = 0,
               bias: bool = False, rng: np.random.Generator | None = None) -> DhtcnParams:
    if layers < 1:
        raise ValueError(f"DH-TCN needs at least one layer, got {layers}")
    if window % 2 == 0:
        raise ValueError(f"DH-TCN temporal window must be odd, got {window}")
    rng = np.random.default_rng(seed) if rng is None else rng
    bound = np.sqrt(1.0 / (channels * window))
    out = []
    for n in range(layers):
        out.append(DhtcnLayer(
            kernel=rng.uniform(-bound, bound, size=(channels, window, channels)),
            gamma=np.ones(channels, dtype=DTYPE),
            beta=np.zeros(channels, dtype=DTYPE),
            running=RunningStats.fresh(channels),
            dilation=2 ** n,
            bias=np.zeros(channels, dtype=DTYPE) if bias else None,
        ))
    return DhtcnParams(out)


def receptive_field(layers: int, window: int) -> int:
    """Number of input frames that can reach one output frame."""
    if layers < 1:
        raise ValueError(f"need at least one layer, got {layers}")
    if window < 1 or window % 2 == 0:
        raise ValueError(f"temporal window must be a positive odd integer, got {window}")
    return 1 + (window - 1) * (2 ** layers - 1)


def _add_bias(a, bias):
    if bias is None:
        return a
    return a + bias[:, None, None]


def dhtcn_forward_cached(x, params: DhtcnParams, mode: str = TRAIN):
    """Forward pass that also returns the per-layer intermediates for backward."""
    x = as_tensor(x)
    if x.ndim not in (3, 4) or x.shape[-3] != params.channels:
        raise ShapeError(f"input shape {x.shape} does not match DH-TCN channel extent {params.channels}")
    h = x
    cache = []
    for layer in params.layers:
        a = _add_bias(conv_temporal(h, layer.kernel, layer.dilation, SYMMETRIC), layer.bias)
        r = relu(a)
        out = batch_norm(r, layer.gamma, layer.beta, BN_EPS, mode, layer.running)
        cache.append((h, a, r))
        h = out
    return h + x, cache


def dhtcn_forward(f_block_in, params: DhtcnParams, mode: str = TRAIN) -> np.ndarray:
    return dhtcn_forward_cached(f_block_in, params, mode)[0]


def dhtcn_backward(cache, params: DhtcnParams, upstream, mode: str = TRAIN):
    """Returns ``(grad_input, layer_grads)``.

    ``layer_grads[n]`` maps ``kernel``, ``gamma``, ``beta`` (and ``bias`` when
    present) to gradients of layer ``n``.
    """
    upstream = as_tensor(upstream)
    g = upstream
    grads: list[dict[str, np.ndarray]] = [None] * len(params.layers)
    for n in reversed(range(len(params.layers))):
        layer = params.layers[n]
        h, a, r = cache[n]
        gr, ggamma, gbeta = batch_norm_backward(r, layer.gamma, g, BN_EPS, mode, layer.running)
        ga = relu_backward(a, gr)
        gh, gk = conv_temporal_backward(h, layer.kernel, layer.dilation, SYMMETRIC, ga)
        grads[n] = {"kernel": gk, "gamma": ggamma, "beta": gbeta}
        if layer.bias is not None:
            grads[n]["bias"] = ga.sum(axis=tuple(i for i in range(ga.ndim) if i != ga.ndim - 3))
        g = gh
    return g + upstream, grads
