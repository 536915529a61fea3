"""The full classifier: encoder, stacked graph/temporal blocks, pooling, softmax.

A :class:`Model` owns a :class:`~stgcn_kit.tensor.ParameterStore` holding
every trainable tensor plus a dict of batch-norm running statistics.  The
per-module parameter objects (``GvfeParams``, ``DhtcnParams``) hold *views*
into the store, so an optimizer step on the store is immediately visible to
the forward pass.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .dhtcn import DhtcnLayer, DhtcnParams, dhtcn_backward, dhtcn_forward_cached
from .graph import SkeletonGraph, get_template, sgcn_backward, sgcn_forward
from .gvfe import IN_CHANNELS, GvfeParams, gvfe_backward, gvfe_forward
from .tensor import (
    BN_EPS, DTYPE, EVAL, MODES, TRAIN, ParameterStore, RunningStats, ShapeError,
    as_tensor, batch_norm, batch_norm_backward, relu, relu_backward, softmax,
    softmax_cross_entropy, softmax_cross_entropy_backward,
)


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    template: str = "ntu25"
    num_classes: int = 4
    gvfe_out_channels: int = 8
    gvfe_temporal_window: int = 9
    blocks: list[int] = field(default_factory=lambda: [64, 128, 128, 256])
    dhtcn_layers: int = 2
    dhtcn_temporal_window: int = 9
    gvfe_relu: bool = False
    gvfe_bn: bool = False
    bias: bool = False
    center_input: bool = True
    seed: int = 0

    def validate(self) -> "ModelConfig":
        get_template(self.template)
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be at least 2, got {self.num_classes}")
        if not self.blocks:
            raise ConfigError("blocks must list at least one channel width")
        for name in ("gvfe_out_channels", "gvfe_temporal_window", "dhtcn_layers", "dhtcn_temporal_window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if any(c < 1 for c in self.blocks):
            raise ConfigError(f"block widths must be positive, got {self.blocks}")
        if self.dhtcn_temporal_window % 2 == 0:
            raise ConfigError(f"dhtcn_temporal_window must be odd, got {self.dhtcn_temporal_window}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "blocks" in d:
            d["blocks"] = [int(c) for c in d["blocks"]]
        return cls(**d)

    def channel_chain(self) -> list[int]:
        return [self.gvfe_out_channels, *self.blocks]


def center_on_first_frame(x: np.ndarray) -> np.ndarray:
    """Translate each sequence so the joint centroid of its first frame is the origin."""
    return x - x[:, :, :, 0].mean(axis=2)[:, :, None, None]


def center_on_first_frame_backward(upstream: np.ndarray) -> np.ndarray:
    g = np.array(upstream, dtype=DTYPE)
    g[:, :, :, 0] -= upstream.sum(axis=(2, 3))[:, :, None] / upstream.shape[2]
    return g


@dataclass
class Block:
    index: int  # 1-based
    sgcn_weight: np.ndarray
    sgcn_bias: np.ndarray | None
    dhtcn: DhtcnParams


class Model:
    def __init__(self, config: ModelConfig, graph: SkeletonGraph, store: ParameterStore,
                 buffers: dict[str, RunningStats]):
        self.config = config
        self.graph = graph
        self.store = store
        self.buffers = buffers
        cfg = config
        J = graph.joint_count
        self.gvfe = GvfeParams(
            [store[f"gvfe.joint{i}.kernel"] for i in range(J)],
            [store[f"gvfe.joint{i}.bias"] for i in range(J)] if cfg.bias else None,
        )
        self.blocks: list[Block] = []
        for k in range(1, len(cfg.blocks) + 1):
            layers = []
            for n in range(cfg.dhtcn_layers):
                p = f"block{k}.dhtcn.layer{n}"
                layers.append(DhtcnLayer(
                    store[f"{p}.kernel"], store[f"{p}.gamma"], store[f"{p}.beta"],
                    buffers[f"{p}.running"], 2 ** n,
                    store[f"{p}.bias"] if cfg.bias else None,
                ))
            self.blocks.append(Block(
                k, store[f"block{k}.sgcn.weight"],
                store[f"block{k}.sgcn.bias"] if cfg.bias else None,
                DhtcnParams(layers),
            ))

    @property
    def joint_count(self) -> int:
        return self.graph.joint_count

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, value in self.store.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(value).tobytes())
        for name, rs in self.buffers.items():
            h.update(name.encode())
            h.update(rs.mean.tobytes())
            h.update(rs.var.tobytes())
        return h.hexdigest()

    # -- forward / backward -------------------------------------------------

    def forward_cached(self, x, mode: str = EVAL):
        """Batched forward on ``x`` of shape ``(B, 3, J, T)``; returns ``(logits, tape)``."""
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1] != IN_CHANNELS:
            raise ShapeError(f"expected input (B, 3, J, T), got shape {x.shape}")
        if x.shape[2] != self.joint_count:
            raise ShapeError(
                f"input has {x.shape[2]} joints but template {self.config.template!r} "
                f"has {self.joint_count}"
            )
        if x.shape[3] < 1:
            raise ShapeError("input has no frames")
        tape: dict = {"x": x, "mode": mode}
        if self.config.center_input:
            x = center_on_first_frame(x)
            tape["x"] = x
        h = gvfe_forward(x, self.gvfe)
        if self.config.gvfe_relu:
            tape["gvfe_pre_relu"] = h
            h = relu(h)
        if self.config.gvfe_bn:
            tape["gvfe_pre_bn"] = h
            h = batch_norm(h, self.store["gvfe.bn.gamma"], self.store["gvfe.bn.beta"],
                           BN_EPS, mode, self.buffers["gvfe.bn.running"])
        A = self.graph.normalized_adjacency
        blocks = []
        for block in self.blocks:
            s = sgcn_forward(h, block.sgcn_weight, A)
            if block.sgcn_bias is not None:
                s = s + block.sgcn_bias[:, None, None]
            out, cache = dhtcn_forward_cached(s, block.dhtcn, mode)
            blocks.append((h, cache))
            h = out
        tape["blocks"] = blocks
        pooled = h.mean(axis=(2, 3))
        tape["pooled"] = pooled
        tape["pool_extent"] = h.shape[2:]
        logits = pooled @ self.store["classifier.weight"] + self.store["classifier.bias"]
        return logits, tape

    def backward(self, tape, grad_logits) -> np.ndarray:
        """Accumulate parameter gradients into the store; returns the input gradient."""
        mode = tape["mode"]
        store = self.store
        g = as_tensor(grad_logits)
        store.accumulate("classifier.weight", tape["pooled"].T @ g)
        store.accumulate("classifier.bias", g.sum(axis=0))
        J, T = tape["pool_extent"]
        gp = g @ store["classifier.weight"].T / (J * T)
        gh = np.broadcast_to(gp[:, :, None, None], gp.shape + (J, T))
        A = self.graph.normalized_adjacency
        for block, (h_in, cache) in zip(reversed(self.blocks), reversed(tape["blocks"])):
            p = f"block{block.index}"
            gs, layer_grads = dhtcn_backward(cache, block.dhtcn, gh, mode)
            for n, lg in enumerate(layer_grads):
                for key, val in lg.items():
                    store.accumulate(f"{p}.dhtcn.layer{n}.{key}", val)
            if block.sgcn_bias is not None:
                store.accumulate(f"{p}.sgcn.bias", gs.sum(axis=(0, 2, 3)))
            gh, gW = sgcn_backward(h_in, block.sgcn_weight, A, gs)
            store.accumulate(f"{p}.sgcn.weight", gW)
        if self.config.gvfe_bn:
            gh, ggamma, gbeta = batch_norm_backward(
                tape["gvfe_pre_bn"], store["gvfe.bn.gamma"], gh, BN_EPS, mode,
                self.buffers["gvfe.bn.running"])
            store.accumulate("gvfe.bn.gamma", ggamma)
            store.accumulate("gvfe.bn.beta", gbeta)
        if self.config.gvfe_relu:
            gh = relu_backward(tape["gvfe_pre_relu"], gh)
        gx, gk, gb = gvfe_backward(tape["x"], self.gvfe, gh)
        if self.config.center_input:
            gx = center_on_first_frame_backward(gx)
        for i, val in enumerate(gk):
            store.accumulate(f"gvfe.joint{i}.kernel", val)
        if gb is not None:
            for i, val in enumerate(gb):
                store.accumulate(f"gvfe.joint{i}.bias", val)
        return gx

    def loss_and_grad(self, x, labels, mode: str = TRAIN, backward: bool = True):
        """Mean cross-entropy over the batch; gradients are accumulated when ``backward``."""
        logits, tape = self.forward_cached(x, mode)
        loss, probs = softmax_cross_entropy(logits, labels)
        gx = None
        if backward:
            gx = self.backward(tape, softmax_cross_entropy_backward(probs, labels))
        return loss, logits, gx


def build_model(config: ModelConfig) -> Model:
    """Deterministically construct and initialize a model from ``config``."""
    config.validate()
    template = get_template(config.template)
    graph = template.graph()
    rng = np.random.default_rng(config.seed)
    store = ParameterStore()
    buffers: dict[str, RunningStats] = {}
    J = graph.joint_count
    C0, K0 = config.gvfe_out_channels, config.gvfe_temporal_window

    b = np.sqrt(1.0 / (IN_CHANNELS * K0))
    for i in range(J):
        store.add(f"gvfe.joint{i}.kernel", rng.uniform(-b, b, size=(C0, K0, IN_CHANNELS)))
        if config.bias:
            store.add(f"gvfe.joint{i}.bias", np.zeros(C0))
    if config.gvfe_bn:
        store.add("gvfe.bn.gamma", np.ones(C0))
        store.add("gvfe.bn.beta", np.zeros(C0))
        buffers["gvfe.bn.running"] = RunningStats.fresh(C0)

    chain = config.channel_chain()
    K1 = config.dhtcn_temporal_window
    for k in range(1, len(chain)):
        c_in, c_out = chain[k - 1], chain[k]
        b = np.sqrt(1.0 / c_in)
        store.add(f"block{k}.sgcn.weight", rng.uniform(-b, b, size=(c_in, c_out)))
        if config.bias:
            store.add(f"block{k}.sgcn.bias", np.zeros(c_out))
        b = np.sqrt(1.0 / (c_out * K1))
        for n in range(config.dhtcn_layers):
            p = f"block{k}.dhtcn.layer{n}"
            store.add(f"{p}.kernel", rng.uniform(-b, b, size=(c_out, K1, c_out)))
            store.add(f"{p}.gamma", np.ones(c_out))
            store.add(f"{p}.beta", np.zeros(c_out))
            if config.bias:
                store.add(f"{p}.bias", np.zeros(c_out))
            buffers[f"{p}.running"] = RunningStats.fresh(c_out)

    b = np.sqrt(1.0 / chain[-1])
    store.add("classifier.weight", rng.uniform(-b, b, size=(chain[-1], config.num_classes)))
    store.add("classifier.bias", np.zeros(config.num_classes))
    return Model(config, graph, store, buffers)


def model_forward(model: Model, P, mode: str = EVAL) -> np.ndarray:
    """Logits for one sequence ``(3, J, T)`` or a batch ``(B, 3, J, T)``."""
    P = as_tensor(P)
    if P.ndim == 3:
        return model.forward_cached(P[None], mode)[0][0]
    return model.forward_cached(P, mode)[0]


def predict_proba(model: Model, P, mode: str = EVAL) -> np.ndarray:
    return softmax(model_forward(model, P, mode))


def module_of(name: str) -> str:
    """Breakdown bucket of a parameter name: ``gvfe``, ``block{k}.sgcn``, ``block{k}.dhtcn`` or ``classifier``."""
    head = name.split(".")
    if head[0].startswith("block"):
        return f"{head[0]}.{head[1]}"
    return head[0]


def count_parameters(model: Model) -> tuple[int, dict[str, int]]:
    """Total trainable element count and a per-module breakdown (in build order)."""
    breakdown: dict[str, int] = {}
    for name, value in model.store.items():
        key = module_of(name)
        breakdown[key] = breakdown.get(key, 0) + value.size
    return sum(breakdown.values()), breakdown
