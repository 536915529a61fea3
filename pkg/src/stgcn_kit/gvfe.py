"""Graph vertex feature encoder: one causal temporal convolution per joint.

Each joint owns its kernel (no sharing), so the encoder lifts raw 3-D
coordinates into a learned ``C_out``-dimensional feature space without
mixing joints and without looking at future frames.  The activation is the
identity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import CAUSAL, DTYPE, ShapeError, as_tensor, fold_columns, temporal_columns

IN_CHANNELS = 3


@dataclass
class GvfeParams:
    kernels: list[np.ndarray]  # J arrays of shape (C_out, T_w, C_in)
    biases: list[np.ndarray] | None = None

    def __post_init__(self):
        if not self.kernels:
            raise ShapeError("GVFE needs at least one joint kernel")
        shape = self.kernels[0].shape
        if any(k.shape != shape for k in self.kernels):
            raise ShapeError("GVFE joint kernels must all have the same shape")
        if self.biases is not None and len(self.biases) != len(self.kernels):
            raise ShapeError("one GVFE bias per joint is required")

    @property
    def joint_count(self) -> int:
        return len(self.kernels)

    @property
    def out_channels(self) -> int:
        return self.kernels[0].shape[0]

    @property
    def window(self) -> int:
        return self.kernels[0].shape[1]

    @property
    def in_channels(self) -> int:
        return self.kernels[0].shape[2]

    def stacked(self) -> np.ndarray:
        return np.stack(self.kernels)


def gvfe_init(joint_count: int, out_channels: int = 8, window: int = 9, seed: int = 0,
              in_channels: int = IN_CHANNELS, bias: bool = False,
              rng: np.random.Generator | None = None) -> GvfeParams:
    """Uniform fan-in initialization, ``U(-b, b)`` with ``b = sqrt(1 / (C_in * T_w))``."""
    if min(joint_count, out_channels, window, in_channels) < 1:
        raise ValueError("GVFE extents must be positive")
    rng = np.random.default_rng(seed) if rng is None else rng
    bound = np.sqrt(1.0 / (in_channels * window))
    kernels = [rng.uniform(-bound, bound, size=(out_channels, window, in_channels))
               for _ in range(joint_count)]
    biases = [np.zeros(out_channels, dtype=DTYPE) for _ in range(joint_count)] if bias else None
    return GvfeParams(kernels, biases)


def _prepare(P: np.ndarray, params: GvfeParams) -> np.ndarray:
    if P.ndim not in (3, 4):
        raise ShapeError(f"P must be (C, J, T) or (B, C, J, T), got shape {P.shape}")
    if P.shape[-3] != params.in_channels:
        raise ShapeError(f"P shape {P.shape} has {P.shape[-3]} channels, kernels expect {params.in_channels}")
    if P.shape[-2] != params.joint_count:
        raise ShapeError(f"P shape {P.shape} has {P.shape[-2]} joints, GVFE has {params.joint_count}")
    return P if P.ndim == 4 else P[None]


def _joint_columns(P4: np.ndarray, window: int) -> np.ndarray:
    B, C, J, T = P4.shape
    cols = temporal_columns(P4, window, 1, CAUSAL)  # (B, C, K, J, T)
    return cols.transpose(3, 2, 1, 0, 4).reshape(J, window * C, B * T)


def gvfe_forward(P, params: GvfeParams) -> np.ndarray:
    """Encode ``P`` (3, J, T) into ``(C_out, J, T)`` vertex features."""
    P = as_tensor(P)
    P4 = _prepare(P, params)
    B, _, J, T = P4.shape
    W = params.stacked().reshape(J, params.out_channels, -1)  # (J, O, K*C)
    out = np.matmul(W, _joint_columns(P4, params.window))  # (J, O, B*T)
    out = out.reshape(J, params.out_channels, B, T).transpose(2, 1, 0, 3)
    if params.biases is not None:
        out = out + np.stack(params.biases, axis=1)[None, :, :, None]
    out = np.ascontiguousarray(out)
    return out if P.ndim == 4 else out[0]


def gvfe_backward(P, params: GvfeParams, upstream):
    """Returns ``(grad_P, kernel_grads, bias_grads)``; the lists are per joint."""
    P, upstream = as_tensor(P), as_tensor(upstream)
    P4 = _prepare(P, params)
    B, C, J, T = P4.shape
    O, K = params.out_channels, params.window
    g4 = upstream if upstream.ndim == 4 else upstream[None]
    if g4.shape != (B, O, J, T):
        raise ShapeError(f"upstream gradient shape {upstream.shape} does not match output ({O}, {J}, {T})")
    g = g4.transpose(2, 1, 0, 3).reshape(J, O, B * T)
    cols = _joint_columns(P4, K)
    gW = np.matmul(g, cols.transpose(0, 2, 1)).reshape(J, O, K, C)
    W = params.stacked().reshape(J, O, K * C)
    gcols = np.matmul(W.transpose(0, 2, 1), g).reshape(J, K, C, B, T).transpose(3, 2, 1, 0, 4)
    gP = fold_columns(gcols, T, 1, CAUSAL)
    gb = None
    if params.biases is not None:
        gb = list(g4.sum(axis=(0, 3)).T)
    return (gP if P.ndim == 4 else gP[0]), list(gW), gb
