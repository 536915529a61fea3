"""Elementary differentiable operations on float64 numpy arrays.

Every forward operation here has a matching ``*_backward`` function that
returns gradients with respect to its inputs.  Backward functions recompute
whatever intermediate values they need from the forward inputs instead of
keeping hidden state, so the pair can be checked in isolation with
:func:`grad_check`.

Layout conventions: temporal tensors are ``(C, T)``, ``(C, J, T)`` or
``(B, C, J, T)``.  The channel axis is always ``-2`` for 2-D inputs and
``-3`` otherwise; time is always the last axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

DTYPE = np.float64

CAUSAL = "causal"
SYMMETRIC = "symmetric"
PADDINGS = (CAUSAL, SYMMETRIC)

TRAIN = "train"
EVAL = "eval"
MODES = (TRAIN, EVAL)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    """Raised when operand extents are inconsistent."""


class GradCheckError(RuntimeError):
    """Raised when the loss is not finite at a perturbed point."""


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


# ---------------------------------------------------------------------------
# parameter store


class ParameterStore:
    """Named trainable tensors, each paired with a gradient of the same shape.

    Insertion order is preserved and is the canonical parameter order used by
    checkpoints and parameter counts.
    """

    def __init__(self) -> None:
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> np.ndarray:
        if name in self._values:
            raise KeyError(f"parameter {name!r} already registered")
        value = np.array(value, dtype=DTYPE)
        self._values[name] = value
        self._grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value) -> None:
        value = as_tensor(value)
        if value.shape != self._values[name].shape:
            raise ShapeError(
                f"cannot assign shape {value.shape} to parameter {name!r} "
                f"of shape {self._values[name].shape}"
            )
        self._values[name][...] = value

    def __contains__(self, name: object) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def names(self) -> list[str]:
        return list(self._values)

    def items(self) -> Iterable[tuple[str, np.ndarray]]:
        return self._values.items()

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def accumulate(self, name: str, grad) -> None:
        g = self._grads[name]
        if np.shape(grad) != g.shape:
            raise ShapeError(
                f"gradient shape {np.shape(grad)} does not match parameter "
                f"{name!r} of shape {g.shape}"
            )
        g += grad

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def num_elements(self) -> int:
        return sum(v.size for v in self._values.values())

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for name, value in self._values.items():
            out.add(name, value)
            out._grads[name][...] = self._grads[name]
        return out


# ---------------------------------------------------------------------------
# temporal convolution


def _to_4d(x: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    if x.ndim == 2:
        return x[None, :, None, :], x.shape
    if x.ndim == 3:
        return x[None], x.shape
    if x.ndim == 4:
        return x, x.shape
    raise ShapeError(f"expected a (C, T), (C, J, T) or (B, C, J, T) tensor, got shape {x.shape}")


def _from_4d(y: np.ndarray, like_ndim: int) -> np.ndarray:
    if like_ndim == 2:
        return y[0, :, 0, :]
    if like_ndim == 3:
        return y[0]
    return y


def _pad_amounts(width: int, dilation: int, padding: str) -> tuple[int, int]:
    span = dilation * (width - 1)
    if padding == CAUSAL:
        return span, 0
    if padding == SYMMETRIC:
        if width % 2 == 0:
            raise ValueError(f"symmetric padding needs an odd temporal window, got {width}")
        return span // 2, span // 2
    raise ValueError(f"unknown padding {padding!r}; expected one of {PADDINGS}")


def _check_conv_args(x: np.ndarray, kernels: np.ndarray, dilation: int) -> None:
    if kernels.ndim != 3:
        raise ShapeError(f"kernels must be (C_out, T_w, C_in), got shape {kernels.shape}")
    if x.shape[1] != kernels.shape[2]:
        raise ShapeError(
            f"input shape {x.shape} has {x.shape[1]} channels but kernel shape "
            f"{kernels.shape} expects {kernels.shape[2]}"
        )
    if x.shape[-1] < 1 or kernels.shape[1] < 1:
        raise ShapeError(f"empty time axis: input {x.shape}, kernels {kernels.shape}")
    if int(dilation) != dilation or dilation < 1:
        raise ValueError(f"dilation must be a positive integer, got {dilation}")


def temporal_columns(x: np.ndarray, width: int, dilation: int, padding: str) -> np.ndarray:
    """Unfold ``x`` (B, C, J, T) into ``(B, C, width, J, T)`` zero-padded taps.

    ``cols[b, c, k, j, t]`` is the sample read by tap ``k`` when producing
    output time ``t``.
    """
    left, right = _pad_amounts(width, dilation, padding)
    T = x.shape[-1]
    xpad = np.pad(x, ((0, 0), (0, 0), (0, 0), (left, right)))
    return np.stack([xpad[..., k * dilation:k * dilation + T] for k in range(width)], axis=2)


def fold_columns(gcols: np.ndarray, T: int, dilation: int, padding: str) -> np.ndarray:
    """Adjoint of :func:`temporal_columns`: scatter-add tap gradients back onto time."""
    B, C, width, J, _ = gcols.shape
    left, right = _pad_amounts(width, dilation, padding)
    gpad = np.zeros((B, C, J, T + left + right), dtype=DTYPE)
    for k in range(width):
        gpad[..., k * dilation:k * dilation + T] += gcols[:, :, k]
    return gpad[..., left:left + T]


def conv_temporal(x, kernels, dilation: int = 1, padding: str = CAUSAL) -> np.ndarray:
    """Length-preserving dilated convolution along the last (time) axis.

    ``kernels`` has shape ``(C_out, T_w, C_in)``.  In causal mode tap
    ``T_w - 1`` reads the current frame and earlier taps reach back by
    ``dilation`` frames each; in symmetric mode the middle tap is centred.
    Missing samples are zeros.  Joints (if present) are convolved
    independently with the same kernels.
    """
    x = as_tensor(x)
    kernels = as_tensor(kernels)
    x4, _ = _to_4d(x)
    _check_conv_args(x4, kernels, dilation)
    width, T = kernels.shape[1], x4.shape[-1]
    left, right = _pad_amounts(width, dilation, padding)
    xpad = np.pad(x4, ((0, 0), (0, 0), (0, 0), (left, right)))
    # every tap applied to the unshifted input in one product, then shifted and summed
    z = np.tensordot(kernels.transpose(1, 0, 2), xpad, axes=([2], [1]))  # (K, O, B, J, T+pad)
    out = z[0, ..., :T].copy()
    for k in range(1, width):
        out += z[k, ..., k * dilation:k * dilation + T]
    return _from_4d(np.ascontiguousarray(out.transpose(1, 0, 2, 3)), x.ndim)


def conv_temporal_backward(x, kernels, dilation, padding, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(conv_temporal(x, kernels) * upstream)``.

    Returns ``(grad_input, grad_kernels)`` shaped like ``x`` and ``kernels``.
    """
    x = as_tensor(x)
    kernels = as_tensor(kernels)
    upstream = as_tensor(upstream)
    x4, _ = _to_4d(x)
    _check_conv_args(x4, kernels, dilation)
    expected = list(x.shape)
    expected[-2 if x.ndim == 2 else -3] = kernels.shape[0]
    expected = tuple(expected)
    if upstream.shape != expected:
        raise ShapeError(f"upstream gradient shape {upstream.shape} != output shape {expected}")
    g4, _ = _to_4d(upstream)
    O, width, C = kernels.shape
    B, _, J, T = x4.shape
    left, right = _pad_amounts(width, dilation, padding)
    xpad = np.pad(x4, ((0, 0), (0, 0), (0, 0), (left, right)))
    xs = np.ascontiguousarray(xpad.transpose(0, 2, 3, 1))  # (B, J, T+pad, C)
    gs = np.ascontiguousarray(g4.transpose(0, 2, 1, 3))  # (B, J, O, T)
    gk = np.empty_like(kernels)
    for k in range(width):
        gk[:, k, :] = np.matmul(gs, xs[:, :, k * dilation:k * dilation + T, :]).sum(axis=(0, 1))
    h = np.tensordot(kernels, g4, axes=([0], [1]))  # (K, C, B, J, T)
    gpad = np.zeros((C, B, J, T + left + right), dtype=DTYPE)
    for k in range(width):
        gpad[..., k * dilation:k * dilation + T] += h[k]
    gx = np.ascontiguousarray(gpad[..., left:left + T].transpose(1, 0, 2, 3))
    return _from_4d(gx, x.ndim), gk


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class RunningStats:
    """Exponential moving averages of per-channel mean and variance."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = BN_MOMENTUM

    @classmethod
    def fresh(cls, channels: int, momentum: float = BN_MOMENTUM) -> "RunningStats":
        return cls(np.zeros(channels, dtype=DTYPE), np.ones(channels, dtype=DTYPE), momentum)

    def copy(self) -> "RunningStats":
        return RunningStats(self.mean.copy(), self.var.copy(), self.momentum)


def _bn_axes(x: np.ndarray) -> tuple[int, ...]:
    if x.ndim < 2:
        raise ShapeError(f"batch_norm needs a channel axis, got shape {x.shape}")
    ch = x.ndim - 3 if x.ndim >= 3 else 0
    return tuple(a for a in range(x.ndim) if a != ch)


def _bn_bcast(v: np.ndarray, x: np.ndarray) -> np.ndarray:
    if x.ndim == 2:
        return v[:, None]
    return v[:, None, None]


def _check_bn(x, gamma, beta, eps, mode):
    if not eps > 0:
        raise ValueError(f"batch_norm eps must be positive, got {eps}")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    axes = _bn_axes(x)
    ch = x.shape[[a for a in range(x.ndim) if a not in axes][0]]
    if gamma.shape != (ch,) or beta.shape != (ch,):
        raise ShapeError(
            f"gamma {gamma.shape} / beta {beta.shape} must match channel extent {ch} "
            f"of input {x.shape}"
        )
    return axes


def _bn_stats(x, axes, mode, running, eps):
    if mode == TRAIN:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
    else:
        mean, var = running.mean, running.var
    return mean, 1.0 / np.sqrt(var + eps)


def batch_norm(x, gamma, beta, eps: float = BN_EPS, mode: str = TRAIN,
               running: RunningStats | None = None) -> np.ndarray:
    """Per-channel normalization over every non-channel axis.

    Train mode uses batch statistics and, if ``running`` is given, folds them
    into its moving averages.  Eval mode requires ``running``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = _check_bn(x, gamma, beta, eps, mode)
    if mode == EVAL and running is None:
        raise ValueError("eval-mode batch_norm needs running statistics")
    mean, inv_std = _bn_stats(x, axes, mode, running, eps)
    if mode == TRAIN and running is not None:
        m = running.momentum
        running.mean[...] = (1.0 - m) * running.mean + m * mean
        running.var[...] = (1.0 - m) * running.var + m * x.var(axis=axes)
    xhat = (x - _bn_bcast(mean, x)) * _bn_bcast(inv_std, x)
    return _bn_bcast(gamma, x) * xhat + _bn_bcast(beta, x)


def batch_norm_backward(x, gamma, upstream, eps: float = BN_EPS, mode: str = TRAIN,
                        running: RunningStats | None = None):
    """Returns ``(grad_input, grad_gamma, grad_beta)``."""
    x, gamma, upstream = as_tensor(x), as_tensor(gamma), as_tensor(upstream)
    axes = _check_bn(x, gamma, np.zeros_like(gamma), eps, mode)
    if upstream.shape != x.shape:
        raise ShapeError(f"upstream gradient shape {upstream.shape} != input shape {x.shape}")
    mean, inv_std = _bn_stats(x, axes, mode, running, eps)
    xhat = (x - _bn_bcast(mean, x)) * _bn_bcast(inv_std, x)
    ggamma = (upstream * xhat).sum(axis=axes)
    gbeta = upstream.sum(axis=axes)
    if mode == EVAL:
        gx = upstream * _bn_bcast(gamma * inv_std, x)
    else:
        n = x.size // gamma.size
        gx = _bn_bcast(gamma * inv_std / n, x) * (
            n * upstream - _bn_bcast(gbeta, x) - xhat * _bn_bcast(ggamma, x)
        )
    return gx, ggamma, gbeta


# ---------------------------------------------------------------------------
# pointwise and loss


def relu(x) -> np.ndarray:
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(x, upstream) -> np.ndarray:
    return np.where(as_tensor(x) > 0.0, upstream, 0.0)


def softmax(logits) -> np.ndarray:
    z = as_tensor(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label):
    """Cross-entropy of softmax(logits) against integer labels.

    ``logits`` is ``(K,)`` with a scalar label, or ``(B, K)`` with ``B`` labels,
    in which case the returned loss is the batch mean.
    """
    z = as_tensor(logits)
    labels = np.atleast_1d(np.asarray(label))
    K = z.shape[-1]
    if np.any(labels < 0) or np.any(labels >= K) or labels.dtype.kind not in "iu":
        raise ValueError(f"label {label!r} out of range for {K} classes")
    z2 = z.reshape(-1, K)
    if z2.shape[0] != labels.size:
        raise ShapeError(f"{labels.size} labels for logits of shape {z.shape}")
    shifted = z2 - z2.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    nll = log_norm - shifted[np.arange(labels.size), labels]
    probs = softmax(z)
    return float(nll.mean()), probs


def softmax_cross_entropy_backward(probs, label) -> np.ndarray:
    """Gradient of the (batch-mean) loss with respect to the logits."""
    p = as_tensor(probs)
    labels = np.atleast_1d(np.asarray(label))
    g = p.reshape(-1, p.shape[-1]).copy()
    g[np.arange(labels.size), labels] -= 1.0
    g /= labels.size
    return g.reshape(p.shape)


# ---------------------------------------------------------------------------
# finite-difference gradient checking

LossFn = Callable[..., float]


def relative_error(analytic, numeric) -> np.ndarray:
    a = np.abs(as_tensor(analytic))
    n = np.abs(as_tensor(numeric))
    return np.abs(as_tensor(analytic) - as_tensor(numeric)) / np.maximum(np.maximum(a, n), 1e-8)


@dataclass
class GradCheckResult:
    errors: dict[str, float] = field(default_factory=dict)
    analytic: dict[str, np.ndarray] = field(default_factory=dict)
    numeric: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def gradient_errors(loss_fn: LossFn, store: ParameterStore, step: float = 1e-5,
                    names: Iterable[str] | None = None) -> GradCheckResult:
    """Compare analytic gradients with central differences, per parameter.

    ``loss_fn(store, backward=...)`` returns the scalar loss; when
    ``backward`` is true it must also accumulate analytic gradients into
    ``store`` (which is zeroed beforehand).
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    names = store.names() if names is None else list(names)
    store.zero_grad()
    loss_fn(store, backward=True)
    result = GradCheckResult()
    for name in names:
        result.analytic[name] = store.grad(name).copy()
    for name in names:
        flat = store[name].reshape(-1)
        numeric = np.empty(flat.size, dtype=DTYPE)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn(store, backward=False)
            flat[i] = orig - step
            down = loss_fn(store, backward=False)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise GradCheckError(f"non-finite loss when perturbing {name}[{i}]")
            numeric[i] = (up - down) / (2.0 * step)
        numeric = numeric.reshape(store[name].shape)
        result.numeric[name] = numeric
        err = relative_error(result.analytic[name], numeric)
        result.errors[name] = float(err.max()) if err.size else 0.0
    return result


def grad_check(loss_fn: LossFn, store: ParameterStore, step: float = 1e-5,
               names: Iterable[str] | None = None) -> float:
    """Maximum relative error between analytic and central-difference gradients."""
    return gradient_errors(loss_fn, store, step, names).max_error
