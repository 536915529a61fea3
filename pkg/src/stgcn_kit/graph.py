"""Skeleton graphs, adjacency normalization and the spatial graph convolution."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DTYPE, ShapeError, as_tensor


class GraphError(ValueError):
    pass


class UnknownTemplateError(GraphError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return self.args[0] if self.args else ""


def canonical_edges(joint_count: int, edges) -> tuple[tuple[int, int], ...]:
    """Validate an edge list and return sorted, deduplicated unordered pairs."""
    if joint_count < 1:
        raise GraphError(f"joint_count must be positive, got {joint_count}")
    out = set()
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < joint_count and 0 <= j < joint_count):
            raise GraphError(f"edge ({i}, {j}) out of range for {joint_count} joints")
        if i == j:
            raise GraphError(f"self-edge ({i}, {j}) is not allowed")
        out.add((min(i, j), max(i, j)))
    return tuple(sorted(out))


def build_adjacency(joint_count: int, edges) -> np.ndarray:
    A = np.zeros((joint_count, joint_count), dtype=DTYPE)
    for i, j in canonical_edges(joint_count, edges):
        A[i, j] = A[j, i] = 1.0
    return A


def normalize_adjacency(A) -> np.ndarray:
    """Symmetric normalization of the adjacency with self-loops.

    Returns ``D^-1/2 (A + I) D^-1/2`` where ``D`` is the diagonal degree
    matrix of ``A + I``.
    """
    A = as_tensor(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"adjacency must be square, got shape {A.shape}")
    if not np.array_equal(A, A.T):
        raise GraphError("adjacency is not symmetric")
    if not np.all((A == 0.0) | (A == 1.0)):
        raise GraphError("adjacency is not binary")
    if np.any(np.diag(A) != 0.0):
        raise GraphError("adjacency has a non-zero diagonal")
    A_hat = A + np.eye(A.shape[0])
    d = 1.0 / np.sqrt(A_hat.sum(axis=1))
    return A_hat * d[:, None] * d[None, :]


@dataclass(frozen=True)
class SkeletonGraph:
    joint_count: int
    edges: tuple[tuple[int, int], ...]
    adjacency: np.ndarray = field(repr=False, compare=False)
    normalized_adjacency: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def from_edges(cls, joint_count: int, edges) -> "SkeletonGraph":
        edges = canonical_edges(joint_count, edges)
        A = build_adjacency(joint_count, edges)
        A_norm = normalize_adjacency(A)
        A.setflags(write=False)
        A_norm.setflags(write=False)
        return cls(joint_count, edges, A, A_norm)

    def degrees(self) -> np.ndarray:
        """Diagonal of the self-loop degree matrix (always >= 1)."""
        return self.adjacency.sum(axis=1) + 1.0


# ---------------------------------------------------------------------------
# spatial graph convolution


def _check_sgcn(f_in, W, A_norm):
    if f_in.ndim not in (3, 4):
        raise ShapeError(f"f_in must be (C, J, T) or (B, C, J, T), got {f_in.shape}")
    C, J = f_in.shape[-3], f_in.shape[-2]
    if W.ndim != 2 or W.shape[0] != C:
        raise ShapeError(f"weight shape {W.shape} does not match input shape {f_in.shape}")
    if A_norm.shape != (J, J):
        raise ShapeError(f"adjacency shape {A_norm.shape} does not match input shape {f_in.shape}")


def sgcn_forward(f_in, W, A_norm) -> np.ndarray:
    """Mix features over joints with ``A_norm`` and over channels with ``W``.

    ``f_in`` is ``(C_in, J, T)`` (optionally with a leading batch axis),
    ``W`` is ``(C_in, C_out)``; the result is ``(C_out, J, T)``.
    """
    f_in, W, A_norm = as_tensor(f_in), as_tensor(W), as_tensor(A_norm)
    _check_sgcn(f_in, W, A_norm)
    batched = f_in.ndim == 4
    f4 = f_in if batched else f_in[None]
    y = np.tensordot(W, f4, axes=([0], [1]))  # (O, B, J, T)
    y = np.matmul(A_norm, y)
    y = np.ascontiguousarray(y.transpose(1, 0, 2, 3))
    return y if batched else y[0]


def sgcn_backward(f_in, W, A_norm, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(grad_f_in, grad_W)``."""
    f_in, W, A_norm, upstream = (as_tensor(a) for a in (f_in, W, A_norm, upstream))
    _check_sgcn(f_in, W, A_norm)
    expected = f_in.shape[:-3] + (W.shape[1],) + f_in.shape[-2:]
    if upstream.shape != expected:
        raise ShapeError(f"upstream gradient shape {upstream.shape} != output shape {expected}")
    batched = f_in.ndim == 4
    f4 = f_in if batched else f_in[None]
    g4 = upstream if batched else upstream[None]
    gy = np.matmul(A_norm.T, g4)  # (B, O, J, T)
    gW = np.tensordot(f4, gy, axes=([0, 2, 3], [0, 2, 3]))
    gf = np.ascontiguousarray(np.tensordot(W, gy, axes=([1], [1])).transpose(1, 0, 2, 3))
    return (gf if batched else gf[0]), gW


# ---------------------------------------------------------------------------
# templates


@dataclass(frozen=True)
class SkeletonTemplate:
    name: str
    joint_count: int
    edges: tuple[tuple[int, int], ...]
    labels: tuple[str, ...]
    # joints driven by the synthetic motion generator, proximal to distal
    limb: tuple[int, ...]

    def __post_init__(self):
        canonical_edges(self.joint_count, self.edges)
        if len(self.labels) != self.joint_count:
            raise GraphError(f"template {self.name}: {len(self.labels)} labels for {self.joint_count} joints")
        if any(not 0 <= j < self.joint_count for j in self.limb):
            raise GraphError(f"template {self.name}: limb joint out of range")

    def graph(self) -> SkeletonGraph:
        return SkeletonGraph.from_edges(self.joint_count, self.edges)

    def parents(self) -> list[int]:
        """Breadth-first parent of every joint (``-1`` for roots)."""
        nbrs: dict[int, list[int]] = {j: [] for j in range(self.joint_count)}
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        parent = [-2] * self.joint_count
        for root in range(self.joint_count):
            if parent[root] != -2:
                continue
            parent[root] = -1
            queue = [root]
            while queue:
                u = queue.pop(0)
                for v in sorted(nbrs[u]):
                    if parent[v] == -2:
                        parent[v] = u
                        queue.append(v)
        return parent


# NTU RGB+D 25-joint Kinect v2 topology, 0-based.
_NTU25_EDGES = tuple((a - 1, b - 1) for a, b in [
    (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7),
    (9, 21), (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14),
    (16, 15), (17, 1), (18, 17), (19, 18), (20, 19), (22, 23), (23, 8),
    (24, 25), (25, 12),
])
_NTU25_LABELS = (
    "spine_base", "spine_mid", "neck", "head", "shoulder_left", "elbow_left",
    "wrist_left", "hand_left", "shoulder_right", "elbow_right", "wrist_right",
    "hand_right", "hip_left", "knee_left", "ankle_left", "foot_left",
    "hip_right", "knee_right", "ankle_right", "foot_right", "spine_shoulder",
    "hand_tip_left", "thumb_left", "hand_tip_right", "thumb_right",
)

TEMPLATES: dict[str, SkeletonTemplate] = {
    t.name: t for t in (
        SkeletonTemplate("ntu25", 25, _NTU25_EDGES, _NTU25_LABELS, limb=(8, 9, 10, 11)),
        SkeletonTemplate("chain3", 3, ((0, 1), (1, 2)), ("j0", "j1", "j2"), limb=(1, 2)),
        SkeletonTemplate("clique2", 2, ((0, 1),), ("j0", "j1"), limb=(1,)),
        SkeletonTemplate(
            "chain7", 7, tuple((i, i + 1) for i in range(6)),
            tuple(f"j{i}" for i in range(7)), limb=(4, 5, 6),
        ),
    )
}


def get_template(name: str) -> SkeletonTemplate:
    try:
        return TEMPLATES[name]
    except KeyError:
        raise UnknownTemplateError(
            f"unknown template {name!r}; known: {', '.join(sorted(TEMPLATES))}"
        ) from None
