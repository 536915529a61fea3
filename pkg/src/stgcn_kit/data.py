"""Skeleton sequences: the SKL text format, a synthetic motion generator, batching.

SKL format (UTF-8, line oriented)::

    SKL 1
    template <name>
    dims <C> <J> <T>
    label <int>
    subject <int>
    <T frame lines, each J*C floats, joint-major: x y z of joint 0, then joint 1, ...>

Lines starting with ``#`` and blank lines are ignored.  The ``subject`` line
may be omitted (subject 0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .graph import GraphError, SkeletonTemplate, get_template
from .tensor import DTYPE

MAGIC = "SKL"
VERSION = 1
COORDS = 3

CLASS_NAMES = ("oscillate", "raise", "circle", "stationary")
NUM_SYNTH_CLASSES = len(CLASS_NAMES)
MIN_SYNTH_FRAMES = 16


# ---------------------------------------------------------------------------
# errors


class SklError(ValueError):
    """Malformed SKL input.  ``line`` is the 1-based physical line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SklHeaderError(SklError):
    """Wrong magic, unsupported version or malformed header line."""


class SklExtentError(SklError):
    """Declared extents disagree with the body or the template."""


class SklTokenError(SklError):
    """A token that should be numeric is not."""


class SklValueError(SklError):
    """A coordinate is NaN or infinite."""


# ---------------------------------------------------------------------------
# sequences


@dataclass
class SkeletonSequence:
    joints: np.ndarray  # (3, J, T)
    label: int
    subject: int = 0
    template: str = "ntu25"

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=DTYPE)
        if self.joints.ndim != 3 or self.joints.shape[0] != COORDS:
            raise ValueError(f"joints must be (3, J, T), got {self.joints.shape}")
        if self.joints.shape[2] < 1:
            raise ValueError("a sequence needs at least one frame")
        if not np.all(np.isfinite(self.joints)):
            raise ValueError("joint coordinates must be finite")

    @property
    def joint_count(self) -> int:
        return self.joints.shape[1]

    @property
    def frames(self) -> int:
        return self.joints.shape[2]


@dataclass
class Dataset:
    sequences: list[SkeletonSequence]
    class_names: tuple[str, ...] = CLASS_NAMES
    split: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.split:
            self.split = ["train"] * len(self.sequences)
        if len(self.split) != len(self.sequences):
            raise ValueError("one split tag per sequence is required")
        for s in self.sequences:
            if not 0 <= s.label < len(self.class_names):
                raise ValueError(f"label {s.label} out of range for {len(self.class_names)} classes")

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, name: str) -> "Dataset":
        seqs = [s for s, tag in zip(self.sequences, self.split) if tag == name]
        return Dataset(seqs, self.class_names, [name] * len(seqs))

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.sequences], dtype=np.int64)


# ---------------------------------------------------------------------------
# SKL parsing


def _int_field(tokens: list[str], key: str, lineno: int, count: int = 1) -> list[int]:
    if len(tokens) != count + 1 or tokens[0] != key:
        raise SklHeaderError(f"expected '{key}' followed by {count} integer(s), got {' '.join(tokens)!r}", lineno)
    try:
        return [int(t) for t in tokens[1:]]
    except ValueError:
        raise SklTokenError(f"non-integer value in '{key}' line", lineno) from None


def parse_skl(text: str) -> SkeletonSequence:
    lines = [(i, ln.strip()) for i, ln in enumerate(text.splitlines(), start=1)]
    lines = [(i, ln) for i, ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise SklHeaderError("empty file", 1)
    it = iter(lines)

    lineno, ln = next(it)
    tokens = ln.split()
    if len(tokens) != 2 or tokens[0] != MAGIC:
        raise SklHeaderError(f"bad magic {ln!r}, expected '{MAGIC} {VERSION}'", lineno)
    if tokens[1] != str(VERSION):
        raise SklHeaderError(f"unsupported version {tokens[1]!r}", lineno)

    def header(key: str):
        try:
            return next(it)
        except StopIteration:
            raise SklHeaderError(f"missing '{key}' header line", lines[-1][0]) from None

    lineno, ln = header("template")
    tokens = ln.split()
    if len(tokens) != 2 or tokens[0] != "template":
        raise SklHeaderError(f"expected 'template <name>', got {ln!r}", lineno)
    template_name = tokens[1]
    try:
        template = get_template(template_name)
    except GraphError as exc:
        raise SklHeaderError(str(exc), lineno) from None

    dims_line, ln = header("dims")
    C, J, T = _int_field(ln.split(), "dims", dims_line, 3)
    if C != COORDS:
        raise SklExtentError(f"dims declares C={C}, only C={COORDS} is supported", dims_line)
    if J != template.joint_count:
        raise SklExtentError(
            f"dims declares J={J} but template {template_name!r} has {template.joint_count} joints", dims_line)
    if T < 1:
        raise SklExtentError(f"dims declares T={T}, need at least one frame", dims_line)

    lineno, ln = header("label")
    (label,) = _int_field(ln.split(), "label", lineno)

    subject = 0
    body = list(it)
    if body and body[0][1].split()[0] == "subject":
        lineno, ln = body.pop(0)
        (subject,) = _int_field(ln.split(), "subject", lineno)

    if len(body) > T:
        raise SklExtentError(f"dims declares T={T} but found extra frame line", body[T][0])
    if len(body) < T:
        last = body[-1][0] if body else dims_line
        raise SklExtentError(
            f"dims declares T={T} but only {len(body)} frame lines present "
            f"(file ends after line {last})", last)

    joints = np.empty((C, J, T), dtype=DTYPE)
    for t, (lineno, ln) in enumerate(body):
        tokens = ln.split()
        if len(tokens) != C * J:
            raise SklExtentError(f"frame {t} has {len(tokens)} values, expected {C * J}", lineno)
        try:
            values = [float(tok) for tok in tokens]
        except ValueError:
            bad = next(tok for tok in tokens if not _is_float(tok))
            raise SklTokenError(f"non-numeric token {bad!r}", lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise SklValueError("non-finite coordinate", lineno)
        joints[:, :, t] = np.array(values).reshape(J, C).T
    if label < 0:
        raise SklHeaderError(f"label must be non-negative, got {label}", None)
    return SkeletonSequence(joints, label, subject, template_name)


def _is_float(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def serialize_skl(seq: SkeletonSequence) -> str:
    C, J, T = seq.joints.shape
    out = [
        f"{MAGIC} {VERSION}",
        f"template {seq.template}",
        f"dims {C} {J} {T}",
        f"label {seq.label}",
        f"subject {seq.subject}",
    ]
    frames = seq.joints.transpose(2, 1, 0).reshape(T, J * C)
    out.extend(" ".join(repr(float(v)) for v in row) for row in frames)
    return "\n".join(out) + "\n"


def read_skl(path) -> SkeletonSequence:
    return parse_skl(Path(path).read_text(encoding="utf-8"))


def write_skl(seq: SkeletonSequence, path) -> Path:
    path = Path(path)
    path.write_text(serialize_skl(seq), encoding="utf-8")
    return path


def fit_length(seq: SkeletonSequence, T: int) -> SkeletonSequence:
    """Crop to ``T`` frames, or pad by repeating the final frame."""
    if T < 1:
        raise ValueError(f"target length must be positive, got {T}")
    P = seq.joints
    if P.shape[2] >= T:
        P = P[:, :, :T].copy()
    else:
        pad = np.repeat(P[:, :, -1:], T - P.shape[2], axis=2)
        P = np.concatenate([P, pad], axis=2)
    return SkeletonSequence(P, seq.label, seq.subject, seq.template)


def load_directory(path, frames: int | None = None, template: str | None = None) -> list[SkeletonSequence]:
    """Read every ``*.skl`` file under ``path`` in sorted name order."""
    files = sorted(Path(path).glob("*.skl"))
    seqs = []
    for f in files:
        try:
            seq = read_skl(f)
        except SklError as exc:
            raise type(exc)(f"{f.name}: {exc}") from exc
        if template is not None and seq.template != template:
            raise SklHeaderError(f"{f.name}: template {seq.template!r}, expected {template!r}")
        seqs.append(fit_length(seq, frames) if frames else seq)
    return seqs


# ---------------------------------------------------------------------------
# synthetic motion


def rest_pose(template: SkeletonTemplate) -> np.ndarray:
    """A fixed, non-degenerate rest pose (3, J) derived from the tree structure."""
    parents = template.parents()
    pose = np.zeros((COORDS, template.joint_count), dtype=DTYPE)
    depth = [0] * template.joint_count
    for j in range(template.joint_count):
        p = parents[j]
        while p >= 0:
            depth[j] += 1
            p = parents[p]
    golden = math.pi * (3.0 - math.sqrt(5.0))
    for j in sorted(range(template.joint_count), key=lambda j: (depth[j], j)):
        p = parents[j]
        if p < 0:
            pose[:, j] = (0.0, 1.0, 3.0)
        else:
            angle = golden * j
            pose[:, j] = pose[:, p] + (0.2 * math.cos(angle), 0.2 * abs(math.sin(angle)) + 0.05, 0.0)
    return pose


def synth_generate(class_id: int, template: str | SkeletonTemplate, T: int, seed: int,
                   jitter: float = 0.01, amplitude: float = 0.15) -> SkeletonSequence:
    """One synthetic labeled sequence.

    Classes: 0 oscillates the template's limb chain vertically, 1 raises it
    linearly, 2 moves it in a horizontal circle, 3 stands still.  Every
    sample gets a random phase, a random global offset and Gaussian jitter.
    """
    if class_id not in range(NUM_SYNTH_CLASSES):
        raise ValueError(f"unknown synthetic class {class_id!r}; expected 0..{NUM_SYNTH_CLASSES - 1}")
    if T < MIN_SYNTH_FRAMES:
        raise ValueError(f"synthetic sequences need T >= {MIN_SYNTH_FRAMES}, got {T}")
    tpl = get_template(template) if isinstance(template, str) else template
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    offset = rng.uniform(-0.2, 0.2, size=COORDS)

    t = np.arange(T, dtype=DTYPE)
    angle = 2.0 * math.pi * 2.0 * t / T + phase
    P = np.repeat(rest_pose(tpl)[:, :, None], T, axis=2)
    n = len(tpl.limb)
    for m, j in enumerate(tpl.limb):
        w = amplitude * (m + 1) / n
        if class_id == 0:
            P[1, j] += w * np.sin(angle)
        elif class_id == 1:
            P[1, j] += 2.0 * w * t / (T - 1)
        elif class_id == 2:
            P[0, j] += w * np.cos(angle)
            P[2, j] += w * np.sin(angle)
    P += offset[:, None, None]
    if jitter > 0:
        P += rng.normal(0.0, jitter, size=P.shape)
    return SkeletonSequence(P, class_id, subject=0, template=tpl.name)


def synth_labels(count: int, classes: Sequence[int] = range(NUM_SYNTH_CLASSES)) -> list[int]:
    """Balanced round-robin labels; a remainder goes to the lowest classes."""
    classes = list(classes)
    return [classes[i % len(classes)] for i in range(count)]


def make_synthetic(template: str, n_train: int, n_test: int, T: int, seed: int = 0,
                   jitter: float = 0.01) -> Dataset:
    seqs, split = [], []
    for tag, count, stream in (("train", n_train, 0), ("test", n_test, 1)):
        for i, label in enumerate(synth_labels(count)):
            s = synth_generate(label, template, T, seed=hash_seed(seed, stream, i), jitter=jitter)
            s.subject = i
            seqs.append(s)
            split.append(tag)
    return Dataset(seqs, CLASS_NAMES, split)


def hash_seed(*parts: int) -> int:
    """Stable 63-bit seed derived from a tuple of integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> 1)


# ---------------------------------------------------------------------------
# batching


def batch_iter(data: Dataset | Sequence[SkeletonSequence], batch_size: int,
               shuffle_seed: int | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    seqs = data.sequences if isinstance(data, Dataset) else list(data)
    if not seqs:
        raise ValueError("cannot batch an empty dataset")
    if batch_size < 1:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    shape = seqs[0].joints.shape
    for s in seqs:
        if s.joints.shape != shape:
            raise ValueError(f"all sequences must share (3, J, T); got {s.joints.shape} and {shape}")
    order = np.arange(len(seqs))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(seqs))
    for start in range(0, len(seqs), batch_size):
        idx = order[start:start + batch_size]
        X = np.stack([seqs[i].joints for i in idx])
        y = np.array([seqs[i].label for i in idx], dtype=np.int64)
        yield X, y
