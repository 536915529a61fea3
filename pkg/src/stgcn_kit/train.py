"""Plain SGD training with a step-decayed learning rate, evaluation and reports."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import save_checkpoint
from .data import Dataset, batch_iter, hash_seed
from .network import Model, ModelConfig, build_model, count_parameters
from .tensor import EVAL, TRAIN, ParameterStore

log = logging.getLogger(__name__)

EVAL_BATCH = 64
CSV_FIELDS = ("epoch", "train_loss", "train_acc", "test_acc", "seconds")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, last_checkpoint: Path | None = None):
        self.last_checkpoint = last_checkpoint
        if last_checkpoint is not None:
            message = f"{message}; last good checkpoint: {last_checkpoint}"
        super().__init__(message)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 0.01
    lr_decay_epochs: list[int] = field(default_factory=lambda: [30, 40])
    lr_decay_factor: float = 0.1
    momentum: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    checkpoint_interval: int = 0  # 0: only the final checkpoint

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.checkpoint_interval < 0:
            raise ValueError("checkpoint_interval must be non-negative")
        return self

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``."""
        drops = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.learning_rate * self.lr_decay_factor ** drops


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    parameter_count: int = 0

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def losses(self) -> list[float]:
        return [r.train_loss for r in self.epochs]

    @property
    def final_test_accuracy(self) -> float:
        return self.epochs[-1].test_acc

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.epochs:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.train_acc), repr(r.test_acc), f"{r.seconds:.3f}"])
        return buf.getvalue()

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv())
        return path

    @classmethod
    def read_csv(cls, path) -> "TrainReport":
        rows = list(csv.DictReader(Path(path).read_text().splitlines()))
        return cls([EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["train_acc"]),
                                float(r["test_acc"]), float(r["seconds"])) for r in rows])


def sgd_step(store: ParameterStore, lr: float, momentum: float = 0.0, weight_decay: float = 0.0,
             velocity: dict[str, np.ndarray] | None = None) -> ParameterStore:
    """In-place ``value -= lr * grad`` for every parameter, then zero the gradients.

    With ``momentum > 0`` a ``velocity`` dict must be supplied; it is updated
    in place.
    """
    for name in store:
        if not np.all(np.isfinite(store.grad(name))):
            raise DivergenceError(f"non-finite gradient for parameter {name!r}")
    for name, value in store.items():
        g = store.grad(name)
        if weight_decay:
            g = g + weight_decay * value
        if momentum:
            if velocity is None:
                raise ValueError("momentum needs a velocity buffer")
            v = velocity.setdefault(name, np.zeros_like(value))
            v *= momentum
            v += g
            g = v
        value -= lr * g
    store.zero_grad()
    return store


@dataclass
class EvalResult:
    accuracy: float
    per_class: list[float]
    confusion: np.ndarray  # (true, predicted)
    class_names: tuple[str, ...] = ()

    def table(self) -> str:
        """Tab-separated: ``class``, ``name``, ``count``, ``accuracy``."""
        lines = ["class\tname\tcount\taccuracy"]
        for c, acc in enumerate(self.per_class):
            name = self.class_names[c] if c < len(self.class_names) else str(c)
            lines.append(f"{c}\t{name}\t{int(self.confusion[c].sum())}\t{acc!r}")
        return "\n".join(lines)


def predict(model: Model, X: np.ndarray) -> np.ndarray:
    """Argmax class per sample; ties go to the lowest class index."""
    out = []
    for start in range(0, len(X), EVAL_BATCH):
        logits, _ = model.forward_cached(X[start:start + EVAL_BATCH], EVAL)
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out)


def evaluate(model: Model, data: Dataset, predictor: Callable[[np.ndarray], np.ndarray] | None = None
             ) -> EvalResult:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty split")
    K = data.num_classes
    confusion = np.zeros((K, K), dtype=np.int64)
    for X, y in batch_iter(data, EVAL_BATCH):
        pred = predictor(X) if predictor is not None else predict(model, X)
        np.add.at(confusion, (y, np.asarray(pred)), 1)
    counts = confusion.sum(axis=1)
    per_class = [float(confusion[c, c] / counts[c]) if counts[c] else math.nan for c in range(K)]
    return EvalResult(float(np.trace(confusion) / confusion.sum()), per_class, confusion,
                      tuple(data.class_names))


def train(model_config: ModelConfig, train_config: TrainConfig, dataset: Dataset,
          out_dir=None, on_epoch: Callable[[EpochRecord], None] | None = None
          ) -> tuple[Model, TrainReport]:
    """Train end-to-end on the ``train`` split, scoring the ``test`` split each epoch.

    When ``out_dir`` is given, checkpoints are written there every
    ``checkpoint_interval`` epochs and at the end (``model.ckpt``).
    """
    train_config.validate()
    train_set, test_set = dataset.subset("train"), dataset.subset("test")
    if len(train_set) == 0:
        raise ValueError("dataset has no training samples")
    if len(test_set) == 0:
        raise ValueError("dataset has no test samples")
    if model_config.num_classes != dataset.num_classes:
        raise ValueError(
            f"model has {model_config.num_classes} classes, dataset has {dataset.num_classes}")
    model = build_model(model_config)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    last_good: Path | None = None
    velocity: dict[str, np.ndarray] = {}
    report = TrainReport(parameter_count=count_parameters(model)[0])
    tc = train_config
    for epoch in range(tc.epochs):
        start = time.perf_counter()
        lr = tc.lr_at(epoch)
        total_loss, correct, seen = 0.0, 0, 0
        for X, y in batch_iter(train_set, tc.batch_size, shuffle_seed=hash_seed(tc.seed, epoch)):
            model.store.zero_grad()
            loss, logits, _ = model.loss_and_grad(X, y, TRAIN)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", last_good)
            try:
                sgd_step(model.store, lr, tc.momentum, tc.weight_decay, velocity)
            except DivergenceError as exc:
                raise DivergenceError(f"{exc} at epoch {epoch}", last_good) from None
            total_loss += loss * len(y)
            correct += int((np.argmax(logits, axis=1) == y).sum())
            seen += len(y)
        test_acc = evaluate(model, test_set).accuracy
        record = EpochRecord(epoch + 1, total_loss / seen, correct / seen, test_acc,
                             time.perf_counter() - start)
        report.epochs.append(record)
        log.info("epoch %d lr %.4g loss %.5f train_acc %.4f test_acc %.4f",
                 record.epoch, lr, record.train_loss, record.train_acc, record.test_acc)
        if on_epoch is not None:
            on_epoch(record)
        if out_dir is not None and tc.checkpoint_interval and (epoch + 1) % tc.checkpoint_interval == 0:
            last_good = save_checkpoint(model, out_dir / f"epoch{epoch + 1:04d}.ckpt")
    if out_dir is not None:
        save_checkpoint(model, out_dir / "model.ckpt")
    return model, report
