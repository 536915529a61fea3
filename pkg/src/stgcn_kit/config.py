"""Run configuration: ``key = value`` text files plus command-line overrides.

One setting per line, lists are comma-separated, ``#`` starts a comment.
Every key must appear in :data:`SCHEMA`; anything else is rejected.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .network import ConfigError, ModelConfig
from .train import TrainConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _str(text: str) -> str:
    text = text.strip()
    if not text:
        raise ValueError("empty value")
    return text


def _path(text: str) -> str:
    return text.strip()


@dataclass(frozen=True)
class Key:
    section: str  # model | train | data
    parse: Callable[[str], Any]
    default: Any
    help: str


_M, _T = ModelConfig(), TrainConfig()

SCHEMA: dict[str, Key] = {
    "template": Key("model", _str, _M.template, "skeleton template name"),
    "num_classes": Key("model", int, _M.num_classes, "number of action classes"),
    "gvfe_out_channels": Key("model", int, _M.gvfe_out_channels, "encoder output channels"),
    "gvfe_temporal_window": Key("model", int, _M.gvfe_temporal_window, "encoder kernel length (frames)"),
    "blocks": Key("model", _int_list, _M.blocks, "per-block output channels, comma-separated"),
    "dhtcn_layers": Key("model", int, _M.dhtcn_layers, "dilated layers per temporal block"),
    "dhtcn_temporal_window": Key("model", int, _M.dhtcn_temporal_window, "dilated kernel length (odd)"),
    "gvfe_relu": Key("model", _bool, _M.gvfe_relu, "ReLU after the encoder"),
    "gvfe_bn": Key("model", _bool, _M.gvfe_bn, "batch norm after the encoder"),
    "bias": Key("model", _bool, _M.bias, "bias terms on convolutions"),
    "center_input": Key("model", _bool, _M.center_input, "translate inputs to the first-frame centroid"),
    "seed": Key("model", int, _M.seed, "seed for initialization, shuffling and synthetic data"),
    "epochs": Key("train", int, _T.epochs, "training epochs"),
    "batch_size": Key("train", int, _T.batch_size, "mini-batch size"),
    "learning_rate": Key("train", float, _T.learning_rate, "base SGD learning rate"),
    "lr_decay_epochs": Key("train", _int_list, _T.lr_decay_epochs, "epochs at which the rate is multiplied by lr_decay_factor"),
    "lr_decay_factor": Key("train", float, _T.lr_decay_factor, "step decay multiplier"),
    "momentum": Key("train", float, _T.momentum, "SGD momentum (0 = plain SGD)"),
    "weight_decay": Key("train", float, _T.weight_decay, "L2 weight decay"),
    "checkpoint_interval": Key("train", int, _T.checkpoint_interval, "epochs between checkpoints (0 = final only)"),
    "frames": Key("data", int, 64, "sequence length T; files are cropped or padded"),
    "train_dir": Key("data", _path, "", "directory of training .skl files"),
    "test_dir": Key("data", _path, "", "directory of test .skl files"),
    "synth_train": Key("data", int, 0, "synthetic training samples (used when train_dir is empty)"),
    "synth_test": Key("data", int, 0, "synthetic test samples (used when test_dir is empty)"),
    "jitter": Key("data", float, 0.01, "synthetic coordinate noise (m)"),
    "output_dir": Key("data", _path, "runs/latest", "where checkpoints, reports and figures go"),
}


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=lambda: {k: v.default for k, v in SCHEMA.items()})
    source: str | None = None

    def __getitem__(self, key: str):
        return self.values[key]

    def set(self, key: str, raw: str) -> None:
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            self.values[key] = SCHEMA[key].parse(raw)
        except ValueError as exc:
            raise ConfigError(f"invalid value for {key!r}: {exc}") from None

    def model_config(self) -> ModelConfig:
        cfg = ModelConfig(**{k: self.values[k] for k, v in SCHEMA.items() if v.section == "model"})
        try:
            return cfg.validate()
        except ConfigError:
            raise
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid value for 'template': {exc}") from None

    def train_config(self) -> TrainConfig:
        kw = {k: self.values[k] for k, v in SCHEMA.items() if v.section == "train"}
        cfg = TrainConfig(seed=self.values["seed"], **kw)
        try:
            return cfg.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def dumps(self) -> str:
        lines = []
        for key, spec in SCHEMA.items():
            v = self.values[key]
            if isinstance(v, list):
                text = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                text = "true" if v else "false"
            else:
                text = str(v)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str, source: str | None = None) -> RunConfig:
    cfg = RunConfig(source=source)
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source or 'config'}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        cfg.set(key, raw)
    return cfg


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Read ``path`` (or start from defaults) and apply ``key=value`` overrides."""
    if path is None:
        cfg = RunConfig()
    else:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {str(p)!r}: {exc.strerror}") from None
        cfg = parse_config_text(text, str(p))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        cfg.set(key, raw)
    return cfg


def schema_help() -> str:
    return "\n".join(f"  {k:<22} {v.help} (default: {v.default!r})" for k, v in SCHEMA.items())
