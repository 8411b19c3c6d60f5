"""JSON run configuration with a strict key allowlist."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .pvec import PvConfig
from .trainkit import TrainConfig

PATH_KEYS = ("interactions", "texts", "pretrain_corpus", "test_items", "pretrained", "checkpoint")


@dataclass
class RunConfig:
    # training (mirrors TrainConfig)
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.001
    weight_decay: float = 1e-5
    dropout_item: float = 0.1
    dropout_pretrained: float = 0.3
    encoder: str = "mov"
    mode: str = "ter"
    seed: int = 0
    dim: int = 50
    word_dim: int = 50
    n_filters: int = 50
    filter_size: int = 3
    neg_exponent: float = 1.0
    n_neg_eval: int = 10
    init_scale: float = 0.05
    # data
    interactions: str | None = None
    texts: str | None = None
    pretrain_corpus: str | None = None
    test_items: str | None = None
    holdout_fraction: float = 0.2
    min_count: int = 5
    max_len: int = 20
    # checkpoints
    pretrained: str | None = None
    checkpoint: str | None = None
    # paragraph vectors
    pv_dim: int = 50
    pv_window: int = 5
    pv_negatives: int = 5
    pv_epochs: int = 10
    pv_lr: float = 0.025
    pv_min_lr: float = 1e-4
    # dropout sweep
    sweep_rates: list[float] = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])

    def __post_init__(self):
        self.train_config()
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must lie in [0, 1)")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        if min(self.pv_dim, self.pv_epochs + 1, self.pv_negatives + 1, self.pv_window + 1) < 1:
            raise ConfigError("pv settings must be non-negative (pv_dim positive)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def pv_config(self) -> PvConfig:
        return PvConfig(self.pv_dim, self.pv_window, self.pv_negatives, self.pv_epochs,
                        self.pv_lr, self.pv_min_lr)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        allowed = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - allowed)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None, **overrides) -> RunConfig:
    """Read a JSON config (or start from defaults) and apply non-None overrides.

    Relative paths inside the file resolve against the file's directory;
    overrides are taken as given.
    """
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be an object")
        for key in PATH_KEYS:
            if isinstance(data.get(key), str) and not Path(data[key]).is_absolute():
                data[key] = str(p.parent / data[key])
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(data)
