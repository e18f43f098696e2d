"""Training configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from vsformer.model import MODES
from vsformer.shape_tokenizer import default_motif_length


@dataclass(frozen=True)
class TrainConfig:
    k: int = 6
    M: int = 10
    m: int | None = None  # motif length; None means max(4, floor(0.1 T))
    alpha: float = 3.0
    beta: float = 4.0
    bins: int = 10
    d_model: int = 8
    d_ff: int = 64
    value_d_model: int = 8
    value_d_ff: int = 16
    n_heads: int = 8
    n_layers: int = 1
    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 200
    patience: int = 50
    seed: int = 0
    mode: str = "full"
    dropout: float = 0.0
    val_fraction: float = 0.2
    tsi_kind_code: bool = False
    znorm_shape_tokens: bool = True

    def __post_init__(self):
        for name in ("k", "M", "bins", "d_model", "d_ff", "value_d_model", "value_d_ff",
                     "n_heads", "n_layers", "batch_size", "epochs", "patience"):
            val = getattr(self, name)
            if not isinstance(val, int) or isinstance(val, bool) or val < 1:
                raise ValueError(f"{name} must be a positive integer, got {val!r}")
        if self.m is not None and (not isinstance(self.m, int) or self.m < 2):
            raise ValueError(f"m must be an integer >= 2, got {self.m!r}")
        if self.bins < 2:
            raise ValueError("bins must be at least 2")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.d_model % self.n_heads or self.value_d_model % self.n_heads:
            raise ValueError(f"model widths must be divisible by n_heads={self.n_heads}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")

    def motif_length(self, T: int) -> int:
        return self.m if self.m is not None else default_motif_length(T)

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig.from_dict({**self.to_dict(), **changes})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
        return cls.from_dict(data)
