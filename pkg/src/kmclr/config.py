"""Flat ``key = value`` run configuration."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

ALPHA_GRID = (0.1, 0.2, 0.3, 0.4)
LAYER_GRID = (1, 2, 3, 4)
DIM_GRID = (8, 16, 32, 64)
REG_GRID = (0.05, 0.01, 0.005, 0.001, 0.0005, 0.0001)


@dataclass
class TrainConfig:
    # data
    interactions: str = ""
    kg: str = ""
    behaviors: str = ""  # comma separated, index order
    target_behavior: str = ""
    # model
    dim: int = 32
    layers: int = 2
    kg_layers: int = 1
    norm: str = "symmetric"
    alpha: float = 0.2
    tau: float = 0.5
    include_target_pair: bool = False
    score_order: str = "conventional"
    kg_std: float = 0.1
    # optimization
    lambda_cl: float = 0.1
    lambda_reg: float = 1e-5
    kg_loss_weight: float = 1.0
    lr_mul: float = 1e-3
    lr_kg: float = 3e-4
    epochs_mul: int = 50
    epochs_kg: int = 50
    epochs_main: int = 100
    batch_size: int = 64
    kg_batch_size: int = 128
    patience: int = 0
    val_fraction: float = 0.05
    # augmentation
    rho: float = 0.1
    a: float = 0.5
    b: float = 1.0
    minmax_scope: str = "global"
    behavior_dropout: float = 0.1
    # ablations
    disable_mcl: bool = False
    disable_kcl: bool = False
    normal_training: bool = False
    # evaluation
    eval_k: int = 10
    n_negatives: int = 99
    full_catalog: bool = False
    bucket_boundaries: str = "5,10,20"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.dim > 0, f"dim must be positive, got {self.dim}")
        need(self.layers >= 1 and self.kg_layers >= 1, "propagation depths must be >= 1")
        need(0.0 <= self.alpha <= 1.0, f"alpha must be in [0, 1], got {self.alpha}")
        need(self.tau > 0, f"tau must be positive, got {self.tau}")
        need(self.lambda_cl >= 0 and self.lambda_reg >= 0 and self.kg_loss_weight >= 0,
             "loss weights must be non-negative")
        need(self.lr_mul > 0 and self.lr_kg > 0, "learning rates must be positive")
        need(min(self.epochs_mul, self.epochs_kg, self.epochs_main) >= 0, "epochs must be >= 0")
        need(self.batch_size >= 2 and self.kg_batch_size >= 1, "batch sizes too small")
        need(0.0 <= self.rho < 1.0, f"rho must be in [0, 1), got {self.rho}")
        need(0.0 <= self.a <= self.b <= 1.0, f"need 0 <= a <= b <= 1, got [{self.a}, {self.b}]")
        need(0.0 <= self.behavior_dropout < 1.0, "behavior_dropout must be in [0, 1)")
        need(0.0 <= self.val_fraction < 1.0, "val_fraction must be in [0, 1)")
        need(self.norm in ("symmetric", "raw_sum"), f"unknown norm {self.norm!r}")
        need(self.score_order in ("conventional", "literal"), f"unknown score_order {self.score_order!r}")
        need(self.minmax_scope in ("global", "user"), f"unknown minmax_scope {self.minmax_scope!r}")
        need(self.eval_k >= 1 and self.n_negatives >= 1, "eval_k and n_negatives must be >= 1")
        need(self.patience >= 0, "patience must be >= 0")

    @property
    def behavior_list(self):
        return [b.strip() for b in self.behaviors.split(",") if b.strip()]

    @property
    def boundaries(self):
        return [int(x) for x in self.bucket_boundaries.split(",") if x.strip()]

    @property
    def total_epochs(self):
        return self.epochs_mul + self.epochs_kg + self.epochs_main

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")


def _coerce(name, raw, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_overrides(pairs, base=None):
    base = base or TrainConfig()
    known = {f.name: getattr(base, f.name) for f in fields(base)}
    changes = {}
    for key, raw in pairs:
        key = key.strip()
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        changes[key] = _coerce(key, raw.strip(), known[key])
    return base.replace(**changes)


def load_config(path, base=None):
    """Read a flat ``key = value`` file; relative data paths resolve against it."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                   inline_comment_prefixes=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + path.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = parse_overrides(cp.items("run"), base)
    for key in ("interactions", "kg"):
        val = getattr(cfg, key)
        if val and not Path(val).is_absolute():
            cfg = cfg.replace(**{key: str((path.parent / val).resolve())})
    return cfg
