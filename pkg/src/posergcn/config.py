"""Run configuration: a flat ``key = value`` text file."""

from __future__ import annotations

import hashlib
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .appearance import AGGREGATORS
from .attention import POOLINGS
from .cells import CELL_KINDS

SEED_ENV = "POSERGCN_SEED"


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass
class Config:
    seed: int = 0
    n: int = 16
    d: int = 64
    layers: int = 1
    cell: str = "rgcn"
    pooling: str = "dam"
    aggregator: str = "ap"
    margin: float = 0.3
    lambda_mode: str = "adaptive"
    epochs: int = 400
    P: int = 8
    K: int = 4
    T: int = 10
    lr: float = 3e-4
    lr_step: int = 200
    normalize: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.cell not in CELL_KINDS:
            raise ConfigError(f"cell must be one of {CELL_KINDS}, got {self.cell!r}", "cell")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}", "pooling")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"aggregator must be one of {AGGREGATORS}, got {self.aggregator!r}", "aggregator")
        for key in ("n", "d", "layers", "P", "K", "T", "lr_step"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1", key)
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0", "epochs")
        if self.margin < 0:
            raise ConfigError("margin must be >= 0", "margin")
        if self.lr <= 0:
            raise ConfigError("lr must be positive", "lr")
        if self.layers > 1 and self.cell in ("gcn_rnn", "gcn_lstm"):
            raise ConfigError(f"{self.cell} supports layers = 1 only", "layers")
        self.fixed_lambda  # validates lambda_mode

    @property
    def fixed_lambda(self) -> float | None:
        """None for the adaptive rule, else the fixed weight."""
        mode = self.lambda_mode
        if mode == "adaptive":
            return None
        if mode.startswith("fixed:"):
            try:
                v = float(mode.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad lambda_mode {mode!r}", "lambda_mode") from None
            if not 0.0 <= v <= 1.0:
                raise ConfigError("fixed lambda must lie in [0, 1]", "lambda_mode")
            return v
        raise ConfigError(f"lambda_mode must be 'adaptive' or 'fixed:<v>', got {mode!r}", "lambda_mode")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def replace(self, **kw) -> "Config":
        d = asdict(self)
        d.update(kw)
        return Config(**d)


def _coerce(key: str, raw: str, typ):
    if typ is bool or typ == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}", key)
    try:
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}", key) from None
    return raw


def parse_config(text: str) -> Config:
    types = {f.name: f.type for f in fields(Config)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}", key)
        values[key] = _coerce(key, raw, types[key])
    return Config(**values)


def load_config(path: str | Path, env: dict | None = None) -> Config:
    """Read a config file; the POSERGCN_SEED environment variable overrides `seed`."""
    cfg = parse_config(Path(path).read_text(encoding="utf-8"))
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            cfg = cfg.replace(seed=int(env[SEED_ENV]))
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer", "seed") from None
    return cfg
