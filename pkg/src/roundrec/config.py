"""Training configuration: defaults, config-file parsing, flag overrides.

Config files are flat ``key = value`` text with ``#`` comments. Unknown keys
are errors. Flags beat file values, file values beat defaults.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields


@dataclass
class TrainConfig:
    rounds: int = 5            # retrieval rounds T
    lam: float = 0.5           # per-round loss decay; config key "lambda"
    k_ctx: int = 10            # context items added per training round
    n_neg: int = 1             # sampled negatives per positive
    epochs: int = 200
    patience: int = 10
    lr: float = 0.001
    batch_size: int = 1024
    max_len: int = 50
    dim: int = 64
    backbone: str = "transformer"   # transformer | gru | filter_mlp
    enable_lft: bool = True
    enable_cat: bool = True
    enable_ira: bool = True
    enable_ura_gru: bool = True
    enable_ura_mlp: bool = True
    enable_ura: bool = True
    seed: int = 0
    eval_k: int = 50
    dropout: float = 0.2
    num_blocks: int = 2
    num_heads: int = 2
    ff_mult: int = 4
    cat_projections: bool = False
    full_vocab_loss: bool = False
    exclude_target_from_context: bool = False

    def validate(self) -> "TrainConfig":
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("lambda must be in (0, 1]")
        if self.k_ctx < 1:
            raise ValueError("k_ctx must be >= 1")
        if self.n_neg < 0:
            raise ValueError("n_neg must be >= 0")
        if self.max_len < 1 or self.dim < 1:
            raise ValueError("max_len and dim must be >= 1")
        if self.backbone not in ("transformer", "gru", "filter_mlp"):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.eval_k < 1:
            raise ValueError("eval_k must be >= 1")
        if self.epochs < 0 or self.patience < 1:
            raise ValueError("epochs must be >= 0 and patience >= 1")
        if self.dim % self.num_heads:
            raise ValueError("dim must be divisible by num_heads")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @staticmethod
    def from_dict(values: dict) -> "TrainConfig":
        values = dict(values)
        if "lambda" in values:
            values["lam"] = values.pop("lambda")
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return TrainConfig(**values).validate()


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, raw: str):
    ftype = _FIELD_TYPES[key]
    raw = raw.strip()
    if ftype == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"config key {key!r}: expected a boolean, got {raw!r}")
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    return raw


def parse_config_file(path) -> dict:
    """Read `key = value` lines into a {field_name: value} dict."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            field = "lam" if key == "lambda" else key
            if field not in _FIELD_TYPES:
                raise ValueError(f"{path}: line {lineno}: unknown config key {key!r}")
            try:
                values[field] = _coerce(field, raw)
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    return values


def resolve_config(file_values: dict | None = None,
                   flag_values: dict | None = None) -> TrainConfig:
    """defaults < config file < command-line flags."""
    merged = {}
    if file_values:
        merged.update(file_values)
    if flag_values:
        merged.update({k: v for k, v in flag_values.items() if v is not None})
    cfg = TrainConfig()
    for key, value in merged.items():
        if not hasattr(cfg, key):
            raise ValueError(f"unknown config key {key!r}")
        setattr(cfg, key, value)
    return cfg.validate()


def config_hash(cfg: TrainConfig) -> str:
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]
