"""Experiment configuration: a flat dataclass, a ``key = value`` file format and validation."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union

from ..data import CORRUPTIONS
from ..reweight import MAP_KINDS


class ConfigError(ValueError):
    """Invalid configuration value; the message names the field."""


@dataclass
class ExperimentConfig:
    # data
    dataset: str = "blobs"  # blobs | moons | cifar10
    num_classes: int = 10
    dim: int = 16
    per_class: int = 200  # training pool per class (before the validation split)
    test_per_class: int = 100
    gap: float = 3.5
    moons_noise: float = 0.3
    cifar_path: str = ""
    cifar_test_path: str = ""
    cifar_limit: int = 0  # 0 keeps every record
    imbalance_factor: float = 1.0
    noise_rate: float = 0.0
    corruptions: str = "none"  # none | all | comma list of kinds
    val_fraction: float = 0.1
    split_after_long_tail: bool = True
    data_seed: int = -1  # -1 reuses seed
    # model
    backbone: str = "mlp"  # mlp | conv
    hidden: str = "64,32"  # hidden widths; the last one is the feature dimension
    conv_channels: str = "8,16"
    feature_relu: bool = False  # relu after the last backbone layer
    head: str = "cosine"  # cosine | linear
    tau: float = 8.0
    # loss
    lambda_mix: float = 1.0
    lambda_crl: float = 1.0
    beta: float = 10.0
    crl_on_mixup: bool = False
    # optimisation
    lr: float = 0.1
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    rho: float = 0.05
    batch_size: int = 128
    epochs: int = 100
    swa: bool = True
    swa_start: int = 60
    swa_lr: float = 0.05
    select: str = "val_aurc"  # val_aurc | val_acc | final
    # second stage
    reweight: bool = False
    reweight_map: str = "exp"
    reweight_param: float = 1.0
    reweight_epochs: int = 50
    reweight_lr: float = 5e-3
    # bookkeeping
    seed: int = 0
    run_id: str = ""
    output_dir: str = ""

    @property
    def effective_data_seed(self) -> int:
        return self.seed if self.data_seed < 0 else self.data_seed

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return _int_list(self.hidden, "hidden")

    @property
    def corruption_kinds(self) -> tuple[str, ...]:
        c = self.corruptions.strip()
        if c in ("", "none"):
            return ()
        if c == "all":
            return CORRUPTIONS
        return tuple(k.strip() for k in c.split(",") if k.strip())

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def fingerprint(self, ignore: tuple[str, ...] = ("run_id", "output_dir")) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in ignore}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


FIELD_TYPES: dict[str, type] = {f.name: type(f.default) for f in fields(ExperimentConfig)}

PRESETS: dict[str, dict[str, Any]] = {
    # desk benchmark: failure prediction on 10-class blobs
    "desk": {},
    # the full-length schedule of the original recipe
    "full": {"epochs": 200, "swa_start": 120, "swa_lr": 0.05},
    # MSP baseline: every SURE component off
    "baseline": {"lambda_mix": 0.0, "lambda_crl": 0.0, "rho": 0.0, "swa": False, "head": "linear"},
}


def _int_list(s: str, name: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in str(s).split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{name}: expected comma-separated integers, got {s!r}") from None
    return vals


def parse_value(key: str, raw: Any) -> Any:
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    t = FIELD_TYPES[key]
    if isinstance(raw, t) and not (t is int and isinstance(raw, bool)):
        return raw
    s = str(raw).strip()
    try:
        if t is bool:
            low = s.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if t is int:
            return int(s)
        if t is float:
            return float(s)
        return s
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {t.__name__}") from None


def from_mapping(values: dict[str, Any], base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    parsed = {k: parse_value(k, v) for k, v in values.items()}
    return dataclasses.replace(cfg, **parsed)


def read_config_file(path: Union[str, Path]) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        k, v = (p.strip() for p in line.split("=", 1))
        if k not in FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown config key {k!r}")
        out[k] = v
    return out


def write_config_file(cfg: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, float):
            v = repr(v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k} = {v}")
    path.write_text("\n".join(lines) + "\n")
    return path


def _finite(cfg, name, lo=None, hi=None, lo_open=False, hi_open=False):
    v = getattr(cfg, name)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{name}: must be a finite number, got {v!r}")
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ConfigError(f"{name}: must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and (v > hi or (hi_open and v == hi)):
        raise ConfigError(f"{name}: must be {'<' if hi_open else '<='} {hi}, got {v}")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Reject out-of-range values before any work starts."""
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        t = FIELD_TYPES[f.name]
        ok = isinstance(v, t) and not (t in (int, float) and isinstance(v, bool))
        if t is float and isinstance(v, int) and not isinstance(v, bool):
            ok = True
        if not ok:
            raise ConfigError(f"{f.name}: expected {t.__name__}, got {type(v).__name__}")
    if cfg.dataset not in ("blobs", "moons", "cifar10"):
        raise ConfigError(f"dataset: unknown dataset {cfg.dataset!r}")
    _finite(cfg, "num_classes", 2)
    if cfg.dataset == "moons" and cfg.num_classes != 2:
        raise ConfigError("num_classes: moons has exactly 2 classes")
    if cfg.dataset == "cifar10":
        if cfg.num_classes != 10:
            raise ConfigError("num_classes: cifar10 has exactly 10 classes")
        if not cfg.cifar_path:
            raise ConfigError("cifar_path: required for dataset cifar10")
    _finite(cfg, "dim", 1)
    _finite(cfg, "per_class", 2)
    _finite(cfg, "test_per_class", 1)
    _finite(cfg, "gap", 0)
    _finite(cfg, "moons_noise", 0)
    _finite(cfg, "cifar_limit", 0)
    _finite(cfg, "imbalance_factor", 1)
    _finite(cfg, "noise_rate", 0, 1)
    for k in cfg.corruption_kinds:
        if k not in CORRUPTIONS:
            raise ConfigError(f"corruptions: unknown kind {k!r}")
    _finite(cfg, "val_fraction", 0, 1, lo_open=True, hi_open=True)
    if cfg.backbone not in ("mlp", "conv"):
        raise ConfigError(f"backbone: unknown backbone {cfg.backbone!r}")
    widths = cfg.hidden_widths
    if not widths or any(w < 1 for w in widths):
        raise ConfigError(f"hidden: widths must be positive integers, got {cfg.hidden!r}")
    ch = _int_list(cfg.conv_channels, "conv_channels")
    if len(ch) != 2 or any(c < 1 for c in ch):
        raise ConfigError(f"conv_channels: need two positive integers, got {cfg.conv_channels!r}")
    if cfg.head not in ("cosine", "linear"):
        raise ConfigError(f"head: unknown head {cfg.head!r}")
    _finite(cfg, "tau", 0, lo_open=True)
    _finite(cfg, "lambda_mix", 0)
    _finite(cfg, "lambda_crl", 0)
    _finite(cfg, "beta", 0, lo_open=True)
    _finite(cfg, "lr", 0, lo_open=True)
    _finite(cfg, "lr_min", 0, cfg.lr)
    _finite(cfg, "momentum", 0, 1, hi_open=True)
    _finite(cfg, "weight_decay", 0)
    _finite(cfg, "rho", 0)
    _finite(cfg, "batch_size", 2)
    _finite(cfg, "epochs", 1)
    _finite(cfg, "swa_start", 0)
    _finite(cfg, "swa_lr", 0, lo_open=True)
    if cfg.select not in ("val_aurc", "val_acc", "final"):
        raise ConfigError(f"select: unknown selection rule {cfg.select!r}")
    if cfg.reweight_map not in MAP_KINDS:
        raise ConfigError(f"reweight_map: unknown map {cfg.reweight_map!r}")
    _finite(cfg, "reweight_param", 0, lo_open=True)
    if cfg.reweight_map == "threshold":
        _finite(cfg, "reweight_param", 0, 1, lo_open=True, hi_open=True)
    if cfg.reweight_map == "power":
        _finite(cfg, "reweight_param", 1)
    _finite(cfg, "reweight_epochs", 0)
    _finite(cfg, "reweight_lr", 0, lo_open=True)
    _finite(cfg, "seed", 0)
    _finite(cfg, "data_seed", -1)
    return cfg
