"""Second-stage uncertainty-aware re-weighting for imbalanced training sets."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .losses import DivergenceError, cross_entropy, one_hot
from .model import Classifier
from .optim import SGD, SGDConfig

MAP_KINDS = ("exp", "threshold", "power", "linear")


@dataclass(frozen=True)
class ReweightMap:
    kind: str = "exp"
    param: Optional[float] = None  # t for exp, alpha for threshold, p for power

    def __post_init__(self):
        if self.kind not in MAP_KINDS:
            raise ValueError(f"unknown re-weighting map {self.kind!r}")
        defaults = {"exp": 1.0, "threshold": 0.5, "power": 2.0, "linear": None}
        if self.param is None:
            object.__setattr__(self, "param", defaults[self.kind])
        v = self.param
        if self.kind == "exp" and not (v > 0 and math.isfinite(v)):
            raise ValueError(f"exp map needs t > 0, got {v}")
        if self.kind == "threshold" and not 0 < v < 1:
            raise ValueError(f"threshold map needs alpha in (0, 1), got {v}")
        if self.kind == "power" and not (v >= 1 and math.isfinite(v)):
            raise ValueError(f"power map needs p >= 1, got {v}")


def raw_weight(m: ReweightMap, s):
    """Unnormalised weight for confidence ``s`` (scalar or array)."""
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(s_arr < 0) or np.any(s_arr > 1) or np.any(np.isnan(s_arr)):
        raise ValueError("confidence scores must lie in [0, 1]")
    if m.kind == "exp":
        w = np.exp(-m.param * s_arr)
    elif m.kind == "threshold":
        w = np.where(s_arr < m.param, 1.0 - s_arr, 0.0)
    elif m.kind == "power":
        w = (1.0 - s_arr) ** m.param
    else:
        w = 1.0 - s_arr
    return float(w) if w.ndim == 0 else w


def normalize_batch_weights(raw, warnings: Optional[list] = None) -> np.ndarray:
    """Scale a batch of weights to sum to one; an all-zero batch becomes uniform."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ValueError("cannot normalise an empty batch")
    total = raw.sum()
    if total <= 0:
        if warnings is not None:
            warnings.append("all-zero re-weighting batch replaced by uniform weights")
        return np.full(raw.size, 1.0 / raw.size)
    return raw / total


def capture_uncertainty_scores(model: Classifier, ds: Dataset, batch_size: int = 1024) -> np.ndarray:
    """Maximum softmax probability of every training sample, model frozen."""
    if ds.dim != model.input_dim:
        raise ValueError(f"dataset dim {ds.dim} != model input {model.input_dim}")
    out = np.empty(len(ds))
    for i in range(0, len(ds), batch_size):
        out[i : i + batch_size] = model.predict_proba(ds.inputs[i : i + batch_size]).max(axis=1)
    return np.clip(out, 0.0, 1.0)


@dataclass
class ReweightResult:
    losses: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def reweight_stage(
    model: Classifier,
    ds: Dataset,
    scores: np.ndarray,
    rmap: ReweightMap = ReweightMap(),
    epochs: int = 50,
    lr: float = 5e-3,
    batch_size: int = 128,
    seed: int = 0,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
) -> ReweightResult:
    """Fine-tune ``model`` in place on score-weighted cross-entropy.

    Plain momentum SGD; each batch's weights are normalised to sum to one.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(ds),):
        raise ValueError("need exactly one score per training sample")
    raw = raw_weight(rmap, scores)
    raw = np.atleast_1d(raw)
    rng = np.random.default_rng(seed)
    opt = SGD(model.parameters(), SGDConfig(lr=lr, momentum=momentum, weight_decay=weight_decay))
    y = one_hot(ds.labels, model.num_classes)
    result = ReweightResult()
    for _ in range(epochs):
        order = rng.permutation(len(ds))
        for i in range(0, len(ds), batch_size):
            idx = order[i : i + batch_size]
            w = normalize_batch_weights(raw[idx], result.warnings)
            with ad.Tape() as tape:
                loss = cross_entropy(model(ds.inputs[idx]), y[idx], weights=w)
            if not np.isfinite(loss.data):
                raise DivergenceError("non-finite loss during re-weighting")
            opt.step(ad.backward(tape, loss, model.parameters()))
            result.losses.append(float(loss.data))
    return result


def write_scores_csv(ds: Dataset, scores: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "score"])
        for sid, s in zip(ds.sample_ids, scores):
            w.writerow([int(sid), repr(float(s))])
    return path


def read_scores_csv(path: Union[str, Path]) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if next(r) != ["sample_id", "score"]:
            raise ValueError(f"{path}: header must be sample_id,score")
        rows = [row for row in r if row]
    return (
        np.array([int(a) for a, _ in rows], dtype=np.int64),
        np.array([float(b) for _, b in rows]),
    )
