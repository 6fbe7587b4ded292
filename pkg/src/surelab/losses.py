"""Training objectives: cross-entropy, RegMixup and the correctness ranking loss."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class MixupConfig:
    beta: float = 10.0
    enabled: bool = True

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"mixup beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class LossWeights:
    lambda_mix: float = 1.0
    lambda_crl: float = 1.0

    def __post_init__(self):
        for name in ("lambda_mix", "lambda_crl"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (num_classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def check_soft_label(y: np.ndarray, tol: float = 1e-9) -> None:
    y = np.asarray(y)
    if np.any(y < 0) or np.any(np.abs(y.sum(axis=-1) - 1.0) > tol):
        raise ValueError("soft label must be nonnegative and sum to 1")


# -- mixup -----------------------------------------------------------------------


def sample_mix_coefficient(cfg: MixupConfig, rng: np.random.Generator, size=None):
    """Draw m ~ Beta(beta, beta)."""
    return rng.beta(cfg.beta, cfg.beta, size=size)


def mixup_pair(x_i, y_i, x_j, y_j, m):
    """Convex interpolation of two inputs and their soft labels.

    ``m`` may be a scalar or one coefficient per row of a batch.
    """
    x_i, x_j = np.asarray(x_i, dtype=np.float64), np.asarray(x_j, dtype=np.float64)
    y_i, y_j = np.asarray(y_i, dtype=np.float64), np.asarray(y_j, dtype=np.float64)
    if x_i.shape != x_j.shape or y_i.shape != y_j.shape:
        raise ValueError("mixup_pair shape mismatch")
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0) or np.any(m > 1):
        raise ValueError("mixing coefficient must lie in [0, 1]")
    mx = m.reshape(m.shape + (1,) * (x_i.ndim - m.ndim))
    my = m.reshape(m.shape + (1,) * (y_i.ndim - m.ndim))
    return mx * x_i + (1.0 - mx) * x_j, my * y_i + (1.0 - my) * y_j


@dataclass(frozen=True)
class MixupDraw:
    """Partner permutation and per-pair coefficients for one batch."""

    perm: np.ndarray
    m: np.ndarray


def draw_mixup(batch_size: int, cfg: MixupConfig, rng: np.random.Generator) -> MixupDraw:
    if batch_size < 2:
        raise ValueError("mixup needs a batch of at least 2 samples")
    perm = rng.permutation(batch_size)
    m = sample_mix_coefficient(cfg, rng, size=batch_size)
    return MixupDraw(perm, m)


# -- cross-entropy ---------------------------------------------------------------


def cross_entropy(logits, target, weights: Optional[np.ndarray] = None) -> Tensor:
    """Soft-target cross-entropy.

    For a batch, the per-sample losses are averaged, or combined with
    ``weights`` (which should already sum to one) when given. Equal
    weights take the plain-mean path so uniform weighting reproduces the
    unweighted loss and its gradient bit for bit.
    """
    logits = ad.as_tensor(logits)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != logits.shape:
        raise ValueError(f"target shape {target.shape} != logits shape {logits.shape}")
    per_sample = -(ad.log_softmax(logits) * target).sum(axis=-1)
    if per_sample.ndim == 0:
        return per_sample
    if weights is None:
        return per_sample.mean()
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != per_sample.shape:
        raise ValueError(f"need one weight per sample, got {weights.shape}")
    if np.all(weights == weights[0]):
        return per_sample.mean()
    return (per_sample * weights).sum()


def regmixup_loss(
    model: Callable[[np.ndarray], Tensor],
    x: np.ndarray,
    y_soft: np.ndarray,
    cfg: MixupConfig,
    rng: Optional[np.random.Generator] = None,
    draw: Optional[MixupDraw] = None,
) -> Tensor:
    """Mean cross-entropy on batch samples mixed with a shuffled partner."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("regmixup_loss needs a batch of at least 2 samples")
    if draw is None:
        if rng is None:
            raise ValueError("pass either rng or a precomputed draw")
        draw = draw_mixup(len(x), cfg, rng)
    x_mix, y_mix = mixup_pair(x, y_soft, x[draw.perm], np.asarray(y_soft)[draw.perm], draw.m)
    return cross_entropy(model(x_mix), y_mix)


# -- correctness ranking -----------------------------------------------------------


def _check_unit(name: str, v) -> None:
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < 0) or np.any(v > 1) or np.any(np.isnan(v)):
        raise ValueError(f"{name} must lie in [0, 1]")


def crl_pair_loss(c_i: float, c_j: float, s_i: float, s_j: float) -> float:
    """max(0, |c_i - c_j| - sign(c_i - c_j) * (s_i - s_j)) for plain floats."""
    for name, v in (("c_i", c_i), ("c_j", c_j), ("s_i", s_i), ("s_j", s_j)):
        _check_unit(name, v)
    dc = c_i - c_j
    return max(0.0, abs(dc) - float(np.sign(dc)) * (s_i - s_j))


def ring_pairing(batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Partner index for each sample: i is paired with perm[i]."""
    return rng.permutation(batch_size)


def crl_batch_loss(c: np.ndarray, s: Tensor, partner: np.ndarray) -> Tensor:
    """Mean pairwise ranking hinge; ``c`` is constant, gradients reach ``s``."""
    c = np.asarray(c, dtype=np.float64)
    s = ad.as_tensor(s)
    if c.size == 0:
        raise ValueError("crl_batch_loss of an empty batch")
    _check_unit("correctness", c)
    _check_unit("confidence", s.data)
    partner = np.asarray(partner)
    dc = c - c[partner]
    ds = s - s[partner]
    return ad.relu(np.abs(dc) - ds * np.sign(dc)).mean()


@dataclass
class CorrectnessHistory:
    """Per-sample counts of correct predictions over the epochs seen so far."""

    correct_counts: np.ndarray
    seen_counts: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "CorrectnessHistory":
        return cls(np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.seen_counts)

    def _check_ids(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= len(self)):
            raise KeyError(f"unknown sample id(s) outside [0, {len(self)})")
        return ids

    def has_history(self, ids) -> bool:
        return bool(np.all(self.seen_counts[self._check_ids(ids)] > 0))

    def correctness(self, ids) -> np.ndarray:
        ids = self._check_ids(ids)
        seen = self.seen_counts[ids]
        if np.any(seen == 0):
            raise LookupError("correctness undefined before a sample's first update")
        return self.correct_counts[ids] / seen


def update_correctness_history(
    history: CorrectnessHistory, sample_ids, predictions, true_labels
) -> CorrectnessHistory:
    """Count one prediction event per id occurrence.

    ``predictions`` are class indices or per-class score rows.
    """
    ids = history._check_ids(sample_ids)
    pred = np.asarray(predictions)
    if pred.ndim == 2:
        pred = pred.argmax(axis=1)
    hit = (pred == np.asarray(true_labels)).astype(np.int64)
    np.add.at(history.seen_counts, ids, 1)
    np.add.at(history.correct_counts, ids, hit)
    return history


def total_loss(l_ce, l_mix, l_crl, w: LossWeights):
    """L_ce + lambda_mix * L_mix + lambda_crl * L_crl.

    Zero-weighted terms are dropped entirely, so they cost nothing and
    cannot contaminate the result. A term passed as ``None`` was skipped
    for this batch and contributes 0.
    """
    total = l_ce
    if w.lambda_mix != 0.0 and l_mix is not None:
        total = total + w.lambda_mix * l_mix
    if w.lambda_crl != 0.0 and l_crl is not None:
        total = total + w.lambda_crl * l_crl
    value = total.data if isinstance(total, Tensor) else np.asarray(total)
    if not np.all(np.isfinite(value)):
        raise DivergenceError("total loss is not finite")
    return total
