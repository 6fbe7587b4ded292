"""Pure-numpy versions of the hot kernels.

Semantics must match ``_kernels.pyx`` bit for bit; both evaluate the same
double-precision expressions in the same order.
"""
from __future__ import annotations

import numpy as np


def selective_risks(incorrect_sorted: np.ndarray) -> np.ndarray:
    """Risk among the top-k for k = 1..n, given 0/1 errors sorted by confidence."""
    errs = np.asarray(incorrect_sorted, dtype=np.float64)
    return np.cumsum(errs) / np.arange(1, errs.size + 1, dtype=np.float64)


def auroc_sorted(conf_asc: np.ndarray, positive: np.ndarray) -> float:
    """Mann-Whitney AUROC from confidences sorted ascending; ties count one half."""
    conf = np.asarray(conf_asc, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    n = conf.size
    # midranks (1-based) of each tie group
    starts = np.flatnonzero(np.r_[True, conf[1:] != conf[:-1]])
    ends = np.r_[starts[1:], n]
    mid = (starts + ends + 1) / 2.0
    ranks = np.repeat(mid, ends - starts)
    n_pos = int(pos.sum())
    n_neg = n - n_pos
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def fpr_at_tpr_sorted(conf_desc: np.ndarray, positive: np.ndarray, tpr_target: float) -> float:
    """FPR at the largest threshold whose TPR reaches ``tpr_target``.

    Inputs sorted by confidence descending; a sample passes when its
    confidence is >= the threshold, so thresholds sit at tie-group ends.
    """
    conf = np.asarray(conf_desc, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    n = conf.size
    n_pos = int(pos.sum())
    n_neg = n - n_pos
    tp = np.cumsum(pos)
    fp = np.cumsum(~pos)
    group_end = np.r_[conf[1:] != conf[:-1], True]
    ok = group_end & (tp / n_pos >= tpr_target)
    k = int(np.argmax(ok))
    return float(fp[k] / n_neg)


def sgd_update(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray,
               lr: float, momentum: float, weight_decay: float) -> None:
    """In place: v <- momentum*v + (g + wd*p); p <- p - lr*v."""
    velocity *= momentum
    velocity += grad + weight_decay * param
    param -= lr * velocity


def swa_accumulate(avg: np.ndarray, current: np.ndarray, count: int) -> None:
    """In place: avg <- (avg*count + current) / (count + 1)."""
    avg *= count
    avg += current
    avg /= count + 1
