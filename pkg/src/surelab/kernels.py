"""Hot-kernel dispatch: the compiled extension when built, numpy otherwise.

Set ``SURELAB_PURE_PYTHON=1`` to force the numpy fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SURELAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def selective_risks(incorrect_sorted):
    return _impl.selective_risks(incorrect_sorted)


def auroc_sorted(conf_asc, positive) -> float:
    return float(_impl.auroc_sorted(conf_asc, positive))


def fpr_at_tpr_sorted(conf_desc, positive, tpr_target: float) -> float:
    return float(_impl.fpr_at_tpr_sorted(conf_desc, positive, tpr_target))


def sgd_update(param, grad, velocity, lr: float, momentum: float, weight_decay: float) -> None:
    """Fused in-place momentum step on flat contiguous float64 arrays."""
    _impl.sgd_update(param, grad, velocity, lr, momentum, weight_decay)


def swa_accumulate(avg, current, count: int) -> None:
    _impl.swa_accumulate(avg, current, count)
