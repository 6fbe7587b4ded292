"""SGD with momentum, sharpness-aware steps, weight averaging and the cosine schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

import numpy as np

from . import kernels
from .autodiff import EPS_NORM, Parameter, Tensor
from .losses import DivergenceError


@dataclass(frozen=True)
class SGDConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4

    def __post_init__(self):
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not (self.weight_decay >= 0 and math.isfinite(self.weight_decay)):
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass(frozen=True)
class SAMConfig:
    rho: float = 0.05

    def __post_init__(self):
        if not (self.rho >= 0 and math.isfinite(self.rho)):
            raise ValueError(f"rho must be >= 0, got {self.rho}")


def _grad_array(g) -> np.ndarray:
    return g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)


class SGD:
    """Momentum SGD with coupled weight decay; owns the velocity buffers."""

    def __init__(self, params: Iterable[Parameter], cfg: SGDConfig):
        self.params = [p for p in params if p.trainable]
        self.cfg = cfg
        self.lr = cfg.lr
        self.velocity = {p.name: np.zeros(p.data.size) for p in self.params}

    def step(self, grads: Mapping[str, Tensor], lr: Optional[float] = None) -> None:
        lr = self.lr if lr is None else lr
        for p in self.params:
            g = _grad_array(grads[p.name])
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient for {p.name}")
        for p in self.params:
            g = np.ascontiguousarray(_grad_array(grads[p.name]), dtype=np.float64).reshape(-1)
            flat = np.ascontiguousarray(p.data).reshape(-1)
            kernels.sgd_update(flat, g, self.velocity[p.name], lr, self.cfg.momentum, self.cfg.weight_decay)
            p.data = flat.reshape(p.shape)


def sgd_step(params, grads, cfg: SGDConfig, velocity: Optional[dict] = None, lr: Optional[float] = None):
    """Functional momentum step on name -> array maps.

    Returns ``(new_params, new_velocity)``; inputs are not modified.
    """
    lr = cfg.lr if lr is None else lr
    velocity = velocity or {}
    new_p, new_v = {}, {}
    for name, value in params.items():
        g = np.asarray(_grad_array(grads[name]), dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name}")
        p = np.array(value, dtype=np.float64).reshape(-1)
        v = np.array(velocity.get(name, np.zeros(p.size)), dtype=np.float64).reshape(-1)
        kernels.sgd_update(p, np.ascontiguousarray(g.reshape(-1)), v, lr, cfg.momentum, cfg.weight_decay)
        new_p[name] = p.reshape(np.shape(value))
        new_v[name] = v
    return new_p, new_v


def global_grad_norm(grads: Mapping[str, Tensor]) -> float:
    return math.sqrt(sum(float(np.sum(_grad_array(g) ** 2)) for g in grads.values()))


def sam_perturbation(grads: Mapping[str, Tensor], cfg: SAMConfig) -> dict[str, np.ndarray]:
    """rho * g / ||g|| with the norm taken over all parameters jointly."""
    norm = global_grad_norm(grads)
    if cfg.rho == 0 or norm <= EPS_NORM:
        return {k: np.zeros_like(_grad_array(g)) for k, g in grads.items()}
    scale = cfg.rho / norm
    return {k: _grad_array(g) * scale for k, g in grads.items()}


LossClosure = Callable[[], tuple[Tensor, dict[str, Tensor]]]


@dataclass
class SAMStepInfo:
    loss: float
    perturbed_loss: float
    grads: dict[str, Tensor]


def sam_step(
    params: Iterable[Parameter],
    closure: LossClosure,
    opt: SGD,
    cfg: SAMConfig,
    lr: Optional[float] = None,
) -> SAMStepInfo:
    """One sharpness-aware update.

    ``closure`` evaluates the loss at the current parameter values and
    returns ``(loss, grads)``. It is called at theta and at theta + eps;
    the parameters are restored before the base optimizer applies the
    second gradient. With rho = 0 the second call is skipped, which keeps
    the trajectory bitwise equal to plain SGD.
    """
    params = [p for p in params if p.trainable]
    loss, grads = closure()
    if not np.isfinite(loss.data):
        raise DivergenceError("non-finite loss in the first SAM pass")
    if cfg.rho == 0:
        opt.step(grads, lr)
        return SAMStepInfo(float(loss.data), float(loss.data), grads)
    eps = sam_perturbation(grads, cfg)
    saved = {p.name: p.data for p in params}
    for p in params:
        p.data = saved[p.name] + eps[p.name]
    try:
        loss2, grads2 = closure()
    finally:
        for p in params:
            p.data = saved[p.name]
    if not np.isfinite(loss2.data):
        raise DivergenceError("non-finite loss in the second SAM pass")
    opt.step(grads2, lr)
    return SAMStepInfo(float(loss.data), float(loss2.data), grads2)


@dataclass
class SWAState:
    start_epoch: int
    swa_lr: float
    averaged: dict[str, np.ndarray] = field(default_factory=dict)
    count: int = 0

    def __post_init__(self):
        if not self.swa_lr > 0:
            raise ValueError(f"swa_lr must be positive, got {self.swa_lr}")


def swa_update(state: SWAState, params, epoch: int) -> SWAState:
    """Fold one snapshot into the running mean.

    ``params`` is a name -> array map or an iterable of Parameters.
    """
    if epoch < state.start_epoch:
        raise ValueError(f"epoch {epoch} precedes SWA start {state.start_epoch}")
    if not isinstance(params, Mapping):
        params = {p.name: p.data for p in params}
    if state.count == 0:
        state.averaged = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        state.count = 1
        return state
    if set(params) != set(state.averaged):
        raise ValueError("SWA snapshot parameters differ from the running average")
    for k, v in params.items():
        avg = state.averaged[k]
        v = np.asarray(v, dtype=np.float64)
        if v.shape != avg.shape:
            raise ValueError(f"SWA shape mismatch for {k}: {v.shape} vs {avg.shape}")
        flat = avg.reshape(-1)
        kernels.swa_accumulate(flat, np.ascontiguousarray(v).reshape(-1), state.count)
    state.count += 1
    return state


class NoSnapshotsError(RuntimeError):
    pass


def swa_finalize(state: SWAState, model) -> None:
    """Install the averaged weights into ``model``."""
    if state.count == 0:
        raise NoSnapshotsError("SWA has no snapshots to install")
    model.load_state_dict(state.averaged)


@dataclass(frozen=True)
class LRSchedule:
    eta_max: float
    eta_min: float = 0.0
    total_epochs: int = 100

    def __post_init__(self):
        if not self.eta_max > 0:
            raise ValueError("eta_max must be positive")
        if not 0 <= self.eta_min <= self.eta_max:
            raise ValueError("need 0 <= eta_min <= eta_max")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")


def cosine_lr(sched: LRSchedule, t: float) -> float:
    if not 0 <= t <= sched.total_epochs:
        raise ValueError(f"epoch {t} outside [0, {sched.total_epochs}]")
    return sched.eta_min + 0.5 * (sched.eta_max - sched.eta_min) * (
        1 + math.cos(math.pi * t / sched.total_epochs)
    )


def epoch_lr(sched: LRSchedule, epoch: int, swa: Optional[SWAState] = None) -> float:
    """Cosine value, replaced by the constant SWA rate once averaging starts."""
    if swa is not None and epoch >= swa.start_epoch:
        return swa.swa_lr
    return cosine_lr(sched, epoch)
