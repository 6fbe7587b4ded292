"""Define-by-run reverse-mode differentiation over dense float64 arrays.

Every operation executed while a :class:`Tape` is active and that touches a
trainable :class:`Parameter` (directly or through earlier recorded results)
is appended to the tape together with its vector-Jacobian product.
:func:`backward` replays the tape in reverse.

    >>> w = Parameter([3.0], name="w")
    >>> with Tape() as tape:
    ...     loss = (w * w).sum()
    >>> backward(tape, loss)["w"].data
    array([6.])
"""
from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

EPS_NORM = 1e-12

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


class AutodiffError(Exception):
    pass


class NonFiniteError(AutodiffError, FloatingPointError):
    """A tensor holds NaN or Inf."""


class DegenerateVectorError(AutodiffError, ValueError):
    """Normalising a vector whose norm is at or below ``EPS_NORM``."""


class TapeCorruptionError(AutodiffError):
    pass


_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "surelab_active_tape", default=None
)


@dataclass
class Node:
    id: int
    inputs: tuple[Optional[int], ...]
    vjp: Optional[Callable[[np.ndarray], tuple[Optional[np.ndarray], ...]]]
    shape: tuple[int, ...]


@dataclass
class Tape:
    """Ordered record of the operations of one forward pass.

    Tapes are single use: open one per forward pass with ``with Tape() as t``.
    The active tape lives in a context variable, so threads never share one.
    """

    nodes: list[Node] = field(default_factory=list)
    leaves: dict[int, "Parameter"] = field(default_factory=dict)
    _leaf_ids: dict[int, int] = field(default_factory=dict, repr=False)
    _token: object = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def _leaf(self, p: "Parameter") -> int:
        key = id(p)
        nid = self._leaf_ids.get(key)
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(Node(nid, (), None, p.data.shape))
            self._leaf_ids[key] = nid
            self.leaves[nid] = p
        return nid

    def _node_of(self, t: "Tensor") -> Optional[int]:
        if isinstance(t, Parameter):
            return self._leaf(t) if t.trainable else None
        if t._tape is self:
            return t.node
        return None

    def _push(self, inputs, vjp, shape) -> int:
        nid = len(self.nodes)
        self.nodes.append(Node(nid, inputs, vjp, shape))
        return nid


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


class Tensor:
    """Dense float64 array with an optional node on the active tape."""

    __slots__ = ("data", "node", "_tape")
    __array_priority__ = 100

    def __init__(self, data: ArrayLike):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.node: Optional[int] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the values."""
        return self.data.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"{what} contains NaN or Inf")
        return self

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node})"

    def __len__(self) -> int:
        return len(self.data)

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __rtruediv__ = lambda a, b: div(b, a)
    __matmul__ = lambda a, b: matmul(a, b)
    __rmatmul__ = lambda a, b: matmul(b, a)
    __neg__ = lambda a: neg(a)
    __getitem__ = lambda a, idx: take(a, idx)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


class Parameter(Tensor):
    """Named trainable leaf tensor."""

    __slots__ = ("name", "trainable")

    def __init__(self, data: ArrayLike, name: str, trainable: bool = True):
        super().__init__(np.array(data, dtype=np.float64))
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    res = Tensor(out)
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        return res
    ids = tuple(tape._node_of(t) for t in inputs)
    if all(i is None for i in ids):
        return res
    res.node = tape._push(ids, vjp, res.data.shape)
    res._tape = tape
    return res


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise -----------------------------------------------------------


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def relu(a: ArrayLike) -> Tensor:
    """max(x, 0); the subgradient at 0 is 0."""
    a = as_tensor(a)
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record(np.log(ad), (a,), lambda g: (g / ad,))


# -- reductions and shape ----------------------------------------------------


def _expand(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _record(
        a.data.sum(axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_expand(g, shape, axis, keepdims),),
    )


def mean(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size // max(out.size, 1) if a.data.size else 1
    return _record(out, (a,), lambda g: (_expand(g, shape, axis, keepdims) / n,))


def max_(a: ArrayLike, axis: int = -1) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximiser."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    idx_k = np.expand_dims(idx, axis)
    out = np.take_along_axis(a.data, idx_k, axis=axis).squeeze(axis)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        np.put_along_axis(full, idx_k, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _record(out, (a,), vjp)


def reshape(a: ArrayLike, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: ArrayLike, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _record(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),)
    )


def take(a: ArrayLike, index) -> Tensor:
    """Basic or integer-array indexing (``a[index]``)."""
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _record(a.data[index], (a,), vjp)


# -- linear algebra ----------------------------------------------------------


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim > 2 or bd.ndim > 2 or ad.ndim == 0 or bd.ndim == 0:
        raise ValueError(f"matmul supports 1-D and 2-D operands, got {ad.shape} @ {bd.shape}")

    def vjp(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g * bd, g * ad

    return _record(ad @ bd, (a, b), vjp)


def softmax(logits: ArrayLike, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    z = as_tensor(logits)
    if z.data.size == 0 or z.shape[axis] == 0:
        raise ValueError("softmax of an empty tensor")
    e = np.exp(z.data - z.data.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)
    return _record(
        y, (z,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    )


def log_softmax(logits: ArrayLike, axis: int = -1) -> Tensor:
    z = as_tensor(logits)
    if z.data.size == 0 or z.shape[axis] == 0:
        raise ValueError("log_softmax of an empty tensor")
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return _record(out, (z,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def l2_normalize(v: ArrayLike, axis: int = -1) -> Tensor:
    """Scale to unit Euclidean norm along ``axis``.

    Raises DegenerateVectorError when any norm is at or below ``EPS_NORM``.
    """
    v = as_tensor(v)
    n = np.sqrt((v.data * v.data).sum(axis=axis, keepdims=True))
    if v.data.size == 0 or np.any(n <= EPS_NORM):
        raise DegenerateVectorError(f"cannot normalise a vector with norm <= {EPS_NORM}")
    y = v.data / n
    return _record(
        y, (v,), lambda g: ((g - y * (g * y).sum(axis=axis, keepdims=True)) / n,)
    )


def _im2col(x: np.ndarray, kh: int, kw: int, pad: int) -> np.ndarray:
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    b, c, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    s = x.strides
    cols = np.lib.stride_tricks.as_strided(
        x, (b, c, kh, kw, oh, ow), (s[0], s[1], s[2], s[3], s[2], s[3])
    )
    # (B, OH, OW, C*KH*KW)
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(b, oh, ow, c * kh * kw)


def conv2d(x: ArrayLike, weight: ArrayLike, bias: ArrayLike, padding: int = 0) -> Tensor:
    """Direct stride-1 2-D convolution, ``x`` [B,C,H,W], ``weight`` [O,C,KH,KW]."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    xd, wd = x.data, weight.data
    if xd.ndim != 4 or wd.ndim != 4 or xd.shape[1] != wd.shape[1]:
        raise ValueError(f"conv2d shape mismatch: {xd.shape} vs {wd.shape}")
    o, c, kh, kw = wd.shape
    cols = _im2col(xd, kh, kw, padding)
    wmat = wd.reshape(o, -1)
    out = (cols @ wmat.T + bias.data).transpose(0, 3, 1, 2)
    b, _, h, w = xd.shape

    def vjp(g):
        gk = g.transpose(0, 2, 3, 1)  # B,OH,OW,O
        gw = np.tensordot(gk, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(wd.shape)
        gb = gk.sum(axis=(0, 1, 2))
        gcols = (gk @ wmat).reshape(b, gk.shape[1], gk.shape[2], c, kh, kw)
        gx = np.zeros((b, c, h + 2 * padding, w + 2 * padding))
        oh, ow = gk.shape[1], gk.shape[2]
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i : i + oh, j : j + ow] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if padding:
            gx = gx[:, :, padding:-padding, padding:-padding]
        return gx, gw, gb

    return _record(out, (x, weight, bias), vjp)


# -- reverse pass ------------------------------------------------------------


def backward(
    tape: Tape, loss: Tensor, parameters: Optional[Iterable[Parameter]] = None
) -> dict[str, Tensor]:
    """Gradients of the scalar ``loss`` w.r.t. every trainable parameter.

    ``parameters`` widens the result to parameters that may not be on the
    tape; those (and any parameter the loss does not depend on) get zeros.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")

    named: dict[str, Parameter] = {}

    def _add(p: Parameter) -> None:
        other = named.get(p.name)
        if other is not None and other is not p:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        named[p.name] = p

    for p in tape.leaves.values():
        _add(p)
    for p in parameters or ():
        if p.trainable:
            _add(p)

    grads: dict[int, np.ndarray] = {}
    if loss._tape is tape and loss.node is not None:
        grads[loss.node] = np.ones(())
        for node in reversed(tape.nodes[: loss.node + 1]):
            g = grads.pop(node.id, None) if node.vjp is not None else None
            if g is None or node.vjp is None:
                continue
            parts = node.vjp(g)
            for nid, part in zip(node.inputs, parts):
                if nid is None or part is None:
                    continue
                if nid >= node.id:
                    raise TapeCorruptionError(f"node {node.id} consumes later node {nid}")
                prev = grads.get(nid)
                grads[nid] = part if prev is None else prev + part

    out: dict[str, Tensor] = {}
    leaf_of = {id(p): nid for nid, p in tape.leaves.items()}
    for name, p in named.items():
        nid = leaf_of.get(id(p))
        g = grads.get(nid) if nid is not None else None
        out[name] = Tensor(np.zeros(p.shape) if g is None else np.array(g, dtype=np.float64).reshape(p.shape))
    return out


__all__ = [
    "EPS_NORM",
    "AutodiffError",
    "DegenerateVectorError",
    "NonFiniteError",
    "Parameter",
    "Tape",
    "TapeCorruptionError",
    "Tensor",
    "active_tape",
    "add",
    "as_tensor",
    "backward",
    "conv2d",
    "div",
    "exp",
    "l2_normalize",
    "log",
    "log_softmax",
    "matmul",
    "max_",
    "mean",
    "mul",
    "neg",
    "relu",
    "reshape",
    "softmax",
    "sub",
    "sum_",
    "take",
    "transpose",
]
