"""Desk-scale classifiers: an MLP or tiny convnet backbone plus a linear or cosine head."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import DegenerateVectorError, Parameter, Tensor

DEFAULT_TAU = 8.0


@dataclass(frozen=True)
class MLPSpec:
    layer_widths: tuple[int, ...]
    activation: str = "relu"
    relu_features: bool = True  # relu on the last (feature) layer too

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise ValueError("MLPSpec needs at least an input and a feature width")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be >= 1, got {widths}")
        if self.activation != "relu":
            raise ValueError("only relu activation is supported")
        object.__setattr__(self, "layer_widths", widths)

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def feature_dim(self) -> int:
        return self.layer_widths[-1]


@dataclass(frozen=True)
class ConvSpec:
    """Two 3x3 convolutions, global average pooling, then a dense feature layer."""

    in_shape: tuple[int, int, int]  # C, H, W
    channels: tuple[int, int] = (8, 16)
    feature_dim: int = 32

    @property
    def input_dim(self) -> int:
        c, h, w = self.in_shape
        return c * h * w


def _he(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    return rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)


class MLP:
    def __init__(self, spec: MLPSpec, rng: Optional[np.random.Generator] = None):
        self.spec = spec
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[Parameter] = []
        widths = spec.layer_widths
        for i, (fin, fout) in enumerate(zip(widths[:-1], widths[1:])):
            self.params.append(Parameter(_he(rng, fout, fin), f"backbone.{i}.weight"))
            self.params.append(Parameter(np.zeros(fout), f"backbone.{i}.bias"))

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim

    @property
    def feature_dim(self) -> int:
        return self.spec.feature_dim

    def forward_features(self, x) -> Tensor:
        """relu(W x + b) through every layer; ``x`` is [D_in] or [B, D_in].

        With ``relu_features=False`` the last layer stays affine.
        """
        h = ad.as_tensor(x)
        if h.shape[-1] != self.input_dim:
            raise ValueError(f"input width {h.shape[-1]} != {self.input_dim}")
        n_layers = len(self.params) // 2
        for i, (w, b) in enumerate(zip(self.params[::2], self.params[1::2])):
            h = h @ w.T + b
            if i < n_layers - 1 or self.spec.relu_features:
                h = ad.relu(h)
        return h


class ConvNet:
    def __init__(self, spec: ConvSpec, rng: Optional[np.random.Generator] = None):
        self.spec = spec
        rng = rng if rng is not None else np.random.default_rng(0)
        c, _, _ = spec.in_shape
        c1, c2 = spec.channels
        self.params = [
            Parameter(rng.standard_normal((c1, c, 3, 3)) * np.sqrt(2.0 / (9 * c)), "backbone.conv1.weight"),
            Parameter(np.zeros(c1), "backbone.conv1.bias"),
            Parameter(rng.standard_normal((c2, c1, 3, 3)) * np.sqrt(2.0 / (9 * c1)), "backbone.conv2.weight"),
            Parameter(np.zeros(c2), "backbone.conv2.bias"),
            Parameter(_he(rng, spec.feature_dim, c2), "backbone.fc.weight"),
            Parameter(np.zeros(spec.feature_dim), "backbone.fc.bias"),
        ]

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim

    @property
    def feature_dim(self) -> int:
        return self.spec.feature_dim

    def forward_features(self, x) -> Tensor:
        x = ad.as_tensor(x)
        single = x.ndim == 1
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"input width {x.shape[-1]} != {self.input_dim}")
        h = x.reshape((1 if single else x.shape[0],) + tuple(self.spec.in_shape))
        w1, b1, w2, b2, wf, bf = self.params
        h = ad.relu(ad.conv2d(h, w1, b1, padding=1))
        h = ad.relu(ad.conv2d(h, w2, b2, padding=1))
        h = h.mean(axis=(2, 3))
        h = ad.relu(h @ wf.T + bf)
        return h.reshape(h.shape[1:]) if single else h


class LinearClassifier:
    def __init__(self, feature_dim: int, num_classes: int, rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(feature_dim)
        self.weight = Parameter(rng.uniform(-bound, bound, (num_classes, feature_dim)), "head.weight")
        self.bias = Parameter(np.zeros(num_classes), "head.bias")

    @property
    def params(self) -> list[Parameter]:
        return [self.weight, self.bias]

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]


class CosineClassifier:
    """Logit k is ``tau * cos(f, w_k)``; no bias."""

    def __init__(
        self,
        feature_dim: int,
        num_classes: int,
        tau: float = DEFAULT_TAU,
        rng: Optional[np.random.Generator] = None,
    ):
        if num_classes < 2:
            raise ValueError("cosine classifier needs K >= 2")
        if not tau > 0:
            raise ValueError(f"temperature must be positive, got {tau}")
        rng = rng if rng is not None else np.random.default_rng(0)
        w = rng.standard_normal((num_classes, feature_dim))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        self.prototypes = Parameter(w, "head.prototypes")
        self.tau = float(tau)

    @property
    def params(self) -> list[Parameter]:
        return [self.prototypes]

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]


def linear_logits(clf: LinearClassifier, f) -> Tensor:
    f = ad.as_tensor(f)
    if f.shape[-1] != clf.weight.shape[1]:
        raise ValueError(f"feature dim {f.shape[-1]} != head input {clf.weight.shape[1]}")
    return f @ clf.weight.T + clf.bias


def cosine_logits(clf: CosineClassifier, f) -> Tensor:
    f = ad.as_tensor(f)
    if f.shape[-1] != clf.prototypes.shape[1]:
        raise ValueError(f"feature dim {f.shape[-1]} != prototype dim {clf.prototypes.shape[1]}")
    try:
        fn = ad.l2_normalize(f)
    except DegenerateVectorError as e:
        raise DegenerateVectorError(f"degenerate feature vector: {e}") from None
    try:
        wn = ad.l2_normalize(clf.prototypes)
    except DegenerateVectorError as e:
        raise DegenerateVectorError(f"degenerate prototype: {e}") from None
    return (fn @ wn.T) * clf.tau


Backbone = Union[MLP, ConvNet]
Head = Union[LinearClassifier, CosineClassifier]


class Classifier:
    """Backbone followed by a classification head."""

    def __init__(self, backbone: Backbone, head: Head):
        if isinstance(head, LinearClassifier):
            fd = head.weight.shape[1]
        else:
            fd = head.prototypes.shape[1]
        if fd != backbone.feature_dim:
            raise ValueError(f"head expects {fd} features, backbone makes {backbone.feature_dim}")
        self.backbone = backbone
        self.head = head
        names = [p.name for p in self.parameters()]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")

    @property
    def num_classes(self) -> int:
        return self.head.num_classes

    @property
    def input_dim(self) -> int:
        return self.backbone.input_dim

    def parameters(self) -> list[Parameter]:
        return list(self.backbone.params) + list(self.head.params)

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def forward_features(self, x) -> Tensor:
        return self.backbone.forward_features(x)

    def logits(self, x) -> Tensor:
        f = self.forward_features(x)
        if isinstance(self.head, CosineClassifier):
            return cosine_logits(self.head, f)
        return linear_logits(self.head, f)

    __call__ = logits

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return ad.softmax(self.logits(x)).data

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(state) != set(params):
            raise KeyError(f"state keys {sorted(state)} != model keys {sorted(params)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def describe(self) -> dict[str, str]:
        meta = {"num_classes": str(self.num_classes)}
        if isinstance(self.backbone, MLP):
            meta["backbone"] = "mlp"
            meta["layer_widths"] = ",".join(map(str, self.backbone.spec.layer_widths))
            meta["relu_features"] = str(int(self.backbone.spec.relu_features))
        else:
            s = self.backbone.spec
            meta["backbone"] = "conv"
            meta["in_shape"] = ",".join(map(str, s.in_shape))
            meta["channels"] = ",".join(map(str, s.channels))
            meta["feature_dim"] = str(s.feature_dim)
        if isinstance(self.head, CosineClassifier):
            meta["head"] = "cosine"
            meta["tau"] = repr(self.head.tau)
        else:
            meta["head"] = "linear"
        return meta


def build_classifier(
    backbone_spec: Union[MLPSpec, ConvSpec],
    num_classes: int,
    head: str = "cosine",
    tau: float = DEFAULT_TAU,
    seed: int = 0,
) -> Classifier:
    rng = np.random.default_rng(seed)
    if isinstance(backbone_spec, MLPSpec):
        backbone: Backbone = MLP(backbone_spec, rng)
    else:
        backbone = ConvNet(backbone_spec, rng)
    if head == "cosine":
        h: Head = CosineClassifier(backbone.feature_dim, num_classes, tau, rng)
    elif head == "linear":
        h = LinearClassifier(backbone.feature_dim, num_classes, rng)
    else:
        raise ValueError(f"unknown head {head!r}")
    return Classifier(backbone, h)


# -- checkpoints ---------------------------------------------------------------
#
# Text format, one item per line:
#   surelab-checkpoint 1
#   meta <key> <value>            (architecture description)
#   param <name> <d0,d1,...> <hex float> <hex float> ...
# Values use float.hex so loading reproduces every bit.

_MAGIC = "surelab-checkpoint 1"


def save_checkpoint(model: Classifier, path: Union[str, Path]) -> Path:
    path = Path(path)
    lines = [_MAGIC]
    for k, v in model.describe().items():
        lines.append(f"meta {k} {v}")
    for p in model.parameters():
        shape = ",".join(map(str, p.shape))
        vals = " ".join(float(v).hex() for v in p.data.reshape(-1))
        lines.append(f"param {p.name} {shape} {vals}")
    path.write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(path: Union[str, Path]) -> Classifier:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != _MAGIC:
        raise ValueError(f"{path}: not a surelab checkpoint")
    meta: dict[str, str] = {}
    state: dict[str, np.ndarray] = {}
    for line in text[1:]:
        if not line.strip():
            continue
        kind, rest = line.split(" ", 1)
        if kind == "meta":
            k, v = rest.split(" ", 1)
            meta[k] = v
        elif kind == "param":
            parts = rest.split(" ")
            name, shape_s, vals = parts[0], parts[1], parts[2:]
            shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
            arr = np.array([float.fromhex(v) for v in vals], dtype=np.float64)
            state[name] = arr.reshape(shape)
        else:
            raise ValueError(f"{path}: unknown record {kind!r}")
    k = int(meta["num_classes"])
    if meta["backbone"] == "mlp":
        spec: Union[MLPSpec, ConvSpec] = MLPSpec(
            tuple(int(w) for w in meta["layer_widths"].split(",")),
            relu_features=meta.get("relu_features", "1") == "1",
        )
    else:
        spec = ConvSpec(
            tuple(int(v) for v in meta["in_shape"].split(",")),
            tuple(int(v) for v in meta["channels"].split(",")),
            int(meta["feature_dim"]),
        )
    model = build_classifier(spec, k, meta["head"], float(meta.get("tau", DEFAULT_TAU)))
    model.load_state_dict(state)
    return model


def copy_model(model: Classifier) -> Classifier:
    meta = model.describe()
    clone = build_classifier(
        model.backbone.spec, model.num_classes, meta["head"], float(meta.get("tau", DEFAULT_TAU))
    )
    clone.load_state_dict(model.state_dict())
    return clone


def max_cosine_confidence(tau: float, k: int) -> float:
    """Largest softmax probability reachable with logits confined to [-tau, tau]."""
    return float(np.exp(tau) / (np.exp(tau) + (k - 1) * np.exp(-tau)))
