"""Small differentiable models with hand-written backprop, plus SGD/Adam.

Forecasters are channel independent: every variable's lookback column is
mapped to its horizon column by the same weights (an NLinear-like layout).
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadSpec, NegativeWeight, NonFiniteGradient, ParseError, ShapeMismatch
from .numeric import Rng

KINDS = ("LinearForecaster", "MlpForecaster", "MlpClassifier")


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "LinearForecaster"
    lookback: int = 24
    horizon: int = 1
    n_vars: int = 1
    hidden: int = 16
    classes: int = 2

    def validate(self):
        if self.kind not in KINDS:
            raise BadSpec(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        for name in ("lookback", "horizon", "n_vars", "hidden"):
            if getattr(self, name) < 1:
                raise BadSpec(f"{name} must be >= 1")
        if self.kind == "MlpClassifier" and self.classes < 2:
            raise BadSpec("classifier needs at least 2 classes")

    @property
    def task(self) -> str:
        return "classify" if self.kind == "MlpClassifier" else "forecast"


@dataclass
class Model:
    spec: ModelSpec
    params: dict[str, np.ndarray]

    def copy(self) -> "Model":
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()})

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


def _layer_shapes(spec: ModelSpec):
    L, m, H = spec.lookback, spec.horizon, spec.hidden
    if spec.kind == "LinearForecaster":
        return {"W": (L, m), "b": (m,)}
    if spec.kind == "MlpForecaster":
        return {"W1": (L, H), "b1": (H,), "W2": (H, m), "b2": (m,)}
    return {"W1": (L * spec.n_vars, H), "b1": (H,), "W2": (H, spec.classes), "b2": (spec.classes,)}


def init_model(spec: ModelSpec, rng: Rng) -> Model:
    """Weights ~ N(0, 1/fan_in), biases zero."""
    spec.validate()
    params = {}
    for name, shape in _layer_shapes(spec).items():
        if len(shape) == 2:
            params[name] = rng.normal(shape, 0.0, 1.0 / np.sqrt(shape[0]))
        else:
            params[name] = np.zeros(shape)
    return Model(spec, params)


def _check_inputs(model: Model, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    s = model.spec
    if x.ndim != 3 or x.shape[1:] != (s.lookback, s.n_vars):
        raise ShapeMismatch(f"expected inputs (N, {s.lookback}, {s.n_vars}), got {x.shape}")
    return x


def _forward(model: Model, x):
    """Returns (output, cache) where cache feeds the backward pass."""
    p, kind = model.params, model.spec.kind
    if kind == "MlpClassifier":
        a = x.reshape(len(x), -1)
        h = np.tanh(a @ p["W1"] + p["b1"])
        return h @ p["W2"] + p["b2"], (a, h)
    a = x.transpose(0, 2, 1)  # (N, v, L)
    if kind == "LinearForecaster":
        out = a @ p["W"] + p["b"]
        h = None
    else:
        h = np.tanh(a @ p["W1"] + p["b1"])
        out = h @ p["W2"] + p["b2"]
    return out.transpose(0, 2, 1), (a, h)  # (N, m, v)


def forward(model: Model, x) -> np.ndarray:
    """Forecasters return (N, m, v) predictions, the classifier (N, C) logits."""
    return _forward(model, _check_inputs(model, x))[0]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def per_sample_loss(pred, target, task: str) -> np.ndarray:
    """MSE over (m, v) per sample for forecasting; cross-entropy for classification."""
    pred = np.asarray(pred, dtype=np.float64)
    if task == "forecast":
        target = np.asarray(target, dtype=np.float64)
        if pred.shape != target.shape:
            raise ShapeMismatch(f"predictions {pred.shape} vs targets {target.shape}")
        return ((pred - target) ** 2).reshape(len(pred), -1).mean(axis=1)
    if task == "classify":
        target = np.asarray(target, dtype=np.int64)
        if pred.ndim != 2 or target.shape != (len(pred),):
            raise ShapeMismatch(f"logits {pred.shape} vs labels {target.shape}")
        if target.min(initial=0) < 0 or target.max(initial=0) >= pred.shape[1]:
            raise ShapeMismatch("label outside [0, C)")
        return -log_softmax(pred)[np.arange(len(pred)), target]
    raise BadSpec(f"unknown task {task!r}")


def weighted_loss(model: Model, x, target, weights) -> float:
    losses = per_sample_loss(forward(model, x), target, model.spec.task)
    return float(np.dot(weights, losses))


def backward_weighted(model: Model, x, target, weights) -> dict[str, np.ndarray]:
    """Gradient of ``sum_i weights[i] * loss_i`` with respect to every parameter."""
    x = _check_inputs(model, x)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(x),):
        raise ShapeMismatch(f"need one weight per sample: {w.shape} vs {len(x)} samples")
    if np.any(w < 0):
        raise NegativeWeight("sample weights must be >= 0")
    out, (a, h) = _forward(model, x)
    p, kind = model.params, model.spec.kind

    if kind == "MlpClassifier":
        target = np.asarray(target, dtype=np.int64)
        d_out = softmax(out)
        d_out[np.arange(len(x)), target] -= 1.0
        d_out *= w[:, None]
        gW2 = h.T @ d_out
        gb2 = d_out.sum(axis=0)
        d_pre = (d_out @ p["W2"].T) * (1.0 - h**2)
        return {"W1": a.T @ d_pre, "b1": d_pre.sum(axis=0), "W2": gW2, "b2": gb2}

    target = np.asarray(target, dtype=np.float64)
    if target.shape != out.shape:
        raise ShapeMismatch(f"predictions {out.shape} vs targets {target.shape}")
    scale = 2.0 / (out.shape[1] * out.shape[2])
    d_out = ((out - target) * (w[:, None, None] * scale)).transpose(0, 2, 1)  # (N, v, m)
    if kind == "LinearForecaster":
        return {
            "W": np.einsum("nvl,nvm->lm", a, d_out),
            "b": d_out.sum(axis=(0, 1)),
        }
    gW2 = np.einsum("nvh,nvm->hm", h, d_out)
    gb2 = d_out.sum(axis=(0, 1))
    d_pre = (d_out @ p["W2"].T) * (1.0 - h**2)
    return {
        "W1": np.einsum("nvl,nvh->lh", a, d_pre),
        "b1": d_pre.sum(axis=(0, 1)),
        "W2": gW2,
        "b2": gb2,
    }


@dataclass
class Optimizer:
    kind: str = "adam"  # "sgd" | "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise BadSpec(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise BadSpec("learning rate must be > 0")


def make_optimizer(kind: str = "adam", lr: float = 1e-3) -> Optimizer:
    return Optimizer(kind=kind, lr=lr)


def optimizer_step(model: Model, opt: Optimizer, grads: dict[str, np.ndarray]) -> Model:
    """Apply one update in place and return ``model``."""
    for name, g in grads.items():
        if name not in model.params or g.shape != model.params[name].shape:
            raise ShapeMismatch(f"gradient {name} does not match the model")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"gradient {name} has NaN/Inf")
    opt.step += 1
    if opt.kind == "sgd":
        for name, g in grads.items():
            model.params[name] -= opt.lr * g
        return model
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1**opt.step
    c2 = 1.0 - b2**opt.step
    for name, g in grads.items():
        m = opt.m.get(name)
        if m is None:
            m = opt.m[name] = np.zeros_like(g)
            opt.v[name] = np.zeros_like(g)
        v = opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        model.params[name] -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return model


def save_checkpoint(model: Model, path, step: int = 0) -> None:
    """One JSON header line, then all parameters as little-endian float64."""
    names = list(model.params)
    header = {
        "spec": asdict(model.spec),
        "step": int(step),
        "params": [[n, list(model.params[n].shape)] for n in names],
    }
    blob = b"".join(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes() for n in names)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[Model, int]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        (nbytes,) = struct.unpack("<Q", fh.read(8))
        blob = fh.read(nbytes)
    if len(blob) != nbytes:
        raise ParseError(f"{path}: truncated checkpoint ({len(blob)} of {nbytes} bytes)")
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    params, off = {}, 0
    for name, shape in header["params"]:
        size = int(np.prod(shape)) if shape else 1
        params[name] = flat[off : off + size].reshape(shape).copy()
        off += size
    return Model(ModelSpec(**header["spec"]), params), header["step"]
