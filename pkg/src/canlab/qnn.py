"""Quantised 5-layer MLP: integer inference, post-training symmetric
quantisation, a reference float trainer, and the model file format.

Integer semantics are fixed so results are bit-identical everywhere:
features enter layer 1 as raw bytes, each layer computes
``z = W_q @ a + b`` in wide integers, ReLU stays in integers, and the four
final-layer outputs are the logits.  Scaling the logits by the cumulative
per-layer scale product reproduces the dequantised float pipeline exactly,
which is what the tests' rational-arithmetic oracle checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import labels
from .errors import DimensionMismatch, InsufficientData, ValidationError

FORMAT_VERSION = 1
MODEL_KIND = "quant-mlp-int4"
N_LAYERS = 5
INT4_MIN, INT4_MAX = -8, 7
DEFAULT_HIDDEN = (64, 64, 64, 64)


@dataclass
class QuantLayer:
    weights: np.ndarray     # int8, shape (out, in), values in [-8, 7]
    bias: np.ndarray        # int64, shape (out,)
    scale: float            # per-layer symmetric weight scale

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class QuantMlpModel:
    layers: list[QuantLayer]
    classes: tuple[str, ...] = labels.CLASSES
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def validate(self) -> "QuantMlpModel":
        if len(self.layers) != N_LAYERS:
            raise ValidationError(
                f"model must have {N_LAYERS} layers, got {len(self.layers)}")
        for i, layer in enumerate(self.layers):
            w = layer.weights
            if w.ndim != 2:
                raise ValidationError(f"layer {i} weights must be 2-D")
            if w.min() < INT4_MIN or w.max() > INT4_MAX:
                raise ValidationError(
                    f"layer {i} weights outside int4 range "
                    f"[{INT4_MIN}, {INT4_MAX}]")
            if layer.bias.shape != (w.shape[0],):
                raise DimensionMismatch(
                    f"layer {i} bias shape {layer.bias.shape} "
                    f"!= ({w.shape[0]},)")
            if layer.scale <= 0:
                raise ValidationError(f"layer {i} scale must be positive")
            if i > 0 and w.shape[1] != self.layers[i - 1].out_dim:
                raise DimensionMismatch(
                    f"layer {i} expects {w.shape[1]} inputs but layer "
                    f"{i - 1} yields {self.layers[i - 1].out_dim}")
        if self.output_dim != len(self.classes):
            raise DimensionMismatch(
                f"output dim {self.output_dim} != {len(self.classes)} classes")
        return self

    def cumulative_scale(self) -> float:
        out = 1.0
        for layer in self.layers:
            out *= layer.scale
        return out


# ----------------------------------------------------------------- inference

def _accumulator_bound(model: QuantMlpModel) -> int:
    """Worst-case |accumulator| for raw-byte inputs, in exact integers."""
    bound = 255
    worst = 0
    for layer in model.layers:
        w_abs = int(np.abs(layer.weights.astype(np.int64)).max(initial=0))
        b_abs = int(np.abs(layer.bias).max(initial=0))
        bound = layer.in_dim * w_abs * bound + b_abs
        worst = max(worst, bound)
    return worst


def mlp_infer(model: QuantMlpModel, features) -> np.ndarray:
    """Pure-integer forward pass; returns the 4 logits.

    Uses int64 when the worst-case accumulator provably fits, otherwise
    falls back to exact arbitrary-precision integers.
    """
    x = np.asarray(features)
    if x.shape != (model.input_dim,):
        raise DimensionMismatch(
            f"feature shape {x.shape} != ({model.input_dim},)")
    exact = _accumulator_bound(model) >= 2 ** 62
    dtype = object if exact else np.int64
    acts = x.astype(np.int64).astype(dtype)
    for i, layer in enumerate(model.layers):
        z = layer.weights.astype(dtype) @ acts + layer.bias.astype(dtype)
        acts = np.maximum(z, 0) if i < len(model.layers) - 1 else z
    return acts


def softmax(logits) -> np.ndarray:
    """Stable softmax: shift by the max before exponentiation."""
    x = np.asarray(logits, dtype=object)
    m = max(x)
    # after the shift every value is <= 0; clamp the far tail so huge
    # integer logits cannot overflow float conversion
    shifted = np.array([float(max(v - m, -1000)) for v in x])
    e = np.exp(shifted)
    return e / e.sum()


# -------------------------------------------------------------- quantisation

def quantise_layer(weights, scale: float | None = None):
    """Symmetric int4 quantisation of one weight matrix."""
    w = np.asarray(weights, dtype=np.float64)
    if scale is None:
        peak = float(np.abs(w).max(initial=0.0))
        scale = peak / INT4_MAX if peak > 0 else 1.0
    q = np.clip(np.round(w / scale), INT4_MIN, INT4_MAX).astype(np.int8)
    err = float(np.abs(w - scale * q.astype(np.float64)).max(initial=0.0))
    return q, scale, err


def quantise_model(float_layers, classes=labels.CLASSES):
    """Post-training symmetric quantisation of a 5-layer float MLP.

    Real-valued biases are folded into integers against the cumulative
    scale product so the integer pipeline tracks the float one exactly.
    Returns (model, report) where the report lists per-layer scale and
    max elementwise quantisation error.
    """
    if len(float_layers) != N_LAYERS:
        raise DimensionMismatch(
            f"expected {N_LAYERS} layers, got {len(float_layers)}")
    layers = []
    report = []
    cumulative = 1.0
    for w, b in float_layers:
        q, scale, err = quantise_layer(w)
        cumulative *= scale
        b_int = np.round(np.asarray(b, dtype=np.float64) / cumulative)
        layers.append(QuantLayer(weights=q,
                                 bias=b_int.astype(np.int64),
                                 scale=scale))
        report.append({"scale": scale, "max_weight_error": err})
    model = QuantMlpModel(layers=layers, classes=tuple(classes)).validate()
    return model, report


# ------------------------------------------------------------------ training

def train_reference(features, targets, epochs: int = 30, seed: int = 0,
                    hidden=DEFAULT_HIDDEN, lr: float = 0.05,
                    batch: int = 64):
    """Plain SGD cross-entropy trainer for the 5-layer float MLP.

    Features are byte vectors; training runs on x/255 for conditioning and
    the 1/255 factor is folded into the first layer afterwards, so the
    returned model consumes raw bytes like the integer pipeline.
    Deterministic for a given seed.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise DimensionMismatch(
            f"features {x.shape} do not match {len(y)} targets")
    n_classes = len(labels.CLASSES)
    present = np.unique(y)
    if len(present) < 2:
        raise InsufficientData(
            f"need at least 2 classes, got {len(present)}")
    if len(hidden) != N_LAYERS - 1:
        raise DimensionMismatch(
            f"hidden widths must have {N_LAYERS - 1} entries")

    rng = np.random.default_rng(seed)
    dims = [x.shape[1], *hidden, n_classes]
    weights = [rng.standard_normal((dims[i + 1], dims[i]))
               * np.sqrt(2.0 / dims[i]) for i in range(N_LAYERS)]
    biases = [np.zeros(dims[i + 1]) for i in range(N_LAYERS)]

    xn = x / 255.0
    onehot = np.eye(n_classes)[y]
    for _epoch in range(epochs):
        order = rng.permutation(len(xn))
        for lo in range(0, len(xn), batch):
            idx = order[lo:lo + batch]
            xb, yb = xn[idx], onehot[idx]
            # forward
            acts = [xb]
            for i in range(N_LAYERS):
                z = acts[-1] @ weights[i].T + biases[i]
                acts.append(np.maximum(z, 0) if i < N_LAYERS - 1 else z)
            zmax = acts[-1].max(axis=1, keepdims=True)
            e = np.exp(acts[-1] - zmax)
            probs = e / e.sum(axis=1, keepdims=True)
            # backward
            grad = (probs - yb) / len(idx)
            for i in reversed(range(N_LAYERS)):
                gw = grad.T @ acts[i]
                gb = grad.sum(axis=0)
                if i > 0:
                    grad = (grad @ weights[i]) * (acts[i] > 0)
                weights[i] -= lr * gw
                biases[i] -= lr * gb

    weights[0] = weights[0] / 255.0   # fold normalization into layer 1
    return [(weights[i], biases[i]) for i in range(N_LAYERS)]


def float_infer(float_layers, features) -> np.ndarray:
    """Forward pass of a raw-byte float model (the trainer's output)."""
    acts = np.asarray(features, dtype=np.float64)
    for i, (w, b) in enumerate(float_layers):
        z = w @ acts + b
        acts = np.maximum(z, 0) if i < len(float_layers) - 1 else z
    return acts


# ----------------------------------------------------------------- model IO

def save_model(model: QuantMlpModel, path=None) -> str:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": MODEL_KIND,
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "classes": list(model.classes),
        "layers": [
            {
                "scale": layer.scale,
                "bias": layer.bias.tolist(),
                "weights": layer.weights.tolist(),
            }
            for layer in model.layers
        ],
        "meta": model.meta,
    }
    text = json.dumps(doc, indent=1)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _load_doc(source) -> dict:
    if hasattr(source, "read"):
        return json.load(source)
    if hasattr(source, "__fspath__"):
        with open(source) as fh:
            return json.load(fh)
    if isinstance(source, (str, bytes)):
        text = source.decode() if isinstance(source, bytes) else source
        if text.lstrip().startswith("{"):
            return json.loads(text)
        with open(text) as fh:
            return json.load(fh)
    return json.loads(source)


def load_model(source) -> QuantMlpModel:
    doc = _load_doc(source)
    if doc.get("kind") != MODEL_KIND:
        raise ValidationError(f"not a {MODEL_KIND} document")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValidationError(
            f"unsupported format_version {doc.get('format_version')}")
    layers = [
        QuantLayer(
            weights=np.asarray(entry["weights"], dtype=np.int8),
            bias=np.asarray(entry["bias"], dtype=np.int64),
            scale=float(entry["scale"]),
        )
        for entry in doc["layers"]
    ]
    model = QuantMlpModel(layers=layers,
                          classes=tuple(doc.get("classes", labels.CLASSES)),
                          meta=doc.get("meta", {}))
    model.validate()
    if model.input_dim != doc["input_dim"] or model.output_dim != doc["output_dim"]:
        raise DimensionMismatch("declared dims do not match layer shapes")
    return model


FLOAT_MODEL_KIND = "float-mlp"


def save_float_model(float_layers, path=None, meta: dict | None = None) -> str:
    """Persist a trainer output so quantisation can run as a separate step."""
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": FLOAT_MODEL_KIND,
        "layers": [{"weights": np.asarray(w).tolist(),
                    "bias": np.asarray(b).tolist()}
                   for w, b in float_layers],
        "meta": meta or {},
    }
    text = json.dumps(doc, indent=1)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def load_float_model(source):
    """Returns (float_layers, meta) as saved by save_float_model."""
    doc = _load_doc(source)
    if doc.get("kind") != FLOAT_MODEL_KIND:
        raise ValidationError(f"not a {FLOAT_MODEL_KIND} document")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValidationError(
            f"unsupported format_version {doc.get('format_version')}")
    layers = [(np.asarray(entry["weights"], dtype=np.float64),
               np.asarray(entry["bias"], dtype=np.float64))
              for entry in doc["layers"]]
    return layers, doc.get("meta", {})
