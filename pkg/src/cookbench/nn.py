"""Small differentiable classifiers with hand-written backpropagation.

A network is a :class:`ModelSpec` (an ordered tuple of layer descriptors
plus the input shape) and a :class:`ModelParams` holding one dict of
arrays per layer. Every layer implements a forward pass that returns a
cache and a backward pass that consumes it, so the same machinery yields
gradients with respect to parameters (for training) and with respect to
the input pixels (for crafting).

Conv layers accept ``(C, H, W)`` inputs, or ``(H, W)`` when ``in_ch == 1``.
"""

from __future__ import annotations

import hashlib
import io
import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, NumericError, ParameterError, ShapeError
from .tensor import Rng, read_tensor, tensor_to_bytes


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv2d:
    in_ch: int
    out_ch: int
    k: int
    stride: int = 1


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool2d:
    k: int


@dataclass(frozen=True)
class Flatten:
    pass


Layer = Union[Dense, Conv2d, ReLU, MaxPool2d, Flatten]


def _describe(layer: Layer) -> str:
    if isinstance(layer, Dense):
        return f"dense({layer.in_features},{layer.out_features})"
    if isinstance(layer, Conv2d):
        return f"conv2d({layer.in_ch},{layer.out_ch},{layer.k},{layer.stride})"
    if isinstance(layer, MaxPool2d):
        return f"maxpool2d({layer.k})"
    if isinstance(layer, ReLU):
        return "relu"
    return "flatten"


def _out_shape(layer: Layer, shape: tuple[int, ...]) -> tuple[int, ...]:
    if isinstance(layer, Dense):
        if shape != (layer.in_features,):
            raise ShapeError(f"{_describe(layer)} expects ({layer.in_features},), got {shape}")
        return (layer.out_features,)
    if isinstance(layer, Conv2d):
        if len(shape) == 2 and layer.in_ch == 1:
            shape = (1,) + shape
        if len(shape) != 3 or shape[0] != layer.in_ch:
            raise ShapeError(f"{_describe(layer)} cannot take input {shape}")
        h = (shape[1] - layer.k) // layer.stride + 1
        w = (shape[2] - layer.k) // layer.stride + 1
        if h < 1 or w < 1:
            raise ShapeError(f"{_describe(layer)} kernel larger than input {shape}")
        return (layer.out_ch, h, w)
    if isinstance(layer, MaxPool2d):
        if len(shape) not in (2, 3):
            raise ShapeError(f"maxpool2d needs a 2-D or 3-D input, got {shape}")
        h, w = shape[-2] // layer.k, shape[-1] // layer.k
        if h < 1 or w < 1:
            raise ShapeError(f"maxpool2d({layer.k}) window larger than input {shape}")
        return shape[:-2] + (h, w)
    if isinstance(layer, Flatten):
        return (math.prod(shape),)
    return shape


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[Layer, ...]
    num_classes: int
    input_shape: tuple[int, ...]
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if self.num_classes < 1:
            raise ShapeError("num_classes must be positive")
        if not self.layers:
            raise ShapeError("a model needs at least one layer")
        out = self.shapes()[-1]
        if out != (self.num_classes,):
            raise ShapeError(f"network output {out} does not match {self.num_classes} classes")

    def shapes(self) -> list[tuple[int, ...]]:
        """Per-sample activation shapes, input first."""
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(_out_shape(layer, shapes[-1]))
        return shapes

    def describe(self) -> str:
        dims = "x".join(str(d) for d in self.input_shape)
        body = ";".join(_describe(layer) for layer in self.layers)
        return f"in[{dims}];{body};classes[{self.num_classes}]"

    def fingerprint(self) -> int:
        digest = hashlib.blake2b(self.describe().encode(), digest_size=8).digest()
        return int.from_bytes(digest, "little")


def small_cnn(input_shape: Sequence[int], num_classes: int) -> ModelSpec:
    """conv 1->8 k3, relu, pool2, conv 8->16 k3, relu, pool2, flatten, dense."""
    input_shape = tuple(input_shape)
    in_ch = 1 if len(input_shape) == 2 else input_shape[0]
    layers: list[Layer] = [
        Conv2d(in_ch, 8, 3),
        ReLU(),
        MaxPool2d(2),
        Conv2d(8, 16, 3),
        ReLU(),
        MaxPool2d(2),
        Flatten(),
    ]
    shape = input_shape
    for layer in layers:
        shape = _out_shape(layer, shape)
    layers.append(Dense(shape[0], num_classes))
    return ModelSpec(tuple(layers), num_classes, input_shape, name="small_cnn")


def small_mlp(input_shape: Sequence[int], num_classes: int, hidden: int = 64) -> ModelSpec:
    """flatten, dense->hidden, relu, dense->classes. Also serves 3-D volumes."""
    n_in = math.prod(input_shape)
    layers = (Flatten(), Dense(n_in, hidden), ReLU(), Dense(hidden, num_classes))
    return ModelSpec(layers, num_classes, tuple(input_shape), name="small_mlp")


ARCHITECTURES = {"small_cnn": small_cnn, "small_mlp": small_mlp}


def build_spec(name: str, input_shape: Sequence[int], num_classes: int) -> ModelSpec:
    try:
        factory = ARCHITECTURES[name]
    except KeyError:
        raise ParameterError(f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}")
    return factory(input_shape, num_classes)


@dataclass
class ModelParams:
    """Per-layer parameter dicts (``{"W": ..., "b": ...}`` or empty)."""

    tensors: list[dict[str, np.ndarray]]
    init_seed: int = 0

    def copy(self) -> "ModelParams":
        return ModelParams([{k: v.copy() for k, v in d.items()} for d in self.tensors], self.init_seed)

    def flat(self) -> np.ndarray:
        parts = [d[k].ravel() for d in self.tensors for k in sorted(d)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def num_params(self) -> int:
        return sum(v.size for d in self.tensors for v in d.values())


def param_shapes(spec: ModelSpec) -> list[dict[str, tuple[int, ...]]]:
    out = []
    for layer in spec.layers:
        if isinstance(layer, Dense):
            out.append({"W": (layer.out_features, layer.in_features), "b": (layer.out_features,)})
        elif isinstance(layer, Conv2d):
            out.append({"W": (layer.out_ch, layer.in_ch, layer.k, layer.k), "b": (layer.out_ch,)})
        else:
            out.append({})
    return out


def check_params(spec: ModelSpec, params: ModelParams) -> None:
    expected = param_shapes(spec)
    if len(params.tensors) != len(expected):
        raise ShapeError("parameter list does not match layer count")
    for i, (want, got) in enumerate(zip(expected, params.tensors)):
        if set(want) != set(got):
            raise ShapeError(f"layer {i}: parameter names {sorted(got)} != {sorted(want)}")
        for name, shp in want.items():
            if got[name].shape != shp:
                raise ShapeError(f"layer {i} {name}: shape {got[name].shape} != {shp}")


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    rng = Rng(seed)
    tensors = []
    for layer, shapes in zip(spec.layers, param_shapes(spec)):
        if not shapes:
            tensors.append({})
            continue
        if isinstance(layer, Dense):
            fan_in = layer.in_features
        else:
            fan_in = layer.in_ch * layer.k * layer.k
        bound = math.sqrt(6.0 / fan_in)
        w_shape = shapes["W"]
        w = rng.uniform_range(math.prod(w_shape), -bound, bound).reshape(w_shape)
        tensors.append({"W": w, "b": np.zeros(shapes["b"])})
    return ModelParams(tensors, init_seed=int(seed))


# --------------------------------------------------------------------------
# Layer kernels. All operate on a leading batch axis.


def _conv_forward(layer: Conv2d, p: dict, x: np.ndarray):
    squeeze = x.ndim == 3
    if squeeze:
        x = x[:, None]
    k, s = layer.k, layer.stride
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    b, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho, wo, c * k * k)
    w2 = p["W"].reshape(layer.out_ch, -1)
    y = cols @ w2.T + p["b"]
    return y.transpose(0, 3, 1, 2), (x.shape, cols, squeeze)


def _conv_backward(layer: Conv2d, p: dict, cache, dy: np.ndarray, need_dx: bool):
    x_shape, cols, squeeze = cache
    k, s = layer.k, layer.stride
    b, c = x_shape[:2]
    dy_t = dy.transpose(0, 2, 3, 1)  # b, ho, wo, out
    ho, wo = dy_t.shape[1:3]
    dw = np.tensordot(dy_t, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(p["W"].shape)
    db = dy_t.sum(axis=(0, 1, 2))
    dx = None
    if need_dx:
        dcols = (dy_t @ p["W"].reshape(layer.out_ch, -1)).reshape(b, ho, wo, c, k, k)
        dx = np.zeros(x_shape)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if squeeze:
            dx = dx[:, 0]
    return dx, {"W": dw, "b": db}


def _pool_forward(layer: MaxPool2d, x: np.ndarray):
    k = layer.k
    h, w = x.shape[-2] // k, x.shape[-1] // k
    lead = x.shape[:-2]
    crop = x[..., : h * k, : w * k]
    blocks = crop.reshape(lead + (h, k, w, k))
    blocks = np.moveaxis(blocks, -3, -2).reshape(lead + (h, w, k * k))
    idx = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return y, (x.shape, idx)


def _pool_backward(layer: MaxPool2d, cache, dy: np.ndarray):
    x_shape, idx = cache
    k = layer.k
    lead = x_shape[:-2]
    h, w = idx.shape[-2:]
    blocks = np.zeros(lead + (h, w, k * k))
    np.put_along_axis(blocks, idx[..., None], dy[..., None], axis=-1)
    blocks = np.moveaxis(blocks.reshape(lead + (h, w, k, k)), -2, -3).reshape(lead + (h * k, w * k))
    dx = np.zeros(x_shape)
    dx[..., : h * k, : w * k] = blocks
    return dx


def _check_batch(spec: ModelSpec, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[1:] != spec.input_shape or batch.ndim != len(spec.input_shape) + 1:
        raise ShapeError(f"batch shape {batch.shape} != [B] + {list(spec.input_shape)}")
    return batch


def _forward_cached(spec: ModelSpec, params: ModelParams, x: np.ndarray):
    caches = []
    for layer, p in zip(spec.layers, params.tensors):
        if isinstance(layer, Dense):
            caches.append(x)
            x = x @ p["W"].T + p["b"]
        elif isinstance(layer, Conv2d):
            x, c = _conv_forward(layer, p, x)
            caches.append(c)
        elif isinstance(layer, ReLU):
            caches.append(x > 0)
            x = np.maximum(x, 0.0)
        elif isinstance(layer, MaxPool2d):
            x, c = _pool_forward(layer, x)
            caches.append(c)
        else:
            caches.append(x.shape)
            x = x.reshape(x.shape[0], -1)
    return x, caches


def _backward(spec: ModelSpec, params: ModelParams, caches, dlogits: np.ndarray, need_params: bool = True):
    grads: list[dict[str, np.ndarray]] = [{} for _ in spec.layers]
    d = dlogits
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, p, cache = spec.layers[i], params.tensors[i], caches[i]
        need_dx = i > 0 or not need_params
        if isinstance(layer, Dense):
            if need_params:
                grads[i] = {"W": d.T @ cache, "b": d.sum(axis=0)}
            d = d @ p["W"]
        elif isinstance(layer, Conv2d):
            dx, g = _conv_backward(layer, p, cache, d, need_dx)
            if need_params:
                grads[i] = g
            d = dx
        elif isinstance(layer, ReLU):
            d = d * cache
        elif isinstance(layer, MaxPool2d):
            d = _pool_backward(layer, cache, d)
        else:
            d = d.reshape(cache)
    return d, grads


def forward(spec: ModelSpec, params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Logits of shape ``[B, num_classes]`` for a batch ``[B] + input_shape``."""
    logits, _ = _forward_cached(spec, params, _check_batch(spec, batch))
    return logits


# --------------------------------------------------------------------------
# Losses


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class LossForm(str, Enum):
    TARGET_LOGIT = "logit"
    TARGET_LOG_PROB = "logp"
    CROSS_ENTROPY = "ce"


@dataclass(frozen=True)
class LossSpec:
    """Loss to differentiate. Target losses need ``target_class``; CE does not."""

    form: LossForm
    target_class: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "form", LossForm(self.form))
        targeted = self.form is not LossForm.CROSS_ENTROPY
        if targeted and self.target_class is None:
            raise ParameterError(f"{self.form.value} loss needs a target class")
        if not targeted and self.target_class is not None:
            raise ParameterError("cross-entropy takes the label, not a target class")
        if targeted and self.target_class < 0:
            raise ParameterError(f"target class {self.target_class} out of range")


def _batch_loss_grad(logits: np.ndarray, form: LossForm, classes: np.ndarray):
    """Per-row loss values and d(loss_row)/d(logits_row)."""
    n, c = logits.shape
    if np.any(classes < 0) or np.any(classes >= c):
        raise ParameterError(f"class index out of range [0, {c})")
    rows = np.arange(n)
    grad = np.zeros_like(logits)
    if form is LossForm.TARGET_LOGIT:
        values = -logits[rows, classes]
        grad[rows, classes] = -1.0
    else:
        values = -log_softmax(logits)[rows, classes]
        grad = softmax(logits)
        grad[rows, classes] -= 1.0
    return values, grad


def loss_value(logits: np.ndarray, loss: LossSpec, label: int | None = None) -> float:
    """Scalar loss for a single logit vector.

    ``TargetLogit`` gives ``-logit[target]``, ``TargetLogProb`` gives
    ``-log softmax[target]`` and ``CrossEntropy`` gives ``-log softmax[label]``.
    """
    z = np.asarray(logits, dtype=np.float64).reshape(1, -1)
    if loss.form is LossForm.CROSS_ENTROPY:
        if label is None:
            raise ParameterError("cross-entropy needs a label")
        cls = label
    else:
        if label is not None:
            raise ParameterError("target losses take no label")
        cls = loss.target_class
    values, _ = _batch_loss_grad(z, loss.form, np.array([cls]))
    return float(values[0])


def mean_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    values, _ = _batch_loss_grad(logits, LossForm.CROSS_ENTROPY, np.asarray(labels))
    return float(values.mean())


def backward_params(spec: ModelSpec, params: ModelParams, batch: np.ndarray, labels) -> tuple[float, ModelParams]:
    """Mean cross-entropy over the batch and its gradient for every parameter.

    Returns:
        ``(loss, grads)`` where ``grads`` has the layout of ``params``.
    """
    loss, grads, _ = loss_grads_logits(spec, params, batch, labels)
    return loss, grads


def loss_grads_logits(spec: ModelSpec, params: ModelParams, batch: np.ndarray, labels):
    """Like :func:`backward_params` but also hands back the batch logits."""
    batch = _check_batch(spec, batch)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (batch.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} does not match batch of {batch.shape[0]}")
    logits, caches = _forward_cached(spec, params, batch)
    values, dlogits = _batch_loss_grad(logits, LossForm.CROSS_ENTROPY, labels)
    dlogits /= batch.shape[0]
    _, grads = _backward(spec, params, caches, dlogits)
    return float(values.mean()), ModelParams(grads, params.init_seed), logits


def input_gradient_batch(
    spec: ModelSpec,
    params: ModelParams,
    batch: np.ndarray,
    form: LossForm,
    classes: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-sample loss, input gradient and logits for a batch.

    Each row's gradient is that of its own loss, so samples stay
    independent even when processed together.
    """
    batch = _check_batch(spec, batch)
    logits, caches = _forward_cached(spec, params, batch)
    values, dlogits = _batch_loss_grad(logits, LossForm(form), np.asarray(classes, dtype=np.int64))
    dx, _ = _backward(spec, params, caches, dlogits, need_params=False)
    return values, dx, logits


def input_gradient(spec: ModelSpec, params: ModelParams, x: np.ndarray, loss: LossSpec, label: int | None = None) -> np.ndarray:
    """Gradient of :func:`loss_value` with respect to a single input ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != spec.input_shape:
        raise ShapeError(f"input shape {x.shape} != {spec.input_shape}")
    if loss.form is LossForm.CROSS_ENTROPY:
        if label is None:
            raise ParameterError("cross-entropy needs a label")
        cls = label
    else:
        cls = loss.target_class
    _, dx, _ = input_gradient_batch(spec, params, x[None], loss.form, np.array([cls]))
    if not np.all(np.isfinite(dx)):
        raise NumericError("input gradient is not finite")
    return dx[0]


# --------------------------------------------------------------------------
# DCM1 container

MODEL_MAGIC = b"DCM1"
MODEL_VERSION = 1


def params_to_bytes(spec: ModelSpec, params: ModelParams) -> bytes:
    check_params(spec, params)
    out = io.BytesIO()
    out.write(MODEL_MAGIC)
    ordered = [(i, name) for i, d in enumerate(param_shapes(spec)) for name in sorted(d)]
    out.write(struct.pack("<BQQI", MODEL_VERSION, spec.fingerprint(), params.init_seed & 0xFFFFFFFFFFFFFFFF, len(ordered)))
    for i, name in ordered:
        out.write(tensor_to_bytes(params.tensors[i][name]))
    return out.getvalue()


def params_from_bytes(spec: ModelSpec, blob: bytes) -> ModelParams:
    fh = io.BytesIO(blob)
    if fh.read(4) != MODEL_MAGIC:
        raise FormatError("bad model magic")
    head = fh.read(struct.calcsize("<BQQI"))
    if len(head) < struct.calcsize("<BQQI"):
        raise FormatError("truncated model header")
    version, fp, seed, count = struct.unpack("<BQQI", head)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}")
    if fp != spec.fingerprint():
        raise ShapeError(
            f"checkpoint was saved for a different architecture (fingerprint {fp:016x}, expected {spec.fingerprint():016x})"
        )
    shapes = param_shapes(spec)
    ordered = [(i, name) for i, d in enumerate(shapes) for name in sorted(d)]
    if count != len(ordered):
        raise FormatError(f"checkpoint holds {count} tensors, architecture needs {len(ordered)}")
    tensors: list[dict[str, np.ndarray]] = [{} for _ in shapes]
    for i, name in ordered:
        tensors[i][name] = read_tensor(fh)
    if fh.read(1):
        raise FormatError("trailing bytes in checkpoint")
    params = ModelParams(tensors, seed)
    check_params(spec, params)
    return params


def read_checkpoint_fingerprint(blob: bytes) -> int:
    if blob[:4] != MODEL_MAGIC or len(blob) < 4 + struct.calcsize("<BQQI"):
        raise FormatError("not a DCM1 checkpoint")
    return struct.unpack_from("<BQQI", blob, 4)[1]


def save_params(path: str | Path, spec: ModelSpec, params: ModelParams) -> None:
    Path(path).write_bytes(params_to_bytes(spec, params))


def load_params(path: str | Path, spec: ModelSpec) -> ModelParams:
    return params_from_bytes(spec, Path(path).read_bytes())


def params_fingerprint(spec: ModelSpec, params: ModelParams) -> int:
    """Content hash of a checkpoint; identifies the exact surrogate used for crafting."""
    digest = hashlib.blake2b(params_to_bytes(spec, params), digest_size=8).digest()
    return int.from_bytes(digest, "little")
