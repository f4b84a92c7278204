"""Model definitions: layer specs, parameter initialization, forward pass,
shape tracing, and binary checkpoints.

A model is a flat tuple of layer descriptions (ModelSpec) plus a ParameterSet
holding the tensors and batch-norm running statistics. Keeping the two apart
means shape tracing needs no allocation and the smoothness regularizer can
run the same spec with detached parameters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import ops
from .rng import Rng
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class Conv:
    in_channels: int
    out_channels: int


@dataclass(frozen=True)
class BatchNorm:
    channels: int


@dataclass(frozen=True)
class LeakyRelu:
    slope: float = 0.1


@dataclass(frozen=True)
class MaxPool:
    pass


@dataclass(frozen=True)
class GlobalAvgPool:
    pass


@dataclass(frozen=True)
class Linear:
    in_features: int
    out_features: int


Layer = Conv | BatchNorm | LeakyRelu | MaxPool | GlobalAvgPool | Linear


@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: tuple[Layer, ...]


def build_cnn(input_channels: int = 1, num_classes: int = 2, size: str = "large") -> ModelSpec:
    """Nine-stage conv net: five conv/bn/lrelu blocks with two 2x2 poolings
    in between, then global average pooling and a linear head. `size` picks
    the channel widths; "small" halves every width of "large"."""
    if size == "large":
        widths = (128, 128, 256, 256, 128)
    elif size == "small":
        widths = (64, 64, 128, 128, 64)
    else:
        raise ValueError(f"cnn size must be 'large' or 'small', got {size!r}")
    c1, c2, c3, c4, c5 = widths
    layers = (
        Conv(input_channels, c1), BatchNorm(c1), LeakyRelu(),
        Conv(c1, c2), BatchNorm(c2), LeakyRelu(),
        MaxPool(),
        Conv(c2, c3), BatchNorm(c3), LeakyRelu(),
        Conv(c3, c4), BatchNorm(c4), LeakyRelu(),
        MaxPool(),
        Conv(c4, c5), BatchNorm(c5), LeakyRelu(),
        GlobalAvgPool(),
        Linear(c5, num_classes),
    )
    return ModelSpec(f"cnn_{size}", layers)


def build_mlp(in_features: int = 2, hidden: int = 100, num_classes: int = 2) -> ModelSpec:
    """Two hidden layers of `hidden` units with leaky ReLU, linear output.
    10,602 parameters at the defaults."""
    layers = (
        Linear(in_features, hidden), LeakyRelu(),
        Linear(hidden, hidden), LeakyRelu(),
        Linear(hidden, num_classes),
    )
    return ModelSpec("mlp", layers)


class ParameterSet:
    """Named parameter tensors plus batch-norm states for one ModelSpec.

    `params` preserves layer order, which fixes the optimizer update order
    and the checkpoint record order.
    """

    def __init__(self, params: dict[str, Tensor], bn_states: dict[str, ops.BatchNormState]):
        self.params = params
        self.bn_states = bn_states

    def num_params(self) -> int:
        return sum(t.size for t in self.params.values())

    def detached(self) -> "ParameterSet":
        """Same values (shared arrays) and shared batch-norm states, but no
        tensor takes part in gradient graphs. Forwarding through the result
        produces no parameter gradients."""
        return ParameterSet({k: t.detach() for k, t in self.params.items()}, self.bn_states)

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copy of every stored value: parameters first, then each bn state's
        running_mean / running_var / updates."""
        snap = {k: t.data.copy() for k, t in self.params.items()}
        for key, st in self.bn_states.items():
            snap[f"{key}.running_mean"] = st.running_mean.copy()
            snap[f"{key}.running_var"] = st.running_var.copy()
            snap[f"{key}.updates"] = np.float64(st.updates)
        return snap

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        """Write a snapshot (or loaded checkpoint) back into this set."""
        expected = set(self.snapshot())
        got = set(snap)
        if got != expected:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ValueError(f"checkpoint keys do not match model: missing {missing}, extra {extra}")
        for name, t in self.params.items():
            arr = np.asarray(snap[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"checkpoint tensor {name} has shape {arr.shape}, model wants {t.shape}")
            t.data = arr.copy()
            t.grad = None
        for key, st in self.bn_states.items():
            st.running_mean = np.asarray(snap[f"{key}.running_mean"], dtype=np.float64).copy()
            st.running_var = np.asarray(snap[f"{key}.running_var"], dtype=np.float64).copy()
            st.updates = int(round(float(np.asarray(snap[f"{key}.updates"]))))


def init_params(spec: ModelSpec, rng: Rng) -> ParameterSet:
    """He-normal weights (std sqrt(2/fan_in)), zero biases, unit bn scales.

    Weight draws happen in layer order, so a given rng state fixes the model
    bit for bit.
    """
    params: dict[str, Tensor] = {}
    bn_states: dict[str, ops.BatchNormState] = {}
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            fan_in = layer.in_channels * 9
            w = rng.normal((layer.out_channels, layer.in_channels, 3, 3)) * np.sqrt(2.0 / fan_in)
            params[f"conv{i}.weight"] = Tensor(w, requires_grad=True)
            params[f"conv{i}.bias"] = Tensor(np.zeros(layer.out_channels), requires_grad=True)
        elif isinstance(layer, BatchNorm):
            params[f"bn{i}.gamma"] = Tensor(np.ones(layer.channels), requires_grad=True)
            params[f"bn{i}.beta"] = Tensor(np.zeros(layer.channels), requires_grad=True)
            bn_states[f"bn{i}"] = ops.BatchNormState(layer.channels)
        elif isinstance(layer, Linear):
            w = rng.normal((layer.out_features, layer.in_features)) * np.sqrt(2.0 / layer.in_features)
            params[f"fc{i}.weight"] = Tensor(w, requires_grad=True)
            params[f"fc{i}.bias"] = Tensor(np.zeros(layer.out_features), requires_grad=True)
    return ParameterSet(params, bn_states)


def forward(
    spec: ModelSpec,
    pset: ParameterSet,
    x: Tensor,
    mode: str = "train",
    update_running_stats: bool = False,
) -> Tensor:
    """Run the spec over x and return logits of shape (B, num_classes)."""
    h = x
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            h = ops.conv2d(h, pset.params[f"conv{i}.weight"], pset.params[f"conv{i}.bias"])
        elif isinstance(layer, BatchNorm):
            h = ops.batch_norm(h, pset.params[f"bn{i}.gamma"], pset.params[f"bn{i}.beta"],
                               mode, pset.bn_states[f"bn{i}"],
                               update_running_stats=update_running_stats)
        elif isinstance(layer, LeakyRelu):
            h = ops.leaky_relu(h, layer.slope)
        elif isinstance(layer, MaxPool):
            h = ops.max_pool2(h)
        elif isinstance(layer, GlobalAvgPool):
            h = ops.global_avg_pool(h)
        else:
            if h.ndim == 4:
                h = ops.flatten_pooled(h)
            h = ops.affine(h, pset.params[f"fc{i}.weight"], pset.params[f"fc{i}.bias"])
    return h


def shape_trace(spec: ModelSpec, input_shape: tuple[int, ...]) -> list[tuple[str, tuple[int, ...]]]:
    """Per-layer (description, output shape) without touching any data."""
    shape = tuple(input_shape)
    trace: list[tuple[str, tuple[int, ...]]] = []
    for layer in spec.layers:
        if isinstance(layer, Conv):
            if len(shape) != 4 or shape[1] != layer.in_channels:
                raise ShapeError(f"conv expects (B, {layer.in_channels}, H, W), got {shape}")
            shape = (shape[0], layer.out_channels, shape[2], shape[3])
            desc = f"conv3x3 {layer.in_channels}->{layer.out_channels}"
        elif isinstance(layer, BatchNorm):
            desc = f"batchnorm {layer.channels}"
        elif isinstance(layer, LeakyRelu):
            desc = f"leaky_relu {layer.slope}"
        elif isinstance(layer, MaxPool):
            if len(shape) != 4 or shape[2] % 2 or shape[3] % 2:
                raise ShapeError(f"maxpool needs even spatial dims, got {shape}")
            shape = (shape[0], shape[1], shape[2] // 2, shape[3] // 2)
            desc = "maxpool 2x2"
        elif isinstance(layer, GlobalAvgPool):
            shape = (shape[0], shape[1], 1, 1)
            desc = "global_avg_pool"
        else:
            if len(shape) == 4:
                if shape[2:] != (1, 1):
                    raise ShapeError(f"linear after conv stack expects (B, C, 1, 1), got {shape}")
                shape = shape[:2]
            if shape[1] != layer.in_features:
                raise ShapeError(f"linear expects {layer.in_features} features, got {shape}")
            shape = (shape[0], layer.out_features)
            desc = f"linear {layer.in_features}->{layer.out_features}"
        trace.append((desc, shape))
    return trace


CHECKPOINT_MAGIC = b"VATM"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, pset: ParameterSet) -> None:
    """Magic, version, then length-prefixed named float64 tensor records."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, arr in pset.snapshot().items():
            a = np.asarray(arr, dtype=np.float64)
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", a.ndim))
            for d in a.shape:
                f.write(struct.pack("<I", d))
            f.write(a.astype("<f8").tobytes(order="C"))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read records until end of file; names and shapes come from the file."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic: {magic!r}")
        vbytes = f.read(4)
        if len(vbytes) < 4:
            raise ValueError("truncated checkpoint: missing version")
        version = struct.unpack("<I", vbytes)[0]
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        records: dict[str, np.ndarray] = {}
        while True:
            head = f.read(4)
            if head == b"":
                return records
            if len(head) < 4:
                raise ValueError("truncated checkpoint record")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(f, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank)) if rank else ()
            count = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(_read_exact(f, 8 * count), dtype="<f8")
            if name in records:
                raise ValueError(f"duplicate checkpoint tensor {name}")
            records[name] = data.reshape(dims).astype(np.float64)


def _read_exact(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) < n:
        raise ValueError("truncated checkpoint record")
    return b
