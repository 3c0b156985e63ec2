"""Compact convolutional architectures with deterministic initialization.

Two families:

* ``MiniConv`` — three conv/relu/maxpool blocks followed by one dense
  layer. Needs spatial dims divisible by 8.
* ``MiniRes`` — a stem conv, two pre-activation residual blocks separated
  by maxpools, then relu, global average pooling and a dense head. The
  residual blocks are ``x + conv(relu(conv(relu(x))))`` so zeroing a
  block's weights and biases makes it the identity map exactly. Needs
  spatial dims divisible by 4.

No normalization layers: inference is a pure function of the parameters,
with no train/eval mode split to complicate attack inner loops.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

MINICONV = "MiniConv"
MINIRES = "MiniRes"
_ARCH_NAMES = (MINICONV, MINIRES)

_CHECKPOINT_MAGIC = b"ADVNCKP1"


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    input_shape: tuple[int, int, int]  # (C, H, W)
    num_classes: int
    width: float = 1.0

    def __post_init__(self):
        if self.name not in _ARCH_NAMES:
            raise ValueError(f"unknown architecture {self.name!r} (expected one of {_ARCH_NAMES})")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.width <= 0:
            raise ValueError("width must be positive")
        c, h, w = self.input_shape
        if c < 1 or h < 1 or w < 1:
            raise ValueError(f"bad input shape {self.input_shape}")
        divisor = 8 if self.name == MINICONV else 4
        if h % divisor or w % divisor:
            raise ValueError(f"{self.name} needs spatial dims divisible by {divisor}, got {self.input_shape}")

    def channels(self, base: int) -> int:
        return max(1, int(round(base * self.width)))

    def to_json(self) -> dict:
        return {"name": self.name, "input_shape": list(self.input_shape),
                "num_classes": self.num_classes, "width": self.width}

    @staticmethod
    def from_json(obj: dict) -> "ArchitectureSpec":
        return ArchitectureSpec(obj["name"], tuple(obj["input_shape"]),
                                obj["num_classes"], obj.get("width", 1.0))


def _param_shapes(spec: ArchitectureSpec) -> list[tuple[str, tuple[int, ...]]]:
    c, h, w = spec.input_shape
    k = spec.num_classes
    if spec.name == MINICONV:
        c1, c2, c3 = spec.channels(8), spec.channels(16), spec.channels(32)
        feat = c3 * (h // 8) * (w // 8)
        return [
            ("conv1.w", (c1, c, 3, 3)), ("conv1.b", (c1,)),
            ("conv2.w", (c2, c1, 3, 3)), ("conv2.b", (c2,)),
            ("conv3.w", (c3, c2, 3, 3)), ("conv3.b", (c3,)),
            ("fc.w", (feat, k)), ("fc.b", (k,)),
        ]
    cs = spec.channels(16)
    shapes: list[tuple[str, tuple[int, ...]]] = [("stem.w", (cs, c, 3, 3)), ("stem.b", (cs,))]
    for blk in (1, 2):
        shapes += [(f"block{blk}.conv1.w", (cs, cs, 3, 3)), (f"block{blk}.conv1.b", (cs,)),
                   (f"block{blk}.conv2.w", (cs, cs, 3, 3)), (f"block{blk}.conv2.b", (cs,))]
    shapes += [("fc.w", (cs, k)), ("fc.b", (k,))]
    return shapes


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if name.endswith(".b"):
        return 0
    if len(shape) == 4:  # conv kernel (F, C, kh, kw)
        return shape[1] * shape[2] * shape[3]
    return shape[0]  # dense (N, M)


@dataclass
class ModelState:
    """Named parameter arrays for one architecture; treat as immutable."""

    spec: ArchitectureSpec
    params: dict[str, np.ndarray]
    seed: int
    metadata: dict = field(default_factory=dict)

    def copy(self) -> "ModelState":
        return ModelState(self.spec, {k: v.copy() for k, v in self.params.items()},
                          self.seed, dict(self.metadata))


def init_model(spec: ArchitectureSpec, seed: int) -> ModelState:
    """Fan-in-scaled uniform weights, zero biases; same (spec, seed) -> same params."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in _param_shapes(spec):
        fan = _fan_in(name, shape)
        if fan == 0:
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            bound = 1.0 / np.sqrt(fan)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return ModelState(spec, params, seed)


def param_tensors(model: ModelState) -> dict[str, Tensor]:
    """Gradient-requiring views over the parameter arrays (for training)."""
    return {name: Tensor(arr, requires_grad=True) for name, arr in model.params.items()}


def _residual_block(h: Tensor, p: dict[str, Tensor], prefix: str) -> Tensor:
    r = T.conv2d(T.relu(h), p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"], padding=1)
    r = T.conv2d(T.relu(r), p[f"{prefix}.conv2.w"], p[f"{prefix}.conv2.b"], padding=1)
    return T.add(h, r)


def logits(model: ModelState, x, params: dict[str, Tensor] | None = None) -> Tensor:
    """Class scores (B, K) for a batch (B, C, H, W).

    ``params`` may supply gradient-requiring tensors (training); otherwise
    the stored arrays are used read-only and only the input can carry
    gradients.
    """
    xt = x if isinstance(x, Tensor) else Tensor(x)
    if xt.data.ndim != 4 or tuple(xt.data.shape[1:]) != tuple(model.spec.input_shape):
        raise T.ShapeError(model.spec.name,
                           f"input {xt.data.shape} vs expected (B, {', '.join(map(str, model.spec.input_shape))})")
    p = params if params is not None else {k: Tensor(v) for k, v in model.params.items()}
    if model.spec.name == MINICONV:
        h = xt
        for i in (1, 2, 3):
            h = T.max_pool2d(T.relu(T.conv2d(h, p[f"conv{i}.w"], p[f"conv{i}.b"], padding=1)), 2)
        return T.dense(T.flatten(h), p["fc.w"], p["fc.b"])
    h = T.conv2d(xt, p["stem.w"], p["stem.b"], padding=1)
    h = T.max_pool2d(h, 2)
    h = _residual_block(h, p, "block1")
    h = T.max_pool2d(h, 2)
    h = _residual_block(h, p, "block2")
    h = T.global_avg_pool(T.relu(h))
    return T.dense(h, p["fc.w"], p["fc.b"])


def predict(model: ModelState, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax class per image, evaluated without the tape; ties break low."""
    out = np.empty(len(images), dtype=np.int64)
    with T.no_grad():
        for start in range(0, len(images), batch_size):
            batch = images[start : start + batch_size]
            out[start : start + len(batch)] = logits(model, batch).data.argmax(axis=1)
    return out


def batched_logits(model: ModelState, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Raw (N, K) logits without the tape."""
    chunks = []
    with T.no_grad():
        for start in range(0, len(images), batch_size):
            chunks.append(logits(model, images[start : start + batch_size]).data)
    return np.concatenate(chunks, axis=0)


def checkpoint_bytes(model: ModelState) -> bytes:
    """Header JSON (spec, seed, metadata, parameter order) + tensor records."""
    header = {
        "spec": model.spec.to_json(),
        "seed": model.seed,
        "metadata": model.metadata,
        "param_order": list(model.params.keys()),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for name in header["param_order"]:
        T.write_tensor(buf, model.params[name])
    return buf.getvalue()


def save_checkpoint(path, model: ModelState) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"not a model checkpoint: bad magic {magic!r}")
        (length,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(length).decode("utf-8"))
        spec = ArchitectureSpec.from_json(header["spec"])
        params = {name: T.read_tensor(fh) for name in header["param_order"]}
    model = ModelState(spec, params, header["seed"], header.get("metadata", {}))
    expected = dict(_param_shapes(spec))
    for name, arr in params.items():
        if tuple(arr.shape) != expected.get(name):
            raise ValueError(f"checkpoint parameter {name} has shape {arr.shape}, expected {expected.get(name)}")
    return model
