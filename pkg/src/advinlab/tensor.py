"""Dense float32 tensors with reverse-mode differentiation.

Small by design: just the primitives needed to train compact conv nets and
to take gradients with respect to input images (conv2d, dense, relu,
max/avg pooling, flatten, elementwise add/mul, sum, softmax cross-entropy).
Every operation records itself on the implicit tape (parent links plus a
backward closure) when gradients are enabled; ``backward()`` replays the
tape in reverse topological order, accumulating additively at fan-outs.

Tensors are immutable through the public API: operations return new
tensors and never write into their inputs, which keeps recorded
activations valid for the backward pass.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager

import numpy as np

TENSOR_MAGIC = b"ADVN"
TENSOR_FORMAT_VERSION = 1


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to a primitive's rule."""

    def __init__(self, primitive: str, detail: str):
        super().__init__(f"{primitive}: {detail}")
        self.primitive = primitive


class NumericError(ArithmeticError):
    """Raised when an operation produces NaN or Inf."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference-only forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_f32(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float32)
    return arr


def _finite(primitive: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{primitive} produced non-finite values")
    return arr


class Tensor:
    """A float32 array plus an optional position on the autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _finite("tensor", _as_f32(data))
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @staticmethod
    def _from_op(primitive: str, data: np.ndarray, parents, backward_fn) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = _finite(primitive, data)
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(np.float32, copy=True)
        else:
            self.grad += g

    def backward(self) -> dict["Tensor", np.ndarray]:
        """Backpropagate from a scalar loss through the recorded tape.

        Returns a map from every gradient-requiring tensor reached by the
        sweep to its gradient array; the same arrays accumulate into
        ``.grad`` (additively across repeated calls).
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if not self._parents:
            raise ValueError("loss is not on the tape (not produced by a recorded operation)")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
        return {t: t.grad for t in topo if t.requires_grad}


# ---------------------------------------------------------------------------
# Primitives. Shape rules are given in each docstring.
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors (residual connections)."""
    if a.data.shape != b.data.shape:
        raise ShapeError("add", f"operand shapes {a.data.shape} vs {b.data.shape}")

    def _bw(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g)

    return Tensor._from_op("add", a.data + b.data, (a, b), _bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError("mul", f"operand shapes {a.data.shape} vs {b.data.shape}")

    def _bw(g):
        if a.requires_grad:
            a._accum(g * b.data)
        if b.requires_grad:
            b._accum(g * a.data)

    return Tensor._from_op("mul", a.data * b.data, (a, b), _bw)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements; output is a scalar (shape ())."""
    shape = x.data.shape

    def _bw(g):
        if x.requires_grad:
            x._accum(np.broadcast_to(g, shape))

    return Tensor._from_op("sum", np.asarray(x.data.sum(), dtype=np.float32), (x,), _bw)


def relu(x: Tensor) -> Tensor:
    """max(0, x), elementwise; shape preserved."""
    mask = x.data > 0

    def _bw(g):
        if x.requires_grad:
            x._accum(g * mask)

    return Tensor._from_op("relu", np.maximum(x.data, 0.0), (x,), _bw)


def flatten(x: Tensor) -> Tensor:
    """(B, ...) -> (B, prod(...)) row-major."""
    if x.data.ndim < 2:
        raise ShapeError("flatten", f"needs a batch dimension, got shape {x.data.shape}")
    b = x.data.shape[0]
    shape = x.data.shape

    def _bw(g):
        if x.requires_grad:
            x._accum(g.reshape(shape))

    return Tensor._from_op("flatten", x.data.reshape(b, -1), (x,), _bw)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: (B, N) @ (N, M) + (M,) -> (B, M)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError("dense", f"input {x.data.shape} vs weight {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ShapeError("dense", f"bias {b.data.shape} vs weight {w.data.shape}")

    def _bw(g):
        if x.requires_grad:
            x._accum(g @ w.data.T)
        if w.requires_grad:
            w._accum(x.data.T @ g)
        if b.requires_grad:
            b._accum(g.sum(axis=0))

    return Tensor._from_op("dense", x.data @ w.data + b.data, (x, w, b), _bw)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation.

    (B, C, H, W) with kernels (F, C, kh, kw) -> (B, F, OH, OW) where
    OH = (H + 2*padding - kh) // stride + 1 and likewise OW. Implemented
    as im2col plus one batched matmul per call.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d", f"input {x.data.shape} vs kernel {w.data.shape}")
    B, C, H, W = x.data.shape
    F, Cw, kh, kw = w.data.shape
    if Cw != C:
        raise ShapeError("conv2d", f"input channels {x.data.shape} vs kernel channels {w.data.shape}")
    if b.data.shape != (F,):
        raise ShapeError("conv2d", f"bias {b.data.shape} vs kernel {w.data.shape}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise ShapeError("conv2d", f"kernel {w.data.shape} larger than padded input {x.data.shape}")
    OH = (Hp - kh) // stride + 1
    OW = (Wp - kw) // stride + 1

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = np.empty((B, C, kh, kw, OH, OW), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * OH : stride, j : j + stride * OW : stride]
    cols2 = cols.reshape(B, C * kh * kw, OH * OW)
    w2 = w.data.reshape(F, -1)
    out = (w2 @ cols2).reshape(B, F, OH, OW) + b.data.reshape(1, F, 1, 1)

    def _bw(g):
        g2 = g.reshape(B, F, OH * OW)
        if w.requires_grad:
            w._accum(np.einsum("bfp,bkp->fk", g2, cols2, optimize=True).reshape(w.data.shape))
        if b.requires_grad:
            b._accum(g2.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(B, C, kh, kw, OH, OW)
            dxp = np.zeros((B, C, Hp, Wp), dtype=np.float32)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * OH : stride, j : j + stride * OW : stride] += dcols[:, :, i, j]
            if padding:
                dxp = dxp[:, :, padding : padding + H, padding : padding + W]
            x._accum(dxp)

    return Tensor._from_op("conv2d", out, (x, w, b), _bw)


def _pool_view(data: np.ndarray, size: int, primitive: str):
    B, C, H, W = data.shape
    if H % size or W % size:
        raise ShapeError(primitive, f"window {size} does not divide input {data.shape}")
    OH, OW = H // size, W // size
    v = data.reshape(B, C, OH, size, OW, size).transpose(0, 1, 2, 4, 3, 5)
    return v.reshape(B, C, OH, OW, size * size), (B, C, OH, OW, size)


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling: (B, C, H, W) -> (B, C, H/size, W/size).

    The window size must divide both spatial dims. Ties within a window
    route the gradient to the first (row-major) maximum only.
    """
    v, (B, C, OH, OW, size) = _pool_view(x.data, size, "max_pool2d")
    idx = v.argmax(axis=-1)
    out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]

    def _bw(g):
        if x.requires_grad:
            dv = np.zeros((B, C, OH, OW, size * size), dtype=np.float32)
            np.put_along_axis(dv, idx[..., None], g[..., None], axis=-1)
            dx = dv.reshape(B, C, OH, OW, size, size).transpose(0, 1, 2, 4, 3, 5)
            x._accum(dx.reshape(B, C, OH * size, OW * size))

    return Tensor._from_op("max_pool2d", np.ascontiguousarray(out), (x,), _bw)


def avg_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping mean pooling: (B, C, H, W) -> (B, C, H/size, W/size)."""
    v, (B, C, OH, OW, size) = _pool_view(x.data, size, "avg_pool2d")
    out = v.mean(axis=-1)
    inv = np.float32(1.0 / (size * size))

    def _bw(g):
        if x.requires_grad:
            dv = np.repeat((g * inv)[..., None], size * size, axis=-1)
            dx = dv.reshape(B, C, OH, OW, size, size).transpose(0, 1, 2, 4, 3, 5)
            x._accum(dx.reshape(B, C, OH * size, OW * size))

    return Tensor._from_op("avg_pool2d", np.ascontiguousarray(out), (x,), _bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over both spatial dims: (B, C, H, W) -> (B, C)."""
    if x.data.ndim != 4:
        raise ShapeError("global_avg_pool", f"expected (B,C,H,W), got {x.data.shape}")
    B, C, H, W = x.data.shape
    inv = np.float32(1.0 / (H * W))

    def _bw(g):
        if x.requires_grad:
            x._accum(np.broadcast_to((g * inv)[:, :, None, None], (B, C, H, W)))

    return Tensor._from_op("global_avg_pool", x.data.mean(axis=(2, 3)), (x,), _bw)


def _log_softmax(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    return z - np.log(s), e / s


def per_example_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Softmax cross-entropy per row of (B, K) logits against integer labels."""
    logp, _ = _log_softmax(np.asarray(logits, dtype=np.float32))
    return -logp[np.arange(len(labels)), labels]


def cross_entropy(logits: Tensor, labels: np.ndarray, reduction: str = "mean") -> Tensor:
    """Softmax cross-entropy with integer labels, reduced to a scalar.

    logits (B, K), labels (B,) with values in [0, K). The gradient is the
    classic softmax(logits) - onehot(labels), scaled by 1/B for
    ``reduction="mean"``.
    """
    if logits.data.ndim != 2:
        raise ShapeError("cross_entropy", f"expected (B,K) logits, got {logits.data.shape}")
    labels = np.asarray(labels)
    B, K = logits.data.shape
    if labels.shape != (B,):
        raise ShapeError("cross_entropy", f"logits {logits.data.shape} vs labels {labels.shape}")
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"labels out of range [0, {K})")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")

    logp, softmax = _log_softmax(logits.data)
    rows = np.arange(B)
    ce = -logp[rows, labels]
    loss = ce.mean() if reduction == "mean" else ce.sum()

    def _bw(g):
        if logits.requires_grad:
            d = softmax.copy()
            d[rows, labels] -= 1.0
            scale = g / B if reduction == "mean" else g
            logits._accum(d * np.float32(scale))

    return Tensor._from_op("cross_entropy", np.asarray(loss, dtype=np.float32), (logits,), _bw)


# ---------------------------------------------------------------------------
# Serialization: magic "ADVN", u8 version, u8 rank, u32-LE dims, f32-LE data.
# ---------------------------------------------------------------------------


def write_tensor(fh, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<BB", TENSOR_FORMAT_VERSION, arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(arr.tobytes(order="C"))


def read_tensor(fh) -> np.ndarray:
    magic = fh.read(4)
    if magic != TENSOR_MAGIC:
        raise ValueError(f"bad tensor record magic {magic!r}")
    version, rank = struct.unpack("<BB", fh.read(2))
    if version != TENSOR_FORMAT_VERSION:
        raise ValueError(f"unsupported tensor record version {version}")
    shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise ValueError("truncated tensor record")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def tensor_bytes(array: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    write_tensor(buf, array)
    return buf.getvalue()
