"""L-infinity projected gradient descent over pixel boxes.

One routine serves three jobs depending on the objective mode: the
error-maximizing inner loop of adversarial training and evaluation
(``MAXIMIZE_TRUE``), error-minimizing noise crafting (``MINIMIZE_TRUE``),
and targeted inducing-noise crafting (``MINIMIZE_TARGET``, where the label
argument is the inducing class).

Steps follow the sign of the input gradient; the returned perturbation is
the best iterate seen under the objective (the initial point included), so
the objective never regresses versus the start even with coarse steps.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .models import ModelState, logits


class AttackMode(enum.Enum):
    MAXIMIZE_TRUE = "maximize-true"
    MINIMIZE_TRUE = "minimize-true"
    MINIMIZE_TARGET = "minimize-target"


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    step_size: float
    steps: int
    mode: AttackMode = AttackMode.MAXIMIZE_TRUE
    random_init: bool = False
    mask: np.ndarray | None = None  # binary (C, H, W), broadcast over the batch

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.steps < 0:
            raise ValueError(f"steps must be non-negative, got {self.steps}")
        if self.mask is not None and not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("mask must be {0,1}-valued")

    def replace(self, **kw) -> "AttackConfig":
        from dataclasses import replace as _replace

        return _replace(self, **kw)


def project(delta: np.ndarray, x: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Clamp onto the eps-ball, the valid pixel box, and the mask support.

    Exact and idempotent in float32: the box is enforced by clamping delta
    into [-x, 1-x] elementwise, never by re-deriving delta from x + delta.
    """
    if delta.shape != x.shape:
        raise T.ShapeError("project", f"delta {delta.shape} vs image {x.shape}")
    eps = np.float32(cfg.epsilon)
    d = np.clip(delta, -eps, eps)
    d = np.clip(d, -x, np.float32(1.0) - x)
    if cfg.mask is not None:
        d = d * cfg.mask.astype(np.float32)
    return d.astype(np.float32)


def make_patch_mask(image_shape: tuple[int, int, int], patch_size: int) -> np.ndarray:
    """Centered patch_size x patch_size block of ones across all channels."""
    c, h, w = image_shape
    if patch_size < 1 or patch_size > min(h, w):
        raise ValueError(f"patch size {patch_size} does not fit image {image_shape}")
    mask = np.zeros(image_shape, dtype=np.float32)
    top = (h - patch_size) // 2
    left = (w - patch_size) // 2
    mask[:, top : top + patch_size, left : left + patch_size] = 1.0
    return mask


def _resolve_forward(model):
    """A ModelState or any callable Tensor -> logits Tensor works as a victim."""
    if isinstance(model, ModelState):
        return lambda xt: logits(model, xt)
    if callable(model):
        return model
    raise TypeError(f"expected a ModelState or a forward callable, got {type(model)!r}")


def pgd(model: ModelState, x: np.ndarray, labels: np.ndarray, cfg: AttackConfig,
        init: np.ndarray | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Batched sign-gradient PGD; returns the per-example best perturbation.

    ``labels`` holds true labels for MAXIMIZE_TRUE / MINIMIZE_TRUE and the
    inducing targets for MINIMIZE_TARGET. ``init`` warm-starts the search;
    ``random_init`` instead draws delta uniformly inside the masked
    eps-ball (``rng`` required). With ``steps == 0`` and no random init the
    (projected) init comes back unchanged.

    Coordinates whose gradient is exactly zero (dead-relu plateaus, where
    the sign rule gives no direction) take a random sign step instead; the
    best-iterate bookkeeping means exploration can only improve the result.
    The default rng is fixed, so the function stays deterministic in its
    arguments either way.
    """
    x = np.asarray(x, dtype=np.float32)
    labels = np.asarray(labels)
    forward = _resolve_forward(model)
    if x.ndim != 4:
        raise T.ShapeError("pgd", f"expected a (B, C, H, W) batch, got {x.shape}")
    if cfg.random_init:
        if rng is None:
            raise ValueError("random_init needs an rng")
        delta = rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape).astype(np.float32)
    elif init is not None:
        delta = np.array(init, dtype=np.float32, copy=True)
    else:
        delta = np.zeros_like(x)
    delta = project(delta, x, cfg)
    if cfg.steps == 0 or cfg.epsilon == 0.0:
        return delta

    maximize = cfg.mode is AttackMode.MAXIMIZE_TRUE
    direction = np.float32(1.0 if maximize else -1.0)
    alpha = np.float32(cfg.step_size)
    if rng is None:
        rng = np.random.default_rng(0)

    best_delta = delta.copy()
    best_loss = None
    for _ in range(cfg.steps):
        xt = T.Tensor(x + delta, requires_grad=True)
        out = forward(xt)
        cur = T.per_example_cross_entropy(out.data, labels)
        loss = T.cross_entropy(out, labels, reduction="sum")
        if best_loss is None:
            best_loss = cur
        else:
            better = cur > best_loss if maximize else cur < best_loss
            best_delta[better] = delta[better]
            best_loss = np.where(better, cur, best_loss)
        loss.backward()
        step = np.sign(xt.grad)
        flat = step == 0.0
        if flat.any():
            step[flat] = rng.choice(np.array([-1.0, 1.0], dtype=np.float32), size=int(flat.sum()))
        delta = project(delta + direction * alpha * step, x, cfg)
    with T.no_grad():
        final = T.per_example_cross_entropy(forward(T.Tensor(x + delta)).data, labels)
    better = final > best_loss if maximize else final < best_loss
    best_delta[better] = delta[better]
    return best_delta
