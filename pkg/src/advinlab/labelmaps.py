"""Inducing-label assignment for poison crafting.

Class-level strategies (NextCycle, NearSwap, SimilarSwap, DissimilarSwap)
send every member of a class to the same target class, which is what
plants a consistent bias in the poisons. Random / LL / MC assign
per-example targets and are kept as weak baselines.

Labels are 0-indexed throughout; a cyclic shift is (y + 1) mod K and the
adjacent pair swap is {0<->1, 2<->3, ...}.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .models import ModelState, batched_logits


class LabelStrategy(enum.Enum):
    RANDOM = "random"
    LL = "ll"
    MC = "mc"
    NEXT_CYCLE = "nextcycle"
    NEAR_SWAP = "nearswap"
    SIMILAR_SWAP = "similarswap"
    DISSIMILAR_SWAP = "dissimilarswap"


CLASS_LEVEL = (LabelStrategy.NEXT_CYCLE, LabelStrategy.NEAR_SWAP,
               LabelStrategy.SIMILAR_SWAP, LabelStrategy.DISSIMILAR_SWAP)


@dataclass(frozen=True)
class LabelMapSpec:
    strategy: LabelStrategy
    num_classes: int
    seed: int | None = None  # RANDOM only
    confusion: np.ndarray | None = None  # SimilarSwap / DissimilarSwap only

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.strategy in (LabelStrategy.NEAR_SWAP, LabelStrategy.SIMILAR_SWAP,
                             LabelStrategy.DISSIMILAR_SWAP) and self.num_classes % 2:
            raise ValueError(f"{self.strategy.value} needs an even class count")
        if self.strategy is LabelStrategy.RANDOM and self.seed is None:
            raise ValueError("random strategy needs a seed")
        if self.strategy in (LabelStrategy.SIMILAR_SWAP, LabelStrategy.DISSIMILAR_SWAP):
            if self.confusion is None:
                raise ValueError(f"{self.strategy.value} needs a confusion matrix")
            c = np.asarray(self.confusion)
            if c.shape != (self.num_classes, self.num_classes) or (c < 0).any():
                raise ValueError("confusion must be a nonnegative KxK matrix")

    @property
    def is_class_level(self) -> bool:
        return self.strategy in CLASS_LEVEL


def pair_by_confusion(confusion: np.ndarray, polarity: str) -> np.ndarray:
    """Greedy perfect matching on symmetrized off-diagonal confusion mass.

    ``polarity`` is "similar" (heaviest pairs first) or "dissimilar"
    (lightest first); ties break toward the smallest class indices. The
    result is an involution g with g[y] != y.
    """
    c = np.asarray(confusion, dtype=np.float64)
    k = c.shape[0]
    if c.ndim != 2 or c.shape != (k, k):
        raise ValueError(f"confusion must be square, got {c.shape}")
    if k % 2:
        raise ValueError("pairing needs an even class count")
    if polarity not in ("similar", "dissimilar"):
        raise ValueError(f"unknown polarity {polarity!r}")
    pairs = [(a, b) for a in range(k) for b in range(a + 1, k)]
    weight = {(a, b): float(c[a, b] + c[b, a]) for a, b in pairs}
    sign = -1.0 if polarity == "similar" else 1.0
    pairs.sort(key=lambda p: (sign * weight[p], p[0], p[1]))
    g = np.full(k, -1, dtype=np.int64)
    for a, b in pairs:
        if g[a] < 0 and g[b] < 0:
            g[a], g[b] = b, a
    return g


def class_map(spec: LabelMapSpec) -> np.ndarray:
    """The length-K target array for a class-level strategy."""
    k = spec.num_classes
    if spec.strategy is LabelStrategy.NEXT_CYCLE:
        return (np.arange(k, dtype=np.int64) + 1) % k
    if spec.strategy is LabelStrategy.NEAR_SWAP:
        return np.arange(k, dtype=np.int64) ^ 1
    if spec.strategy is LabelStrategy.SIMILAR_SWAP:
        return pair_by_confusion(spec.confusion, "similar")
    if spec.strategy is LabelStrategy.DISSIMILAR_SWAP:
        return pair_by_confusion(spec.confusion, "dissimilar")
    raise ValueError(f"{spec.strategy.value} is not a class-level strategy")


def assign_batch(spec: LabelMapSpec, model: ModelState | None,
                 images: np.ndarray | None, labels: np.ndarray,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Inducing targets for a batch of (image, label) pairs.

    LL and MC consult the supplied model's logits; RANDOM draws uniformly
    over all K classes (the true class included) from ``rng`` or from the
    spec seed.
    """
    labels = np.asarray(labels, dtype=np.int64)
    k = spec.num_classes
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels out of range [0, {k})")
    if spec.is_class_level:
        return class_map(spec)[labels]
    if spec.strategy is LabelStrategy.RANDOM:
        gen = rng if rng is not None else np.random.default_rng(spec.seed)
        return gen.integers(0, k, size=labels.shape, dtype=np.int64)
    if model is None or images is None:
        raise ValueError(f"{spec.strategy.value} needs a model and images")
    scores = batched_logits(model, images)
    rows = np.arange(len(labels))
    masked = scores.copy()
    # exclude the true class; argmin/argmax tie-break to the smallest index
    if spec.strategy is LabelStrategy.LL:
        masked[rows, labels] = np.inf
        return masked.argmin(axis=1).astype(np.int64)
    if spec.strategy is LabelStrategy.MC:
        masked[rows, labels] = -np.inf
        return masked.argmax(axis=1).astype(np.int64)
    raise ValueError(f"unhandled strategy {spec.strategy}")


def assign(spec: LabelMapSpec, model: ModelState | None, example, rng=None) -> int:
    """Single-example form of ``assign_batch``; example is (image, label)."""
    image, label = example
    images = None if image is None else np.asarray(image, dtype=np.float32)[None]
    return int(assign_batch(spec, model, images, np.array([label]), rng=rng)[0])
