"""Standard and adversarial training of target models.

SGD with momentum; weight decay is decoupled from the momentum buffer so a
frozen loss shrinks parameters geometrically by (1 - lr * wd) per step.
Batch order reshuffles every epoch from the config seed; attack randomness
runs on separate derived streams, which is what makes adversarial training
at radius zero reproduce standard training parameter-for-parameter.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attacks import AttackConfig, AttackMode, pgd
from .data import LabeledDataset
from .models import ArchitectureSpec, ModelState, init_model, logits, param_tensors, predict
from .util import derive_seed


@dataclass(frozen=True)
class MultiStep:
    milestones: tuple[int, ...]
    factor: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ValueError("factor must lie in (0, 1)")

    def lr_at(self, base: float, epoch: int, total_epochs: int) -> float:
        drops = sum(1 for m in self.milestones if epoch >= m)
        return base * self.factor**drops


@dataclass(frozen=True)
class Cosine:
    def lr_at(self, base: float, epoch: int, total_epochs: int) -> float:
        return base * 0.5 * (1.0 + float(np.cos(np.pi * epoch / max(1, total_epochs))))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: MultiStep | Cosine = field(default_factory=Cosine)
    attack: AttackConfig | None = None  # inner maximization; None means standard training
    eval_attack: AttackConfig | None = None  # per-epoch robust-test probe
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.attack is not None and self.attack.mode is not AttackMode.MAXIMIZE_TRUE:
            raise ValueError("the inner training attack must maximize the true-label loss")


def default_eval_attack(steps: int = 20) -> AttackConfig:
    return AttackConfig(epsilon=8 / 255, step_size=2 / 255, steps=steps,
                        mode=AttackMode.MAXIMIZE_TRUE, random_init=True)


@dataclass
class TrainTrace:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)  # robust on the attacked batch under AT
    nat_test: list[float] = field(default_factory=list)
    rob_test: list[float] = field(default_factory=list)

    def as_rows(self):
        for e in range(len(self.train_loss)):
            yield {"epoch": e, "train_loss": self.train_loss[e],
                   "train_acc_or_robust": self.train_acc[e],
                   "nat_test": self.nat_test[e], "rob_test": self.rob_test[e]}


TRACE_COLUMNS = ["epoch", "train_loss", "train_acc_or_robust", "nat_test", "rob_test"]


def write_trace_csv(path, trace: TrainTrace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        for row in trace.as_rows():
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in TRACE_COLUMNS})


def read_trace_csv(path) -> TrainTrace:
    trace = TrainTrace()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            trace.train_loss.append(float(row["train_loss"]))
            trace.train_acc.append(float(row["train_acc_or_robust"]))
            trace.nat_test.append(float(row["nat_test"]) if row["nat_test"] else None)
            trace.rob_test.append(float(row["rob_test"]) if row["rob_test"] else None)
    return trace


class SGD:
    """Momentum SGD over a named parameter dict, decoupled weight decay."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, momentum: float,
                 weight_decay: float):
        self.params = params
        self.lr = float(lr)
        self.momentum = np.float32(momentum)
        self.weight_decay = np.float32(weight_decay)
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        lr = np.float32(self.lr)
        for name, p in self.params.items():
            g = grads[name]
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p -= lr * v
            p -= lr * self.weight_decay * p


def _epoch_eval(model, test_set, eval_attack, rng):
    nat = float((predict(model, test_set.images) == test_set.labels).mean())
    if eval_attack.epsilon == 0.0 or eval_attack.steps == 0:
        return nat, nat
    delta = pgd(model, test_set.images, test_set.labels, eval_attack, rng=rng)
    rob = float((predict(model, test_set.images + delta) == test_set.labels).mean())
    return nat, rob


def _train(dataset: LabeledDataset, spec: ArchitectureSpec, cfg: TrainConfig,
           test_set: LabeledDataset | None, adversarial: bool) -> tuple[ModelState, TrainTrace]:
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    model = init_model(spec, derive_seed(cfg.seed, "init"))
    opt = SGD(model.params, cfg.lr, cfg.momentum, cfg.weight_decay)
    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    eval_attack = cfg.eval_attack if cfg.eval_attack is not None else default_eval_attack()
    trace = TrainTrace()
    n = len(dataset)

    for epoch in range(cfg.epochs):
        opt.lr = cfg.schedule.lr_at(cfg.lr, epoch, cfg.epochs)
        order = shuffle_rng.permutation(n)
        losses, correct, seen = [], 0, 0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            xb = dataset.images[idx]
            yb = dataset.labels[idx]
            if adversarial and cfg.attack.epsilon > 0.0:
                atk_rng = np.random.default_rng(derive_seed(cfg.seed, "inner-attack", epoch, bi))
                xb = xb + pgd(model, xb, yb, cfg.attack, rng=atk_rng)
            params = param_tensors(model)
            out = logits(model, T.Tensor(xb), params=params)
            loss = T.cross_entropy(out, yb)
            loss.backward()
            opt.step({k: t.grad for k, t in params.items()})
            losses.append(float(loss.data))
            correct += int((out.data.argmax(axis=1) == yb).sum())
            seen += len(yb)
        trace.train_loss.append(float(np.mean(losses)))
        trace.train_acc.append(correct / seen)
        if test_set is not None:
            eval_rng = np.random.default_rng(derive_seed(cfg.seed, "eval-attack", epoch))
            nat, rob = _epoch_eval(model, test_set, eval_attack, eval_rng)
        else:
            nat, rob = None, None
        trace.nat_test.append(nat)
        trace.rob_test.append(rob)

    model.metadata.update({
        "mode": "at" if adversarial else "st",
        "epochs": cfg.epochs, "lr": cfg.lr, "batch_size": cfg.batch_size,
        "seed": cfg.seed,
        "epsilon_train": cfg.attack.epsilon if adversarial else 0.0,
    })
    return model, trace


def train_standard(dataset: LabeledDataset, spec: ArchitectureSpec, cfg: TrainConfig,
                   test_set: LabeledDataset | None = None) -> tuple[ModelState, TrainTrace]:
    """Empirical-risk minimization of the mean cross-entropy."""
    if cfg.attack is not None:
        raise ValueError("standard training takes no inner attack; use train_adversarial")
    return _train(dataset, spec, cfg, test_set, adversarial=False)


def train_adversarial(dataset: LabeledDataset, spec: ArchitectureSpec, cfg: TrainConfig,
                      test_set: LabeledDataset | None = None) -> tuple[ModelState, TrainTrace]:
    """Minimax training: each batch is perturbed by PGD before the step.

    The trace's accuracy column is the robust training accuracy, measured
    on the perturbed batches as they are consumed.
    """
    if cfg.attack is None:
        raise ValueError("adversarial training needs an inner attack config")
    return _train(dataset, spec, cfg, test_set, adversarial=True)


def at_config(epsilon: float, steps: int = 10, step_size: float | None = None,
              **train_kw) -> TrainConfig:
    """TrainConfig with the conventional inner attack (eps/4 steps, random start)."""
    attack = AttackConfig(epsilon=epsilon,
                          step_size=step_size if step_size is not None else max(epsilon / 4, 1e-6),
                          steps=steps, mode=AttackMode.MAXIMIZE_TRUE, random_init=True)
    return TrainConfig(attack=attack, **train_kw)


def mix(clean: LabeledDataset, poisoned, rate: float, seed: int = 0) -> LabeledDataset:
    """Blend: a seeded floor(rate * N) subset takes its poisoned form.

    ``poisoned`` is a poison-forge dataset aligned one-to-one with
    ``clean``; labels always stay the true ones.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    if len(poisoned.labels) != len(clean) or not np.array_equal(poisoned.labels, clean.labels):
        raise ValueError("poisoned dataset is not aligned with the clean dataset")
    clean_hash = format(clean.content_hash(), "016x")
    recorded = poisoned.provenance.get("dataset_hash")
    if recorded is not None and recorded != clean_hash:
        raise ValueError(f"poison archive was generated from dataset {recorded}, got {clean_hash}")
    n_poison = int(np.floor(rate * len(clean)))
    chosen = np.sort(np.random.default_rng(seed).choice(len(clean), size=n_poison, replace=False))
    images = clean.images.copy()
    if n_poison:
        images[chosen] = poisoned.poisoned_images()[chosen]
    return LabeledDataset(images, clean.labels.copy(), clean.num_classes, clean.split,
                          meta={"poison_rate": rate, "poisoned_indices": chosen.tolist()})
