"""Minibatch SGD with projected weights and per-epoch evaluation.

The optimizer is plain SGD on the minibatch-mean gradient, followed by
clamping every weight back into the physically realizable transmission
range [-1, 1] (projected gradient descent).  Stochastic photon-loss
layers stay active during both training and evaluation forward passes;
only the backward pass replaces the mask by its mean.

All randomness (shuffling, photon-loss masks, evaluation passes) derives
from the single seed in TrainConfig, so a run is reproducible bit for
bit apart from wall-clock timings.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Batch, Dataset, batches
from .layers import output_head
from .network import Network

__all__ = [
    "TrainConfig",
    "EpochStats",
    "TrainReport",
    "EvalResult",
    "sgd_step",
    "train",
    "evaluate",
]

_MASK_TAG = 53
_EVAL_TAG = 67


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    epochs: int = 10
    seed: int = 0
    shuffle: bool = True
    eval_repeats: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.eval_repeats < 1:
            raise ValueError(f"eval_repeats must be >= 1, got {self.eval_repeats}")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_accuracy: float
    test_accuracy: float
    seconds: float
    steps: int


@dataclass
class TrainReport:
    config: TrainConfig
    seed: int
    epochs: list[EpochStats] = field(default_factory=list)
    confusion: np.ndarray | None = None
    n_train: int = 0
    n_test: int = 0

    @property
    def final_test_accuracy(self) -> float:
        return self.epochs[-1].test_accuracy

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "seed": self.seed,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "epochs": [asdict(e) for e in self.epochs],
            "confusion": self.confusion.tolist() if self.confusion is not None else None,
        }

    def deterministic_dict(self) -> dict:
        """Everything reproducible bit for bit: the report minus timings."""
        d = self.to_dict()
        for row in d["epochs"]:
            row.pop("seconds")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        return cls(
            config=TrainConfig(**d["config"]),
            seed=d["seed"],
            epochs=[EpochStats(**row) for row in d["epochs"]],
            confusion=None if d["confusion"] is None else np.asarray(d["confusion"]),
            n_train=d["n_train"],
            n_test=d["n_test"],
        )

    def save(self, prefix) -> None:
        """Write <prefix>.json (full report) and <prefix>.csv (epoch table)."""
        prefix = str(prefix)
        with open(prefix + ".json", "w") as f:
            json.dump(self.to_dict(), f, indent=2)
        with open(prefix + ".csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                ["epoch", "loss", "train_accuracy", "test_accuracy", "seconds", "steps"]
            )
            for e in self.epochs:
                writer.writerow(
                    [e.epoch, repr(e.loss), repr(e.train_accuracy),
                     repr(e.test_accuracy), repr(e.seconds), e.steps]
                )

    @classmethod
    def load(cls, prefix) -> "TrainReport":
        with open(str(prefix) + ".json") as f:
            return cls.from_dict(json.load(f))


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray
    per_repeat: list[float]


def sgd_step(weights: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
    """In-place W <- clamp(W - lr * g, -1, 1) for every weight block."""
    if len(weights) != len(grads):
        raise ValueError("weight/gradient block counts differ")
    for w, g in zip(weights, grads):
        if w.shape != g.shape:
            raise ValueError(f"weight block {w.shape} got gradient {g.shape}")
        w -= lr * g
        np.clip(w, -1.0, 1.0, out=w)


def _forward_batches(net: Network, ds: Dataset, batch_size: int, rng):
    """Forward the whole dataset in fixed-size chunks (deterministic order)."""
    for start in range(0, len(ds), batch_size):
        feats = ds.features[start : start + batch_size]
        labels = ds.labels[start : start + batch_size]
        yield Batch(feats, labels), net.forward(feats, rng=rng)


def evaluate(
    net: Network,
    ds: Dataset,
    seed=0,
    repeats: int = 1,
    batch_size: int = 256,
) -> EvalResult:
    """Accuracy and confusion matrix; stochastic layers stay active.

    ``repeats`` averages over independent stochastic-mask draws (the
    confusion matrix accumulates all repeats).
    """
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    per_repeat = []
    confusion = np.zeros((net.n_classes, net.n_classes), dtype=np.int64)
    for r in range(repeats):
        rng = np.random.default_rng(_seed_entropy(seed) + [_EVAL_TAG, r])
        correct = 0
        for batch, trace in _forward_batches(net, ds, batch_size, rng):
            preds = np.argmax(trace.logits, axis=-1)
            correct += int(np.sum(preds == batch.labels))
            np.add.at(confusion, (batch.labels, preds), 1)
        per_repeat.append(correct / len(ds))
    return EvalResult(float(np.mean(per_repeat)), confusion, per_repeat)


def _seed_entropy(seed) -> list[int]:
    """Normalize an int or a sequence of ints into rng entropy words."""
    if np.ndim(seed) == 0:
        return [int(seed) & 0xFFFFFFFFFFFFFFFF]
    return [int(s) & 0xFFFFFFFFFFFFFFFF for s in seed]


def train(net: Network, train_set: Dataset, test_set: Dataset, cfg: TrainConfig) -> TrainReport:
    """Run the full training protocol and return the epoch-by-epoch report.

    Each epoch reshuffles the training order from (seed, epoch), folds
    every sample into exactly ceil(N / batch_size) optimizer steps, and
    then evaluates on the full test set.
    """
    if len(train_set) == 0 or len(test_set) == 0:
        raise ValueError("training and test sets must be non-empty")
    report = TrainReport(
        config=cfg, seed=cfg.seed, n_train=len(train_set), n_test=len(test_set)
    )
    final_eval = None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        mask_rng = np.random.default_rng(_seed_entropy(cfg.seed) + [_MASK_TAG, epoch])
        loss_sum = 0.0
        correct = 0
        steps = 0
        for batch in batches(train_set, cfg.batch_size, cfg.seed, epoch, cfg.shuffle):
            trace = net.forward(batch.features, rng=mask_rng)
            losses, _, preds = output_head(trace.logits, batch.labels)
            loss_sum += float(np.sum(losses))
            correct += int(np.sum(preds == batch.labels))
            grads = net.weight_grads(net.backward(trace, batch.labels, reduction="mean"))
            sgd_step(net.weights(), grads, cfg.learning_rate)
            steps += 1
        final_eval = evaluate(
            net, test_set, seed=_seed_entropy(cfg.seed) + [epoch], repeats=cfg.eval_repeats
        )
        report.epochs.append(
            EpochStats(
                epoch=epoch,
                loss=loss_sum / len(train_set),
                train_accuracy=correct / len(train_set),
                test_accuracy=final_eval.accuracy,
                seconds=time.perf_counter() - t0,
                steps=steps,
            )
        )
    report.confusion = final_eval.confusion
    return report
