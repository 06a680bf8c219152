"""Training loops, evaluation metrics and metrics CSV export.

Training is plain minibatch Adam for a fixed number of epochs: shuffle the
training set, run forward in train mode (dropout masks on), backpropagate,
step. Validation after every epoch runs in eval mode, so the train/val loss
gap reflects the dropout masks, not a data issue. Everything is a pure
function of (network, split, config seed): reruns are bit-identical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import Adam, Network, TASK_CLASSIFICATION, TASK_REGRESSION, loss_backward
from .preprocess import DatasetSplit, stack_fingerprints

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "EpochMetrics",
    "MetricsLog",
    "RegressionMetrics",
    "ClassificationMetrics",
    "train",
    "evaluate",
    "export_metrics",
]


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch: int = 256
    epochs: int = 100
    seed: int = 0
    bias_correction: bool = False

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    val_metric: float


@dataclass
class MetricsLog:
    task: str
    rows: list[EpochMetrics] = field(default_factory=list)
    test_loss: float | None = None
    test_metric: float | None = None


@dataclass
class RegressionMetrics:
    mse: float
    euclidean_errors: np.ndarray


@dataclass
class ClassificationMetrics:
    accuracy: float
    misclassified: int
    n: int


def _targets_for(task: str, labels: np.ndarray, positions: np.ndarray,
                 n_classes: int) -> np.ndarray:
    if task == TASK_REGRESSION:
        return positions
    onehot = np.zeros((labels.size, n_classes))
    onehot[np.arange(labels.size), labels - 1] = 1.0
    return onehot


def _forward_batched(net, x, batch=256, train=False, rng=None):
    outs = [net.forward(x[i:i + batch], train=train, rng=rng)
            for i in range(0, x.shape[0], batch)]
    return np.concatenate(outs, axis=0)


def _eval_loss_metric(net: Network, x, labels, positions) -> tuple[float, float]:
    """Eval-mode loss and task metric (accuracy or MSE) on a dataset."""
    if x.shape[0] == 0:
        return float("nan"), float("nan")
    out = _forward_batched(net, x)
    if net.task == TASK_CLASSIFICATION:
        target = _targets_for(net.task, labels, positions, net.output_shape)
        true_p = np.clip((out * target).sum(axis=1), 1e-12, None)
        loss = float(-np.log(true_p).mean())
        accuracy = float(np.mean(np.argmax(out, axis=1) + 1 == labels))
        return loss, accuracy
    diff = out - positions
    mse = float((diff * diff).sum() / x.shape[0])
    return mse, mse


def train(net: Network, split: DatasetSplit, cfg: TrainConfig = TrainConfig()):
    """Train the network on the split; returns (network, MetricsLog).

    The final partial minibatch of each epoch is processed, not dropped.
    Raises TrainingDiverged as soon as a batch loss is non-finite.
    """
    x_train, labels_train, pos_train = stack_fingerprints(split.train)
    if x_train.shape[0] == 0:
        raise ValueError("training split is empty")
    x_val, labels_val, pos_val = stack_fingerprints(split.validation)
    targets = _targets_for(net.task, labels_train, pos_train, net.output_shape)

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    optimizer = Adam(net.parameters(), eta=cfg.eta, beta1=cfg.beta1,
                     beta2=cfg.beta2, epsilon=cfg.epsilon,
                     bias_correction=cfg.bias_correction)
    log = MetricsLog(task=net.task)
    n = x_train.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch):
            pick = order[start:start + cfg.batch]
            loss, _ = loss_backward(net, x_train[pick], targets[pick],
                                    train=True, rng=rng)
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch}")
            loss_sum += loss * pick.size
            optimizer.step(net.parameters(), net.gradients())
        val_loss, val_metric = _eval_loss_metric(net, x_val, labels_val, pos_val)
        log.rows.append(EpochMetrics(epoch, loss_sum / n, val_loss, val_metric))

    if split.test:
        x_test, labels_test, pos_test = stack_fingerprints(split.test)
        log.test_loss, log.test_metric = _eval_loss_metric(net, x_test,
                                                           labels_test, pos_test)
    return net, log


def evaluate(net, fingerprints, task: str):
    """Eval-mode metrics of any forward-capable model on a fingerprint list."""
    if not fingerprints:
        raise ValueError("cannot evaluate on an empty dataset")
    x, labels, positions = stack_fingerprints(fingerprints)
    out = _forward_batched(net, x)
    if task == TASK_CLASSIFICATION:
        predicted = np.argmax(out, axis=1) + 1
        wrong = int(np.sum(predicted != labels))
        return ClassificationMetrics(accuracy=1.0 - wrong / len(labels),
                                     misclassified=wrong, n=len(labels))
    diff = out - positions
    mse = float((diff * diff).sum() / x.shape[0])
    return RegressionMetrics(mse=mse, euclidean_errors=np.hypot(diff[:, 0], diff[:, 1]))


def export_metrics(log: MetricsLog, path) -> None:
    """Write the per-epoch metrics CSV; a final test row uses epoch -1.

    Floats are written with repr so the file parses back exactly.
    """
    lines = ["epoch,train_loss,val_loss,val_metric"]
    for row in log.rows:
        lines.append(f"{row.epoch},{row.train_loss!r},{row.val_loss!r},{row.val_metric!r}")
    if log.test_loss is not None:
        lines.append(f"-1,,{log.test_loss!r},{log.test_metric!r}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
