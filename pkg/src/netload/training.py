"""Huber loss, Adam with per-epoch exponential learning-rate decay, and the epoch loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, asdict
from typing import TYPE_CHECKING

import numpy as np

from .models import DropoutSpec, Params, backward, forward, predict
from .numkernel import ShapeError

if TYPE_CHECKING:
    from .dataset import WindowedDataset

log = logging.getLogger(__name__)

BASE_LR = 0.0003


class TrainingError(RuntimeError):
    """Raised when training cannot proceed (empty split, non-finite loss)."""


@dataclass(frozen=True)
class LossConfig:
    delta: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("Huber delta must be positive")


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return pred, target


def huber_loss(pred, target, cfg: LossConfig = LossConfig()) -> float:
    pred, target = _check_pair(pred, target)
    e = np.abs(pred - target)
    d = cfg.delta
    per = np.where(e <= d, 0.5 * e * e, d * (e - 0.5 * d))
    return float(per.mean())


def huber_grad(pred, target, cfg: LossConfig = LossConfig()) -> np.ndarray:
    pred, target = _check_pair(pred, target)
    e = pred - target
    d = cfg.delta
    return np.where(np.abs(e) <= d, e, d * np.sign(e)) / e.size


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    base_lr: float = BASE_LR
    decay: float = 0.98

    @classmethod
    def fresh(cls, params: dict[str, np.ndarray], **kw) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, **kw)


def decayed_lr(state: AdamState, epoch: int) -> float:
    """Learning rate for zero-based ``epoch``: ``base_lr * decay**epoch``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return state.base_lr * state.decay ** epoch


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float | None = None) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place.

    ``lr`` defaults to ``state.base_lr``. Returns ``(params, state)``.
    """
    if params.keys() != grads.keys():
        raise ShapeError(f"gradient names {sorted(grads)} do not match {sorted(params)}")
    for k, p in params.items():
        if grads[k].shape != p.shape:
            raise ShapeError(f"{k}: gradient shape {grads[k].shape} != parameter {p.shape}")
    lr = state.base_lr if lr is None else lr
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        if not np.isfinite(p).all():
            raise TrainingError(f"Adam produced non-finite values in {k} at step {state.t}")
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    base_lr: float = BASE_LR
    decay: float = 0.98
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    huber_delta: float = 1.0
    dropout: float | None = 0.2
    seed: int = 0


@dataclass
class TrainReport:
    epoch: list[int] = field(default_factory=list)
    train_mae: list[float] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    # mean Huber loss over the epoch's mini-batches (dropout active)
    train_loss: list[float] = field(default_factory=list)

    COLUMNS = ("epoch", "train_mae", "train_mse", "val_mae", "val_mse", "lr")

    @property
    def epochs(self) -> int:
        return len(self.epoch)

    def rows(self):
        for n in range(self.epochs):
            yield tuple(getattr(self, c)[n] for c in self.COLUMNS)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for row in self.rows():
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: Params
    best_params: Params
    best_epoch: int
    report: TrainReport


def _errors(params: Params, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    e = predict(params, x, batch_size=256) - y
    return float(np.abs(e).mean()), float((e * e).mean())


def train_model(params: Params, dataset: "WindowedDataset", cfg: TrainConfig = TrainConfig(),
                ) -> TrainResult:
    """Mini-batch training with Huber loss and Adam.

    The training split is reshuffled each epoch; validation and test order are
    never touched. After every epoch MAE and MSE are measured on the train and
    validation splits in inference mode. ``params`` is updated in place.
    """
    x_train, y_train = dataset.arrays("train")
    x_val, y_val = dataset.arrays("val")
    if len(x_train) == 0 or len(x_val) == 0:
        raise TrainingError("training and validation splits must be non-empty")
    if cfg.epochs < 0:
        raise ValueError("epochs must be non-negative")

    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    drop_rng = np.random.default_rng(seeds[1])
    dropout = DropoutSpec(cfg.dropout, cfg.seed) if cfg.dropout else None
    loss_cfg = LossConfig(cfg.huber_delta)
    tensors = params.tensors()
    state = AdamState.fresh(tensors, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon,
                            base_lr=cfg.base_lr, decay=cfg.decay)
    report = TrainReport()
    best = params.copy()
    best_epoch = 0
    best_val = np.inf
    n = len(x_train)
    for epoch in range(cfg.epochs):
        lr = decayed_lr(state, epoch)
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            pred, cache = forward(params, x_train[idx], dropout, True, drop_rng)
            loss = huber_loss(pred, y_train[idx], loss_cfg)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {b}")
            total += loss * len(idx)
            grads = backward(cache, huber_grad(pred, y_train[idx], loss_cfg))
            adam_step(tensors, grads, state, lr)
        tr_mae, tr_mse = _errors(params, x_train, y_train)
        va_mae, va_mse = _errors(params, x_val, y_val)
        report.epoch.append(epoch + 1)
        report.train_mae.append(tr_mae)
        report.train_mse.append(tr_mse)
        report.val_mae.append(va_mae)
        report.val_mse.append(va_mse)
        report.lr.append(lr)
        report.train_loss.append(total / n)
        if va_mse < best_val:
            best_val = va_mse
            best = params.copy()
            best_epoch = epoch + 1
        log.debug("epoch %d loss %.5f train_mae %.5f val_mae %.5f lr %.3g",
                  epoch + 1, total / n, tr_mae, va_mae, lr)
    return TrainResult(params, best, best_epoch, report)
