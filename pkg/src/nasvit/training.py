"""Parameter initialization, optimizers and the supervised training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np

from .checkpoint import Checkpoint
from .config import RunConfig, TrainConfig
from .dataset import DatasetManifest, batches
from .errors import ConfigError, NonFiniteLossError
from .fusion import ModelConfig, model_forward, param_shapes
from .metrics import confusion, metrics
from .tensor import Tape, Tensor, backward, cross_entropy

__all__ = ["TrainConfig", "init_params", "Adam", "SGD", "train", "evaluate", "EpochRecord"]

log = logging.getLogger(__name__)

POSITION_INIT_STD = 0.02


def init_params(cfg: ModelConfig, seed: int = 0, zero: bool = False) -> dict[str, Tensor]:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases, unit LN scales.

    The positional table uses std 0.02. ``zero=True`` gives an all-zero debug model
    (LN scales stay 1) whose output is the uniform distribution.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gamma"):
            arr = np.ones(shape)
        elif zero or name.endswith((".bias", ".beta")):
            arr = np.zeros(shape)
        elif name.endswith(".pos"):
            arr = rng.normal(0.0, POSITION_INIT_STD, size=shape)
        else:
            fan_in = math.prod(shape[1:])
            arr = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        params[name] = Tensor(arr, requires_grad=True)
    return params


class SGD:
    def __init__(self, params: Mapping[str, Tensor], lr: float, weight_decay: float = 0.0):
        self.params, self.lr, self.weight_decay = params, np.float32(lr), np.float32(weight_decay)

    def step(self) -> None:
        for p in self.params.values():
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            p.data = p.data - self.lr * g


class Adam:
    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad + np.float32(self.weight_decay) * p.data if self.weight_decay else p.grad
            self.m[k] = np.float32(self.beta1) * self.m[k] + np.float32(1 - self.beta1) * g
            self.v[k] = np.float32(self.beta2) * self.v[k] + np.float32(1 - self.beta2) * g * g
            m_hat = self.m[k] / np.float32(c1)
            v_hat = self.v[k] / np.float32(c2)
            p.data = p.data - np.float32(self.lr) * m_hat / (np.sqrt(v_hat) + np.float32(self.eps))


def make_optimizer(params, tc: TrainConfig):
    if tc.optimizer == "adam":
        return Adam(params, tc.learning_rate, tc.beta1, tc.beta2, tc.adam_eps, tc.weight_decay)
    if tc.optimizer == "sgd":
        return SGD(params, tc.learning_rate, tc.weight_decay)
    raise ConfigError(f"unknown optimizer {tc.optimizer!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    val_macro_f1: float


@dataclass
class EvalResult:
    loss: float
    truths: list[int]
    predictions: list[int]
    probabilities: np.ndarray

    def report(self, class_names):
        return metrics(confusion(zip(self.truths, self.predictions), len(class_names), class_names))


def evaluate(
    params: Mapping[str, Tensor],
    run: RunConfig,
    manifest: DatasetManifest,
    split: str,
    cache: Optional[dict] = None,
) -> EvalResult:
    """Eval-mode forward over one split (manifest order)."""
    total, count = 0.0, 0
    truths, preds, probs = [], [], []
    for batch in batches(
        manifest,
        split,
        run.train.batch_size,
        run.preprocess,
        image_size=run.model.image_size,
        cache=cache,
    ):
        p = model_forward(batch.images, run.model, params, training=False)
        total += float(cross_entropy(p, batch.labels).data) * len(batch.labels)
        count += len(batch.labels)
        truths += batch.labels
        preds += [int(i) for i in np.argmax(p.data, axis=1)]
        probs.append(p.data)
    stacked = np.concatenate(probs) if probs else np.zeros((0, run.model.fusion.num_classes))
    return EvalResult(total / max(count, 1), truths, preds, stacked)


def snapshot(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data.astype(np.float32, copy=True) for k, v in params.items()}


def train(
    run: RunConfig,
    manifest: DatasetManifest,
    params: Optional[dict[str, Tensor]] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    cache: Optional[dict] = None,
) -> tuple[Checkpoint, list[EpochRecord]]:
    """Train with mean cross-entropy; keep the checkpoint with the best val macro-F1.

    Ties in macro-F1 keep the earlier epoch. Dropout and augmentation draw from
    generators keyed by (train seed, epoch, batch), so runs are reproducible.

    Raises:
        NonFiniteLossError: a batch loss is NaN or infinite.
    """
    tc = run.train
    if not manifest.indices("train") or not manifest.indices("val"):
        raise ConfigError("train and val splits must both be non-empty")
    params = params if params is not None else init_params(run.model, tc.seed)
    opt = make_optimizer(params, tc)
    aug = run.augment if tc.augment else None
    cache = {} if cache is None else cache

    history: list[EpochRecord] = []
    best: Optional[Checkpoint] = None
    for epoch in range(1, tc.epochs + 1):
        loss_sum, seen = 0.0, 0
        stream = batches(
            manifest,
            "train",
            tc.batch_size,
            run.preprocess,
            aug,
            epoch=epoch,
            image_size=run.model.image_size,
            shuffle_seed=tc.seed,
            cache=cache,
        )
        for b, batch in enumerate(stream):
            rng = np.random.default_rng([tc.seed, epoch, b])
            with Tape() as tape:
                probs = model_forward(batch.images, run.model, params, training=True, rng=rng)
                loss = cross_entropy(probs, batch.labels)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLossError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            backward(loss, tape)
            opt.step()
            loss_sum += value * len(batch.labels)
            seen += len(batch.labels)

        val = evaluate(params, run, manifest, "val", cache)
        report = val.report(manifest.class_names)
        rec = EpochRecord(epoch, loss_sum / seen, val.loss, report.accuracy, report.macro["f1"])
        history.append(rec)
        log.info(
            "epoch %d train_loss %.4f val_loss %.4f val_acc %.3f val_f1 %.3f",
            epoch, rec.train_loss, rec.val_loss, rec.val_accuracy, rec.val_macro_f1,
        )
        if on_epoch is not None:
            on_epoch(rec)
        if best is None or rec.val_macro_f1 > best.val_metrics["macro_f1"]:
            best = Checkpoint(
                snapshot(params),
                run,
                tuple(manifest.class_names),
                epoch,
                {"accuracy": rec.val_accuracy, "loss": rec.val_loss, "macro_f1": rec.val_macro_f1},
            )
    return best, history


HISTORY_HEADER = "epoch,train_loss,val_loss,val_accuracy,val_macro_f1\n"


def render_history(history: list[EpochRecord]) -> str:
    rows = [
        f"{r.epoch},{r.train_loss:.6f},{r.val_loss:.6f},{r.val_accuracy:.6f},{r.val_macro_f1:.6f}\n"
        for r in history
    ]
    return HISTORY_HEADER + "".join(rows)
