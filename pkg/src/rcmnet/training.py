"""Loss, SGD, the training loop, evaluation metrics and frozen-backbone transfer."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .checkpoint import load_state, model_from_tensors, read_checkpoint
from .data import LabeledDataset
from .errors import CheckpointError, ConfigError, DataError
from .model import ARCHITECTURES, ResNetVariant, build_model, set_trainable
from .nn import Linear
from .seeding import derive_seed, rng_for
from .tensor import Tensor

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]
CSV_FIELDS = ("epoch", "train_loss", "train_top1", "test_top1")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    arch: str = "rcmnet"
    input_side: int = 64
    num_classes: int = 2
    freeze: str = "none"  # none | backbone
    width_div: int = 1
    dtype: str = "float32"
    scale_logits: bool = True
    target_train_acc: Optional[float] = None  # stop early once reached

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr >= 0:
            raise ConfigError("lr must be nonnegative")
        if self.freeze not in ("none", "backbone"):
            raise ConfigError(f"freeze must be 'none' or 'backbone', got {self.freeze!r}")
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class Metrics:
    top1: float
    topk: float
    k: int
    confusion: list[list[int]]
    history: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {"top1": self.top1, "topk": self.topk, "k": self.k, "confusion": self.confusion}
        return json.dumps(doc) + "\n"

    def write_json(self, path: PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())


# -- loss and optimizer -------------------------------------------------------
def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``)."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DataError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"label out of range for {c} classes")
    onehot = np.zeros((n, c), dtype=logits.dtype)
    onehot[np.arange(n), labels] = 1.0
    return (T.log_softmax(logits, axis=1) * onehot).sum() * (-1.0 / n)


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float, momentum: float,
             weight_decay: float, state: Optional[list] = None) -> list:
    """In-place update: v = momentum*v + g + wd*p; p -= lr*v. Returns the velocity list."""
    if state is None:
        state = [np.zeros_like(p) for p in params]
    for p, g, v in zip(params, grads, state):
        step = g + weight_decay * p if weight_decay else g
        v *= momentum
        v += step
        p -= lr * v
    return state


class SGD:
    """Momentum SGD over the parameters that currently require gradients."""

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = [p for p in params if p.requires_grad]
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        live = [(p, v) for p, v in zip(self.params, self.velocity) if p.requires_grad and p.grad is not None]
        if not live:
            return
        sgd_step([p.data for p, _ in live], [p.grad.astype(p.dtype, copy=False) for p, _ in live],
                 self.lr, self.momentum, self.weight_decay, [v for _, v in live])

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# -- metrics ----------------------------------------------------------------------
def rank_classes(logits: np.ndarray) -> np.ndarray:
    """Class indices by decreasing logit; ties go to the lower index."""
    return np.argsort(-np.asarray(logits), axis=1, kind="stable")


def metrics_from_logits(logits: np.ndarray, labels, num_classes: int) -> Metrics:
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise DataError("cannot evaluate an empty set")
    k = min(5, num_classes)
    order = rank_classes(logits)
    top1 = order[:, 0] == labels
    topk = (order[:, :k] == labels[:, None]).any(axis=1)
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (labels, order[:, 0]), 1)
    return Metrics(float(top1.mean()), float(topk.mean()), k, conf.tolist())


def predict_logits(model: ResNetVariant, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    model.eval()
    out = []
    with T.no_grad():
        for i in range(0, len(images), batch_size):
            out.append(model(Tensor(images[i : i + batch_size])).data)
    return np.concatenate(out)


def _model_inputs(model: ResNetVariant, ds: LabeledDataset) -> np.ndarray:
    x = ds.stacked(model.dtype)
    if x.ndim != 4 or x.shape[1] != 3:
        raise DataError(f"dataset images must be [3, s, s] after preprocessing, got {x.shape[1:]}")
    return x


def evaluate(model: ResNetVariant, ds: LabeledDataset, batch_size: int = 64) -> Metrics:
    if len(ds) == 0:
        raise DataError("cannot evaluate an empty set")
    if ds.num_classes != model.num_classes:
        raise DataError(f"dataset has {ds.num_classes} classes, model has {model.num_classes}")
    logits = predict_logits(model, _model_inputs(model, ds), batch_size)
    return metrics_from_logits(logits, ds.labels, model.num_classes)


# -- training loop ------------------------------------------------------------------
def batch_order(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled mini-batches; a trailing batch of one joins the previous batch."""
    perm = rng.permutation(n)
    batches = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def train_step(model: ResNetVariant, opt: SGD, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    opt.zero_grad()
    logits = model(Tensor(x))
    loss = cross_entropy(logits, y)
    if loss.requires_grad:
        T.backward(loss)
        opt.step()
    return float(loss.data), logits.data


def write_history_csv(history: Sequence[dict], path: PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for row in history:
            w.writerow([row["epoch"]] + [f"{row[k]:.6f}" for k in CSV_FIELDS[1:]])


def read_history_csv(path: PathLike) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{"epoch": int(r["epoch"]), **{k: float(r[k]) for k in CSV_FIELDS[1:]}} for r in rows]


def train(
    model: ResNetVariant,
    train_ds: LabeledDataset,
    test_ds: Optional[LabeledDataset],
    cfg: TrainConfig,
    log_path: Optional[PathLike] = None,
) -> tuple[ResNetVariant, Metrics]:
    """Seeded mini-batch SGD. Returns the model and final-epoch metrics.

    With ``cfg.freeze == "backbone"`` batch norm stays in eval mode so no
    non-classifier state moves. ``Metrics.history`` holds one row per epoch.
    """
    if len(train_ds) == 0:
        raise DataError("empty training set")
    for ds in (train_ds, test_ds):
        if ds is not None and ds.num_classes != model.num_classes:
            raise DataError(f"dataset has {ds.num_classes} classes, model has {model.num_classes}")
    x_train = _model_inputs(model, train_ds)
    y_train = train_ds.labels
    opt = SGD(model.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay)
    rng = rng_for(cfg.seed, "shuffle")
    history: list[dict] = []
    final: Optional[Metrics] = None
    for epoch in range(1, cfg.epochs + 1):
        total_loss, correct = 0.0, 0
        for idx in batch_order(len(train_ds), cfg.batch_size, rng):
            model.train(cfg.freeze == "none")
            loss, logits = train_step(model, opt, x_train[idx], y_train[idx])
            total_loss += loss * len(idx)
            correct += int((rank_classes(logits)[:, 0] == y_train[idx]).sum())
        row = {"epoch": epoch, "train_loss": total_loss / len(train_ds), "train_top1": correct / len(train_ds),
               "test_top1": float("nan")}
        if test_ds is not None and len(test_ds):
            final = evaluate(model, test_ds)
            row["test_top1"] = final.top1
        history.append(row)
        logger.info("epoch %d loss %.4f train %.4f test %.4f", epoch, row["train_loss"], row["train_top1"],
                    row["test_top1"])
        if cfg.target_train_acc is not None and row["train_top1"] >= cfg.target_train_acc:
            break
    model.eval()
    opt.zero_grad()
    if log_path is not None:
        write_history_csv(history, log_path)
    if final is None:
        final = Metrics(float("nan"), float("nan"), min(5, model.num_classes), [])
    final.history = history
    return model, final


def build_for_config(cfg: TrainConfig) -> ResNetVariant:
    return build_model(cfg.arch, cfg.num_classes, cfg.input_side, derive_seed(cfg.seed, "init"),
                       width_div=cfg.width_div, dtype=cfg.np_dtype, scale_logits=cfg.scale_logits)


# -- transfer learning ------------------------------------------------------------
def prepare_transfer(pretrained: Union[PathLike, tuple], new_num_classes: int, cfg: TrainConfig) -> ResNetVariant:
    """Backbone from the checkpoint, frozen; a freshly initialised classifier head."""
    if isinstance(pretrained, tuple):
        arch, _, tensors = pretrained
    else:
        arch, _, tensors = read_checkpoint(pretrained)
    if arch != cfg.arch:
        raise CheckpointError(f"checkpoint architecture {arch!r} != configured {cfg.arch!r}")
    model = model_from_tensors(arch, new_num_classes, tensors, cfg.input_side)
    load_state(model, tensors, skip=("fc.",))
    model.fc = Linear(model.feature_dim, new_num_classes, rng_for(cfg.seed, "head"), model.dtype)
    set_trainable(model, "classifier")
    return model


def transfer_learn(
    pretrained: Union[PathLike, tuple],
    new_num_classes: int,
    train_ds: LabeledDataset,
    test_ds: Optional[LabeledDataset],
    cfg: TrainConfig,
    log_path: Optional[PathLike] = None,
) -> tuple[ResNetVariant, Metrics]:
    """Fine-tune only the classifier of a pretrained model.

    ``pretrained`` is a checkpoint path or a ``(arch, classes, tensors)``
    tuple as returned by :func:`read_checkpoint`.
    """
    model = prepare_transfer(pretrained, new_num_classes, cfg)
    frozen = TrainConfig(**{**asdict(cfg), "freeze": "backbone", "num_classes": new_num_classes})
    return train(model, train_ds, test_ds, frozen, log_path)
