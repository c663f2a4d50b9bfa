"""AdamW with cosine annealing, early stopping on validation BACC, and run history."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError, NumericError
from .metrics import MetricsReport, compute_metrics
from .model import DiaMond
from .module import Parameter
from .tensor import cross_entropy


@dataclass(frozen=True)
class TrainConfig:
    lr_max: float = 1e-4
    lr_min: float = 0.0
    weight_decay: float = 1e-5
    batch_size: int = 16
    total_iterations: int = 3800
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    early_stop_patience: int = 10
    val_interval: int = 100
    seed: int = 0
    class_weighted: bool = False
    stratified_batches: bool = True
    eval_batch_size: int = 32

    def validate(self) -> "TrainConfig":
        if not self.lr_max >= self.lr_min >= 0:
            raise ConfigError(f"need lr_max >= lr_min >= 0, got {self.lr_max}, {self.lr_min}")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.total_iterations < 1:
            raise ConfigError("total_iterations must be >= 1")
        if self.val_interval < 1 or self.early_stop_patience < 1:
            raise ConfigError("val_interval and early_stop_patience must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ConfigError("Adam betas must lie in [0, 1) and eps must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        return self

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


def cosine_lr(t: int, total: int, lr_max: float, lr_min: float = 0.0) -> float:
    """Cosine annealing from ``lr_max`` at ``t = 0`` to ``lr_min`` at ``t = total``."""
    t = min(max(t, 0), total)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total))


def adamw_update(param, grad, m, v, t: int, lr: float, beta1: float, beta2: float, eps: float, weight_decay: float):
    """One AdamW step for array ``param`` at step ``t`` (1-based); returns ``(param, m, v)``.

    Weight decay is decoupled: it shrinks the parameter directly, scaled by ``lr``.
    """
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param = param - lr * weight_decay * param - lr * m_hat / (np.sqrt(v_hat) + eps)
    return param, m, v


class AdamW:
    """Stateful AdamW over a fixed list of parameters."""

    def __init__(self, params: list[Parameter], cfg: TrainConfig):
        self.params = list(params)
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        grads = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter {p.name!r}")
            grads.append(g)
        self.t += 1
        c = self.cfg
        for i, (p, g) in enumerate(zip(self.params, grads)):
            new, self.m[i], self.v[i] = adamw_update(
                p.data, g, self.m[i], self.v[i], self.t, lr, c.beta1, c.beta2, c.eps, c.weight_decay
            )
            p.assign(new)


@dataclass
class Dataset:
    """In-memory paired volumes with integer labels."""

    mri: np.ndarray
    pet: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if not (len(self.mri) == len(self.pet) == len(self.labels)):
            raise ContractError("mri, pet and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.mri[idx], self.pet[idx], self.labels[idx])


@dataclass
class HistoryRow:
    iteration: int
    train_loss: float
    val_bacc: float | None
    lr: float


@dataclass
class TrainResult:
    history: list[HistoryRow]
    best_state: dict[str, np.ndarray]
    best_val_bacc: float | None
    best_iteration: int
    iterations_run: int
    stopped_early: bool
    val_checks: int = 0
    state_fitted: bool = field(default=True, repr=False)


def evaluate(model: DiaMond, data: Dataset, batch_size: int = 32) -> MetricsReport:
    return compute_metrics(data.labels, model.predict_proba(data.mri, data.pet, batch_size))


def _class_weights(labels: np.ndarray, n_classes: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=n_classes).astype(float)
    return np.where(counts > 0, len(labels) / (n_classes * np.maximum(counts, 1.0)), 0.0)


def epoch_order(labels: np.ndarray, rng: np.random.Generator, stratified: bool = True) -> np.ndarray:
    """A permutation of sample indices for one pass over the data.

    Stratified ordering interleaves the shuffled classes by relative rank, so
    any contiguous batch holds the classes in roughly their overall
    proportions. Unbalanced batches otherwise inject a large class-independent
    gradient that drowns the per-subject signal early in training.
    """
    if not stratified:
        return rng.permutation(len(labels))
    keys = np.empty(len(labels))
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        keys[idx] = (np.arange(len(idx)) + rng.random()) / len(idx)
    return np.lexsort((rng.random(len(labels)), keys))


def train(model: DiaMond, train_data: Dataset, val_data: Dataset | None = None, cfg: TrainConfig | None = None) -> TrainResult:
    """Mini-batch training; with validation data the best-BACC state is restored at the end."""
    cfg = (cfg or TrainConfig()).validate()
    if len(train_data) == 0:
        raise ContractError("training split is empty")
    if val_data is not None and len(val_data) == 0:
        raise ContractError("validation split is empty")
    dtype = model.cfg.dtype
    mri = np.asarray(train_data.mri, dtype=dtype)
    pet = np.asarray(train_data.pet, dtype=dtype)
    labels = train_data.labels
    weights = _class_weights(labels, model.cfg.n_classes) if cfg.class_weighted else None

    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    dropout_rng = np.random.default_rng([cfg.seed, 2])
    params = model.parameters()
    opt = AdamW(params, cfg)

    history: list[HistoryRow] = []
    best_state = model.state_dict()
    best_fitted = model.regbn.fitted
    best_bacc, best_iter, stale, checks = None, 0, 0, 0
    stopped = False
    order, cursor = epoch_order(labels, shuffle_rng, cfg.stratified_batches), 0
    t = 0
    while t < cfg.total_iterations:
        if cursor >= len(order):
            order, cursor = epoch_order(labels, shuffle_rng, cfg.stratified_batches), 0
        idx = order[cursor : cursor + cfg.batch_size]
        cursor += cfg.batch_size

        lr = cosine_lr(t, cfg.total_iterations, cfg.lr_max, cfg.lr_min)
        logits = model.forward(mri[idx], pet[idx], dropout_rng, training=True, fit_regbn=True)
        loss = cross_entropy(logits, labels[idx], weights)
        loss_value = float(loss.data)
        if not math.isfinite(loss_value):
            raise NumericError(f"training loss diverged (non-finite) at iteration {t}")
        model.zero_grad()
        loss.backward()
        opt.step(lr)
        t += 1

        val_bacc = None
        if val_data is not None and t % cfg.val_interval == 0:
            val_bacc = evaluate(model, val_data, cfg.eval_batch_size).bacc
            checks += 1
            if best_bacc is None or val_bacc > best_bacc:
                best_bacc, best_iter, stale = val_bacc, t, 0
                best_state, best_fitted = model.state_dict(), model.regbn.fitted
            else:
                stale += 1
        history.append(HistoryRow(t, loss_value, val_bacc, lr))
        if stale >= cfg.early_stop_patience:
            stopped = True
            break

    if val_data is None or best_bacc is None:
        best_state, best_fitted, best_iter = model.state_dict(), model.regbn.fitted, t
    else:
        model.load_state_dict(best_state, fitted=best_fitted)
    return TrainResult(history, best_state, best_bacc, best_iter, t, stopped, checks, best_fitted)


def write_history(history: list[HistoryRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "train_loss", "val_bacc", "lr"])
        for row in history:
            writer.writerow(
                [row.iteration, repr(row.train_loss), "" if row.val_bacc is None else repr(row.val_bacc), repr(row.lr)]
            )
