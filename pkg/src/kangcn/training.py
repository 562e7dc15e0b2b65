"""Re-weighted loss, Adam, learning-rate schedules and the epoch loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .diffcore import ParamTensor, zero_grads
from .emulator import EmulatorModel, reconstruct
from .scenario import STATE_COLS, Dataset, Split

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    lambda_v: float = 1.0
    lambda_h: float = 1.0
    s: float = 10.0

    def __post_init__(self):
        if self.lambda_v < 0 or self.lambda_h < 0 or self.lambda_v + self.lambda_h <= 0:
            raise ValueError("loss weights must be nonnegative with a positive sum")
        if self.s <= 0:
            raise ValueError("scale factor s must be positive")


def _check_pair(pred, true):
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError(f"expected matching (nodes, 3) arrays, got {pred.shape} and {true.shape}")
    return pred, true


def weighted_loss(pred_state, true_state, cfg: LossConfig = LossConfig()) -> float:
    """s^2 [lambda_v mean((v_hat - v)^2) + lambda_h mean((H_hat - H)^2)].

    Columns are (v_x, v_y, H). Works unchanged on delta arrays, which is the
    delta-space form of the same objective.
    """
    pred, true = _check_pair(pred_state, true_state)
    r = pred - true
    rv, rh = r[:, :2], r[:, 2]
    inner = cfg.lambda_v * np.mean(rv * rv) + cfg.lambda_h * np.mean(rh * rh)
    return float(cfg.s * cfg.s * inner)


def weighted_loss_grad(pred_state, true_state, cfg: LossConfig = LossConfig()):
    """Loss and its gradient with respect to ``pred_state``."""
    pred, true = _check_pair(pred_state, true_state)
    r = pred - true
    s2 = cfg.s * cfg.s
    grad = np.empty_like(r)
    grad[:, :2] = (2.0 * s2 * cfg.lambda_v / r[:, :2].size) * r[:, :2]
    grad[:, 2] = (2.0 * s2 * cfg.lambda_h / r.shape[0]) * r[:, 2]
    return weighted_loss(pred, true, cfg), grad


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[ParamTensor], **kw) -> "AdamState":
        return cls([np.zeros_like(p.values) for p in params], [np.zeros_like(p.values) for p in params], **kw)


def adam_step(params: Sequence[ParamTensor], state: AdamState, lr: float) -> None:
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.values -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "cosine"
    base_lr: float = 5e-4
    gamma: float = 0.99
    t_max: int | None = None
    eta_min: float = 0.0

    def __post_init__(self):
        if self.kind not in ("exponential", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.base_lr <= 0 or not 0 < self.gamma <= 1:
            raise ValueError("need base_lr > 0 and 0 < gamma <= 1")


def lr_at(schedule: ScheduleSpec, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if schedule.kind == "exponential":
        return schedule.base_lr * schedule.gamma**epoch
    if schedule.t_max is None:
        raise ValueError("cosine schedule needs t_max")
    if epoch > schedule.t_max:
        raise ValueError(f"epoch {epoch} beyond cosine t_max {schedule.t_max}")
    return schedule.eta_min + 0.5 * (schedule.base_lr - schedule.eta_min) * (
        1.0 + math.cos(math.pi * epoch / schedule.t_max)
    )


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, sample: str):
        super().__init__(f"non-finite loss at epoch {epoch}, sample {sample}")
        self.epoch, self.sample = epoch, sample


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = math.inf
    best_params: list | None = None


def split_loss(model: EmulatorModel, split: Split, graphs: dict, cfg: LossConfig) -> float:
    """Mean per-sample loss over a split, evaluated without caching."""
    if len(split) == 0:
        return math.nan
    was = model.inference
    model.set_inference(True)
    total, n = 0.0, 0
    for sample in split:
        model.bind(graphs[sample.graph_id])
        prev = sample.features[:, STATE_COLS]
        total += weighted_loss(reconstruct(prev, model.predict_delta(sample.features)), sample.targets, cfg)
        n += 1
    model.set_inference(was)
    return total / n


def train(
    model: EmulatorModel,
    dataset: Dataset,
    epochs: int,
    loss_cfg: LossConfig = LossConfig(),
    schedule: ScheduleSpec = ScheduleSpec(),
    seed: int = 0,
) -> TrainResult:
    """One Adam step per training graph, shuffled each epoch.

    History row 0 records the untrained model; rows 1..epochs record the lr used,
    the mean training loss seen during the epoch and the validation loss after
    it. ``best_params`` holds a copy of the weights with the lowest validation
    loss; ``model`` is left at the final-epoch weights.
    """
    if len(dataset.train) == 0:
        raise ValueError("empty training set")
    if schedule.kind == "cosine" and schedule.t_max is None:
        schedule = replace(schedule, t_max=max(epochs, 1))
    graphs = dataset.graphs
    rng = np.random.default_rng(seed)
    params = model.params
    state = AdamState.for_params(params)
    index = dataset.train.index()

    result = TrainResult()
    val0 = split_loss(model, dataset.val, graphs, loss_cfg)
    result.history.append(
        {"epoch": 0, "lr": lr_at(schedule, 0), "train_loss": split_loss(model, dataset.train, graphs, loss_cfg),
         "val_loss": val0}
    )
    result.best_val, result.best_params = val0, model.parameter_values()

    model.set_inference(False)
    for epoch in range(1, epochs + 1):
        lr = lr_at(schedule, epoch - 1)
        total = 0.0
        for k in rng.permutation(len(index)):
            sample = dataset.train.sample(index[k])
            model.bind(graphs[sample.graph_id])
            zero_grads(params)
            prev = sample.features[:, STATE_COLS]
            pred = reconstruct(prev, model.forward(sample.features))
            loss, grad = weighted_loss_grad(pred, sample.targets, loss_cfg)
            if not math.isfinite(loss):
                raise NonFiniteLossError(epoch, f"{sample.graph_id}/melt{sample.melt_rate:g}/t{sample.t}")
            model.backward(grad)
            adam_step(params, state, lr)
            total += loss
        val = split_loss(model, dataset.val, graphs, loss_cfg)
        result.history.append({"epoch": epoch, "lr": lr, "train_loss": total / len(index), "val_loss": val})
        if val < result.best_val:
            result.best_val, result.best_epoch, result.best_params = val, epoch, model.parameter_values()
        log.debug("epoch %d lr %.3g train %.4g val %.4g", epoch, lr, total / len(index), val)
    return result


def write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "train_loss", "val_loss"])
        for row in history:
            writer.writerow([row["epoch"]] + [format(row[k], ".17g") for k in ("lr", "train_loss", "val_loss")])
