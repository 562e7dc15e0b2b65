"""Accuracy evaluation in physical units, the scenario-sweep timing harness and report files."""

from __future__ import annotations

import csv
import json
import statistics
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .emulator import EmulatorModel, parameter_count, reconstruct, rollout
from .meshgraph import MeshGraph
from .scenario import STATE_COLS, TARGETS, FieldConstants, Forcing, NormSpec, Split, denormalize, generate_truth, normalize

MODES = ("teacher", "rollout")


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size != truth.size:
        raise ValueError(f"length mismatch: {pred.size} vs {truth.size}")
    if pred.size == 0:
        raise ValueError("rmse of empty input")
    d = pred - truth
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class RunReport:
    architecture: str
    mesh: str
    rmse_H: float
    rmse_V: float
    parameter_count: int
    elapsed_seconds: float
    mode: str
    series: list = field(default_factory=list, repr=False)  # (t, rmse_H, rmse_V) rows


class _SquaredErrors:
    """Running sums of squared physical errors: column 0/1 velocity, 2 thickness."""

    def __init__(self):
        self.sums = np.zeros(3)
        self.count = 0

    def add(self, pred_phys, true_phys):
        d = pred_phys - true_phys
        self.sums += np.sum(d * d, axis=0)
        self.count += d.shape[0]

    def rmse_h(self) -> float:
        return float(np.sqrt(self.sums[2] / self.count))

    def rmse_v(self) -> float:
        # pooled over both components: sqrt of the mean of the two per-component MSEs
        return float(np.sqrt((self.sums[0] + self.sums[1]) / (2 * self.count)))


def _mesh_label(split: Split) -> str:
    ids = sorted({s.graph_id for s in split.scenarios})
    return "+".join(ids)


def evaluate(model, test_set: Split, graphs: dict, norm: NormSpec, mode: str = "teacher",
             architecture: str | None = None) -> RunReport:
    """Pooled RMSE over every test transition and node, in physical units.

    ``teacher`` predicts each step from the true previous state; ``rollout``
    feeds predictions back from the first frame of each scenario.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if len(test_set) == 0:
        raise ValueError("empty test set")
    model_graph = getattr(model, "graph", None)
    for sc in test_set.scenarios:
        if sc.graph_id not in graphs:
            raise ValueError(f"no graph {sc.graph_id!r} for test scenario")
    if hasattr(model, "set_inference"):
        model.set_inference(True)
    start = time.perf_counter()
    total = _SquaredErrors()
    n_steps = max(sc.n_states for sc in test_set.scenarios) - 1
    per_t = [_SquaredErrors() for _ in range(n_steps)]
    for sc in test_set.scenarios:
        graph = graphs[sc.graph_id]
        if hasattr(model, "bind"):
            model.bind(graph)
        if mode == "teacher":
            for sample in sc.samples():
                pred = reconstruct(sample.features[:, STATE_COLS], model.predict_delta(sample.features))
                p, t = denormalize(pred, norm, TARGETS), denormalize(sample.targets, norm, TARGETS)
                total.add(p, t)
                per_t[sample.t - 1].add(p, t)
        else:
            states = rollout(model, sc.states[0], sc.forcing, sc.n_states - 1)
            p_all = denormalize(states[1:], norm, TARGETS)
            t_all = denormalize(sc.states[1:], norm, TARGETS)
            for k in range(p_all.shape[0]):
                total.add(p_all[k], t_all[k])
                per_t[k].add(p_all[k], t_all[k])
    elapsed = time.perf_counter() - start
    if hasattr(model, "bind"):
        model.bind(model_graph)
    series = [(k + 1, e.rmse_h(), e.rmse_v()) for k, e in enumerate(per_t) if e.count]
    label = architecture or getattr(getattr(model, "spec", None), "label", type(model).__name__)
    count = parameter_count(model) if hasattr(model, "params") else 0
    return RunReport(label, _mesh_label(test_set), total.rmse_h(), total.rmse_v(), count, elapsed, mode, series)


class PersistenceModel:
    """Predicts zero change; the accuracy floor every emulator must beat."""

    def predict_delta(self, features):
        return np.zeros((np.asarray(features).shape[0], 3))


def persistence_rmse(test_set: Split, norm: NormSpec) -> tuple[float, float]:
    """(rmse_H, rmse_V) of the no-change predictor, by direct dataset scan."""
    acc = _SquaredErrors()
    for sample in test_set:
        acc.add(denormalize(sample.features[:, STATE_COLS], norm, TARGETS), denormalize(sample.targets, norm, TARGETS))
    return acc.rmse_h(), acc.rmse_v()


_BENCH_LOCK = threading.Lock()


@dataclass
class BenchResult:
    median_seconds: float
    timings: list
    trajectories: dict  # melt rate -> normalized states of the last repeat


def sweep_bench(model: EmulatorModel, mesh: MeshGraph, melt_rates: Sequence[float], n_steps: int,
                norm: NormSpec, constants: FieldConstants = FieldConstants(), repeats: int = 5) -> BenchResult:
    """Wall-clock time to roll out every melt rate for ``n_steps`` steps.

    One untimed warm-up sweep, then ``repeats`` timed sweeps; reports the median.
    Only one sweep may run per process at a time.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if not _BENCH_LOCK.acquire(blocking=False):
        raise RuntimeError("another timed sweep is running")
    try:
        model.bind(mesh)
        model.set_inference(True)
        setups = []
        for m in melt_rates:
            truth = generate_truth(mesh, m, 1, constants)
            setups.append((m, normalize(truth.states[0], norm, TARGETS), Forcing.from_physical(m, truth.smb, norm)))

        def sweep():
            return {m: rollout(model, s0, forcing, n_steps) for m, s0, forcing in setups}

        sweep()
        timings, trajectories = [], {}
        for _ in range(repeats):
            start = time.perf_counter()
            trajectories = sweep()
            timings.append(time.perf_counter() - start)
        return BenchResult(statistics.median(timings), timings, trajectories)
    finally:
        _BENCH_LOCK.release()


REPORT_COLUMNS = ("architecture", "mesh", "mode", "parameter_count", "rmse_H", "rmse_V", "elapsed_seconds")


def _fmt(value):
    return format(value, ".17g") if isinstance(value, float) else value


def emit_report(reports: Sequence[RunReport], out_dir, stem: str = "report") -> list[Path]:
    """Write ``<stem>.csv`` (one row per report), ``<stem>.json`` and
    ``<stem>_series.csv`` (per-step RMSE for plotting)."""
    if not reports:
        raise ValueError("no reports to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table, blob, series = out / f"{stem}.csv", out / f"{stem}.json", out / f"{stem}_series.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow([_fmt(getattr(r, c)) for c in REPORT_COLUMNS])
    blob.write_text(json.dumps([asdict(r) for r in reports], indent=2))
    with open(series, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["architecture", "mesh", "mode", "t", "rmse_H", "rmse_V"])
        for r in reports:
            for t, h, v in r.series:
                w.writerow([r.architecture, r.mesh, r.mode, t, _fmt(h), _fmt(v)])
    return [table, blob, series]
