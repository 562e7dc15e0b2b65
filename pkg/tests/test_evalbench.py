import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kangcn.emulator import EmulatorSpec, build, parameter_count
from kangcn.evalbench import (
    PersistenceModel,
    RunReport,
    emit_report,
    evaluate,
    persistence_rmse,
    rmse,
    sweep_bench,
)
from kangcn.meshgraph import build_rect_mesh
from kangcn.scenario import STATE_COLS, TARGETS, ScenarioConfig, denormalize, nominal_bounds


def two_pass_rmse(a, b):
    sq = [(x - y) ** 2 for x, y in zip(a, b)]
    return math.sqrt(math.fsum(sq) / len(sq))


def test_rmse_examples():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5), rel=1e-15)
    assert rmse([2.0], [-1.0]) == 3.0


@given(st.lists(st.tuples(st.floats(-1e5, 1e5), st.floats(-1e5, 1e5)), min_size=1, max_size=200))
def test_rmse_matches_two_pass_oracle(pairs):
    a, b = zip(*pairs)
    assert rmse(a, b) == pytest.approx(two_pass_rmse(a, b), rel=1e-12, abs=1e-12)


def test_rmse_errors():
    with pytest.raises(ValueError):
        rmse([], [])
    with pytest.raises(ValueError):
        rmse([1.0], [1.0, 2.0])


class OracleModel:
    """Returns the true delta for any feature row it was shown."""

    def __init__(self, split):
        self.lookup = {s.features.tobytes(): s.deltas for s in split}

    def predict_delta(self, features):
        return self.lookup[np.asarray(features).tobytes()]


def test_perfect_predictor_scores_zero(desk_dataset):
    rep = evaluate(OracleModel(desk_dataset.test), desk_dataset.test, desk_dataset.graphs, desk_dataset.norm)
    assert rep.rmse_H == pytest.approx(0.0, abs=1e-9) and rep.rmse_V == pytest.approx(0.0, abs=1e-9)


def test_persistence_matches_scan(desk_dataset):
    rep = evaluate(PersistenceModel(), desk_dataset.test, desk_dataset.graphs, desk_dataset.norm)
    h, v = persistence_rmse(desk_dataset.test, desk_dataset.norm)
    assert rep.rmse_H == pytest.approx(h, rel=1e-12) and rep.rmse_V == pytest.approx(v, rel=1e-12)
    # independent pooled computation
    dv, dh = [], []
    for s in desk_dataset.test:
        d = denormalize(s.targets, desk_dataset.norm, TARGETS) - denormalize(
            s.features[:, STATE_COLS], desk_dataset.norm, TARGETS)
        dv.extend(d[:, :2].ravel())
        dh.extend(d[:, 2])
    assert h == pytest.approx(two_pass_rmse(dh, [0.0] * len(dh)), rel=1e-10)
    assert v == pytest.approx(two_pass_rmse(dv, [0.0] * len(dv)), rel=1e-10)
    assert h > 0 and v > 0


def test_rollout_mode_persistence(desk_dataset):
    rep = evaluate(PersistenceModel(), desk_dataset.test, desk_dataset.graphs, desk_dataset.norm, mode="rollout")
    teacher = evaluate(PersistenceModel(), desk_dataset.test, desk_dataset.graphs, desk_dataset.norm)
    # holding the first frame drifts further from truth than one-step persistence
    assert rep.rmse_H > teacher.rmse_H
    assert len(rep.series) == 23 and rep.series[0][1] == pytest.approx(teacher.series[0][1])


def test_evaluate_errors(desk_dataset):
    with pytest.raises(ValueError):
        evaluate(PersistenceModel(), desk_dataset.test, desk_dataset.graphs, desk_dataset.norm, mode="bogus")
    with pytest.raises(ValueError):
        evaluate(PersistenceModel(), desk_dataset.test, {}, desk_dataset.norm)


def test_evaluate_order_invariant(desk_dataset):
    model = build(EmulatorSpec("kan", 3, 16, seed=4))
    split = desk_dataset.test
    fwd = evaluate(model, split, desk_dataset.graphs, desk_dataset.norm)
    split.scenarios.reverse()
    try:
        rev = evaluate(model, split, desk_dataset.graphs, desk_dataset.norm)
    finally:
        split.scenarios.reverse()
    assert rev.rmse_H == pytest.approx(fwd.rmse_H, rel=1e-12)
    assert rev.rmse_V == pytest.approx(fwd.rmse_V, rel=1e-12)
    assert fwd.parameter_count == parameter_count(model) and fwd.architecture == "KAN+2GCN"


def test_sweep_bench():
    mesh = build_rect_mesh(100_000.0, 60_000.0, 10000.0)
    norm = nominal_bounds(ScenarioConfig())
    model = build(EmulatorSpec("kan", 3, 32, seed=1), mesh)
    rates = [float(m) for m in range(0, 80, 10)]
    short = sweep_bench(model, mesh, rates, 60, norm, repeats=5)
    again = sweep_bench(model, mesh, rates, 60, norm, repeats=5)
    longer = sweep_bench(model, mesh, rates, 120, norm, repeats=5)
    assert short.median_seconds > 0 and len(short.timings) == 5
    for m in rates:
        np.testing.assert_array_equal(short.trajectories[m], again.trajectories[m])
        assert short.trajectories[m].shape == (61, mesh.num_nodes, 3)
    assert longer.median_seconds >= 1.8 * short.median_seconds
    with pytest.raises(ValueError):
        sweep_bench(model, mesh, rates, 5, norm, repeats=0)


def test_emit_report(tmp_path):
    rep = RunReport("KAN+2GCN", "mesh10000", 1.5, 2.5, 23939, 0.25, "teacher", [(1, 1.0, 2.0), (2, 2.0, 3.0)])
    table, blob, series = emit_report([rep], tmp_path)
    rows = list(csv.DictReader(open(table)))
    assert len(rows) == 1
    assert rows[0]["architecture"] == "KAN+2GCN" and float(rows[0]["rmse_H"]) == 1.5
    assert int(rows[0]["parameter_count"]) == 23939
    assert json.loads(blob.read_text())[0]["mesh"] == "mesh10000"
    assert len(list(csv.DictReader(open(series)))) == 2
    with pytest.raises(ValueError):
        emit_report([], tmp_path)
