import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kangcn.diffcore import ParamTensor
from kangcn.emulator import EmulatorSpec, build
from kangcn.scenario import Dataset, Split
from kangcn.training import (
    AdamState,
    LossConfig,
    NonFiniteLossError,
    ScheduleSpec,
    adam_step,
    lr_at,
    train,
    weighted_loss,
    weighted_loss_grad,
)


def test_loss_zero_when_equal(rng):
    x = rng.normal(size=(5, 3))
    assert weighted_loss(x, x) == 0.0


def test_loss_scales_with_s_squared(rng):
    p, t = rng.normal(size=(2, 6, 3))
    base = weighted_loss(p, t, LossConfig(s=1.0))
    assert weighted_loss(p, t, LossConfig(s=2.0)) == 4.0 * weighted_loss(p, t, LossConfig(s=1.0))
    assert weighted_loss(p, t, LossConfig(s=10.0)) == 100.0 * base


def test_lambda_h_zero_ignores_thickness(rng):
    p, t = rng.normal(size=(2, 6, 3))
    cfg = LossConfig(lambda_h=0.0)
    q = p.copy()
    q[:, 2] += 100.0
    assert weighted_loss(p, t, cfg) == weighted_loss(q, t, cfg)


def test_loss_is_block_mean(rng):
    p, t = rng.normal(size=(2, 7, 3))
    r = p - t
    expected = 9.0 * (2.0 * np.mean(r[:, :2] ** 2) + 0.5 * np.mean(r[:, 2] ** 2))
    assert weighted_loss(p, t, LossConfig(2.0, 0.5, 3.0)) == pytest.approx(expected, rel=1e-14)


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        weighted_loss(np.zeros((3, 3)), np.zeros((4, 3)))


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        LossConfig(s=0.0)


def test_loss_gradient_finite_difference(rng):
    p, t = rng.normal(size=(2, 4, 3))
    cfg = LossConfig(1.5, 0.7, 3.0)
    _, g = weighted_loss_grad(p, t, cfg)
    eps = 1e-6
    for idx in np.ndindex(p.shape):
        q1, q2 = p.copy(), p.copy()
        q1[idx] += eps
        q2[idx] -= eps
        fd = (weighted_loss(q1, t, cfg) - weighted_loss(q2, t, cfg)) / (2 * eps)
        assert g[idx] == pytest.approx(fd, rel=1e-6, abs=1e-9)


@given(seed=st.integers(0, 2**31))
def test_loss_invariant_to_node_permutation(seed):
    rng = np.random.default_rng(seed)
    p, t = rng.normal(size=(2, 9, 3))
    perm = rng.permutation(9)
    assert weighted_loss(p[perm], t[perm]) == pytest.approx(weighted_loss(p, t), rel=1e-14)


def test_translation_equivalence_general_floats(rng):
    for _ in range(50):
        prev, dh, d = rng.normal(size=(3, 10, 3))
        assert weighted_loss(prev + dh, prev + d) == pytest.approx(weighted_loss(dh, d), rel=1e-10)


def test_adam_first_step_is_sign(rng):
    g = rng.choice([-3.0, 0.5, 2.0], size=(4, 5))
    p = ParamTensor("w", np.zeros((4, 5)))
    p.grad[...] = g
    adam_step([p], AdamState.for_params([p]), lr=0.01)
    np.testing.assert_allclose(p.values, -0.01 * np.sign(g), atol=0.01 * 1e-6)


def test_adam_zero_gradient_no_change(rng):
    p = ParamTensor("w", rng.normal(size=(3, 3)))
    before = p.values.copy()
    adam_step([p], AdamState.for_params([p]), lr=0.1)
    np.testing.assert_array_equal(p.values, before)


def test_lr_schedules():
    assert lr_at(ScheduleSpec("exponential", 0.01, gamma=0.99), 1) == pytest.approx(0.0099, abs=1e-17)
    assert lr_at(ScheduleSpec("exponential", 0.01, gamma=0.99), 0) == 0.01
    cos = ScheduleSpec("cosine", 0.0005, t_max=500)
    assert lr_at(cos, 0) == 0.0005
    assert lr_at(cos, 500) == pytest.approx(0.0, abs=1e-20)
    assert lr_at(cos, 250) == pytest.approx(0.00025, rel=1e-12)
    with pytest.raises(ValueError):
        lr_at(cos, 501)
    with pytest.raises(ValueError):
        lr_at(cos, -1)
    with pytest.raises(ValueError):
        ScheduleSpec("exponential", 0.01, gamma=1.5)


def _one_sample_dataset(ds):
    return Dataset(ds.config, ds.norm, ds.graphs, Split([ds.train.scenarios[0]]), Split(ds.val.scenarios[:1]),
                   Split(ds.test.scenarios[:1]))


def test_zero_epochs_leaves_model_unchanged(desk_dataset):
    model = build(EmulatorSpec("kan", 3, 16, seed=1), desk_dataset.graphs["mesh10000"])
    before = model.parameter_values()
    res = train(model, desk_dataset, 0)
    assert len(res.history) == 1
    for a, b in zip(before, model.parameter_values()):
        np.testing.assert_array_equal(a, b)


def test_single_sample_overfits(desk_dataset):
    ds = _one_sample_dataset(desk_dataset)
    sc = ds.train.scenarios[0]
    one = type(sc)(sc.graph_id, sc.mesh, sc.melt_rate, 2, sc.norm, sc.constants)
    ds = Dataset(ds.config, ds.norm, ds.graphs, Split([one]), ds.val, ds.test)
    assert len(ds.train) == 1
    model = build(EmulatorSpec("kan", 3, 32, seed=0), ds.graphs["mesh10000"])
    res = train(model, ds, 10, schedule=ScheduleSpec("cosine", 0.0005, t_max=10))
    # row 1 is the loss of the untouched weights, identical to row 0
    losses = [row["train_loss"] for row in res.history[1:]]
    assert res.history[0]["train_loss"] == losses[0]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_training_deterministic(desk_dataset):
    def run():
        model = build(EmulatorSpec("mlp", 2, 16, seed=3), desk_dataset.graphs["mesh10000"])
        train(model, desk_dataset, 2, seed=9)
        return b"".join(v.tobytes() for v in model.parameter_values())

    assert run() == run()


def test_history_and_best_checkpoint(desk_dataset):
    model = build(EmulatorSpec("gcn", 2, 16, seed=3), desk_dataset.graphs["mesh10000"])
    res = train(model, desk_dataset, 3, schedule=ScheduleSpec("exponential", 0.01, gamma=0.99))
    assert [r["epoch"] for r in res.history] == [0, 1, 2, 3]
    assert res.history[2]["lr"] == pytest.approx(0.0099)
    vals = [r["val_loss"] for r in res.history]
    assert res.best_val == min(vals) and vals[res.best_epoch] == res.best_val


def test_non_finite_loss_aborts(desk_dataset):
    model = build(EmulatorSpec("mlp", 2, 8), desk_dataset.graphs["mesh10000"])
    model.layers[-1].bias.values[:] = np.nan
    with pytest.raises(NonFiniteLossError) as err:
        train(model, desk_dataset, 1)
    assert err.value.epoch == 1 and "melt" in err.value.sample


def test_empty_training_set(desk_dataset):
    ds = Dataset(desk_dataset.config, desk_dataset.norm, desk_dataset.graphs, Split([]), desk_dataset.val,
                 desk_dataset.test)
    with pytest.raises(ValueError):
        train(build(EmulatorSpec("mlp", 2, 8)), ds, 1)


@given(seed=st.integers(0, 2**31))
def test_translation_equivalence_exact_on_dyadic_lattice(seed):
    # multiples of 1/8 with small numerators: every sum and difference is exact
    rng = np.random.default_rng(seed)
    prev, dh, d = (rng.integers(-1000, 1000, (3, 8, 3)) / 8.0)
    assert weighted_loss(prev + dh, prev + d) == weighted_loss(dh, d)
