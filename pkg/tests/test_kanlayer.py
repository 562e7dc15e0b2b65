import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kangcn.diffcore import count_params, gradcheck
from kangcn.kanlayer import KanLayer, RbfGrid, kart_sanity_fit, rbf_basis, silu


def test_grid_defaults():
    grid = RbfGrid()
    assert grid.centers[0] == -2.0 and grid.centers[-1] == 2.0
    assert np.all(np.diff(grid.centers) > 0)
    assert grid.sigma == pytest.approx(4 / 7)


def test_rbf_at_center_is_one():
    grid = RbfGrid()
    for g, mu in enumerate(grid.centers):
        assert rbf_basis(mu, grid)[g] == 1.0


def test_rbf_one_sigma_away():
    grid = RbfGrid()
    assert rbf_basis(grid.centers[3] + grid.sigma, grid)[3] == pytest.approx(math.exp(-0.5), abs=1e-12)
    assert math.exp(-0.5) == pytest.approx(0.6065306597, abs=1e-10)


def test_rbf_symmetric_at_zero():
    b = rbf_basis(0.0, RbfGrid(-2, 2, 8))
    np.testing.assert_allclose(b, b[::-1], atol=1e-15)


@given(st.floats(-50, 50))
def test_rbf_range(u):
    b = rbf_basis(u, RbfGrid())
    assert np.all(b <= 1.0) and np.all(b >= 0.0)


def test_silu_values():
    assert silu(0.0) == 0.0
    # mpmath (30 digits): 1 / (1 + e^-1) = 0.731058578630004879...
    assert silu(1.0) == pytest.approx(0.7310585786300049, abs=1e-15)
    # mpmath: silu(20) = 19.99999995877692763...; gap to the asymptote is 20 e^-20 / (1 + e^-20)
    assert 20.0 - silu(20.0) == pytest.approx(4.1223072e-8, rel=1e-6)
    assert abs(silu(40.0) - 40.0) < 1e-8


def test_zero_weights_give_zero_output(rng):
    layer = KanLayer(4, 3, rng=rng)
    for p in layer.params:
        p.values[...] = 0
    np.testing.assert_array_equal(layer.forward(rng.normal(size=(5, 4))), 0.0)


def test_base_branch_only(rng):
    layer = KanLayer(3, 3, rng=rng)
    layer.spline_weights.values[...] = 0
    layer.base_weights.values[...] = np.eye(3)
    x = rng.uniform(-1, 1, (6, 3))
    np.testing.assert_allclose(layer.forward(x), silu(x), atol=1e-15)


def test_scalar_example_against_oracle():
    layer = KanLayer(1, 1, RbfGrid(-1.0, 1.0, 2))
    assert layer.grid.sigma == 2.0
    layer.spline_weights.values[...] = 1.0
    layer.base_weights.values[...] = 0.0
    u = 0.3
    oracle = math.exp(-((u + 1) ** 2) / 8) + math.exp(-((u - 1) ** 2) / 8)
    assert oracle == pytest.approx(1.750159712032229, abs=1e-15)
    assert layer.forward(np.array([[u]]))[0, 0] == pytest.approx(oracle, abs=1e-15)


def test_width_mismatch(rng):
    with pytest.raises(ValueError):
        KanLayer(3, 2, rng=rng).forward(np.ones((4, 2)))


def test_backward_zero_upstream(rng):
    layer = KanLayer(3, 2, rng=rng)
    out = layer.forward(rng.normal(size=(4, 3)))
    dx = layer.backward(np.zeros_like(out))
    np.testing.assert_array_equal(dx, 0.0)
    assert all(np.all(p.grad == 0) for p in layer.params)


def test_bias_grad_is_column_sum(rng):
    layer = KanLayer(3, 2, rng=rng)
    layer.forward(rng.normal(size=(5, 3)))
    up = rng.normal(size=(5, 2))
    layer.backward(up)
    np.testing.assert_allclose(layer.bias.grad, up.sum(axis=0), atol=1e-15)


def test_backward_without_forward(rng):
    with pytest.raises(RuntimeError):
        KanLayer(2, 2, rng=rng).backward(np.zeros((1, 2)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradcheck(seed):
    rng = np.random.default_rng(seed)
    layer = KanLayer(6, 16, rng=rng)
    assert gradcheck(layer, rng.uniform(-1.5, 1.5, (25, 6))).passed


def test_parameter_count():
    assert count_params(KanLayer(6, 128, RbfGrid(num_grids=8)).params) == 6 * 8 * 128 + 6 * 128 + 128 == 7040


@given(seed=st.integers(0, 2**31))
def test_rows_are_independent(seed):
    rng = np.random.default_rng(seed)
    layer = KanLayer(4, 5, rng=rng)
    x = rng.uniform(-1, 1, (7, 4))
    perm = rng.permutation(7)
    np.testing.assert_array_equal(layer.forward(x)[perm], layer.forward(x[perm]))


def test_forward_deterministic(rng):
    layer = KanLayer(6, 8, rng=3)
    x = rng.normal(size=(10, 6))
    assert layer.forward(x).tobytes() == layer.forward(x).tobytes()
    assert KanLayer(6, 8, rng=3).forward(x).tobytes() == layer.forward(x).tobytes()


def test_kart_fits():
    assert kart_sanity_fit(lambda x, y: x + y, budget=2000) < 1e-3
    assert kart_sanity_fit(lambda x, y: x * y, budget=2000) < 1e-2
    assert kart_sanity_fit(lambda x, y: 0.75, budget=200) < 1e-6
