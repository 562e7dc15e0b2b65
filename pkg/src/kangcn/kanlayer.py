"""FastKAN layer: Gaussian RBF expansion of each input feature plus a silu base branch,
both mixed linearly to the output width."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .diffcore import DTYPE, Layer, ParamTensor, Sequential, zero_grads


@dataclass(frozen=True)
class RbfGrid:
    grid_min: float = -2.0
    grid_max: float = 2.0
    num_grids: int = 8

    def __post_init__(self):
        if self.num_grids < 2 or not self.grid_max > self.grid_min:
            raise ValueError("need num_grids >= 2 and grid_max > grid_min")

    @property
    def centers(self) -> np.ndarray:
        return np.linspace(self.grid_min, self.grid_max, self.num_grids)

    @property
    def sigma(self) -> float:
        return (self.grid_max - self.grid_min) / (self.num_grids - 1)


def rbf_basis(u, grid: RbfGrid) -> np.ndarray:
    """exp(-(u - mu_g)^2 / (2 sigma^2)) along a new trailing axis of length G."""
    u = np.asarray(u, dtype=DTYPE)
    d = u[..., None] - grid.centers
    return np.exp(-(d * d) / (2.0 * grid.sigma**2))


def silu(u):
    u = np.asarray(u, dtype=DTYPE)
    return u * expit(u)


def silu_grad(u):
    s = expit(np.asarray(u, dtype=DTYPE))
    return s * (1.0 + u * (1.0 - s))


class KanLayer(Layer):
    """out = RBF(X) . spline_weights + silu(X) . base_weights + bias, row by row.

    The RBF expansion is flattened feature-major: column ``i * G + g`` holds
    basis ``g`` of input feature ``i``.
    """

    def __init__(self, n_in: int, n_out: int, grid: RbfGrid | None = None, rng=None, name: str = "kan"):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.grid = grid or RbfGrid()
        self.name = name
        rng = np.random.default_rng(rng)
        g = self.grid.num_grids
        s_spline, s_base = 1.0 / np.sqrt(n_in * g), 1.0 / np.sqrt(n_in)
        self.spline_weights = ParamTensor(
            f"{name}.spline_weights", rng.uniform(-s_spline, s_spline, (n_in * g, n_out))
        )
        self.base_weights = ParamTensor(f"{name}.base_weights", rng.uniform(-s_base, s_base, (n_in, n_out)))
        self.bias = ParamTensor(f"{name}.bias", np.zeros(n_out))

    @property
    def params(self):
        return [self.spline_weights, self.base_weights, self.bias]

    def basis_matrix(self, x: np.ndarray) -> np.ndarray:
        return rbf_basis(x, self.grid).reshape(x.shape[0], self.n_in * self.grid.num_grids)

    def _forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"{self.name}: expected (*, {self.n_in}) input, got {x.shape}")
        basis = self.basis_matrix(x)
        act = silu(x)
        out = basis @ self.spline_weights.values + act @ self.base_weights.values + self.bias.values
        return out, (x, basis, act)

    def _backward(self, cache, upstream):
        x, basis, act = cache
        self.spline_weights.grad += basis.T @ upstream
        self.base_weights.grad += act.T @ upstream
        self.bias.grad += upstream.sum(axis=0)
        g = self.grid.num_grids
        d_basis = (upstream @ self.spline_weights.values.T).reshape(x.shape[0], self.n_in, g)
        diff = x[..., None] - self.grid.centers
        dbdu = -diff / self.grid.sigma**2 * basis.reshape(x.shape[0], self.n_in, g)
        dx = np.sum(d_basis * dbdu, axis=2)
        dx += (upstream @ self.base_weights.values.T) * silu_grad(x)
        return dx


def kart_sanity_fit(
    target_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    budget: int = 2000,
    seed: int = 0,
    lr: float = 0.01,
) -> float:
    """Fit a 2 -> 8 -> 1 KAN (G = 8) to ``target_fn`` on a 20 x 20 grid over [0, 1]^2
    and return RMSE on a held-out 20 x 20 grid of cell midpoints.

    Adam runs for ``budget`` full-batch steps under a cosine schedule; the output
    layer is linear in its own parameters given the hidden activations, so a final
    least-squares solve sets it exactly.
    """
    from .training import AdamState, ScheduleSpec, adam_step, lr_at

    def grid_points(axis):
        xx, yy = np.meshgrid(axis, axis)
        return np.column_stack([xx.ravel(), yy.ravel()])

    train_x = grid_points(np.linspace(0.0, 1.0, 20))
    test_x = grid_points((np.arange(20) + 0.5) / 20)

    def evaluate(pts):
        vals = np.asarray(target_fn(pts[:, 0], pts[:, 1]), dtype=DTYPE)
        return np.broadcast_to(vals, (pts.shape[0],)).reshape(-1, 1)

    train_y, test_y = evaluate(train_x), evaluate(test_x)

    rng = np.random.default_rng(seed)
    inner = KanLayer(2, 8, rng=rng, name="inner")
    outer = KanLayer(8, 1, rng=rng, name="outer")
    net = Sequential([inner, outer])
    state = AdamState.for_params(net.params)
    schedule = ScheduleSpec(kind="cosine", base_lr=lr, t_max=max(budget, 1))
    n = train_x.shape[0]
    for step in range(budget):
        zero_grads(net.params)
        pred = net.forward(train_x)
        net.backward(2.0 * (pred - train_y) / n)
        adam_step(net.params, state, lr_at(schedule, step))

    net.set_inference(True)
    hidden = inner.forward(train_x)
    design = np.hstack([outer.basis_matrix(hidden), silu(hidden), np.ones((n, 1))])
    coef, *_ = np.linalg.lstsq(design, train_y, rcond=None)
    n_spline = outer.spline_weights.size
    outer.spline_weights.values[...] = coef[:n_spline]
    outer.base_weights.values[...] = coef[n_spline:-1]
    outer.bias.values[...] = coef[-1]

    pred = net.forward(test_x)
    return float(np.sqrt(np.mean((pred - test_y) ** 2)))
