"""GCN, node-wise MLP, Leaky ReLU and linear output head layers."""

from __future__ import annotations

import numpy as np

from .diffcore import Layer, ParamTensor
from .meshgraph import MeshGraph

NEGATIVE_SLOPE = 0.01


def leaky_relu(u, slope: float = NEGATIVE_SLOPE):
    u = np.asarray(u, dtype=np.float64)
    return np.where(u >= 0, u, slope * u)


def _uniform_init(rng, n_in, n_out):
    bound = 1.0 / np.sqrt(n_in)
    return rng.uniform(-bound, bound, (n_in, n_out))


class _Affine(Layer):
    """X . W + b, shared by the MLP layer and the output head."""

    def __init__(self, n_in: int, n_out: int, rng=None, name: str = "affine"):
        super().__init__()
        self.n_in, self.n_out, self.name = n_in, n_out, name
        rng = np.random.default_rng(rng)
        self.weights = ParamTensor(f"{name}.weights", _uniform_init(rng, n_in, n_out))
        self.bias = ParamTensor(f"{name}.bias", np.zeros(n_out))

    @property
    def params(self):
        return [self.weights, self.bias]

    def _check(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"{self.name}: expected (*, {self.n_in}) input, got {x.shape}")

    def _forward(self, x):
        self._check(x)
        return x @ self.weights.values + self.bias.values, x

    def _backward(self, x, upstream):
        self.weights.grad += x.T @ upstream
        self.bias.grad += upstream.sum(axis=0)
        return upstream @ self.weights.values.T


class MlpLayer(_Affine):
    pass


class LinearHead(_Affine):
    """Final projection to (dv_x, dv_y, dH); never followed by an activation."""

    def __init__(self, n_in: int, n_out: int = 3, rng=None, name: str = "head"):
        super().__init__(n_in, n_out, rng=rng, name=name)


class GcnLayer(_Affine):
    """Pre-activation GCN update: propagate(norm_adj, X) . W + b.

    The graph is looked up through ``graph`` at call time so one set of weights
    can be applied to meshes of different resolution.
    """

    def __init__(self, n_in: int, n_out: int, graph: MeshGraph | None = None, rng=None, name: str = "gcn"):
        super().__init__(n_in, n_out, rng=rng, name=name)
        self.graph = graph

    def _forward(self, x):
        self._check(x)
        if self.graph is None:
            raise RuntimeError(f"{self.name}: no graph bound")
        op = self.graph.operator
        if x.shape[0] != op.shape[0]:
            raise ValueError(f"{self.name}: {x.shape[0]} rows for a {op.shape[0]}-node graph")
        sx = op @ x
        return sx @ self.weights.values + self.bias.values, (sx, op)

    def _backward(self, cache, upstream):
        sx, op = cache
        self.weights.grad += sx.T @ upstream
        self.bias.grad += upstream.sum(axis=0)
        # the operator is symmetric, so its transpose-product is a plain product
        return op @ (upstream @ self.weights.values.T)


class LeakyReLU(Layer):
    def __init__(self, slope: float = NEGATIVE_SLOPE, name: str = "leaky_relu"):
        super().__init__()
        self.slope, self.name = slope, name

    def _forward(self, x):
        mask = x >= 0
        return np.where(mask, x, self.slope * x), mask

    def _backward(self, mask, upstream):
        return np.where(mask, upstream, self.slope * upstream)
