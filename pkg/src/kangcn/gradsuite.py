"""Finite-difference checks over every shipped layer type and a composed model."""

from __future__ import annotations

import numpy as np

from .diffcore import GradcheckReport, gradcheck
from .emulator import EmulatorSpec, build
from .gnnlayers import GcnLayer, LeakyReLU, LinearHead, MlpLayer
from .kanlayer import KanLayer
from .meshgraph import build_rect_mesh


def layer_cases(seed: int, width: int = 16, mesh_side: int = 4):
    """(layer, input) pairs on a (mesh_side + 1)^2-node mesh."""
    graph = build_rect_mesh(mesh_side, mesh_side, 1.0)
    n = graph.num_nodes
    rng = np.random.default_rng(seed)

    def inputs(cols):
        return rng.uniform(-1.0, 1.0, (n, cols))

    kan = KanLayer(6, width, rng=rng, name="kan")
    kan.bias.values[:] = rng.normal(0.0, 0.1, width)
    gcn = GcnLayer(width, width, graph, rng=rng, name="gcn")
    mlp = MlpLayer(6, width, rng=rng, name="mlp")
    head = LinearHead(width, 3, rng=rng, name="head")
    for layer in (gcn, mlp, head):
        layer.bias.values[:] = rng.normal(0.0, 0.1, layer.bias.size)
    model = build(EmulatorSpec("kan", 3, hidden_width=width, seed=seed), graph)
    model.name = "KAN+2GCN"
    return [
        (kan, inputs(6)),
        (gcn, inputs(width)),
        (mlp, inputs(6)),
        (LeakyReLU(), inputs(width)),
        (head, inputs(width)),
        (model, inputs(6)),
    ]


def run_gradchecks(seeds=(0, 1, 2), width: int = 16, epsilon: float = 1e-5, tolerance: float = 1e-4,
                   mesh_side: int = 4) -> list[GradcheckReport]:
    reports = []
    for seed in seeds:
        for layer, x in layer_cases(seed, width, mesh_side):
            report = gradcheck(layer, x, epsilon=epsilon, tolerance=tolerance)
            report.layer = f"{layer.name}/seed{seed}"
            reports.append(report)
    return reports
