"""Front end + GCN stack + linear head, residual reconstruction and rollout."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .diffcore import Layer, Sequential, count_params, load_checkpoint, read_manifest, save_checkpoint
from .gnnlayers import GcnLayer, LeakyReLU, LinearHead, MlpLayer
from .kanlayer import KanLayer, RbfGrid
from .meshgraph import MeshGraph
from .scenario import FEATURES, TARGETS, Forcing, NodeFieldFrame, NormSpec, denormalize  # noqa: F401

FRONT_ENDS = ("gcn", "mlp", "kan")
N_FEATURES = len(FEATURES)
N_TARGETS = len(TARGETS)


@dataclass(frozen=True)
class EmulatorSpec:
    """``total_depth`` counts the front end plus the GCN layers after it; the
    linear head is not counted. ``kan`` with depth 3 is "KAN+2GCN"."""

    front_end: str = "kan"
    total_depth: int = 3
    hidden_width: int = 128
    kan_grid: int = 8
    seed: int = 0
    front_activation: bool = True

    def __post_init__(self):
        if self.front_end not in FRONT_ENDS:
            raise ValueError(f"front_end must be one of {FRONT_ENDS}, got {self.front_end!r}")
        if not 2 <= self.total_depth <= 5:
            raise ValueError(f"total_depth must be in [2, 5], got {self.total_depth}")
        if self.hidden_width < 1 or self.kan_grid < 2:
            raise ValueError("hidden_width must be >= 1 and kan_grid >= 2")

    @property
    def label(self) -> str:
        k = self.total_depth - 1
        if self.front_end == "gcn":
            return f"{self.total_depth}GCN"
        return f"{self.front_end.upper()}+{'' if k == 1 else k}GCN"

    def expected_parameter_count(self) -> int:
        h = self.hidden_width
        front = N_FEATURES * h + h
        if self.front_end == "kan":
            front = N_FEATURES * self.kan_grid * h + N_FEATURES * h + h
        return front + (self.total_depth - 1) * (h * h + h) + (N_TARGETS * h + N_TARGETS)


class NonFiniteStateError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"non-finite state at rollout step {step}")
        self.step = step


class EmulatorModel(Sequential):
    name = "emulator"

    def __init__(self, spec: EmulatorSpec, layers: list[Layer], graph: MeshGraph | None):
        super().__init__(layers)
        self.spec = spec
        self.graph = None
        self.bind(graph)

    def bind(self, graph: MeshGraph | None) -> "EmulatorModel":
        self.graph = graph
        for layer in self.layers:
            if isinstance(layer, GcnLayer):
                layer.graph = graph
        return self

    def predict_delta(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != N_FEATURES:
            raise ValueError(f"expected (nodes, {N_FEATURES}) features, got {features.shape}")
        return self.forward(features)

    def parameter_values(self) -> list[np.ndarray]:
        return [p.values.copy() for p in self.params]

    def load_values(self, values) -> None:
        for p, v in zip(self.params, values, strict=True):
            p.values[...] = v

    def save(self, stem, extra: dict | None = None):
        meta = {"spec": asdict(self.spec), "label": self.spec.label,
                "kan_grid": {"grid_min": RbfGrid().grid_min, "grid_max": RbfGrid().grid_max,
                             "num_grids": self.spec.kan_grid}}
        meta.update(extra or {})
        return save_checkpoint(stem, self.params, meta)

    @classmethod
    def load(cls, stem, graph: MeshGraph | None = None) -> "EmulatorModel":
        spec = EmulatorSpec(**read_manifest(stem)["spec"])
        model = build(spec, graph)
        load_checkpoint(stem, model.params)
        return model


def build(spec: EmulatorSpec, graph: MeshGraph | None = None) -> EmulatorModel:
    rng = np.random.default_rng(spec.seed)
    h = spec.hidden_width
    layers: list[Layer] = []
    if spec.front_end == "kan":
        layers.append(KanLayer(N_FEATURES, h, RbfGrid(num_grids=spec.kan_grid), rng=rng, name="front"))
    elif spec.front_end == "mlp":
        layers.append(MlpLayer(N_FEATURES, h, rng=rng, name="front"))
    else:
        layers.append(GcnLayer(N_FEATURES, h, rng=rng, name="front"))
    if spec.front_activation:
        layers.append(LeakyReLU(name="front_act"))
    for k in range(spec.total_depth - 1):
        layers.append(GcnLayer(h, h, rng=rng, name=f"gcn{k + 1}"))
        layers.append(LeakyReLU(name=f"act{k + 1}"))
    layers.append(LinearHead(h, N_TARGETS, rng=rng, name="head"))
    return EmulatorModel(spec, layers, graph)


def parameter_count(model) -> int:
    return count_params(model.params) if model is not None else 0


def reconstruct(prev_state, deltas) -> np.ndarray:
    prev_state = np.asarray(prev_state, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    if prev_state.shape != deltas.shape:
        raise ValueError(f"shape mismatch: {prev_state.shape} vs {deltas.shape}")
    return prev_state + deltas


def rollout(model, initial_state, forcing: Forcing, n_steps: int, teacher_states=None) -> np.ndarray:
    """Apply the one-step operator ``n_steps`` times from a normalized initial state.

    Returns normalized states of shape (n_steps + 1, N, 3). With ``teacher_states``
    each step starts from the given true state instead of the previous prediction.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    state = np.asarray(initial_state, dtype=np.float64)
    out = np.empty((n_steps + 1,) + state.shape)
    out[0] = state
    for t in range(n_steps):
        prev = state if teacher_states is None else teacher_states[t]
        state = reconstruct(prev, model.predict_delta(forcing.features(t, prev)))
        if not np.all(np.isfinite(state)):
            raise NonFiniteStateError(t + 1)
        out[t + 1] = state
    return out


def to_frames(states_n, forcing: Forcing, melt_rate: float, smb) -> list[NodeFieldFrame]:
    phys = denormalize(states_n, forcing.norm, TARGETS)
    return [NodeFieldFrame(melt_rate, np.asarray(smb), t, s[:, 0], s[:, 1], s[:, 2]) for t, s in enumerate(phys)]


def write_trajectory(path, states_n, norm: NormSpec) -> None:
    """JSON-lines, one frame per line, physical units."""
    phys = denormalize(states_n, norm, TARGETS)
    with open(Path(path), "w") as fh:
        for t, s in enumerate(phys):
            fh.write(json.dumps({"t": t, "v_x": s[:, 0].tolist(), "v_y": s[:, 1].tolist(), "H": s[:, 2].tolist()},
                                separators=(",", ":")))
            fh.write("\n")
