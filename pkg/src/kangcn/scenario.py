"""Synthetic ground truth standing in for transient ice-sheet simulations.

Closed-form thickness and velocity fields driven by a basal melt rate, the
[-1, 1] feature normalization, and the melt-rate stratified train/val/test split.

Feature columns (inputs):  melt_rate, time, smb, v_x, v_y, H   (state at t-1)
Target columns (outputs):  v_x, v_y, H                          (state at t)
Targets share normalization bounds with the matching input columns, so
``targets - features[:, 3:6]`` is the normalized one-step delta.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .meshgraph import MeshGraph, build_rect_mesh

FEATURES = ("melt_rate", "time", "smb", "v_x", "v_y", "H")
TARGETS = ("v_x", "v_y", "H")
STATE_COLS = slice(3, 6)
PAD = 0.05


@dataclass(frozen=True)
class FieldConstants:
    H0: float = 1500.0  # m
    V0: float = 4000.0  # m/a
    A: float = 50.0  # m
    S0: float = 0.5  # m/a
    beta: float = 0.02  # a/m
    gamma: float = 0.01  # a/m
    length_m: float = 100_000.0
    width_m: float = 60_000.0


def _default_melt_rates():
    return tuple(float(m) for m in range(0, 71, 2))


@dataclass(frozen=True)
class ScenarioConfig:
    """``n_states`` frames per scenario, hence ``n_states - 1`` transitions."""

    melt_rates: tuple = field(default_factory=_default_melt_rates)
    n_states: int = 240
    spacings_m: tuple = (2000.0, 5000.0, 10000.0)
    val_melt_rates: tuple = (0.0, 20.0, 40.0, 60.0)
    test_melt_rates: tuple = (10.0, 30.0, 50.0, 70.0)
    constants: FieldConstants = field(default_factory=FieldConstants)

    def __post_init__(self):
        rates = [float(m) for m in self.melt_rates]
        if len(set(rates)) != len(rates) or rates != sorted(rates):
            raise ValueError("melt_rates must be unique and sorted")
        if any(m < 0 for m in rates):
            raise ValueError("melt rates must be nonnegative")
        if self.n_states < 3:
            raise ValueError("n_states must allow at least two transitions")
        overlap = set(map(float, self.val_melt_rates)) & set(map(float, self.test_melt_rates))
        if overlap:
            raise ValueError(f"melt rates {sorted(overlap)} assigned to both val and test")
        missing = (set(map(float, self.val_melt_rates)) | set(map(float, self.test_melt_rates))) - set(rates)
        if missing:
            raise ValueError(f"split melt rates {sorted(missing)} not in melt_rates")
        object.__setattr__(self, "melt_rates", tuple(rates))
        object.__setattr__(self, "spacings_m", tuple(float(s) for s in self.spacings_m))
        object.__setattr__(self, "val_melt_rates", tuple(float(m) for m in self.val_melt_rates))
        object.__setattr__(self, "test_melt_rates", tuple(float(m) for m in self.test_melt_rates))

    @property
    def n_transitions(self) -> int:
        return self.n_states - 1

    def split_of(self, melt_rate: float) -> str:
        if melt_rate in self.val_melt_rates:
            return "val"
        if melt_rate in self.test_melt_rates:
            return "test"
        return "train"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ScenarioConfig":
        obj = dict(obj)
        if "constants" in obj:
            obj["constants"] = FieldConstants(**obj["constants"])
        for key in ("melt_rates", "spacings_m", "val_melt_rates", "test_melt_rates"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)


def desk_config() -> ScenarioConfig:
    """Laptop-sized config: one 10 km mesh, 24 states, melt rates every 5 m/a.

    The 5 m/a step keeps eight training rates outside the default validation
    and test sets.
    """
    return ScenarioConfig(melt_rates=tuple(float(m) for m in range(0, 71, 5)), n_states=24, spacings_m=(10000.0,))


def mesh_id(spacing_m: float) -> str:
    return f"mesh{int(round(spacing_m))}"


@dataclass(frozen=True)
class NodeFieldFrame:
    """Physical per-node state at one step, with the forcings that drive it."""

    melt_rate: float
    smb: np.ndarray
    time_index: int
    v_x: np.ndarray
    v_y: np.ndarray
    H: np.ndarray

    def state(self) -> np.ndarray:
        return np.column_stack([self.v_x, self.v_y, self.H])


@dataclass(frozen=True)
class Trajectory:
    """Physical states, shape (n_steps + 1, N, 3) ordered (v_x, v_y, H)."""

    melt_rate: float
    smb: np.ndarray
    states: np.ndarray

    def frames(self) -> list[NodeFieldFrame]:
        return [
            NodeFieldFrame(self.melt_rate, self.smb, t, s[:, 0], s[:, 1], s[:, 2])
            for t, s in enumerate(self.states)
        ]


def field_values(x, y, tau, melt_rate, c: FieldConstants = FieldConstants()):
    """(v_x, v_y, H, smb) at positions (x, y) and normalized time tau in [0, 1]."""
    L, W = c.length_m, c.width_m
    H = c.H0 * (1.0 - x / (2.0 * L)) * np.exp(-c.beta * melt_rate * tau) + c.A * np.sin(
        2.0 * np.pi * x / L
    ) * np.cos(2.0 * np.pi * y / W) * tau
    vx = c.V0 * (x / L) ** 2 * (1.0 + c.gamma * melt_rate * tau)
    vy = 0.1 * c.V0 * np.sin(np.pi * y / W) * tau
    smb = c.S0 * (1.0 - y / W)
    return vx, vy, H, smb


def generate_truth(mesh: MeshGraph, melt_rate: float, n_steps: int, constants: FieldConstants = FieldConstants()) -> Trajectory:
    """Closed-form trajectory of ``n_steps`` transitions (``n_steps + 1`` frames)."""
    if melt_rate < 0:
        raise ValueError("melt rate must be nonnegative")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x, y = mesh.coords[:, 0], mesh.coords[:, 1]
    tau = (np.arange(n_steps + 1) / n_steps)[:, None]
    vx, vy, H, smb = field_values(x[None, :], y[None, :], tau, float(melt_rate), constants)
    vy = np.broadcast_to(vy, H.shape)
    states = np.stack([vx, vy, H], axis=-1)
    return Trajectory(float(melt_rate), np.asarray(smb[0], dtype=np.float64), states)


@dataclass(frozen=True)
class NormSpec:
    """Nominal (lo, hi) per feature name, mapped affinely onto [-1, 1]."""

    bounds: dict

    def __post_init__(self):
        for name, (lo, hi) in self.bounds.items():
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ValueError(f"bad bounds for {name}: {(lo, hi)}")

    def arrays(self, names: Sequence[str]):
        lo = np.array([self.bounds[n][0] for n in names], dtype=np.float64)
        hi = np.array([self.bounds[n][1] for n in names], dtype=np.float64)
        return lo, hi

    def to_dict(self) -> dict:
        return {k: [float(v[0]), float(v[1])] for k, v in self.bounds.items()}

    @classmethod
    def from_dict(cls, obj: dict) -> "NormSpec":
        return cls({k: (float(v[0]), float(v[1])) for k, v in obj.items()})


def normalize(x, spec: NormSpec, names: Sequence[str] = FEATURES) -> np.ndarray:
    lo, hi = spec.arrays(names)
    return 2.0 * (np.asarray(x, dtype=np.float64) - lo) / (hi - lo) - 1.0


def denormalize(x, spec: NormSpec, names: Sequence[str] = FEATURES) -> np.ndarray:
    lo, hi = spec.arrays(names)
    return (np.asarray(x, dtype=np.float64) + 1.0) * 0.5 * (hi - lo) + lo


def _pad(lo: float, hi: float) -> tuple[float, float]:
    lo, hi = lo - PAD * abs(lo), hi + PAD * abs(hi)
    if hi <= lo:
        lo, hi = lo - 1.0, hi + 1.0
    return lo, hi


def nominal_bounds(config: ScenarioConfig) -> NormSpec:
    """Analytic bounds of each field over all melt rates, positions and times,
    widened by 5% of their magnitude."""
    c = config.constants
    m_max = max(config.melt_rates)
    m_min = min(config.melt_rates)
    h_lo = 0.5 * c.H0 * math.exp(-c.beta * m_max) - c.A
    return NormSpec(
        {
            "melt_rate": _pad(m_min, m_max),
            "time": _pad(0.0, float(config.n_transitions)),
            "smb": _pad(0.0, c.S0),
            "v_x": _pad(0.0, c.V0 * (1.0 + c.gamma * m_max)),
            "v_y": _pad(0.0, 0.1 * c.V0),
            "H": _pad(h_lo, c.H0 + c.A),
        }
    )


@dataclass(frozen=True)
class Forcing:
    """Normalized static forcings of one scenario; assembles model inputs."""

    melt_n: float
    smb_n: np.ndarray
    norm: NormSpec

    @classmethod
    def from_physical(cls, melt_rate: float, smb, norm: NormSpec) -> "Forcing":
        melt_n = float(normalize([melt_rate], norm, ("melt_rate",))[0])
        smb_n = normalize(np.asarray(smb)[:, None], norm, ("smb",))[:, 0]
        return cls(melt_n, smb_n, norm)

    def time_n(self, t) -> float:
        return float(normalize([float(t)], self.norm, ("time",))[0])

    def features(self, t: int, state_n: np.ndarray) -> np.ndarray:
        """Model input for predicting step ``t + 1`` from normalized state at ``t``."""
        n = state_n.shape[0]
        out = np.empty((n, 6))
        out[:, 0] = self.melt_n
        out[:, 1] = self.time_n(t)
        out[:, 2] = self.smb_n
        out[:, STATE_COLS] = state_n
        return out


@dataclass(frozen=True)
class TransitionSample:
    graph_id: str
    melt_rate: float
    t: int
    features: np.ndarray
    targets: np.ndarray

    @property
    def deltas(self) -> np.ndarray:
        return self.targets - self.features[:, STATE_COLS]


class ScenarioData:
    """One (mesh, melt rate) trajectory in normalized space. States are produced
    on first access so a full-size dataset can be counted without materializing."""

    def __init__(self, graph_id: str, mesh: MeshGraph, melt_rate: float, n_states: int, norm: NormSpec,
                 constants: FieldConstants = FieldConstants(), states_n: np.ndarray | None = None):
        self.graph_id = graph_id
        self.mesh = mesh
        self.melt_rate = float(melt_rate)
        self.n_states = n_states
        self.norm = norm
        self.constants = constants
        if states_n is not None:
            self.__dict__["states"] = states_n

    @cached_property
    def truth(self) -> Trajectory:
        return generate_truth(self.mesh, self.melt_rate, self.n_states - 1, self.constants)

    @cached_property
    def states(self) -> np.ndarray:
        return normalize(self.truth.states, self.norm, TARGETS)

    @cached_property
    def forcing(self) -> Forcing:
        x, y = self.mesh.coords[:, 0], self.mesh.coords[:, 1]
        smb = field_values(x, y, 0.0, self.melt_rate, self.constants)[3]
        return Forcing.from_physical(self.melt_rate, smb, self.norm)

    @property
    def n_transitions(self) -> int:
        return self.n_states - 1

    def sample(self, t: int) -> TransitionSample:
        if not 1 <= t < self.n_states:
            raise IndexError(t)
        states = self.states
        return TransitionSample(
            self.graph_id, self.melt_rate, t, self.forcing.features(t - 1, states[t - 1]), states[t]
        )

    def samples(self) -> Iterator[TransitionSample]:
        for t in range(1, self.n_states):
            yield self.sample(t)

    def release(self) -> None:
        for key in ("truth", "states"):
            self.__dict__.pop(key, None)


class Split:
    def __init__(self, scenarios: Sequence[ScenarioData]):
        self.scenarios = list(scenarios)

    def __len__(self) -> int:
        return sum(s.n_transitions for s in self.scenarios)

    def index(self) -> list[tuple[int, int]]:
        return [(i, t) for i, s in enumerate(self.scenarios) for t in range(1, s.n_states)]

    def sample(self, key: tuple[int, int]) -> TransitionSample:
        i, t = key
        return self.scenarios[i].sample(t)

    def __iter__(self) -> Iterator[TransitionSample]:
        for s in self.scenarios:
            yield from s.samples()

    @property
    def melt_rates(self) -> set:
        return {s.melt_rate for s in self.scenarios}


@dataclass
class Dataset:
    config: ScenarioConfig
    norm: NormSpec
    graphs: dict
    train: Split
    val: Split
    test: Split

    def __len__(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)

    def scenarios(self) -> list[ScenarioData]:
        return self.train.scenarios + self.val.scenarios + self.test.scenarios


def build_dataset(config: ScenarioConfig = ScenarioConfig(), norm: NormSpec | None = None) -> Dataset:
    norm = norm or nominal_bounds(config)
    c = config.constants
    graphs = {mesh_id(s): build_rect_mesh(c.length_m, c.width_m, s) for s in config.spacings_m}
    splits = {"train": [], "val": [], "test": []}
    for gid, mesh in graphs.items():
        for m in config.melt_rates:
            splits[config.split_of(m)].append(ScenarioData(gid, mesh, m, config.n_states, norm, c))
    return Dataset(config, norm, graphs, Split(splits["train"]), Split(splits["val"]), Split(splits["test"]))


def _scenario_file(sc: ScenarioData) -> str:
    return f"{sc.graph_id}_melt{sc.melt_rate:g}.jsonl"


def write_dataset(dataset: Dataset, out_dir, write_samples: bool = True) -> Path:
    """Write ``manifest.json``, one mesh JSON per resolution and, optionally, one
    JSON-lines sample file per (mesh, melt rate)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meshes = []
    for gid, mesh in dataset.graphs.items():
        fname = f"{gid}.json"
        mesh.save(out / fname)
        meshes.append({"id": gid, "spacing_m": mesh.resolution_m, "num_nodes": mesh.num_nodes, "file": fname})
    files = []
    for sc in dataset.scenarios():
        entry = {"graph_id": sc.graph_id, "melt_rate": sc.melt_rate, "split": dataset.config.split_of(sc.melt_rate),
                 "n_samples": sc.n_transitions}
        if write_samples:
            entry["file"] = _scenario_file(sc)
            with open(out / entry["file"], "w") as fh:
                for s in sc.samples():
                    fh.write(json.dumps({"t": s.t, "features": s.features.tolist(), "targets": s.targets.tolist()},
                                        separators=(",", ":")))
                    fh.write("\n")
            sc.release()
        files.append(entry)
    train, val, test = dataset.sizes
    manifest = {
        "meshes": meshes,
        "melt_rates": list(dataset.config.melt_rates),
        "T_steps": dataset.config.n_transitions,
        "n_states": dataset.config.n_states,
        "norm_spec": dataset.norm.to_dict(),
        "files": files,
        "config": dataset.config.to_dict(),
        "counts": {"total": train + val + test, "train": train, "val": val, "test": test},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_dataset(manifest_path) -> Dataset:
    """Read a dataset written by ``write_dataset``. Scenario entries without a
    sample file are regenerated from the stored config."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    config = ScenarioConfig.from_dict(manifest["config"])
    norm = NormSpec.from_dict(manifest["norm_spec"])
    graphs = {m["id"]: MeshGraph.load(root / m["file"]) for m in manifest["meshes"]}
    splits = {"train": [], "val": [], "test": []}
    for entry in manifest["files"]:
        states = None
        if "file" in entry:
            lines = (root / entry["file"]).read_text().splitlines()
            rows = [json.loads(line) for line in lines]
            rows.sort(key=lambda r: r["t"])
            first = np.asarray(rows[0]["features"])[:, STATE_COLS]
            states = np.stack([first] + [np.asarray(r["targets"]) for r in rows])
        sc = ScenarioData(entry["graph_id"], graphs[entry["graph_id"]], entry["melt_rate"], config.n_states, norm,
                          config.constants, states_n=states)
        splits[entry["split"]].append(sc)
    return Dataset(config, norm, graphs, Split(splits["train"]), Split(splits["val"]), Split(splits["test"]))
