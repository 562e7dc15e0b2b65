"""Command line entry point: ``kangcn <subcommand> --config run.json --out DIR``.

Every run writes its resolved config to ``DIR/config.json``; that snapshot
reproduces the run. Exit codes: 0 ok, 2 config error, 3 numeric failure,
4 I/O failure. Failures print one JSON line to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import typing
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from . import evalbench, scenario
from .emulator import EmulatorModel, EmulatorSpec, build, parameter_count, rollout, write_trajectory
from .gradsuite import run_gradchecks
from .meshgraph import build_rect_mesh
from .scenario import FieldConstants, ScenarioConfig, build_dataset, load_dataset, mesh_id, nominal_bounds
from .training import LossConfig, ScheduleSpec, train, write_history

log = logging.getLogger("kangcn")

OUTPUT_ROOT_ENV = "KANGCN_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _from_dict(cls, obj, where: str = "config"):
    """Build dataclass ``cls`` from ``obj`` rejecting unknown keys, recursing into
    dataclass-typed fields."""
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(obj) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in obj.items():
        hint = hints.get(key)
        if dataclasses.is_dataclass(hint):
            value = _from_dict(hint, value, f"{where}.{key}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _to_dict(cfg) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


@dataclass(frozen=True)
class MeshGenConfig:
    length_m: float = 100_000.0
    width_m: float = 60_000.0
    spacings_m: tuple = (2000.0, 5000.0, 10000.0)


@dataclass(frozen=True)
class SimulateConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    write_samples: bool = True


@dataclass(frozen=True)
class TrainConfig:
    dataset: str = "dataset/manifest.json"
    model: EmulatorSpec = field(default_factory=EmulatorSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    epochs: int = 500
    seed: int = 0


@dataclass(frozen=True)
class EvalConfig:
    checkpoint: str = "train/final"
    dataset: str = "dataset/manifest.json"
    modes: tuple = ("teacher", "rollout")
    split: str = "test"


@dataclass(frozen=True)
class RolloutConfig:
    checkpoint: str = "train/final"
    dataset: str = "dataset/manifest.json"
    melt_rate: float = 10.0
    spacing_m: float = 10000.0
    n_steps: int = 239


@dataclass(frozen=True)
class BenchConfig:
    spacing_m: float = 10000.0
    melt_rates: tuple = tuple(float(m) for m in range(0, 71, 2))
    n_steps: int = 239
    front_ends: tuple = ("gcn", "kan", "mlp")
    depths: tuple = (2, 3, 4, 5)
    hidden_width: int = 128
    kan_grid: int = 8
    repeats: int = 5
    seed: int = 0
    constants: FieldConstants = field(default_factory=FieldConstants)


@dataclass(frozen=True)
class GradcheckConfig:
    seeds: tuple = (0, 1, 2)
    width: int = 16
    mesh_side: int = 4
    epsilon: float = 1e-5
    tolerance: float = 1e-4


CONFIGS = {
    "mesh-gen": MeshGenConfig,
    "simulate": SimulateConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "rollout": RolloutConfig,
    "bench": BenchConfig,
    "gradcheck": GradcheckConfig,
}


def _apply_seed(cfg, seed):
    if seed is None:
        return cfg
    if isinstance(cfg, TrainConfig):
        return dataclasses.replace(cfg, seed=seed, model=dataclasses.replace(cfg.model, seed=seed))
    if any(f.name == "seed" for f in dataclasses.fields(cfg)):
        return dataclasses.replace(cfg, seed=seed)
    return cfg


PATH_FIELDS = ("dataset", "checkpoint")


def _resolve_paths(cfg, base: Path):
    """Make file references absolute so the snapshot works from any directory."""
    updates = {}
    for f in dataclasses.fields(cfg):
        if f.name in PATH_FIELDS:
            p = Path(getattr(cfg, f.name))
            updates[f.name] = str(p if p.is_absolute() else (base / p).resolve())
    return dataclasses.replace(cfg, **updates)


def cmd_mesh_gen(cfg: MeshGenConfig, out: Path) -> list[Path]:
    paths = []
    for s in cfg.spacings_m:
        mesh = build_rect_mesh(cfg.length_m, cfg.width_m, s)
        path = out / f"{mesh_id(s)}.json"
        mesh.save(path)
        log.info("%s: %d nodes, %d edges", path.name, mesh.num_nodes, len(mesh.edges))
        paths.append(path)
    return paths


def cmd_simulate(cfg: SimulateConfig, out: Path) -> Path:
    dataset = build_dataset(cfg.scenario)
    path = scenario.write_dataset(dataset, out, write_samples=cfg.write_samples)
    log.info("dataset sizes train/val/test = %s", dataset.sizes)
    return path


def cmd_train(cfg: TrainConfig, out: Path) -> Path:
    dataset = load_dataset(cfg.dataset)
    first_graph = next(iter(dataset.graphs.values()))
    model = build(cfg.model, first_graph)
    result = train(model, dataset, cfg.epochs, cfg.loss, cfg.schedule, seed=cfg.seed)
    write_history(out / "history.csv", result.history)
    model.save(out / "final", {"epoch": cfg.epochs})
    model.load_values(result.best_params)
    model.save(out / "best", {"epoch": result.best_epoch})
    return out / "final.json"


def cmd_eval(cfg: EvalConfig, out: Path) -> list[Path]:
    dataset = load_dataset(cfg.dataset)
    model = EmulatorModel.load(cfg.checkpoint)
    split = {"train": dataset.train, "val": dataset.val, "test": dataset.test}.get(cfg.split)
    if split is None:
        raise ConfigError(f"config.split: unknown split {cfg.split!r}")
    reports = []
    for gid in dataset.graphs:
        sub = scenario.Split([s for s in split.scenarios if s.graph_id == gid])
        if len(sub) == 0:
            continue
        for mode in cfg.modes:
            reports.append(evalbench.evaluate(model, sub, dataset.graphs, dataset.norm, mode))
    h, v = evalbench.persistence_rmse(split, dataset.norm)
    log.info("persistence baseline rmse_H=%.6g rmse_V=%.6g", h, v)
    return evalbench.emit_report(reports, out)


def cmd_rollout(cfg: RolloutConfig, out: Path) -> Path:
    dataset = load_dataset(cfg.dataset)
    gid = mesh_id(cfg.spacing_m)
    if gid not in dataset.graphs:
        raise ConfigError(f"config.spacing_m: dataset has no mesh {gid}")
    graph = dataset.graphs[gid]
    model = EmulatorModel.load(cfg.checkpoint, graph)
    model.set_inference(True)
    sc = scenario.ScenarioData(gid, graph, cfg.melt_rate, 2, dataset.norm, dataset.config.constants)
    states = scenario.normalize(sc.truth.states[0], dataset.norm, scenario.TARGETS)
    traj = rollout(model, states, sc.forcing, cfg.n_steps)
    path = out / f"trajectory_{gid}_melt{cfg.melt_rate:g}.jsonl"
    write_trajectory(path, traj, dataset.norm)
    return path


@contextmanager
def _exclusive(lock_path: Path):
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise OSError(f"bench already running in {lock_path.parent} (lock {lock_path.name})") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


def cmd_bench(cfg: BenchConfig, out: Path) -> Path:
    mesh = build_rect_mesh(cfg.constants.length_m, cfg.constants.width_m, cfg.spacing_m)
    n_states = cfg.n_steps + 1
    norm = nominal_bounds(ScenarioConfig(melt_rates=tuple(sorted(cfg.melt_rates)), n_states=n_states,
                                         spacings_m=(cfg.spacing_m,), val_melt_rates=(), test_melt_rates=(),
                                         constants=cfg.constants))
    rows = []
    with _exclusive(out / "bench.lock"):
        for depth in cfg.depths:
            for fe in cfg.front_ends:
                spec = EmulatorSpec(fe, depth, cfg.hidden_width, cfg.kan_grid, cfg.seed)
                model = build(spec, mesh)
                res = evalbench.sweep_bench(model, mesh, cfg.melt_rates, cfg.n_steps, norm, cfg.constants, cfg.repeats)
                rows.append((spec.label, mesh_id(cfg.spacing_m), parameter_count(model), res.median_seconds, res.timings))
                log.info("%s: %d params, median %.4fs", spec.label, rows[-1][2], res.median_seconds)
    path = out / "bench.csv"
    with open(path, "w") as fh:
        fh.write("architecture,mesh,parameter_count,n_melt_rates,n_steps,median_seconds,timings\n")
        for label, mesh_label, count, median, timings in rows:
            fh.write(f"{label},{mesh_label},{count},{len(cfg.melt_rates)},{cfg.n_steps},{median:.17g},"
                     f"{' '.join(format(t, '.17g') for t in timings)}\n")
    return path


def cmd_gradcheck(cfg: GradcheckConfig, out: Path) -> Path:
    reports = run_gradchecks(cfg.seeds, cfg.width, cfg.epsilon, cfg.tolerance, cfg.mesh_side)
    path = out / "gradcheck.txt"
    path.write_text("".join(r.line() + "\n" for r in reports))
    for r in reports:
        log.info(r.line())
    failed = [r.layer for r in reports if not r.passed]
    if failed:
        raise FloatingPointError(f"gradcheck failed for {failed}")
    return path


COMMANDS = {
    "mesh-gen": cmd_mesh_gen,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "rollout": cmd_rollout,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kangcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config (defaults used when omitted)")
        p.add_argument("--out", type=Path, help=f"output directory (default ${OUTPUT_ROOT_ENV}/{name})")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _fail(code: int, kind: str, exc: BaseException) -> int:
    print(json.dumps({"error": kind, "exit_code": code, "message": str(exc)}), file=sys.stderr)
    return code


def load_config(command: str, path: Path | None):
    cls = CONFIGS[command]
    if path is None:
        return cls()
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return _from_dict(cls, obj)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(name)s: %(message)s")
    try:
        cfg = _apply_seed(load_config(args.command, args.config), args.seed)
        cfg = _resolve_paths(cfg, args.config.parent if args.config else Path.cwd())
        out = args.out or Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / args.command
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(_to_dict(cfg), indent=2, sort_keys=True))
        result = COMMANDS[args.command](cfg, out)
    except (ConfigError, ValueError) as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except FloatingPointError as exc:
        return _fail(EXIT_NUMERIC, "numeric", exc)
    except OSError as exc:
        return _fail(EXIT_IO, "io", exc)
    if args.verbose:
        print(result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
