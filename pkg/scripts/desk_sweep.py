"""Train every requested architecture on the desk-scale config and compare to persistence.

    python3 scripts/desk_sweep.py --epochs 200 --archs kan:3 mlp:3 gcn:3 --out runs/desk
"""

import argparse
import json
import time
from pathlib import Path

from kangcn.emulator import EmulatorSpec, build
from kangcn.evalbench import PersistenceModel, emit_report, evaluate, persistence_rmse
from kangcn.scenario import build_dataset, desk_config
from kangcn.training import ScheduleSpec, train, write_history


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--lr", type=float, default=5e-4)
    ap.add_argument("--width", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--archs", nargs="+", default=["kan:3", "mlp:3", "gcn:3"], help="front_end:total_depth")
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    args = ap.parse_args()

    ds = build_dataset(desk_config())
    graph = ds.graphs["mesh10000"]
    args.out.mkdir(parents=True, exist_ok=True)
    base_h, base_v = persistence_rmse(ds.test, ds.norm)
    hold = evaluate(PersistenceModel(), ds.test, ds.graphs, ds.norm, mode="rollout")
    print(f"persistence teacher H={base_h:.4f} V={base_v:.4f} | held-first-frame H={hold.rmse_H:.4f} V={hold.rmse_V:.4f}")
    reports, summary = [], {}
    for arch in args.archs:
        fe, depth = arch.split(":")
        spec = EmulatorSpec(fe, int(depth), args.width, seed=args.seed)
        model = build(spec, graph)
        t0 = time.perf_counter()
        res = train(model, ds, args.epochs, schedule=ScheduleSpec("cosine", args.lr), seed=args.seed)
        took = time.perf_counter() - t0
        write_history(args.out / f"history_{spec.label}.csv", res.history)
        teacher = evaluate(model, ds.test, ds.graphs, ds.norm, "teacher")
        roll = evaluate(model, ds.test, ds.graphs, ds.norm, "rollout")
        reports += [teacher, roll]
        ratio = res.history[-1]["val_loss"] / res.history[0]["val_loss"]
        summary[spec.label] = {"train_seconds": took, "val_ratio": ratio, "teacher": [teacher.rmse_H, teacher.rmse_V],
                               "rollout": [roll.rmse_H, roll.rmse_V]}
        print(f"{spec.label:10s} {took:6.1f}s val ratio {ratio:.4f} teacher H={teacher.rmse_H:.4f} "
              f"V={teacher.rmse_V:.4f} rollout H={roll.rmse_H:.4f} V={roll.rmse_V:.4f}")
    emit_report(reports, args.out)
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
