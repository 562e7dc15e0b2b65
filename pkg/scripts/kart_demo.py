"""Fit small bivariate targets with a 2->8->1 KAN stack and report held-out RMSE.

    python3 scripts/kart_demo.py --budget 2000
"""

import argparse

import numpy as np

from kangcn.kanlayer import kart_sanity_fit

TARGETS = {
    "x+y": lambda x, y: x + y,
    "x*y": lambda x, y: x * y,
    "const": lambda x, y: 0 * x + 0.7,
    "sin(pi x) + y^2": lambda x, y: np.sin(np.pi * x) + y * y,
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--budget", type=int, default=2000, help="Adam steps before the output refit")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for name, fn in TARGETS.items():
        print(f"{name:18s} held-out rmse {kart_sanity_fit(fn, budget=args.budget, seed=args.seed):.3e}")


if __name__ == "__main__":
    main()
