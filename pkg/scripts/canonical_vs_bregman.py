"""Quadrature-order convergence of the geodesic integral to the Bregman divergence."""

import argparse

import numpy as np

from bregbayes.geometry import bregman, canonical_numeric
from bregbayes.models import make_model
from bregbayes.sampler import exact_stream


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="exp_linear")
    ap.add_argument("--pairs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    inst = make_model(args.model)
    X = np.concatenate(list(exact_stream(inst, 2 * args.pairs, args.seed)))
    U, Y = X[: args.pairs], X[args.pairs :]
    ref = np.array([bregman(inst.potential, u, x).value for u, x in zip(U, Y)])
    print(f"{'order':>5} {'max rel err':>12}")
    for order in (2, 4, 8, 16, 30):
        val = np.array([canonical_numeric(inst.potential, u, x, order).value for u, x in zip(U, Y)])
        print(f"{order:>5} {np.max(np.abs(val - ref) / (1 + ref)):>12.3e}")


if __name__ == "__main__":
    main()
