"""Primal vs dual Bayes estimators on the exp-linear model.

The primal argmin lands on the MAP (0) while the dual argmin lands on the
posterior mean (minus Euler's constant). Prints one line per sample size.
"""

import argparse

from bregbayes.audit import bayes_argmin_dual, bayes_argmin_primal
from bregbayes.models import make_model
from bregbayes.solver import solve_map


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sizes", type=int, nargs="+", default=[1_000, 10_000, 100_000])
    args = ap.parse_args()

    inst = make_model("exp_linear")
    x_map = solve_map(inst).estimate[0]
    print(f"MAP {x_map:+.6f}   posterior mean {inst.true_mean[0]:+.6f}")
    print(f"{'N':>8} {'primal':>12} {'dual':>12} {'slack':>10}")
    for N in args.sizes:
        p = bayes_argmin_primal(inst, N, args.seed)
        d = bayes_argmin_dual(inst, N, args.seed)
        print(f"{N:>8} {p.estimate[0]:>+12.5f} {d.estimate[0]:>+12.5f} {max(p.slack[0], d.slack[0]):>10.2e}")


if __name__ == "__main__":
    main()
