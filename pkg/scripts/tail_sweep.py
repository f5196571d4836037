"""Exceedance frequencies of the normalised potential gap against 3 exp(-n eps^2 / 16).

Writes a long-format CSV suitable for plotting.
"""

import argparse

from bregbayes.audit import tail_audit
from bregbayes.harness import emit_plot_data


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="laplace_iid")
    ap.add_argument("--n", type=int, nargs="+", default=[100, 1000, 10_000])
    ap.add_argument("--eps", type=float, nargs="+", default=[0.2, 0.5, 1.0])
    ap.add_argument("--N", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="tail_sweep.csv")
    args = ap.parse_args()

    reports = tail_audit(args.model, args.n, args.eps, args.N, args.seed)
    print(f"{'n':>6} {'eps':>5} {'freq':>10} {'bound':>10} pass")
    for r in reports:
        print(f"{r.n:>6} {r.eps:>5} {r.estimate:>10.2e} {r.reference:>10.2e} {r.passed}")
    emit_plot_data(reports, args.out)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
