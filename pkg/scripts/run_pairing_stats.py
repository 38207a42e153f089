"""Pairing diagnostics: error scaling with the quantizer pitch and stage symmetry.

    python3 scripts/run_pairing_stats.py --K 4 --draws 500
"""

import argparse

from relaydof.channels import GatingWindow
from relaydof.metrics import af_df_crossover, dof_formula_af, dof_formula_df
from relaydof.pairing import distribution_symmetry_check, median_delta_tot


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, default=4)
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.1, 0.05, 0.025])
    ap.add_argument("--draws", type=int, default=500)
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    prev = None
    for d in args.deltas:
        med = median_delta_tot(args.K, d, args.draws, args.seed, GatingWindow(0.05, 3.0))
        ratio = "" if prev is None else f"  ratio {med / prev:.3f}"
        print(f"K={args.K} delta={d:g}: median |Delta_tot| {med:.4f}{ratio}")
        prev = med
    for m in (1, 2):
        r = distribution_symmetry_check(args.samples, m, args.seed, K=2)
        print(f"K=2 m={m}: KS p {r['ks_pvalue']:.3f}, min entry p "
              f"{min(r['entry_pvalues']):.3f}, norm error {r['max_norm_error']:.1e}")

    print("\nK  L   AF     DF")
    for K, L in ((3, 3), (3, 6), (4, 12), (7, 10), (7, 15), (7, 30)):
        print(f"{K}  {L:<3} {str(dof_formula_af(K, L)):<6} {dof_formula_df(K, L)}")
    for K in (5, 6, 7, 8):
        print(f"K={K}: DF beats AF for L in {af_df_crossover(K)}")


if __name__ == "__main__":
    main()
