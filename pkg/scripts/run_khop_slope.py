"""Sum-rate slope of the paired K-hop scheme (genie or queued matching).

    python3 scripts/run_khop_slope.py --K 2 4 --trials 500
    python3 scripts/run_khop_slope.py --mode queued --K 2 --delta 0.5 --horizon 100000
"""

import argparse
import time

import numpy as np

from relaydof.channels import GatingWindow
from relaydof.pairing import simulate_khop


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, nargs="+", default=[2, 4])
    ap.add_argument("--mode", choices=["genie", "queued"], default="genie")
    ap.add_argument("--delta", type=float, default=1e-3)
    ap.add_argument("--snr", type=float, nargs="+", default=[20, 30, 40, 50])
    ap.add_argument("--trials", type=int, default=500)
    ap.add_argument("--horizon", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    window = GatingWindow(0.05, 3.0)
    for K in args.K:
        t0 = time.perf_counter()
        rep = simulate_khop(K, args.delta, window, args.snr, args.trials, mode=args.mode,
                            seed=args.seed, horizon=args.horizon, workers=args.workers)
        ex = rep.extras
        print(f"K={K} mode={args.mode} delta={args.delta:g}: slope {rep.slope:.3f} "
              f"+/- {rep.slope_hw:.3f}  ({time.perf_counter() - t0:.1f}s)")
        if args.mode == "genie":
            for name in ("lower_bound", "closed_form"):
                s, hw = ex[f"{name}_slope"]
                print(f"  {name.replace('_', ' ')} slope {s:.3f} +/- {hw:.3f}")
            print(f"  median |Delta_tot| {np.median(ex['delta_tot']):.2e}, "
                  f"failures {rep.failures}")
        else:
            ratio = ex["residuals"] / ex["bounds"]
            print(f"  delivered {ex['delivered']} of {ex['injected']} injected, "
                  f"throughput {ex['throughput']:.4f}, mean delay {ex['match_delay_mean']:.0f}")
            print(f"  conserved {ex['conserved']}, max residual/bound {ratio.max():.3f}")


if __name__ == "__main__":
    main()
