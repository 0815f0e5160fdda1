"""One realization estimated under several assumed SNRs, on a dense grid.

    python3 scripts/assumed_snr_estimates.py --assumed-snr-db=-10,10,100 --out estimates.csv

Columns: t, true y, true input average, then y_hat and u_hat per assumed SNR.
The noisy samples go to ``--samples-out``.  Prints the interior MSE of y_hat.
"""

import argparse

import numpy as np

from ctsmooth.analysis import assume_snr, with_snr
from ctsmooth.cli import write_csv
from ctsmooth.model import butterworth, simulate
from ctsmooth.smoother import MeasurementSet, query_grid, run


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--order", type=int, default=6)
    p.add_argument("--fs-over-fc", type=float, default=10.0)
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--assumed-snr-db", default="-10,10,100")
    p.add_argument("--samples", type=int, default=60)
    p.add_argument("--dense-per-sample", type=int, default=20)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="-")
    p.add_argument("--samples-out")
    args = p.parse_args()

    system = with_snr(butterworth(args.order, 1.0), args.snr_db)
    fs = args.fs_over_fc
    times = np.arange(1, args.samples + 1) / fs
    sim = simulate(system, times, seed=args.seed, dense_step=1 / (fs * args.dense_per_sample), t0=0.0)
    dense = sim.dense
    inside = dense.t >= times[0]
    grid = dense.t[inside]
    columns = [grid, dense.y[inside, 0], dense.u_avg[inside, 0]]
    header = ["t", "y", "u_avg"]
    meas = MeasurementSet(times, sim.noisy_samples)
    for a in (float(v) for v in args.assumed_snr_db.split(",")):
        est = assume_snr(system, a)
        recs = query_grid(run(est, meas), grid)
        y_hat = np.array([r.y_hat[0] for r in recs])
        columns += [y_hat, np.array([r.u_hat[0] for r in recs])]
        header += [f"y_hat_{a:g}dB", f"u_hat_{a:g}dB"]
        print(f"# assumed {a:g} dB: MSE(y_hat - y) = {np.mean((y_hat - dense.y[inside, 0]) ** 2):.4f}")
    meta = {"seed": args.seed, "order": args.order, "snr_db": args.snr_db, "fs_over_fc": fs}
    write_csv(args.out, header, np.column_stack(columns), meta)
    if args.samples_out:
        write_csv(args.samples_out, ["t", "y_tilde"], np.column_stack([times, sim.noisy_samples]), meta)


if __name__ == "__main__":
    main()
