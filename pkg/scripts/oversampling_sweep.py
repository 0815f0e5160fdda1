"""Normalized smoothing error against oversampling, one column per input SNR.

    python3 scripts/oversampling_sweep.py --order 4 --snr-db 0,10,20,30 --trials 50 --out sweep.csv

Also prints the least-squares slope (dB per doubling of fs/fc) per SNR.
"""

import argparse
import time

import numpy as np

from ctsmooth.analysis import output_error_curve
from ctsmooth.cli import write_csv
from ctsmooth.model import butterworth


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--order", type=int, default=4)
    p.add_argument("--oversampling", default="2,4,8,16,32,64")
    p.add_argument("--snr-db", default="0,10,20,30")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--horizon", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="-")
    args = p.parse_args()

    ratios = [float(v) for v in args.oversampling.split(",")]
    snrs = [float(v) for v in args.snr_db.split(",")]
    start = time.perf_counter()
    curve = output_error_curve(
        butterworth(args.order, 1.0), 1.0, ratios, snrs, args.trials, args.horizon, seed=args.seed, workers=args.workers
    )
    for j, s in enumerate(snrs):
        # the slope is only meaningful in the oversampled regime
        hi = np.asarray(ratios) >= 8
        if hi.sum() >= 2:
            slope = np.polyfit(np.log2(np.asarray(ratios)[hi]), curve.snr_out_inv_db[hi, j], 1)[0]
            print(f"# SNR {s:g} dB: {slope:.3f} dB per doubling for fs/fc >= 8")
    print(f"# {time.perf_counter() - start:.1f} s")
    meta = {"order": args.order, "trials": args.trials, "horizon": args.horizon, "seed": args.seed}
    write_csv(args.out, ["fs_over_fc", "snr_db", "snr_out_inv_db"], list(curve.rows()), meta)


if __name__ == "__main__":
    main()
