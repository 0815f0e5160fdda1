"""Butterworth magnitude responses and SNR constants for a range of orders.

    python3 scripts/frequency_response.py --orders 2,4,6 --out response.csv
"""

import argparse

import numpy as np

from ctsmooth.analysis import snr
from ctsmooth.cli import write_csv
from ctsmooth.model import butterworth, transfer_magnitude


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--orders", default="4,6")
    p.add_argument("--fc", type=float, default=1.0)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--out", default="-")
    args = p.parse_args()

    orders = [int(v) for v in args.orders.split(",")]
    f = args.fc * np.geomspace(0.01, 100, args.points)
    columns = [f / args.fc]
    for order in orders:
        system = butterworth(order, args.fc)
        columns.append(20 * np.log10(transfer_magnitude(system, f)))
        rep = snr(system, fc=args.fc)
        print(f"# order {order}: E[Y^2] = {rep.ey2:.6g} = fc * {rep.snr_constant:.4f} (sigma_u = 1)")
    header = ["f_over_fc"] + [f"gain_db_order_{o}" for o in orders]
    write_csv(args.out, header, np.column_stack(columns), {"fc_hz": args.fc})


if __name__ == "__main__":
    main()
