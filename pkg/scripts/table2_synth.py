"""Same-different AP of MFCC, MFCC+VTLN and the correspondence autoencoder on synthetic speakers."""

import argparse
import logging

import numpy as np

from zrsub.trends import Table2Setup, run_table2


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--snr", default=None, help="low,high SNR range in dB")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    setup = Table2Setup()
    if args.snr:
        lo, hi = (float(x) for x in args.snr.split(","))
        setup = Table2Setup(snr_db=(lo, hi))
    rows = {}
    for seed in (int(s) for s in args.seeds.split(",")):
        res = run_table2(seed, setup)
        for name, ap in res["ap"].items():
            rows.setdefault(name, []).append(ap)
    print(f"{'features':<24} " + " ".join(f"{'seed':>7}" for _ in next(iter(rows.values()))) + "     mean")
    for name, aps in rows.items():
        print(f"{name:<24} " + " ".join(f"{a:7.3f}" for a in aps) + f"  {np.mean(aps):7.3f}")


if __name__ == "__main__":
    main()
