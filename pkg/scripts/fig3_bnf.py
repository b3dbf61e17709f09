"""Target-language AP as training languages are added to the bottleneck network, plus the Table 4 metrics."""

import argparse
import json
import logging

from zrsub.trends import Fig3Setup, run_fig3_table4, table4_agreement


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", default="1")
    p.add_argument("--epochs", type=int, help="override the BNF training epochs")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    setup = Fig3Setup()
    if args.epochs:
        from dataclasses import replace

        setup = replace(setup, bnf=replace(setup.bnf, train=replace(setup.bnf.train, epochs=args.epochs)))
    for seed in (int(s) for s in args.seeds.split(",")):
        fig3, t4 = run_fig3_table4(seed, setup)
        print(f"seed {seed}")
        print("  fig3 AP       ", json.dumps(fig3["ap"]))
        print("  per set       ", json.dumps(fig3["per_language_set"]))
        print("  table4 AP     ", json.dumps(t4["ap"]))
        print("  table4 ABX    ", json.dumps(t4["abx_cross"]))
        print("  rank agreement", table4_agreement(t4).passed)


if __name__ == "__main__":
    main()
