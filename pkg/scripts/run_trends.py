"""Run the synthetic trend suite over several seeds and tally the checks.

    python scripts/run_trends.py --seeds 1,2,3,4,5 --out trends.json
"""

import argparse
import json
import logging

from zrsub.trends import GROUPS, sweep


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--only", help=f"comma-separated subset of {','.join(GROUPS)}")
    p.add_argument("--out", help="write every seed's report as one JSON list")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    seeds = [int(s) for s in args.seeds.split(",")]
    res = sweep(seeds, args.only.split(",") if args.only else None)
    for rep in res["reports"]:
        print(f"\nseed {rep.seed}")
        print(rep.table())
    print(f"\npasses over {len(seeds)} seeds (need {res['need']}):")
    for name, n in sorted(res["passes"].items()):
        print(f"  {name:<28} {n}/{len(seeds)}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump([json.loads(r.to_json()) for r in res["reports"]], fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
