"""Run the acceptance checks and write a JSON report.

    python scripts/run_acceptance.py --tier full --out report.json
"""
import argparse
import sys

from brwld.harness import dumps
from brwld.validate import CHECKS, run_validate


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--tier", choices=("fast", "full"), default="full")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--keys", default=",".join(CHECKS))
    p.add_argument("--out")
    args = p.parse_args()
    status, results = run_validate(args.tier, args.seed, args.keys.split(","))
    for r in results:
        print(r.line())
        if r.note and not r.passed:
            print("    " + r.note)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(dumps({"tier": args.tier, "seed": args.seed, "criteria": [r.to_dict() for r in results]},
                           indent=2) + "\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
