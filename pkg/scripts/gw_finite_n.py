"""How fast (1/n) log P(Y_n > 0) approaches log m for a subcritical Galton-Watson law.

The gap is log(c)/n + o(1/n); the last column estimates log c.
"""
import argparse
import math
from fractions import Fraction

from brwld.estimators import gw_survival


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--offspring", default="0:3/5 2:2/5")
    p.add_argument("--grid", default="25,50,100,200,320,400,800,1600")
    args = p.parse_args()
    probs = {int(c): Fraction(q) for c, q in (t.split(":") for t in args.offspring.split())}
    m = float(sum(c * q for c, q in probs.items()))
    print("n,rate_estimate,log_m,relative_gap,n_times_gap")
    for n in (int(v) for v in args.grid.split(",")):
        s = float(gw_survival(probs, n))
        est = math.log(s) / n
        gap = est - math.log(m)
        print(f"{n},{est:.8f},{math.log(m):.8f},{abs(gap / math.log(m)):.5f},{n * gap:.5f}")


if __name__ == "__main__":
    main()
