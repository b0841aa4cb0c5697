"""Decoration samples against conditioned forward runs at a small horizon.

Prints Laplace-functional comparisons for the stabilized decoration, the
decoration truncated at the forward horizon, and the exact finite-horizon
identity (D_n reweighted by the endpoint weight).
"""
import argparse
import math

import numpy as np

from brwld import decoration as deco
from brwld.reproduction import load_law, tilted_cumulants

BUMPS = [deco.BumpSpec.tent(-1, -0.5, 0), deco.BumpSpec.tent(-2, -1, 0),
         deco.BumpSpec(((-3, 0), (-2, 1), (-1, 1), (-0.5, 0)))]


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--law", default="kind=mixed_gaussian offspring=1:7/10 2:3/10")
    p.add_argument("--theta", type=float, default=1.15)
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--n-max", type=int, default=40)
    p.add_argument("--window", type=float, default=3.0)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    law = load_law(args.law)
    print(f"rate {tilted_cumulants(law, args.theta).rate:.4f} nats per generation")
    fwd, acc = deco.conditioned_extremal(law, args.theta, args.n, args.samples, args.window, args.seed)
    print(f"forward n={args.n}: acceptance {acc:.3g}, mean mass {np.mean([m.total_mass for m in fwd]):.3f}")
    for n_max in (args.n, args.n_max):
        d = deco.sample_decoration(law, args.theta, n_max, args.samples, args.window, args.seed)
        ps = [deco.laplace_compare(d.samples, fwd, b, 1000, args.seed + i).p_value for i, b in enumerate(BUMPS)]
        mass = np.mean([s.atoms.total_mass for s in d.samples])
        print(f"decoration n_max={n_max}: mean mass {mass:.3f}, p-values " + " ".join(f"{v:.4f}" for v in ps))
    ident = deco.reweighted_laplace(law, args.theta, args.n, args.window, BUMPS, 200000, args.seed)
    for b, (v, se) in zip(BUMPS, ident):
        f = np.exp(-np.array([b.pair(m) for m in fwd]))
        fse = f.std(ddof=1) / math.sqrt(f.size)
        print(f"identity: reweighted {v:.4f} +- {se:.4f}  forward {f.mean():.4f} +- {fse:.4f}  "
              f"z {(v - f.mean()) / math.hypot(se, fse):+.2f}")


if __name__ == "__main__":
    main()
