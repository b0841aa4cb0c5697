"""Command line entry point: ``brwld <command> [flags]``.

Every command emits one record
``{command, config, estimate, diagnostics, seed, config_digest, tool_version, timing}``
as JSON (floats to 17 significant digits) or a flat CSV.  ``timing`` holds
the only wall-clock value and stays out of the digest.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from fractions import Fraction

from . import decoration as deco
from . import estimators as est
from .harness import TOOL_VERSION, RunConfig, dumps
from .reproduction import (LawError, check_assumptions, critical_speed, legendre, load_law,
                           tilted_cumulants)
from .spine import DEFAULT_PRUNE_DELTA, DEFAULT_SUBTREE_CAP
from .tree_sim import NEG_INF, enumerate_tail, naive_tail, naive_tail_valid, run_forward

COMMANDS = ("cumulants", "check", "simulate", "tail", "ctheta", "decoration", "overshoot", "gw", "llt",
            "rate", "sweep", "validate")


def _grid(text):
    return [float(t) for t in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--law", default="binary_gauss", help="preset name, law file, or inline 'kind=... ...'")
    common.add_argument("--theta", type=float)
    common.add_argument("--n", type=int)
    common.add_argument("--y", type=float)
    common.add_argument("--a", type=str, help="absolute threshold (exact rational for lattice laws)")
    common.add_argument("--x", type=float, help="speed for the rate command")
    common.add_argument("--replicas", type=int, default=10000)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--window", type=float)
    common.add_argument("--prune-delta", type=float, default=DEFAULT_PRUNE_DELTA)
    common.add_argument("--cap", type=int, default=DEFAULT_SUBTREE_CAP)
    common.add_argument("--grid", type=_grid, help="comma separated values")
    common.add_argument("--method", choices=("naive", "spinal", "enumerate", "asymptotic"), default="spinal")
    common.add_argument("--variant", choices=("weighted", "indicator"), default="weighted")
    common.add_argument("--mode", choices=est.MODES, default="auto",
                        help="subtree handling for Gaussian laws (auto = conditional)")
    common.add_argument("--g", choices=("exp_tail", "interval"), default="exp_tail", help="llt test function")
    common.add_argument("--h", type=float, default=0.5, help="llt interval width")
    common.add_argument("--tier", choices=("fast", "full"), default="fast")
    common.add_argument("--out")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    p = argparse.ArgumentParser(prog="brwld", description="Upper deviations of the maximum of a branching random walk")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def _need(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise ValueError(f"{args.command} needs {', '.join(missing)}")


def _params(args) -> dict:
    skip = {"command", "law", "seed", "out", "format"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip and v is not None}


def _estimate(rec):
    return {"mean": rec.mean, "stderr": rec.stderr, "replicas": rec.replicas,
            "invalid_replicas": rec.invalid_replicas, "bias_bound": rec.bias_bound}


def _threshold(args, law, cum):
    """(y, a) from whichever of --y / --a was given."""
    if args.a is not None:
        a = Fraction(args.a) if law.denom is not None else float(Fraction(args.a))
        return float(a) - args.n * cum.psi_prime, a
    y = 0.0 if args.y is None else args.y
    return y, args.n * cum.psi_prime + y


# ---------------------------------------------------------------------------


def _cumulants(args, law, digest):
    thetas = args.grid or ([args.theta] if args.theta is not None else None)
    if thetas is None:
        raise ValueError("cumulants needs --theta or --grid")
    rows = []
    for t in thetas:
        c = tilted_cumulants(law, t)
        leg = legendre(law, c.psi_prime)
        rows.append({"theta": t, "psi": c.psi, "psi_prime": c.psi_prime, "sigma2": c.sigma2, "rate": c.rate,
                     "psi_star_at_psi_prime": leg.psi_star})
    cs = critical_speed(law)
    return None, {"rows": rows, "critical_speed": cs.x_star, "critical_theta": cs.theta_star,
                  "critical_note": cs.note}


def _check(args, law, digest):
    _need(args, "theta")
    r = check_assumptions(law, args.theta)
    out = {"asn": r.asn, "as1": r.as1, "as2": r.as2, "as3": r.as3, "as4": r.as4, "regime": r.regime,
           "psi0": r.psi0, "all_hold": r.all_hold()}
    if r.lattice_span is not None:
        out["lattice_span"] = list(r.lattice_span)
    return None, out


def _simulate(args, law, digest):
    _need(args, "n")
    snaps = run_forward(law, args.n, cap=args.cap, seed=args.seed)
    rows = []
    for s in snaps:
        m = None if s.m_n is NEG_INF or s.m_n is None else s.m_n
        rows.append({"generation": s.n, "population": s.population, "max": m, "capped": s.capped})
    return None, {"rows": rows}


def _tail(args, law, digest):
    _need(args, "n")
    if args.method == "enumerate":
        if args.a is None:
            raise ValueError("enumerate needs an exact --a")
        p = enumerate_tail(law, args.n, Fraction(args.a))
        return None, {"exact": p, "value": float(p)}
    if args.method == "naive":
        a = Fraction(args.a) if args.a is not None else None
        if a is None:
            _need(args, "theta")
            a = args.n * tilted_cumulants(law, args.theta).psi_prime + (args.y or 0.0)
        rec = naive_tail(law, args.n, a, args.replicas, args.seed, cap=args.cap, config_digest=digest)
        return rec, {"a": a, "valid": naive_tail_valid(rec)}
    _need(args, "theta")
    cum = tilted_cumulants(law, args.theta)
    y, a = _threshold(args, law, cum)
    if args.method == "spinal":
        rec = est.spinal_tail(law, args.theta, args.n, y, args.replicas, args.seed, prune_delta=args.prune_delta,
                              cap=args.cap, mode=args.mode, config_digest=digest)
        return rec, dict(rec.diagnostics, a=a, log_mean=rec.log_mean)
    c = est.c_theta(law, args.theta, None, args.replicas, args.variant, args.seed, prune_delta=args.prune_delta,
                    cap=args.cap, mode=args.mode)
    value = est.asymptotic_tail(cum, c.mean, args.n, y)
    return None, {"asymptotic_tail": value, "log_asymptotic_tail": est.log_asymptotic_tail(cum, c.mean, args.n, y),
                  "c_theta": c.mean, "c_theta_stderr": c.stderr, "a": a, "y": y}


def _ctheta(args, law, digest):
    _need(args, "theta")
    rec = est.c_theta(law, args.theta, args.n, args.replicas, args.variant, args.seed,
                      prune_delta=args.prune_delta, cap=args.cap, mode=args.mode, config_digest=digest)
    return rec, rec.diagnostics


def _decoration(args, law, digest):
    _need(args, "theta", "n")
    res = deco.sample_decoration(law, args.theta, args.n, args.replicas, args.window, args.seed,
                                 prune_delta=args.prune_delta, cap=args.cap)
    samples = [[[loc, m] for loc, m in s.atoms.atoms()] for s in res.samples]
    diag = {"attempts": res.attempts, "window": res.window, "n_max": res.n_max, "flags": res.flags,
            "samples": samples, "csv": deco.write_decoration_csv(res.samples)}
    return res.acceptance, diag


def _overshoot(args, law, digest):
    _need(args, "theta", "n")
    r = deco.conditioned_overshoot(law, args.theta, args.n, args.replicas, args.seed,
                                   prune_delta=args.prune_delta, cap=args.cap, mode=args.mode)
    est_rec = {"mean": r.mean, "stderr": r.mean_stderr, "replicas": r.replicas, "invalid_replicas": 0,
               "bias_bound": 0.0}
    return est_rec, {"ks_distance": r.ks_distance, "ks_critical": r.ks_critical, "level": r.level,
                     "rejected": r.rejected, "exponential_mean": 1 / args.theta, "accepted": int(r.values.size)}


def _gw(args, law, digest):
    _need(args, "n")
    dist = law.offspring_distribution()
    if dist is None:
        raise ValueError("gw needs a finite offspring distribution")
    s = est.gw_survival(dist, args.n)
    value = float(s)
    out = {"survival": s if isinstance(s, Fraction) and len(str(s)) < 400 else value, "value": value}
    if value > 0 and args.n > 0:
        out["log_survival_over_n"] = math.log(value) / args.n
        out["log_mean_offspring"] = math.log(float(law.mean_offspring()))
    return None, out


def _llt(args, law, digest):
    _need(args, "theta", "n")
    r = est.llt_check(law, args.theta, args.n, args.g, args.y or 0.0, args.replicas, args.seed, h=args.h)
    return r.record, {"limit": r.limit, "relative_gap": abs(r.record.mean - r.limit) / r.limit}


def _rate(args, law, digest):
    _need(args, "x", "grid")
    fit = est.ldp_rate(law, args.x, [int(v) for v in args.grid], args.replicas, args.seed, mode=args.mode)
    rows = [{"n": n, "log_tail": lt, "stderr": r.stderr, "mean": r.mean}
            for n, lt, r in zip(fit.n_grid, fit.log_tail, fit.records)]
    return None, {"slope": fit.slope, "psi_star": fit.psi_star, "theta": fit.theta, "rows": rows}


def _sweep(args, law, digest):
    _need(args, "grid", "n")
    sw = est.c_theta_sweep(law, args.grid, args.n, args.replicas, args.seed, args.variant, args.mode)
    rows = [{"theta": t, "mean": r.mean, "stderr": r.stderr, "bias_bound": r.bias_bound} for t, r in sw]
    return None, {"rows": rows, "largest_jump_in_stderr": est.largest_jump(sw)}


def _validate(args, law, digest):
    from .validate import run_validate

    status, results = run_validate(args.tier, args.seed)
    return None, {"exit_status": status, "criteria": [r.to_dict() for r in results],
                  "lines": [r.line() for r in results]}


HANDLERS = {"cumulants": _cumulants, "check": _check, "simulate": _simulate, "tail": _tail, "ctheta": _ctheta,
            "decoration": _decoration, "overshoot": _overshoot, "gw": _gw, "llt": _llt, "rate": _rate,
            "sweep": _sweep, "validate": _validate}


def execute(args, timing: bool = True) -> dict:
    """Run one parsed command and return its output record."""
    cfg = RunConfig(args.command, args.law, _params(args), args.seed, args.out, args.format)
    digest = cfg.digest()
    law = load_law(args.law)
    t0 = time.perf_counter()
    rec, diag = HANDLERS[args.command](args, law, digest)
    wall = time.perf_counter() - t0
    if rec is not None and not isinstance(rec, dict):
        rec = _estimate(rec)
    return {"command": args.command, "config": cfg.canonical(), "estimate": rec, "diagnostics": diag,
            "seed": args.seed, "config_digest": digest, "tool_version": TOOL_VERSION,
            "timing": {"wall_seconds": wall} if timing else {}}


def _scalar(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return "" if v is None else str(v)


def render(record: dict, fmt: str = "json") -> str:
    if fmt == "json":
        return dumps(record, indent=2) + "\n"
    diag = record["diagnostics"] or {}
    if record["command"] == "decoration":
        return diag["csv"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if "rows" in diag:
        keys = list(diag["rows"][0]) if diag["rows"] else []
        w.writerow(keys)
        for row in diag["rows"]:
            w.writerow([_scalar(row[k]) for k in keys])
        return buf.getvalue()
    flat = {"command": record["command"], "seed": record["seed"], "config_digest": record["config_digest"]}
    flat.update(record["estimate"] or {})
    flat.update({k: v for k, v in diag.items() if not isinstance(v, (list, dict))})
    w.writerow(list(flat))
    w.writerow([_scalar(v) for v in flat.values()])
    return buf.getvalue()


def run_command(argv, timing: bool = True) -> str:
    """Parse ``argv`` and return the rendered output text."""
    args = build_parser().parse_args(argv)
    return render(execute(args, timing), args.format)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        record = execute(args)
    except (ValueError, LawError, RuntimeError) as exc:
        print(f"brwld {args.command}: {exc}", file=sys.stderr)
        return 2
    text = render(record, args.format)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.command == "validate":
        for line in record["diagnostics"]["lines"]:
            print(line, file=sys.stderr)
        return record["diagnostics"]["exit_status"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
