import math
from fractions import Fraction

import numpy as np
import pytest

from brwld import estimators as est
from brwld.reproduction import (c2pm1, fixed_gaussian, mixed_gaussian, poisson_gaussian, single_child,
                                tabulated, tilted_cumulants)
from brwld.tree_sim import enumerate_tail


def _z(rec, target):
    return (rec.mean - target) / rec.stderr


# -- spinal tail -----------------------------------------------------------------

@pytest.mark.parametrize("n,a", [(1, 1), (2, 2)])
def test_spinal_c2pm1_examples(n, a):
    y = a - n * math.tanh(1.0)
    rec = est.spinal_tail(c2pm1(), 1.0, n, y, 100000, seed=3)
    assert abs(_z(rec, float(enumerate_tail(c2pm1(), n, a)))) <= 3


def test_spinal_single_child_is_exact():
    rec = est.spinal_tail(single_child(1), 1.0, 5, 0.0, 500)
    assert rec.mean == pytest.approx(1.0, rel=1e-14) and rec.stderr == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("rows,theta", [
    ([("1/3", (0, 1)), ("1/3", (1,)), ("1/3", (-1, 0, 2))], 0.8),
    ([("1/2", (1, 1, -1)), ("1/2", ())], 1.3),
])
def test_spinal_unbiased_on_random_tabulated_laws(rows, theta):
    law = tabulated(rows)
    psi_p = law.psi_prime(theta)
    for n in (1, 2, 3):
        for a in (0, 1, 2):
            if a > n * law.support_max():
                continue
            rec = est.spinal_tail(law, theta, n, a - n * psi_p, 30000, seed=10 * n + a)
            exact = float(enumerate_tail(law, n, a))
            assert abs(rec.mean - exact) <= 3 * rec.stderr + 1e-12, (n, a, rec.mean, exact)


def test_spinal_conditional_agrees_with_explicit():
    law = fixed_gaussian(2)
    a = est.spinal_tail(law, 1.5, 15, 0.0, 20000, seed=1, mode="conditional")
    b = est.spinal_tail(law, 1.5, 15, 0.0, 20000, seed=2, mode="explicit")
    assert abs(a.mean - b.mean) < 3 * math.hypot(a.stderr, b.stderr)
    assert a.stderr < b.stderr


def test_spinal_rejects_bad_theta():
    with pytest.raises(ValueError):
        est.spinal_tail(fixed_gaussian(2), 0.0, 5, 0.0, 10)


def test_spinal_variance_reduction_over_naive():
    from brwld.tree_sim import naive_tail
    law, theta, n = fixed_gaussian(2), 1.5, 12  # about 5.2 nats
    sp = est.spinal_tail(law, theta, n, 0.0, 20000, seed=1)
    nv = naive_tail(law, n, n * 1.5, 20000, seed=1)
    naive_se = math.sqrt(sp.mean * (1 - sp.mean) / nv.replicas)
    assert sp.stderr * 10 < naive_se


# -- C(theta) --------------------------------------------------------------------

def test_c_theta_degenerate_cases():
    assert est.c_theta(single_child(), 1.0, 10, 300).mean == 1.0
    assert est.c_theta(fixed_gaussian(2), 1.5, 0, 300).mean == 1.0


def test_c_theta_bounds_and_variants():
    law = fixed_gaussian(2)
    w = est.c_theta(law, 1.5, 40, 20000, "weighted", seed=1)
    i = est.c_theta(law, 1.5, 40, 20000, "indicator", seed=2)
    assert 0 < w.mean - 3 * w.stderr and w.mean + 3 * w.stderr < 1
    assert abs(w.mean - i.mean) < 3 * math.hypot(w.stderr, i.stderr)
    assert w.diagnostics["mode"] == "conditional"


def test_c_theta_explicit_agrees_with_conditional():
    law = fixed_gaussian(2)
    a = est.c_theta(law, 1.5, 20, 8000, seed=3, mode="explicit")
    b = est.c_theta(law, 1.5, 20, 8000, seed=4, mode="conditional")
    assert abs(a.mean - b.mean) < 3 * math.hypot(a.stderr, b.stderr)


def test_c_theta_lattice_variants_agree():
    law = tabulated([("1/2", (0, 1)), ("1/2", (-1,))])
    w = est.c_theta(law, 2.0, 12, 20000, "weighted", seed=1)
    i = est.c_theta(law, 2.0, 12, 20000, "indicator", seed=2)
    assert abs(w.mean - i.mean) < 3 * math.hypot(w.stderr, i.stderr)


def test_c_theta_chooses_n_max():
    rec = est.c_theta(mixed_gaussian({0: 0.6, 2: 0.4}), 1.0, None, 2000)
    assert rec.diagnostics["n_max_chosen"]
    assert rec.diagnostics["last_contrib_p999"] < rec.diagnostics["n_max"] / 2


def test_c_theta_sweep_is_continuous():
    # C moves by about 0.8 per unit theta here, so the grid must be fine next to the stderr
    sw = est.c_theta_sweep(fixed_gaussian(2), [1.47, 1.48, 1.49, 1.5, 1.51, 1.52], 30, 5000, seed=1)
    assert est.largest_jump(sw) < 4


# -- many-to-one -----------------------------------------------------------------

def test_mean_count_examples():
    r = est.mean_count(poisson_gaussian(2.0), 1.0, 1, 0.0, 100000)
    assert abs(_z(r, 1.0)) <= 3
    r = est.mean_count(c2pm1(), 0.7, 2, 2, 100000)
    assert abs(_z(r, 1.0)) <= 3


def test_mean_count_tilt_invariance():
    law = fixed_gaussian(2)
    # relative variance of a single weight is e^{n theta^2} - 1, so keep n theta^2 moderate
    for n in (3, 6):
        a = est.mean_count(law, 0.3, n, -1e10, 40000, seed=1)
        b = est.mean_count(law, 0.6, n, -1e10, 40000, seed=2)
        assert abs(_z(a, 2.0 ** n)) <= 3
        assert abs(a.mean - b.mean) <= 3 * math.hypot(a.stderr, b.stderr)


# -- asymptotics -----------------------------------------------------------------

def test_asymptotic_tail_formula():
    cum = tilted_cumulants(fixed_gaussian(2), 1.5)
    n, c = 10, 0.6
    expect = c / (math.sqrt(2 * math.pi * n) * math.sqrt(cum.sigma2) * 1.5) * math.exp(-n * cum.rate)
    assert est.asymptotic_tail(cum, c, n, 0.0) == pytest.approx(expect, rel=1e-13)
    d = est.log_asymptotic_tail(cum, c, 2 * n, 0.0) - est.log_asymptotic_tail(cum, c, n, 0.0)
    assert d == pytest.approx(-cum.rate * n - 0.5 * math.log(2), rel=1e-12)
    with pytest.raises(ValueError):
        est.asymptotic_tail(cum, 1.5, n, 0.0)


def test_ldp_rate_at_a_tilt():
    law = fixed_gaussian(2)
    cum = tilted_cumulants(law, 1.8)
    fit = est.ldp_rate(law, cum.psi_prime, [20, 40, 60], 4000, seed=1)
    assert fit.psi_star == pytest.approx(cum.rate, rel=1e-9)
    assert abs(fit.slope - cum.rate) / cum.rate < 0.1


def test_ldp_rate_rejects_boundary_and_slow_speed():
    with pytest.raises(ValueError, match="outside interior"):
        est.ldp_rate(c2pm1(), 1.0, [2, 3], 10)
    with pytest.raises(ValueError, match="critical speed"):
        est.ldp_rate(fixed_gaussian(2), 0.5, [10, 20], 10)


# -- Galton-Watson ---------------------------------------------------------------

def test_gw_examples():
    probs = {0: Fraction(3, 5), 2: Fraction(2, 5)}
    assert est.gw_survival(probs, 0) == 1
    assert est.gw_survival(probs, 1) == Fraction(2, 5)
    assert est.gw_survival(probs, 2) == Fraction(32, 125)


def test_gw_generating_function_oracle():
    # survival = 1 - f_n(0) with f the pgf, iterated in floats
    probs = [(0, 0.25), (1, 0.25), (3, 0.5)]
    q = 0.0
    for _ in range(12):
        q = sum(p * q ** c for c, p in probs)
    assert float(est.gw_survival(probs, 12)) == pytest.approx(1 - q, rel=1e-12)


def test_gw_switches_to_decimals():
    s = est.gw_survival({0: Fraction(3, 5), 2: Fraction(2, 5)}, 400, exact_digits=200)
    exact = est.gw_survival({0: Fraction(3, 5), 2: Fraction(2, 5)}, 40)
    assert isinstance(s, float) and 0 < s < float(exact)


def test_gw_subcritical_decay_rate():
    # (1/n) log s_n -> log m; the gap shrinks like 1/n
    probs = {0: Fraction(3, 5), 2: Fraction(2, 5)}
    gaps = [abs(math.log(float(est.gw_survival(probs, n))) / n - math.log(0.8)) for n in (100, 200, 400)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[1] * 200 == pytest.approx(gaps[2] * 400, rel=0.02)


# -- local limit -----------------------------------------------------------------

def test_llt_interval_limit():
    r = est.llt_check(fixed_gaussian(2), 1.5, 400, "interval", 0.0, 200000, seed=1, h=0.5)
    assert r.limit == pytest.approx(0.5 / math.sqrt(2 * math.pi), rel=1e-12)
    assert abs(r.record.mean - r.limit) / r.limit < 0.05


def test_llt_rejects_lattice():
    with pytest.raises(ValueError, match="lattice"):
        est.llt_check(c2pm1(), 1.0, 10)


def test_gw_decimal_phase_keeps_tiny_values():
    # oracle: s_k = sum_c p_c (1 - (1 - s)^c) evaluated with log1p/expm1 in floats
    probs = [(0, 0.6), (2, 0.4)]
    s = 1.0
    for _ in range(800):
        s = sum(p * -math.expm1(c * math.log1p(-s)) for c, p in probs if c) if s < 1 else 0.4
    got = est.gw_survival({0: Fraction(3, 5), 2: Fraction(2, 5)}, 800, exact_digits=200)
    assert got == pytest.approx(s, rel=1e-10)
