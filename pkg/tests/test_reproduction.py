import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brwld.harness import derive_stream
from brwld.reproduction import (LawError, c2pm1, check_assumptions, critical_speed, fixed_gaussian, legendre,
                                load_law, log_laplace, mixed_gaussian, parse_law, poisson_gaussian,
                                single_child, tabulated, tilted_cumulants)

C2PM1_ROWS = [(0.25, (1, 1)), (0.5, (1, -1)), (0.25, (-1, -1))]


def brute_psi(rows, theta):
    """log sum_j p_j sum_i e^{theta d_ji}, written out directly."""
    return math.log(sum(p * sum(math.exp(theta * d) for d in ds) for p, ds in rows))


# -- parsing -----------------------------------------------------------------

def test_parse_fixed_gaussian():
    law = parse_law("kind=fixed_gaussian b=2 mean=0 sd=1")
    assert (law.b, law.mean_d, law.sd_d) == (2, 0.0, 1.0)


def test_parse_tabulated_c2pm1():
    law = parse_law("kind=tabulated name=C2PM1\nrow = 1/4 : 1 1\nrow = 1/2 : 1 -1\nrow = 1/4 : -1 -1")
    assert law.is_lattice()
    assert law.offspring_distribution() == [(2, Fraction(1))]
    assert law.log_laplace(0.7) == pytest.approx(c2pm1().log_laplace(0.7), rel=1e-15)


def test_parse_rejects_bad_probabilities():
    with pytest.raises(LawError, match="probabilities sum to 1.1"):
        parse_law("kind=tabulated; row = 0.5 : 1; row = 0.6 : -1")


def test_parse_errors_name_the_problem():
    with pytest.raises(LawError, match="kind"):
        parse_law("b=2")
    with pytest.raises(LawError, match="unknown kind"):
        parse_law("kind=cauchy")
    with pytest.raises(LawError, match="requires key 'mu'"):
        parse_law("kind=poisson_gaussian")


def test_tabulated_rejects_childless_law():
    with pytest.raises(ValueError):
        tabulated([(1, ())])


def test_load_law_from_file(tmp_path):
    p = tmp_path / "law.txt"
    p.write_text("# mixed law\nkind = mixed_gaussian\noffspring = 0:3/5 2:2/5\n")
    law = load_law(str(p))
    assert float(law.mean_offspring()) == pytest.approx(0.8)


# -- psi and friends ---------------------------------------------------------

def test_log_laplace_poisson_closed_form():
    assert log_laplace(poisson_gaussian(2.0), 1.0) == pytest.approx(math.log(2) + 0.5, rel=1e-14)


def test_log_laplace_c2pm1():
    law = c2pm1()
    assert log_laplace(law, 0.0) == pytest.approx(math.log(2), rel=1e-15)
    # finite sum: 1/4*2e + 1/2*(e + 1/e) + 1/4*2/e = e + 1/e
    assert log_laplace(law, 1.0) == pytest.approx(math.log(math.e + 1 / math.e), rel=1e-14)
    assert log_laplace(law, 1.0) == pytest.approx(1.126928011042972, rel=1e-12)


@pytest.mark.parametrize("theta", [0.0, 0.3, 1.0, 2.5, 7.0])
def test_log_laplace_matches_brute_sum(theta):
    rows = [(0.2, (0.5, -1.25, 3)), (0.3, (2,)), (0.5, (-0.75, 0.25))]
    law = tabulated([(Fraction(str(p)), tuple(Fraction(str(d)) for d in ds)) for p, ds in rows])
    assert law.log_laplace(theta) == pytest.approx(brute_psi(rows, theta), rel=1e-12)


def test_log_laplace_rejects_negative_theta():
    with pytest.raises(ValueError):
        log_laplace(c2pm1(), -0.1)


def test_cumulants_poisson():
    c = tilted_cumulants(poisson_gaussian(2.0), 1.5)
    assert c.psi_prime == pytest.approx(1.5)
    assert c.sigma2 == pytest.approx(1.0)
    assert c.rate == pytest.approx(2.25 - (math.log(2) + 1.125), rel=1e-12)


def test_cumulants_c2pm1():
    c0 = tilted_cumulants(c2pm1(), 0.0)
    assert c0.psi_prime == pytest.approx(0.0, abs=1e-15)
    assert c0.sigma2 == pytest.approx(1.0)
    c1 = tilted_cumulants(c2pm1(), 1.0)
    assert c1.psi_prime == pytest.approx(math.tanh(1.0), rel=1e-13)
    assert c1.sigma2 == pytest.approx(1 / math.cosh(1.0) ** 2, rel=1e-12)


def test_sigma2_is_variance_of_tilted_step():
    law = mixed_gaussian({1: 0.5, 3: 0.5}, mean=0.3, sd=0.7)
    c = tilted_cumulants(law, 0.8)
    steps = law.sample_tilted_steps(0.8, 400000, derive_stream(3, 0))
    assert steps.mean() == pytest.approx(c.psi_prime, abs=4 * 0.7 / math.sqrt(4e5))
    assert steps.var() == pytest.approx(c.sigma2, rel=0.01)


# -- legendre / critical speed -----------------------------------------------

def test_legendre_gaussian_closed_form():
    r = legendre(poisson_gaussian(2.0), 2.0)
    assert r.psi_star == pytest.approx(2 - math.log(2), rel=1e-12)
    assert r.theta_star == pytest.approx(2.0, rel=1e-10)
    assert r.boundary is None


def test_legendre_c2pm1_top_of_support():
    r = legendre(c2pm1(), 1.0)
    assert r.psi_star == 0.0 and not math.copysign(1, r.psi_star) < 0
    assert r.boundary == "infinity"
    assert legendre(c2pm1(), 1.5).psi_star == math.inf


def test_legendre_below_mean_is_zero_boundary():
    law = fixed_gaussian(2)
    r = legendre(law, -1.0)
    assert r.boundary == "zero" and r.psi_star == pytest.approx(-math.log(2))


def test_critical_speed_examples():
    assert critical_speed(poisson_gaussian(2.0)).x_star == pytest.approx(math.sqrt(2 * math.log(2)), rel=1e-9)
    assert critical_speed(single_child(Fraction(3, 2))).x_star == pytest.approx(1.5)
    # one expected child sits at the top of the support, so psi*(1) = 0 is reached at x = 1
    cs = critical_speed(c2pm1())
    assert cs.x_star == pytest.approx(1.0)


def test_critical_speed_is_zero_of_psi_star():
    law = poisson_gaussian(3.0, mean=-0.2, sd=1.3)
    xs = critical_speed(law).x_star
    assert legendre(law, xs).psi_star == pytest.approx(0.0, abs=1e-9)
    assert legendre(law, xs - 0.1).psi_star < 0 < legendre(law, xs + 0.1).psi_star


# -- assumptions ---------------------------------------------------------------

def test_assumptions_c2pm1():
    r = check_assumptions(c2pm1(), 1.0)
    assert not r.as4 and not r.as1 and r.asn


def test_assumptions_binary_gaussian():
    r = check_assumptions(fixed_gaussian(2), 1.5)
    assert r.all_hold() and r.regime == "supercritical"
    assert r.psi0 == pytest.approx(math.log(2))


def test_assumptions_single_child():
    assert not check_assumptions(single_child(), 1.0).asn


# -- properties ----------------------------------------------------------------

laws = st.sampled_from([c2pm1(), fixed_gaussian(2), poisson_gaussian(1.7, 0.1, 0.6),
                        mixed_gaussian({0: 0.3, 1: 0.2, 3: 0.5}, -0.4, 1.2),
                        tabulated([("1/3", (0, 2)), ("2/3", ("-1/2",))])])


@settings(max_examples=60, deadline=None)
@given(law=laws, t=st.lists(st.floats(0.0, 4.0), min_size=3, max_size=3, unique=True))
def test_psi_is_convex(law, t):
    a, b, c = sorted(t)
    if c - a < 1e-6:
        return
    lam = (c - b) / (c - a)
    interp = lam * law.log_laplace(a) + (1 - lam) * law.log_laplace(c)
    assert law.log_laplace(b) <= interp + 1e-9 * (1 + abs(interp))


@settings(max_examples=40, deadline=None)
@given(law=laws, theta=st.floats(0.05, 3.0))
def test_legendre_duality(law, theta):
    x = law.psi_prime(theta)
    r = legendre(law, x)
    assert r.theta_star == pytest.approx(theta, rel=1e-9, abs=1e-9)
    assert r.psi_star == pytest.approx(theta * x - law.log_laplace(theta), rel=1e-9, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(law=laws, lo=st.floats(0.05, 2.0), step=st.floats(0.01, 0.5))
def test_psi_star_monotone_and_convex(law, lo, step):
    xs = [law.psi_prime(lo) + k * step * 0.3 for k in range(3)]
    xs = [x for x in xs if x < law.support_max()]
    vals = [legendre(law, x).psi_star for x in xs]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    if len(vals) == 3:
        assert vals[1] <= 0.5 * (vals[0] + vals[2]) + 1e-9


@settings(max_examples=30, deadline=None)
@given(theta=st.floats(0.05, 3.0))
def test_rate_sign_matches_as1(theta):
    law = fixed_gaussian(2)
    assert (tilted_cumulants(law, theta).rate > 0) == check_assumptions(law, theta).as1


def test_psi_star_sign_around_critical_speed():
    law = fixed_gaussian(2)
    xs = critical_speed(law).x_star
    for x in np.linspace(xs - 1, xs + 1, 9):
        v = legendre(law, float(x)).psi_star
        if x < xs - 1e-9:
            assert v < 0
        elif x > xs + 1e-9:
            assert v > 0
