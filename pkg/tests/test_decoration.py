import math
from fractions import Fraction

import numpy as np
import pytest

from brwld import decoration as deco
from brwld.estimators import c_theta
from brwld.measures import PointMeasure
from brwld.reproduction import fixed_gaussian, mixed_gaussian, single_child, tabulated


def test_single_child_decoration_is_delta():
    res = deco.sample_decoration(single_child(), 1.0, 10, 50, seed=1)
    assert res.acceptance_rate == 1.0
    assert all(s.atoms.atoms() == [(0, 1)] for s in res.samples)


def test_acceptance_matches_indicator_c_theta():
    law = fixed_gaussian(2)
    res = deco.sample_decoration(law, 1.5, 20, 3000, window=2.0, seed=3)
    ind = c_theta(law, 1.5, 20, 20000, "indicator", seed=4, mode="explicit")
    acc = res.acceptance
    assert abs(acc.mean - ind.mean) < 3 * math.hypot(acc.stderr, ind.stderr)


def test_window_zero_flags_and_collapses():
    with pytest.warns(UserWarning, match="window too small"):
        res = deco.sample_decoration(fixed_gaussian(2), 1.5, 10, 30, window=0.0, seed=1)
    assert res.flags == ["window too small to resolve decoration shape"]
    assert all(s.atoms.atoms() == [(0.0, 1)] for s in res.samples)


def test_samples_have_no_mass_above_zero():
    res = deco.sample_decoration(mixed_gaussian({1: 0.5, 2: 0.5}), 1.2, 15, 200, window=3.0, seed=2)
    assert all(s.atoms.mass_above(0) == 0 and s.atoms.mass_at(0) == 1 for s in res.samples)
    assert all(s.atoms.locations.min() >= -3.0 for s in res.samples)


def test_decoration_csv_layout():
    law = tabulated([("1/2", (0, 1)), ("1/2", (-1,))])
    res = deco.sample_decoration(law, 2.0, 6, 5, window=3.0, seed=1)
    lines = deco.write_decoration_csv(res.samples).splitlines()
    assert lines[0] == "sample_id,location,multiplicity"
    ids = {int(l.split(",")[0]) for l in lines[1:]}
    assert ids == set(range(5))
    assert all(Fraction(l.split(",")[1]) <= 0 for l in lines[1:])


def test_sampler_is_deterministic():
    a = deco.sample_decoration(fixed_gaussian(2), 1.5, 10, 40, seed=7)
    b = deco.sample_decoration(fixed_gaussian(2), 1.5, 10, 40, seed=7)
    assert [s.atoms for s in a.samples] == [s.atoms for s in b.samples]


# -- overshoot -----------------------------------------------------------------

def test_overshoot_single_child_is_random_walk_overshoot():
    # deterministic +1 steps: the walk sits exactly on n psi', overshoot 0 with constant weights
    r = deco.conditioned_overshoot(single_child(1), 1.0, 10, 500, seed=1, resamples=50)
    assert np.all(r.values == 0) and np.ptp(r.weights) == 0


def test_overshoot_exponential_at_moderate_n():
    r = deco.conditioned_overshoot(fixed_gaussian(2), 1.5, 40, 30000, seed=2, resamples=200)
    assert not r.rejected
    assert abs(r.mean - 1 / 1.5) < 3 * r.mean_stderr


def test_weighted_ks_against_own_cdf():
    rng = np.random.default_rng(0)
    x = rng.exponential(1.0, 5000)
    w = np.ones_like(x)
    assert deco.weighted_ks(x, w, lambda t: 1 - np.exp(-t)) < 1.63 / math.sqrt(x.size)
    assert deco.weighted_ks(x, w, lambda t: 1 - np.exp(-2 * t)) > 0.2


# -- Laplace functionals -------------------------------------------------------

def test_bump_exact_and_float_agree():
    phi = deco.BumpSpec(((-3, 0), (-2, 1), ("-1/2", 1), (0, 0)))
    for x in (Fraction(-5, 2), Fraction(-1), Fraction(-1, 4), Fraction(1)):
        assert float(phi.exact(x)) == pytest.approx(float(phi(float(x))), abs=1e-15)
    pm = PointMeasure.from_values(np.array([-5, -2, -1, 0]), 2)
    assert phi.pair(pm) == float(phi.exact(Fraction(-5, 2)) + phi.exact(-1) + phi.exact(Fraction(-1, 2)))


def test_bump_validation():
    with pytest.raises(ValueError):
        deco.BumpSpec(((0, 0), (-1, 1)))
    with pytest.raises(ValueError):
        deco.BumpSpec(((0, -1), (1, 0)))


def test_laplace_compare_identical_and_zero_bump():
    samples = [PointMeasure.from_values(np.array([0.0, -0.3 * k])) for k in range(40)]
    same = deco.laplace_compare(samples, samples, deco.BumpSpec.tent(-1, -0.5, 0), 200)
    assert same.mean_a == same.mean_b and same.p_value == 1.0
    flat = deco.BumpSpec(((-1, 0), (1, 0)))
    r = deco.laplace_compare(samples, samples[:10], flat, 50)
    assert r.mean_a == 1.0 and r.mean_b == 1.0


def test_laplace_compare_detects_shift():
    a = [PointMeasure.from_values(np.array([0.0, -0.5])) for _ in range(200)]
    b = [PointMeasure.from_values(np.array([0.0, -2.5])) for _ in range(200)]
    assert deco.laplace_compare(a, b, deco.BumpSpec.tent(-1, -0.5, 0), 200).rejects(0.01)


def test_finite_horizon_identity():
    # D_n reweighted by the endpoint weight is the conditioned extremal process at the same n
    law, theta, n, window = mixed_gaussian({1: 0.6, 2: 0.4}), 0.9, 6, 3.0
    bumps = [deco.BumpSpec.tent(-1, -0.5, 0), deco.BumpSpec.tent(-3, -1.5, 0)]
    fwd, acc = deco.conditioned_extremal(law, theta, n, 3000, window, seed=1)
    ident = deco.reweighted_laplace(law, theta, n, window, bumps, 60000, seed=2)
    for phi, (v, se) in zip(bumps, ident):
        f = np.exp(-np.array([phi.pair(m) for m in fwd]))
        assert abs(v - f.mean()) < 3 * math.hypot(se, f.std(ddof=1) / math.sqrt(f.size))


def test_conditioned_extremal_limits():
    with pytest.raises(ValueError):
        deco.conditioned_extremal(fixed_gaussian(2), 1.5, 20, 10, 3.0)


# -- atom counts ---------------------------------------------------------------

def test_profile_n0_and_supercritical_guard():
    row = deco.atom_count_profile(mixed_gaussian({0: 0.6, 2: 0.4}), 1.0, [0], 50)[0]
    assert row.mean == 1.0 and row.stderr == 0.0
    with pytest.raises(ValueError):
        deco.atom_count_profile(fixed_gaussian(2), 1.5, [5], 10)


def test_profile_trends():
    sub = deco.atom_count_profile(mixed_gaussian({0: 0.6, 2: 0.4}), 1.0, [50, 100], 300, seed=1)
    crit = deco.atom_count_profile(mixed_gaussian({0: 0.5, 2: 0.5}), 1.0, [50, 100], 300, seed=1)
    assert abs(sub[1].mean - sub[0].mean) < 3 * math.hypot(sub[0].stderr, sub[1].stderr)
    assert crit[1].mean > crit[0].mean + 3 * math.hypot(crit[0].stderr, crit[1].stderr)
