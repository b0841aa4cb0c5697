import math
from fractions import Fraction

import numpy as np
import pytest

from brwld.harness import derive_stream
from brwld.reproduction import c2pm1, fixed_gaussian, mixed_gaussian, poisson_gaussian, single_child
from brwld.spine import (build_auxiliary, build_auxiliary_batch, sample_size_biased, stabilization_fraction,
                         subtree_tail)
from brwld.tails import SubtreeTail, error_estimate
from brwld.tree_sim import forward_batch


def _norm_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2))


def ks_normal(sample, mean, sd):
    xs = np.sort(sample)
    cdf = np.array([_norm_cdf((x - mean) / sd) for x in xs])
    i = np.arange(1, xs.size + 1)
    return max(np.max(i / xs.size - cdf), np.max(cdf - (i - 1) / xs.size))


# -- size-biased brood ---------------------------------------------------------

def test_brood_binary_gaussian():
    rng = derive_stream(1, 0)
    broods = [sample_size_biased(fixed_gaussian(2), 1.5, rng) for _ in range(20000)]
    assert all(len(b.displacements) == 2 and 0 <= b.spine_index < 2 for b in broods)
    s1 = np.array([b.displacements[b.spine_index] for b in broods])
    assert abs(s1.mean() - 1.5) < 3 / math.sqrt(s1.size)


def test_brood_poisson_non_spine_count_is_poisson():
    law = poisson_gaussian(2.5)
    counts, _, _ = law.sample_size_biased(0.7, 200000, derive_stream(2, 0))
    others = counts - 1
    # identity with f = count: E(count) = E(Z_1 e^{theta V - psi} summed) = mu + 1
    assert abs(others.mean() - 2.5) < 3 * math.sqrt(2.5 / others.size)
    assert abs(others.var() - 2.5) < 0.05


def test_brood_c2pm1_row_weights():
    counts, disp, spine = c2pm1().sample_size_biased(1.0, 400000, derive_stream(3, 0))
    pairs = disp.reshape(-1, 2)
    e = math.e
    z = e + 1 / e
    expect = {(1, 1): 0.25 * 2 * e / z, (-1, 1): 0.5 * (e + 1 / e) / z, (-1, -1): 0.25 * 2 / e / z}
    got = {k: 0 for k in expect}
    for row in map(tuple, np.sort(pairs, axis=1)):
        got[row] += 1
    for k, p in expect.items():
        assert abs(got[k] / pairs.shape[0] - p) < 4 * math.sqrt(p * (1 - p) / pairs.shape[0])
    mixed = np.sort(pairs, axis=1)[:, 0] != np.sort(pairs, axis=1)[:, 1]
    # inside the mixed row the spine takes the +1 child with odds e : 1/e
    chosen = pairs[np.arange(pairs.shape[0]), spine]
    frac = np.mean(chosen[mixed] == 1)
    assert abs(frac - e / z) < 4 * math.sqrt(0.25 / mixed.sum())


@pytest.mark.parametrize("f", ["count", "exp", "max"])
def test_size_bias_identity(f):
    # E f(L_hat) = E sum_k e^{theta V(k) - psi} f(Z_1)
    law, theta = mixed_gaussian({1: 0.3, 2: 0.4, 4: 0.3}, 0.2, 0.8), 0.9
    psi = law.log_laplace(theta)
    fns = {"count": lambda c, d, o: c.astype(float),
           "exp": lambda c, d, o: np.bincount(o, np.exp(theta * d), c.size),
           "max": lambda c, d, o: _group_max(d, o, c.size)}
    c1, d1, _ = law.sample_size_biased(theta, 200000, derive_stream(4, 0))
    lhs = fns[f](c1, d1, np.repeat(np.arange(c1.size), c1))
    c2, d2 = law.sample_offspring(400000, derive_stream(4, 1))
    o2 = np.repeat(np.arange(c2.size), c2)
    w = np.bincount(o2, np.exp(theta * d2 - psi), c2.size)
    rhs = w * fns[f](c2, d2, o2)
    gap = abs(lhs.mean() - rhs.mean())
    assert gap < 3 * math.hypot(lhs.std() / math.sqrt(lhs.size), rhs.std() / math.sqrt(rhs.size))


def _group_max(d, o, size):
    out = np.full(size, -np.inf)
    np.maximum.at(out, o, d)
    return out


def test_spine_step_moments():
    law, theta = fixed_gaussian(2), 1.5
    c, d, s = law.sample_size_biased(theta, 200000, derive_stream(5, 0))
    s1 = d[np.cumsum(c) - c + s]
    assert abs(s1.mean() - 1.5) < 3 / math.sqrt(s1.size)
    assert abs(s1.var() - 1.0) < 3 * math.sqrt(2 / s1.size)


# -- auxiliary process ---------------------------------------------------------

def test_auxiliary_n0():
    r = build_auxiliary(fixed_gaussian(2), 1.5, 0, window=math.inf)
    assert r.atoms.atoms() == [(0.0, 1)]
    assert (r.s_n, r.count_at_zero, r.count_above_zero, r.bar_count) == (0.0, 1, 0, 0)


def test_auxiliary_single_child_is_delta():
    for seed in range(5):
        r = build_auxiliary(single_child(1), 1.0, 7, window=math.inf, seed=seed)
        assert r.atoms.atoms() == [(0, 1)] and r.s_n == 7 and r.prune_bias_bound == 0


def test_auxiliary_n1_sibling_law():
    # one sibling: atom = b - S_1 with b ~ N(0,1), S_1 ~ N(1.5,1), so N(-1.5, 2)
    b = build_auxiliary_batch(fixed_gaussian(2), 1.5, 1, 20000, derive_stream(6, 0), window=math.inf,
                              keep_atoms=True)
    assert np.all(b.total_atoms == 2)
    d = ks_normal(b.atom_units, -1.5, math.sqrt(2))
    assert d < 1.63 / math.sqrt(b.atom_units.size)  # 1% level


def test_auxiliary_monotone_in_n():
    law = mixed_gaussian({0: 0.6, 2: 0.4})
    for seed in range(20):
        small = build_auxiliary(law, 1.0, 8, window=math.inf, prune_delta=0.0, seed=seed)
        big = build_auxiliary(law, 1.0, 9, window=math.inf, prune_delta=0.0, seed=seed)
        assert big.atoms.contains(small.atoms)


def test_auxiliary_continuous_has_unit_mass_at_zero():
    b = build_auxiliary_batch(fixed_gaussian(3), 1.2, 10, 2000, derive_stream(7, 0), window=5.0)
    assert np.all(b.count_at_zero == 1) and np.all(b.bar_count == 0)


def test_auxiliary_lattice_ties_are_exact():
    b = build_auxiliary_batch(c2pm1(), 1.0, 3, 20000, derive_stream(8, 0), window=math.inf, keep_atoms=True)
    assert np.all(b.count_at_zero >= 1) and np.any(b.count_at_zero > 1)
    assert b.atom_units.dtype.kind == "i"
    r = build_auxiliary(c2pm1(), 1.0, 3, window=math.inf, seed=4)
    assert all(isinstance(x, Fraction) for x in r.atoms.exact_locations())
    assert r.count_at_zero == r.atoms.mass_at(0)
    assert r.count_above_zero == r.atoms.mass_above(0)


def test_subcritical_no_pruning_is_exact():
    b = build_auxiliary_batch(mixed_gaussian({0: 0.6, 2: 0.4}), 1.0, 30, 500, derive_stream(9, 0),
                              window=math.inf, prune_delta=0.0)
    assert np.all(b.prune_bias == 0)


def test_stabilization_fraction():
    law, theta = mixed_gaussian({0: 0.6, 2: 0.4}), 1.0
    c = law.psi_prime(theta) - law.log_laplace(theta) / theta
    b = build_auxiliary_batch(law, theta, 40, 2000, derive_stream(10, 0), window=math.inf, prune_delta=0.0,
                              record_gen_max=True)
    fr = [stabilization_fraction(b, burn, 0.5 * c) for burn in (1, 5, 20)]
    assert fr[0] <= fr[1] <= fr[2] and fr[2] > 0.9
    reals = [build_auxiliary(single_child(1), 1.0, 5, window=math.inf, seed=s) for s in range(3)]
    assert stabilization_fraction(reals, 1, 0.1) == 1.0


def test_conditional_needs_gaussian():
    with pytest.raises(ValueError):
        build_auxiliary_batch(c2pm1(), 1.0, 3, 10, derive_stream(0, 0), conditional=True)


# -- subtree tail tables -------------------------------------------------------

def test_tail_table_matches_forward_simulation():
    law = mixed_gaussian({1: 0.5, 2: 0.5})
    tab = SubtreeTail(law, 8)
    fb = forward_batch(law, 8, 40000, derive_stream(11, 0))
    mx, alive = fb.max_per_replica()
    for x in (-2.0, 0.0, 2.0, 4.0):
        emp = np.mean(alive & (mx >= x))
        p = float(tab.prob(8, x))
        assert abs(emp - p) < 4 * math.sqrt(max(p * (1 - p), 1e-6) / mx.size) + 1e-3


def test_tail_table_one_level_closed_form():
    # two children: 1 - (1 - sf(x))^2
    tab = SubtreeTail(fixed_gaussian(2), 4)
    for x in (-1.0, 0.3, 2.2, 5.0):
        sf = 0.5 * math.erfc(x / math.sqrt(2))
        assert float(tab.prob(1, x)) == pytest.approx(1 - (1 - sf) ** 2, rel=1e-6, abs=1e-12)


def test_tail_table_survival_plateau():
    law = mixed_gaussian({0: 0.6, 2: 0.4})
    tab = SubtreeTail(law, 6)
    from brwld.estimators import gw_survival
    for j in range(1, 7):
        assert tab.survival(j) == pytest.approx(float(gw_survival(law.offspring_distribution(), j)), rel=1e-9)


def test_tail_table_error_is_small():
    assert error_estimate(fixed_gaussian(2), 12) < 1e-5


def test_tail_table_cache_and_depth():
    law = fixed_gaussian(2)
    assert subtree_tail(law, 5) is subtree_tail(law, 5)
    assert subtree_tail(c2pm1(), 5) is None
    with pytest.raises(ValueError):
        SubtreeTail(law, 3).prob(4, 0.0)
