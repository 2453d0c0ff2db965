from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from couplinglab.lattice import Configuration, Cylinder, Lattice, LatticeDomainError, shift
from couplinglab.metrics import (
    KAPPA_INFINITY,
    bit_metric,
    cylinder_metric,
    discrepancy_density,
    discrepancy_set,
    kappa,
    psi_n,
    psi_lipschitz_bound,
    shifted_discrepancy_density,
)
from couplinglab.systems import BitStream


def test_kappa_conventions():
    lat = Lattice(1, 11)
    x = Configuration.zeros(lat)
    assert kappa(x, x) == KAPPA_INFINITY
    assert cylinder_metric(x, x) == 0.0
    assert kappa(x, Configuration.from_sites(lat, [0])) == 0
    assert kappa(x, Configuration.from_sites(lat, [1])) == 0
    assert kappa(x, Configuration.from_sites(lat, [3])) == 2
    assert cylinder_metric(x, Configuration.from_sites(lat, [-3])) == 0.25


def test_discrepancy_set_and_density():
    lat = Lattice(1, 11)
    x = Configuration.from_sites(lat, [0, 2, 5])
    y = Configuration.from_sites(lat, [0, 3])
    assert discrepancy_set(x, y, 3) == {(2,), (3,)}
    assert discrepancy_density(x, y, 3) == Fraction(2, 7)
    assert discrepancy_density(x, y) == Fraction(3, 11)
    with pytest.raises(LatticeDomainError):
        discrepancy_density(x, y, 6)


def test_shifted_discrepancy_finds_translate(rng):
    lat = Lattice(1, 31)
    x = Configuration.bernoulli(lat, 0.5, rng)
    val, ell = shifted_discrepancy_density(x, shift(x, -3), 4)
    assert val == 0 and ell == (3,)


def test_shifted_discrepancy_zero_bound_is_plain():
    lat = Lattice(2, 7)
    g = np.random.default_rng(3)
    x = Configuration.bernoulli(lat, 0.5, g)
    y = Configuration.bernoulli(lat, 0.5, g)
    assert shifted_discrepancy_density(x, y, 0)[0] == discrepancy_density(x, y)


def test_shifted_discrepancy_tie_goes_to_smallest_shift():
    lat = Lattice(1, 9)
    x = Configuration.zeros(lat)
    assert shifted_discrepancy_density(x, x, 2) == (0, (-2,))


def test_shifted_discrepancy_bound_checked():
    lat = Lattice(1, 8)
    x = Configuration.zeros(lat)
    with pytest.raises(LatticeDomainError):
        shifted_discrepancy_density(x, x, 4)


def test_psi_n_counts_shifts():
    lat = Lattice(1, 11)
    x = Configuration.from_sites(lat, [-1, 2])
    c = Cylinder.of({0: 1})
    # shifts l with x at l occupied, |l| <= 2: l = -1, 2
    assert psi_n(x, c, 2) == Fraction(2, 5)


@given(st.integers(0, 2 ** 20), st.integers(0, 8))
def test_psi_lipschitz_holds_on_random_pairs(seed, m):
    g = np.random.default_rng(seed)
    lat = Lattice(1, 41)
    x = Configuration.bernoulli(lat, 0.5, g)
    y = Configuration.bernoulli(lat, 0.5, g)
    c = Cylinder.of({0: 1, 2: 0})
    assert abs(psi_n(x, c, m) - psi_n(y, c, m)) <= psi_lipschitz_bound(x, y, c, m)


def test_psi_lipschitz_bound_is_tight_for_single_site():
    lat = Lattice(1, 21)
    x = Configuration.zeros(lat)
    y = Configuration.from_sites(lat, [0])
    c = Cylinder.of({0: 1})
    assert psi_n(y, c, 3) - psi_n(x, c, 3) == psi_lipschitz_bound(x, y, c, 3) == Fraction(1, 7)


def test_bit_metric():
    a = BitStream.from_bits([1, 0, 1, 1])
    b = BitStream.from_bits([1, 0, 0, 1])
    assert bit_metric(a, b) == 0.25
    assert bit_metric(a, a, max_bits=10) == 2.0 ** -10
