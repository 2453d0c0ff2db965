from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from couplinglab.lattice import Configuration, Lattice, LatticeDomainError, UnsupportedOperation
from couplinglab.systems import (
    DOUBLING,
    HALVING,
    SHIFT_ANNIHILATION,
    BitStream,
    InvariantViolation,
    SystemRule,
    apply_rule,
    identity_rule,
    particle_vacancy_rule,
    shift_annihilation_closed_form,
    shift_annihilation_step,
    step,
    step_values,
    tasep_rule,
)
from couplinglab.systems import _step_values_arrays


def line(s, boundary="torus"):
    return Configuration.from_line(s, Lattice(1, len(s), boundary))


def test_tasep_deterministic_hops_and_blocking():
    # every particle tries to hop right; only those with an empty target move
    x = line("0110100")
    y = apply_rule(tasep_rule(1.0), x, np.zeros(7))
    assert y.to_line() == "0101010"


def test_tasep_wraps_on_torus():
    assert apply_rule(tasep_rule(1.0), line("0000001"), np.zeros(7)).to_line() == "1000000"
    # the wrapping particle is blocked by the occupied first site
    assert apply_rule(tasep_rule(1.0), line("1000001"), np.zeros(7)).to_line() == "0100001"


def test_tasep_noise_threshold():
    x = line("10100")
    y = apply_rule(tasep_rule(0.5), x, np.array([0.7, 0, 0.2, 0, 0]))
    assert y.to_line() == "10010"


def test_tasep_loses_particles_off_open_window():
    y = apply_rule(tasep_rule(1.0), line("00101", "open"), np.zeros(5))
    assert y.to_line() == "00010"


@given(st.integers(0, 2 ** 30), st.floats(0, 1))
def test_tasep_conserves_particles_on_torus(seed, p):
    g = np.random.default_rng(seed)
    lat = Lattice(2, 6)
    x = Configuration.bernoulli(lat, 0.5, g)
    y = step(tasep_rule(p), x, g)
    assert y.particle_count() == x.particle_count()


def test_particle_vacancy_moves_outward():
    x = line("0100100", "open")  # particles at -2 and +1
    y = apply_rule(particle_vacancy_rule(1.0), x, np.zeros(7))
    assert y.to_line() == "1000010"


def test_particle_vacancy_origin_moves_right():
    y = apply_rule(particle_vacancy_rule(1.0), line("00100", "open"), np.zeros(5))
    assert y.to_line() == "00010"


def test_identity_rule_is_identity(rng):
    x = Configuration.bernoulli(Lattice(1, 9), 0.5, rng)
    assert step(identity_rule(), x, rng) == x


def test_alphabet_checked():
    x = Configuration.zeros(Lattice(1, 5), alphabet=3)
    with pytest.raises(LatticeDomainError):
        step(tasep_rule(0.5), x, np.random.default_rng(0))


def test_speed_bound_enforced():
    fast = SystemRule("fast", 0, lambda noise, lat: np.ones(noise.shape + (1,), dtype=np.int64),
                      lambda v, vel, t, lat: np.ones(v.shape, bool))
    with pytest.raises(InvariantViolation):
        apply_rule(fast, line("100"), np.zeros(3))


def test_pile_up_rejected_by_alphabet():
    # a rule that ignores exclusion produces a double occupancy
    reckless = SystemRule("reckless", 1, lambda n, lat: np.ones(n.shape + (1,), dtype=np.int64),
                          lambda v, vel, t, lat: np.arange(v.size).reshape(v.shape) == 0)
    with pytest.raises(InvariantViolation):
        apply_rule(reckless, line("110"), np.zeros(3))


@pytest.mark.parametrize("lat", [Lattice(1, 16), Lattice(1, 15), Lattice(2, 6), Lattice(3, 4)])
@pytest.mark.parametrize("make", [lambda: tasep_rule(0.4), identity_rule])
def test_compiled_step_matches_array_step(lat, make, rng):
    rule = make()
    vals = rng.integers(0, 2, (20,) + lat.shape)
    noise = rng.random(vals.shape)
    assert np.array_equal(step_values(rule, vals, noise, lat, 1),
                          _step_values_arrays(rule, vals, noise, lat, 1))


def test_particle_vacancy_needs_open_window():
    with pytest.raises(UnsupportedOperation):
        step(particle_vacancy_rule(0.5), line("0110"), np.random.default_rng(0))


def test_batched_step_equals_rowwise(rng):
    lat = Lattice(1, 11)
    rule = tasep_rule(0.5)
    vals = rng.integers(0, 2, (5, 11))
    noise = rng.random(vals.shape)
    batch = _step_values_arrays(rule, vals, noise, lat, 1)
    for r in range(5):
        assert np.array_equal(batch[r], _step_values_arrays(rule, vals[r], noise[r], lat, 1))


# --- shift-annihilation map ---------------------------------------------------

def test_shift_annihilation_single_step():
    assert shift_annihilation_step(line("1111111", "open")).to_line() == "1101011"


def test_shift_annihilation_needs_open_window():
    with pytest.raises(UnsupportedOperation):
        shift_annihilation_step(line("111"))


def test_origin_particle_is_fixed_point():
    x = Configuration.from_sites(Lattice(1, 21, "open"), [0])
    assert shift_annihilation_step(x) == x


@given(st.integers(0, 2 ** 30))
def test_shift_annihilation_closed_form_matches_iteration(seed):
    lat = Lattice(1, 31, "open")
    x = Configuration.bernoulli(lat, 0.5, np.random.default_rng(seed))
    y = x
    for t in range(16):
        assert y == shift_annihilation_closed_form(x, t)
        y = SHIFT_ANNIHILATION.step(y)


def test_shift_annihilation_closed_form_range():
    with pytest.raises(LatticeDomainError):
        shift_annihilation_closed_form(line("00000", "open"), 3)


# --- toy chains -------------------------------------------------------------

def test_halving_exact():
    x = Fraction(1)
    for _ in range(10):
        x = HALVING.step(x)
    assert x == Fraction(1, 1024)


def test_bitstream_doubling_drops_leading_bit():
    b = BitStream.from_bits([1, 0, 1, 1])
    assert DOUBLING.step(b).bits(3).tolist() == [0, 1, 1]
    assert b.value(4) == 0.6875


def test_bitstream_bits_are_stable(rng):
    b = BitStream.uniform(rng)
    first = b.bits(10)
    b.bits(500)
    assert np.array_equal(b.bits(10), first)
    assert np.array_equal(b.shifted(3).bits(7), first[3:])


def test_zero_stream_fixed_by_doubling():
    z = BitStream.zeros()
    assert z.common_prefix(DOUBLING.step(z), 100) == 100
