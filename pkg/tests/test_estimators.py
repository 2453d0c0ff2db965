import pickle
from fractions import Fraction

import numpy as np
import pytest

from couplinglab.estimators import (
    BitCylinder,
    ReplicaPlan,
    bernoulli_sampler,
    cesaro_estimate,
    closeness_hits,
    constant_sampler,
    density_series,
    drift_bound,
    indicator_mismatch_rate,
    run_coupled,
    weak_convergence_probe,
)
from couplinglab.lattice import Configuration, Cylinder, Lattice, LatticeDomainError
from couplinglab.metrics import bit_metric
from couplinglab.systems import DOUBLING, HALVING, BitStream, identity_rule, tasep_rule


def test_plan_seeds_distinct_and_reproducible():
    plan = ReplicaPlan(5, 10, seed=3)
    a = [g.random() for g in plan.generators()]
    b = [g.random() for g in plan.generators()]
    assert a == b and len(set(a)) == 5
    c = [g.random() for g in plan.generators(stream=1)]
    assert not set(a) & set(c)


def test_plan_validation():
    with pytest.raises(ValueError):
        ReplicaPlan(0, 5)


def test_synchronous_identical_start_has_no_discrepancy():
    lat = Lattice(1, 32)
    x = Configuration.bernoulli(lat, 0.5, np.random.default_rng(0))
    run = run_coupled(tasep_rule(0.5), "synchronous", x, x, ReplicaPlan(3, 40, 1))
    assert np.all(run.column("discrepancy") == 0)


def test_independent_bernoulli_disagreement_rate():
    lat = Lattice(1, 64)
    r = 0.3
    s = bernoulli_sampler(lat, r)
    run = run_coupled(tasep_rule(0.5), "independent", s, s, ReplicaPlan(200, 0, 2))
    expected = 2 * r * (1 - r)
    sd = (expected * (1 - expected) / (64 * 200)) ** 0.5
    assert abs(run.column("discrepancy")[0] - expected) <= 4 * sd


def test_pairing_series_shapes():
    lat = Lattice(1, 48)
    s = bernoulli_sampler(lat, 0.5)
    run = run_coupled(tasep_rule(0.5), "L_pairing", s, s, ReplicaPlan(2, 25, 4), L=4,
                      radii=[5], cylinders=[Cylinder.of({0: 1})])
    for name, agg in run.aggregate.items():
        assert agg.mean.shape == (26,), name
    assert np.all(run.replicas[0].paired + run.replicas[0].unpaired_x
                  == run.replicas[0].paired[0] + run.replicas[0].unpaired_x[0])
    assert np.all((run.column("shifted_discrepancy") <= run.column("discrepancy") + 1e-12))


def test_run_coupled_reproducible_and_times():
    lat = Lattice(1, 32)
    s = bernoulli_sampler(lat, 0.5)
    plan = ReplicaPlan(3, 30, 9)
    a = run_coupled(tasep_rule(0.5), "L_pairing", s, s, plan, L=3)
    b = run_coupled(tasep_rule(0.5), "L_pairing", s, s, plan, L=3, times=[0, 10, 30])
    assert np.array_equal(b.column("unpaired_fraction"), a.column("unpaired_fraction")[[0, 10, 30]])


@pytest.mark.slow
def test_run_coupled_workers_match_serial():
    lat = Lattice(1, 32)
    s = bernoulli_sampler(lat, 0.5)
    plan = ReplicaPlan(3, 20, 9)
    a = run_coupled(tasep_rule(0.5), "L_pairing", s, s, plan, L=3)
    b = run_coupled(tasep_rule(0.5), "L_pairing", s, s, plan, L=3, workers=2)
    for name in a.aggregate:
        assert np.array_equal(a.column(name), b.column(name), equal_nan=True)


def test_run_coupled_trace():
    lat = Lattice(1, 32)
    s = bernoulli_sampler(lat, 0.5)
    trace = []
    run_coupled(tasep_rule(0.5), "L_pairing", s, s, ReplicaPlan(2, 10, 1), L=3, trace=trace)
    assert trace and {e["event"] for e in trace} <= {"formation", "break", "swap"}


def test_lattice_mismatch_rejected():
    with pytest.raises(LatticeDomainError):
        run_coupled(tasep_rule(0.5), "independent", Configuration.zeros(Lattice(1, 8)),
                    Configuration.zeros(Lattice(1, 10)), ReplicaPlan(1, 1))


# --- indicator mismatch ------------------------------------------------------------------

def test_halving_indicator_mismatch_is_one():
    m = indicator_mismatch_rate(HALVING, "independent", Fraction(0), Fraction(1),
                                lambda v: v != 0, 0, ReplicaPlan(2, 30))
    assert np.all(m.rate == 1)


def test_synchronous_identical_mismatch_zero():
    lat = Lattice(1, 21)
    x = Configuration.bernoulli(lat, 0.5, np.random.default_rng(1))
    m = indicator_mismatch_rate(tasep_rule(0.5), "synchronous", x, x, Cylinder.of({0: 1, 1: 1}),
                                2, ReplicaPlan(3, 20))
    assert np.all(m.rate == 0)


def test_zero_shift_bound_equals_unshifted():
    lat = Lattice(1, 21)
    s = bernoulli_sampler(lat, 0.5)
    c = Cylinder.of({0: 1})
    plan = ReplicaPlan(20, 15, 5)
    m = indicator_mismatch_rate(tasep_rule(0.5), "independent", s, s, c, 0, plan)
    run = run_coupled(tasep_rule(0.5), "independent", s, s, plan, cylinders={"a": c})
    assert np.allclose(m.rate, run.column("mismatch_a"))
    m2 = indicator_mismatch_rate(tasep_rule(0.5), "independent", s, s, c, 2, plan)
    assert np.all(m2.rate <= m.rate)


def test_shift_bound_finds_translate():
    lat = Lattice(1, 21)
    x = Configuration.from_sites(lat, [0, 5])
    y = Configuration.from_sites(lat, [1, 6])
    m = indicator_mismatch_rate(identity_rule(), "independent", x, y, Cylinder.of({0: 1, 5: 1}), 2,
                                ReplicaPlan(1, 3))
    assert np.all(m.rate == 0) and m.best_shift[0] == (1,)


# --- Cesaro -------------------------------------------------------------------------------

def test_cesaro_identity_single_site():
    lat = Lattice(1, 16)
    e = cesaro_estimate(identity_rule(), bernoulli_sampler(lat, 0.5), 5, [Cylinder.of({0: 1})],
                        ReplicaPlan(2000, 0, 1))
    assert e.within([0.5])[0]


def test_cesaro_batched_equals_sequential():
    lat = Lattice(2, 6)
    cyls = {"one": Cylinder.of({(0, 0): 1}), "pair": Cylinder.of({(0, 0): 1, (1, 0): 0})}
    plan = ReplicaPlan(7, 0, 3)
    a = cesaro_estimate(tasep_rule(0.4), bernoulli_sampler(lat, 0.5), 37, cyls, plan, chunk=5)
    b = cesaro_estimate(tasep_rule(0.4), bernoulli_sampler(lat, 0.5), 37, cyls, plan, batch=False)
    assert np.array_equal(a.estimates, b.estimates)


def test_cesaro_length_one_is_plain_empirical():
    lat = Lattice(1, 16)
    plan = ReplicaPlan(50, 0, 8)
    c = Cylinder.of({0: 1})
    e = cesaro_estimate(tasep_rule(0.5), bernoulli_sampler(lat, 0.3), 1, [c], plan)
    direct = np.mean([c(bernoulli_sampler(lat, 0.3)(g)) for g in plan.generators()])
    assert e.estimates[0] == direct


def test_cesaro_predicates_on_bitstreams():
    e = cesaro_estimate(DOUBLING, lambda g: BitStream.uniform(g), 20, [BitCylinder((1,))],
                        ReplicaPlan(500, 0, 2))
    assert e.within([0.5], z=4)[0]


# --- densities -------------------------------------------------------------------------------

def test_density_series_conservation_and_zeros(rng):
    lat = Lattice(1, 41)
    x = Configuration.bernoulli(lat, 0.5, rng)
    s = density_series(tasep_rule(0.5), x, [None, 5], 60, rng)
    assert len(set(s[None])) == 1 and len(s[5]) == 61
    assert all(isinstance(v, Fraction) for v in s[5])
    z = density_series(tasep_rule(0.5), Configuration.zeros(lat), [3], 10, rng)
    assert z[3] == [0] * 11


def test_density_series_bad_radius():
    with pytest.raises(LatticeDomainError):
        density_series(tasep_rule(0.5), Configuration.zeros(Lattice(1, 11)), [6], 3)


def test_density_steps_respect_bound(rng):
    lat = Lattice(1, 64)
    x = Configuration.bernoulli(lat, 0.5, rng)
    s = density_series(tasep_rule(0.5), x, [8], 300, rng)[8]
    b = drift_bound(8, 1, 1, 2, exact=True)
    assert max(abs(b2 - b1) for b1, b2 in zip(s, s[1:])) <= b


def test_drift_bound_values():
    assert drift_bound(10, 1, 1, 2, exact=True) == Fraction(8, 21)
    assert drift_bound(5, 0, 2, 2) == 0
    with pytest.raises(ValueError):
        drift_bound(1, 1, 1, 2)
    vals = [drift_bound(n, 1, 2, 3) for n in range(2, 1001)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


# --- weak convergence --------------------------------------------------------------------------

def test_probe_identical_samplers():
    lat = Lattice(1, 16)
    s = bernoulli_sampler(lat, 0.5)
    res = weak_convergence_probe(tasep_rule(0.5), s, s, [Cylinder.of({0: 1})], 10, ReplicaPlan(400, 10, 2))
    assert np.all(res.difference <= res.ci + 1e-12)


def test_probe_doubling_measures_do_not_merge():
    res = weak_convergence_probe(DOUBLING, lambda g: BitStream.zeros(), lambda g: BitStream.uniform(g),
                                 [BitCylinder((0,))], 50, ReplicaPlan(300, 50, 1))
    assert np.all(res.first[:, 0] == 1)
    assert np.all(res.difference > 0.3)


def test_closeness_hits_identical_streams():
    b = BitStream.uniform(np.random.default_rng(0))
    assert closeness_hits(DOUBLING, b, b, 2.0 ** -10, 5, lambda u, v: bit_metric(u, v, 10)) == list(range(6))


def test_samplers_pickle():
    lat = Lattice(1, 8)
    for obj in (bernoulli_sampler(lat, 0.5), constant_sampler(Configuration.zeros(lat)), BitCylinder((1, 0))):
        assert pickle.loads(pickle.dumps(obj)) == obj
