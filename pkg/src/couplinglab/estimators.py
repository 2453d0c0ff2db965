"""Monte Carlo harness: replica plans, coupled-trajectory statistics,
time-averaged (Cesaro) cylinder estimates, density series and the window
drift bound.

Every replica owns a generator derived from the plan's seed, so results do
not depend on how replicas are scheduled.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .coupling import CoupledState, CouplingKind, coupled_step, pairing_update
from .lattice import (
    Configuration,
    Cylinder,
    LatticeDomainError,
    cylinder_indicator,
    density,
    density_full,
    shift,
)
from .metrics import discrepancy_density, shifted_discrepancy_density
from .systems import SystemRule, step_values

__all__ = [
    "Z_DEFAULT",
    "ReplicaPlan",
    "TrajectoryStats",
    "Aggregate",
    "CoupledRun",
    "MismatchRate",
    "EmpiricalMeasure",
    "ProbeResult",
    "BitCylinder",
    "bernoulli_sampler",
    "constant_sampler",
    "run_coupled",
    "indicator_mismatch_rate",
    "cesaro_estimate",
    "density_series",
    "drift_bound",
    "weak_convergence_probe",
    "closeness_hits",
]

Z_DEFAULT = 3.0


@dataclass(frozen=True)
class ReplicaPlan:
    """``R`` replicas of horizon ``T``.

    Replica ``i`` of stream ``k`` uses the child ``(k, i)`` of
    ``SeedSequence(seed)``; without a stream it uses child ``i``.
    """

    R: int
    T: int
    seed: int = 0

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("replica count must be positive")
        if self.T < 0:
            raise ValueError("horizon must be nonnegative")

    def seed_sequences(self, stream: int | None = None) -> list[np.random.SeedSequence]:
        if stream is None:
            root = np.random.SeedSequence(self.seed)
        else:
            root = np.random.SeedSequence(self.seed, spawn_key=(int(stream),))
        return root.spawn(self.R)

    def generators(self, stream: int | None = None) -> list[np.random.Generator]:
        return [np.random.default_rng(s) for s in self.seed_sequences(stream)]

    def to_dict(self) -> dict:
        return {
            "R": self.R,
            "T": self.T,
            "seed": self.seed,
            "derivation": "numpy SeedSequence(seed).spawn(R), replica i uses child i",
        }


# --- samplers and events ---------------------------------------------------

@dataclass(frozen=True)
class bernoulli_sampler:
    """Product measure with occupation probability ``r`` on ``lattice``."""

    lattice: object
    r: float

    def __call__(self, rng):
        return Configuration.bernoulli(self.lattice, self.r, rng)


@dataclass(frozen=True)
class constant_sampler:
    """Always the same initial state (no randomness consumed)."""

    state: object

    def __call__(self, rng):
        return self.state


@dataclass(frozen=True)
class BitCylinder:
    """Event ``b_i = v_i`` for the given leading bits of a bit stream."""

    prefix: tuple

    def __call__(self, b) -> bool:
        k = len(self.prefix)
        return bool(np.array_equal(b.bits(k), np.asarray(self.prefix, dtype=np.uint8)))


def _indicator(event, state) -> int:
    if isinstance(event, Cylinder):
        return cylinder_indicator(state, event)
    return int(bool(event(state)))


def _named(events) -> dict:
    if events is None:
        return {}
    if isinstance(events, Mapping):
        return dict(events)
    return {f"c{i}": e for i, e in enumerate(events)}


def _initial(init, rng):
    return init(rng) if callable(init) and not isinstance(init, Configuration) else init


# --- coupled trajectories --------------------------------------------------

@dataclass
class TrajectoryStats:
    """Per-replica series, one entry per recorded time."""

    times: np.ndarray
    discrepancy: np.ndarray
    shifted_discrepancy: np.ndarray
    best_shift: np.ndarray
    paired: np.ndarray
    unpaired_x: np.ndarray
    unpaired_y: np.ndarray
    unpaired_fraction: np.ndarray
    density_x: dict = field(default_factory=dict)
    density_y: dict = field(default_factory=dict)
    mismatch: dict = field(default_factory=dict)

    def series(self) -> dict[str, np.ndarray]:
        out = {
            "discrepancy": self.discrepancy,
            "shifted_discrepancy": self.shifted_discrepancy,
            "paired": self.paired,
            "unpaired_x": self.unpaired_x,
            "unpaired_y": self.unpaired_y,
            "unpaired_fraction": self.unpaired_fraction,
        }
        for k in range(self.best_shift.shape[1]):
            out[f"best_shift_{k}"] = self.best_shift[:, k]
        for n, s in self.density_x.items():
            out[f"density_x_{n}"] = s
        for n, s in self.density_y.items():
            out[f"density_y_{n}"] = s
        for name, s in self.mismatch.items():
            out[f"mismatch_{name}"] = s
        return out


@dataclass
class Aggregate:
    mean: np.ndarray
    median: np.ndarray
    ci: np.ndarray


def _aggregate(samples: np.ndarray, z: float) -> Aggregate:
    """Mean, median and ``z`` standard errors across axis 0."""
    samples = np.asarray(samples, dtype=float)
    R = samples.shape[0]
    sd = samples.std(axis=0, ddof=1) if R > 1 else np.zeros(samples.shape[1:])
    return Aggregate(samples.mean(axis=0), np.median(samples, axis=0), z * sd / math.sqrt(R))


@dataclass
class CoupledRun:
    times: np.ndarray
    replicas: list
    aggregate: dict
    seeds: list

    def column(self, name: str, stat: str = "mean") -> np.ndarray:
        return getattr(self.aggregate[name], stat)


def _recording_times(times, T) -> np.ndarray:
    if times is None:
        return np.arange(T + 1)
    t = np.unique(np.asarray(list(times), dtype=np.int64))
    if t.size and (t[0] < 0 or t[-1] > T):
        raise LatticeDomainError(f"recording times must lie in 0..{T}")
    return t


def _replica(job):
    (rule, kind, x0, y0, L, shift_bound, radii, events, times, T, seq, trace, compiled) = job
    rng = np.random.default_rng(seq)
    x = _initial(x0, rng)
    y = _initial(y0, rng)
    state = CoupledState.start(x, y, kind, L)
    log = [] if trace else None
    if state.kind.pairs:
        state = pairing_update(state, rng, log=log)
    lat = x.lattice
    n_rec = times.size
    d = lat.dimension
    st = TrajectoryStats(
        times=times,
        discrepancy=np.zeros(n_rec),
        shifted_discrepancy=np.full(n_rec, np.nan),
        best_shift=np.zeros((n_rec, d), dtype=np.int64),
        paired=np.zeros(n_rec, dtype=np.int64),
        unpaired_x=np.zeros(n_rec, dtype=np.int64),
        unpaired_y=np.zeros(n_rec, dtype=np.int64),
        unpaired_fraction=np.zeros(n_rec),
        density_x={n: np.zeros(n_rec) for n in radii},
        density_y={n: np.zeros(n_rec) for n in radii},
        mismatch={name: np.zeros(n_rec, dtype=np.int64) for name in events},
    )
    k = 0
    for t in range(T + 1):
        if t > 0:
            state = coupled_step(state, rule, rng, log=log, compiled=compiled)
        if k < n_rec and times[k] == t:
            _record(st, k, state, lat, shift_bound, radii, events)
            k += 1
    return st, log


def _record(st, k, state, lat, shift_bound, radii, events):
    x, y = state.x, state.y
    st.discrepancy[k] = float(discrepancy_density(x, y))
    if lat.is_torus:
        val, ell = shifted_discrepancy_density(x, y, shift_bound)
        st.shifted_discrepancy[k] = float(val)
        st.best_shift[k] = ell
    reg = state.registry
    nx, ny = reg.counts()
    npair = reg.n_pairs
    st.paired[k] = npair
    st.unpaired_x[k] = nx - npair
    st.unpaired_y[k] = ny - npair
    st.unpaired_fraction[k] = state.unpaired_fraction
    for n in radii:
        st.density_x[n][k] = float(density(x, n))
        st.density_y[n][k] = float(density(y, n))
    for name, ev in events.items():
        st.mismatch[name][k] = int(_indicator(ev, x) != _indicator(ev, y))


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def run_coupled(rule: SystemRule, kind, x0, y0, plan: ReplicaPlan, *, L: int = 1,
                shift_bound: int | None = None, radii: Sequence[int] = (), cylinders=None,
                times=None, z: float = Z_DEFAULT, workers: int = 1, trace: list | None = None,
                compiled: bool | None = None) -> CoupledRun:
    """Run ``plan.R`` coupled replicas and aggregate their statistics.

    ``x0`` and ``y0`` are configurations or samplers ``rng -> Configuration``.
    Pairing kinds run one pairing sweep on the initial state before the
    first step.  ``shift_bound`` (default: the pairing distance, clipped to
    the lattice) bounds the shifts of the shifted discrepancy.  Passing a
    list as ``trace`` collects the pairing events of replica 0.
    """
    kind = CouplingKind(kind)
    events = _named(cylinders)
    t_rec = _recording_times(times, plan.T)
    seqs = plan.seed_sequences()
    probe_rng = np.random.default_rng(seqs[0])
    probe_x, probe_y = _initial(x0, probe_rng), _initial(y0, probe_rng)
    if probe_x.lattice != probe_y.lattice:
        raise LatticeDomainError("x0 and y0 live on different lattices")
    lat = probe_x.lattice
    if shift_bound is None:
        shift_bound = min(L, (lat.side - 1) // 2) if kind.pairs and kind is not CouplingKind.EQUAL_PAIRING else 0
    for n in radii:
        if not 0 <= n <= lat.radius:
            raise LatticeDomainError(f"window radius {n} not in 0..{lat.radius}")
    jobs = [
        (rule, kind, x0, y0, L, shift_bound, tuple(radii), events, t_rec, plan.T, s,
         trace is not None and i == 0, compiled)
        for i, s in enumerate(seqs)
    ]
    results = _map(_replica, jobs, workers)
    reps = [r[0] for r in results]
    if trace is not None and results[0][1]:
        trace.extend(results[0][1])
    agg = {}
    for name in reps[0].series():
        agg[name] = _aggregate(np.stack([r.series()[name] for r in reps]), z)
    return CoupledRun(t_rec, reps, agg, [s.spawn_key for s in seqs])


# --- shifted indicator mismatch --------------------------------------------

@dataclass
class MismatchRate:
    times: np.ndarray
    shifts: list
    per_shift: np.ndarray  # (n_shifts, n_times)
    rate: np.ndarray
    best_shift: list
    ci: np.ndarray
    R: int


def _child(seq: np.random.SeedSequence, k: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seq.entropy, spawn_key=tuple(seq.spawn_key) + (k,))


def _generic_pair(dynamics, kind, x0, y0, seq, T):
    """Two copies of a chain without particle structure."""
    rng = np.random.default_rng(seq)
    x = _initial(x0, rng)
    y = _initial(y0, rng)
    # synchronous copies read one stream, other kinds two independent ones
    keys = (0, 0) if kind is CouplingKind.SYNCHRONOUS else (0, 1)
    rx, ry = (np.random.default_rng(_child(seq, k)) for k in keys)
    yield x, y
    for _ in range(T):
        x = dynamics.step(x, rx)
        y = dynamics.step(y, ry)
        yield x, y


def _coupled_pairs(dynamics, kind, x0, y0, seq, T, L):
    if not isinstance(dynamics, SystemRule):
        yield from _generic_pair(dynamics, kind, x0, y0, seq, T)
        return
    rng = np.random.default_rng(seq)
    state = CoupledState.start(_initial(x0, rng), _initial(y0, rng), kind, max(L, 1))
    if state.kind.pairs:
        state = pairing_update(state, rng)
    yield state.x, state.y
    for _ in range(T):
        state = coupled_step(state, dynamics, rng)
        yield state.x, state.y


def indicator_mismatch_rate(dynamics, kind, x0, y0, event, L: int, plan: ReplicaPlan, *,
                            pair_L: int = 1, z: float = Z_DEFAULT, times=None) -> MismatchRate:
    """Estimate ``P(1_A(x^t) != 1_A(shift(y^t, l)))`` and minimize over ``|l| <= L``.

    The minimum is taken over fixed shifts after averaging over replicas.
    ``event`` is a :class:`Cylinder` or any predicate on states.  Chains
    without a lattice only admit ``L = 0``.
    """
    kind = CouplingKind(kind)
    t_rec = _recording_times(times, plan.T)
    seqs = plan.seed_sequences()
    shifts = None
    hits = None
    for seq in seqs:
        k = 0
        for t, (x, y) in enumerate(_coupled_pairs(dynamics, kind, x0, y0, seq, plan.T, pair_L)):
            if shifts is None:
                if L == 0:
                    shifts = [None]
                elif isinstance(x, Configuration):
                    shifts = x.lattice.vectors(L)
                else:
                    raise LatticeDomainError("shifts need lattice configurations")
                hits = np.zeros((len(shifts), t_rec.size))
            if k < t_rec.size and t_rec[k] == t:
                ix = _indicator(event, x)
                for s, ell in enumerate(shifts):
                    ys = y if ell is None else shift(y, ell)
                    hits[s, k] += ix != _indicator(event, ys)
                k += 1
    per_shift = hits / plan.R
    best = per_shift.argmin(axis=0)
    rate = per_shift[best, np.arange(t_rec.size)]
    ci = z * np.sqrt(rate * (1 - rate) / plan.R)
    zero = tuple([0] * len(shifts[0])) if shifts[0] is not None else ()
    return MismatchRate(
        t_rec, [zero if s is None else s for s in shifts], per_shift, rate,
        [shifts[b] if shifts[b] is not None else zero for b in best], ci, plan.R,
    )


# --- time averages -----------------------------------------------------------

@dataclass
class EmpiricalMeasure:
    """Cylinder probabilities with normal-approximation confidence radii."""

    names: list
    estimates: np.ndarray
    R: int
    N: int
    z: float = Z_DEFAULT

    @property
    def radius(self) -> np.ndarray:
        p = self.estimates
        return self.z * np.sqrt(p * (1 - p) / self.R)

    def within(self, expected, z: float | None = None) -> np.ndarray:
        z = self.z if z is None else z
        p = self.estimates
        return np.abs(p - np.asarray(expected)) <= z * np.sqrt(p * (1 - p) / self.R)

    def as_dict(self) -> dict:
        return {n: float(p) for n, p in zip(self.names, self.estimates)}


def _cesaro_batched(rule, sampler, N, cyls, gens, chunk):
    x0 = [sampler(g) for g in gens]
    lat = x0[0].lattice
    max_value = x0[0].alphabet.max_value
    R = len(gens)
    vals = np.stack([x.values for x in x0])
    base = [(c.base_indices(lat), np.asarray(c.values)) for c in cyls]
    counts = np.zeros((R, len(cyls)), dtype=np.int64)
    t = 0
    while t < N:
        m = min(chunk, N - t)
        # identical to drawing rng.random(shape) once per step
        noise = np.empty((R, m) + lat.shape)
        for r, g in enumerate(gens):
            g.random(out=noise[r])
        for s in range(m):
            flat = vals.reshape(R, -1)
            for j, (idx, v) in enumerate(base):
                counts[:, j] += np.all(flat[:, idx] == v, axis=1)
            if t + s + 1 < N:
                vals = step_values(rule, vals, noise[:, s], lat, max_value)
        t += m
    return counts / N


def _cesaro_sequential(dynamics, sampler, N, events, gens):
    out = np.zeros((len(gens), len(events)))
    for r, g in enumerate(gens):
        x = sampler(g)
        for t in range(N):
            for j, ev in enumerate(events):
                out[r, j] += _indicator(ev, x)
            if t + 1 < N:
                x = dynamics.step(x, g)
    return out / N


def cesaro_estimate(dynamics, sampler: Callable, N: int, cylinders, plan: ReplicaPlan, *,
                    z: float = Z_DEFAULT, batch: bool | None = None, chunk: int = 64) -> EmpiricalMeasure:
    """Estimate ``mu^N(A) = (1/N) sum_{t<N} P(x^t in A)`` for each cylinder.

    Each replica draws its initial state from ``sampler`` and contributes the
    time average of the indicators over ``t = 0..N-1``.  Lattice rules with
    plain cylinders run all replicas in lockstep; the result equals the
    replica-by-replica computation exactly.
    """
    if N < 1:
        raise ValueError("averaging length must be positive")
    events = _named(cylinders)
    evs = list(events.values())
    gens = plan.generators()
    can_batch = isinstance(dynamics, SystemRule) and all(isinstance(e, Cylinder) for e in evs)
    if batch is None:
        batch = can_batch
    if batch and not can_batch:
        raise ValueError("batched averaging needs a lattice rule and plain cylinders")
    if batch:
        per = _cesaro_batched(dynamics, sampler, N, evs, gens, chunk)
    else:
        per = _cesaro_sequential(dynamics, sampler, N, evs, gens)
    return EmpiricalMeasure(list(events), per.mean(axis=0), plan.R, N, z)


# --- densities ---------------------------------------------------------------

def density_series(dynamics, x0: Configuration, radii: Sequence, T: int, rng=None) -> dict:
    """Exact series ``rho(x^t, I_n)``, ``t = 0..T``, per window radius.

    A radius of ``None`` stands for the whole lattice.
    """
    lat = x0.lattice
    for n in radii:
        if n is not None and not 0 <= n <= lat.radius:
            raise LatticeDomainError(f"window radius {n} not in 0..{lat.radius}")
    if rng is None:
        rng = np.random.default_rng(0)
    out = {n: [] for n in radii}
    x = x0
    for t in range(T + 1):
        if t:
            x = dynamics.step(x, rng)
        for n in radii:
            out[n].append(density_full(x) if n is None else density(x, n))
    return out


def drift_bound(n: int, V: int, d: int, alphabet_size: int, exact: bool = False):
    """Largest one-step change of the density in a radius-``n`` window.

    ``2|A| max(1 - (1 - 2V/(2n+1))^d, (1 + 2V/(2n+1))^d - 1)``; only particles
    within ``V`` of the window edge can cross it in one step.
    """
    if d < 1:
        raise ValueError("dimension must be positive")
    if V < 0:
        raise ValueError("speed bound must be nonnegative")
    if n <= V:
        raise ValueError(f"window radius {n} must exceed the speed bound {V}")
    q = Fraction(2 * V, 2 * n + 1)
    val = 2 * alphabet_size * max(1 - (1 - q) ** d, (1 + q) ** d - 1)
    return val if exact else float(val)


# --- weak convergence ----------------------------------------------------------

@dataclass
class ProbeResult:
    times: np.ndarray
    names: list
    first: np.ndarray  # (n_times, n_cylinders)
    second: np.ndarray
    R: int
    z: float = Z_DEFAULT

    @property
    def difference(self) -> np.ndarray:
        return np.abs(self.first - self.second).max(axis=1)

    @property
    def ci(self) -> np.ndarray:
        """Confidence radius of the difference at the maximizing cylinder."""
        j = np.abs(self.first - self.second).argmax(axis=1)
        rows = np.arange(self.times.size)
        p, q = self.first[rows, j], self.second[rows, j]
        return self.z * np.sqrt((p * (1 - p) + q * (1 - q)) / self.R)


def _probe_side(dynamics, sampler, events, gens, t_rec, T):
    out = np.zeros((t_rec.size, len(events)))
    for g in gens:
        x = sampler(g)
        k = 0
        for t in range(T + 1):
            if t:
                x = dynamics.step(x, g)
            if k < t_rec.size and t_rec[k] == t:
                for j, ev in enumerate(events):
                    out[k, j] += _indicator(ev, x)
                k += 1
    return out / len(gens)


def weak_convergence_probe(dynamics, sampler1: Callable, sampler2: Callable, cylinders,
                           T: int, plan: ReplicaPlan, *, z: float = Z_DEFAULT,
                           times=None) -> ProbeResult:
    """Cylinder estimates of the laws at time ``t`` from two initial samplers.

    The two sides use independent seed streams of the same plan.
    """
    events = _named(cylinders)
    evs = list(events.values())
    t_rec = _recording_times(times, T)
    a = _probe_side(dynamics, sampler1, evs, plan.generators(stream=0), t_rec, T)
    b = _probe_side(dynamics, sampler2, evs, plan.generators(stream=1), t_rec, T)
    return ProbeResult(t_rec, list(events), a, b, plan.R, z)


def closeness_hits(dynamics, a, b, eps: float, T: int, metric: Callable, rng=None) -> list[int]:
    """Times ``t <= T`` at which the two trajectories are within ``eps``."""
    out = []
    for t in range(T + 1):
        if t:
            a = dynamics.step(a, rng)
            b = dynamics.step(b, rng)
        if metric(a, b) <= eps:
            out.append(t)
    return out
