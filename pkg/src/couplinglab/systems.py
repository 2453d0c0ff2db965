"""Synchronous locally interacting particle systems and the toy chains.

A :class:`SystemRule` is evaluated on whole site arrays.  Every occupied
site draws one uniform number; ``velocity`` turns these numbers into
velocity vectors with ``|v| <= V`` and ``admissible`` decides, from the
current configuration only, which proposed moves happen.  A move carries
one particle from its site to ``site + v``; all moves of a step are applied
at once.  On an open window a particle moved outside is lost.

The same functions accept a leading batch axis, which the estimators use to
run many replicas in lockstep.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from . import _pairing
from .lattice import (
    Boundary,
    Configuration,
    Lattice,
    LatticeDomainError,
    UnsupportedOperation,
)

__all__ = [
    "InvariantViolation",
    "SystemRule",
    "step",
    "apply_rule",
    "propose_moves",
    "step_values",
    "tasep_rule",
    "particle_vacancy_rule",
    "identity_rule",
    "shift_annihilation_step",
    "shift_annihilation_closed_form",
    "halving_step",
    "doubling_step",
    "BitStream",
    "DeterministicMap",
    "HALVING",
    "DOUBLING",
    "SHIFT_ANNIHILATION",
]


class InvariantViolation(RuntimeError):
    """A rule or coupling broke one of its structural invariants."""


@dataclass(frozen=True)
class SystemRule:
    """Velocity procedure plus admissibility predicate.

    ``velocity(noise, lattice) -> int array (..., *shape, d)``
    ``admissible(values, velocity, targets, lattice) -> bool array (..., *shape)``
    where ``targets`` holds flat target indices (``-1`` off an open window).
    """

    name: str
    V: int
    velocity: Callable
    admissible: Callable
    alphabet_size: int = 2
    conservative: bool = True
    translation_covariant: bool = True
    boundary: Boundary | None = None
    params: dict = field(default_factory=dict, compare=False)
    kernel: int | None = field(default=None, compare=False)  # compiled coupled-step code

    def check(self, x: Configuration):
        if x.alphabet.size != self.alphabet_size:
            raise LatticeDomainError(
                f"{self.name} needs alphabet size {self.alphabet_size}, got {x.alphabet.size}"
            )
        if self.boundary is not None and x.lattice.boundary is not self.boundary:
            raise UnsupportedOperation(
                f"{self.name} runs on a {self.boundary.value} lattice, got {x.lattice.boundary.value}"
            )

    def step(self, x: Configuration, rng: np.random.Generator) -> Configuration:
        return step(self, x, rng)


def gather(values: np.ndarray, targets: np.ndarray, lattice: Lattice) -> np.ndarray:
    """Values at flat target indices; off-window targets (``-1``) read as empty."""
    flat = values.reshape(-1, lattice.n_sites)
    safe = np.where(targets < 0, 0, targets).reshape(flat.shape)
    out = np.take_along_axis(flat, safe, axis=1).reshape(targets.shape)
    return np.where(targets < 0, 0, out)


def propose_moves(rule: SystemRule, values: np.ndarray, noise: np.ndarray, lattice: Lattice):
    """Decide the moves of one synchronous step.

    Returns ``(moves, targets, velocity)``: a boolean array marking sites
    whose particle moves, the flat target index of every site and the
    proposed velocities.
    """
    vel = np.asarray(rule.velocity(noise, lattice), dtype=np.int64)
    if vel.shape != noise.shape + (lattice.dimension,):
        raise InvariantViolation(f"{rule.name}: velocity array has shape {vel.shape}")
    if vel.size and np.abs(vel).max() > rule.V:
        raise InvariantViolation(f"{rule.name}: velocity exceeds V={rule.V}")
    grid = lattice.coords.reshape(lattice.shape + (lattice.dimension,))
    targets = lattice.flat_index(grid + vel)
    moving = (values > 0) & vel.any(axis=-1)
    ok = np.asarray(rule.admissible(values, vel, targets, lattice), dtype=bool)
    return moving & ok, targets, vel


def apply_rule(rule: SystemRule, x: Configuration, noise: np.ndarray) -> Configuration:
    """One step of ``rule`` driven by an explicit per-site noise array."""
    rule.check(x)
    noise = np.asarray(noise, dtype=float).reshape(x.lattice.shape)
    new = step_values(rule, x.values, noise, x.lattice, x.alphabet.max_value)
    return x.with_values(new)


def step_values(rule: SystemRule, values: np.ndarray, noise: np.ndarray, lattice: Lattice, max_value: int):
    """Array-level step; ``values`` and ``noise`` may carry a leading batch axis.

    Built-in rules on binary tori use a compiled loop with the same result.
    """
    if rule.kernel is not None and max_value == 1 and lattice.is_torus:
        flat = np.ascontiguousarray(values, dtype=np.int64).reshape(-1, lattice.n_sites)
        nz = np.ascontiguousarray(noise, dtype=float).reshape(flat.shape)
        out = _pairing.step_kernel(rule.kernel, float(rule.params.get("p", 0.0)), flat, nz,
                                   lattice.coords, lattice.side)
        return out.reshape(values.shape)
    return _step_values_arrays(rule, values, noise, lattice, max_value)


def _step_values_arrays(rule, values, noise, lattice, max_value):
    moves, targets, _ = propose_moves(rule, values, noise, lattice)
    return move_particles(rule, values, moves, targets, lattice, max_value)


def move_particles(rule, values, moves, targets, lattice, max_value):
    flat = values.reshape(-1, lattice.n_sites).copy()
    mv = moves.reshape(flat.shape)
    tg = targets.reshape(flat.shape)
    flat -= mv
    rows, cols = np.nonzero(mv)
    dest = tg[rows, cols]
    keep = dest >= 0
    np.add.at(flat, (rows[keep], dest[keep]), 1)
    if flat.size and (flat.min() < 0 or flat.max() > max_value):
        raise InvariantViolation(f"{rule.name}: step produced values outside the alphabet")
    return flat.reshape(values.shape)


def step(rule: SystemRule, x: Configuration, rng: np.random.Generator) -> Configuration:
    """One synchronous step: every clock rings, all admissible moves happen together."""
    return apply_rule(rule, x, rng.random(x.lattice.shape))


# --- TASEP -----------------------------------------------------------------

def _forward_velocity(noise, lattice, *, p):
    v = np.zeros(noise.shape + (lattice.dimension,), dtype=np.int64)
    v[..., 0] = noise < p
    return v


def _target_empty(values, vel, targets, lattice):
    return gather(values, targets, lattice) == 0


def tasep_rule(p: float, alphabet_size: int = 2) -> SystemRule:
    """Parallel-update TASEP: hop one site along the first axis with probability ``p``.

    A hop is admissible iff the target is empty in the current configuration,
    so two particles never enter the same site.
    """
    if not 0 <= p <= 1:
        raise LatticeDomainError(f"hop probability {p} outside [0, 1]")
    if alphabet_size != 2:
        raise LatticeDomainError("TASEP is an exclusion process: alphabet size must be 2")
    return SystemRule(
        name="tasep",
        V=1,
        velocity=partial(_forward_velocity, p=p),
        admissible=_target_empty,
        params={"p": p},
        kernel=_pairing.RULE_FORWARD,
    )


def _outward_velocity(noise, lattice, *, p):
    if lattice.dimension != 1:
        raise UnsupportedOperation("particle/vacancy rule is one-dimensional")
    sites = lattice.coords[:, 0].reshape(lattice.shape)
    direction = np.where(sites >= 0, 1, -1)
    return (np.where(noise < p, direction, 0))[..., None]


def particle_vacancy_rule(p: float, alphabet_size: int = 2) -> SystemRule:
    """Particles at ``i >= 0`` swap with a vacancy on their right, those at
    ``i < 0`` with a vacancy on their left, each with probability ``p``."""
    if not 0 <= p <= 1:
        raise LatticeDomainError(f"swap probability {p} outside [0, 1]")
    if alphabet_size != 2:
        raise LatticeDomainError("particle/vacancy rule needs alphabet size 2")
    return SystemRule(
        name="particle_vacancy",
        V=1,
        velocity=partial(_outward_velocity, p=p),
        admissible=_target_empty,
        translation_covariant=False,
        # on a torus the two wrap-around movers could collide
        boundary=Boundary.OPEN,
        params={"p": p},
    )


def _zero_velocity(noise, lattice):
    return np.zeros(noise.shape + (lattice.dimension,), dtype=np.int64)


def _always(values, vel, targets, lattice):
    return np.ones(values.shape, dtype=bool)


def identity_rule(alphabet_size: int = 2) -> SystemRule:
    """Nothing moves."""
    return SystemRule("identity", 0, _zero_velocity, _always, alphabet_size=alphabet_size,
                      params={"p": 0.0}, kernel=_pairing.RULE_IDENTITY)


# --- shift-annihilation map ------------------------------------------------

def shift_annihilation_step(x: Configuration) -> Configuration:
    """Keep the origin, push the right half right and the left half left,
    zero sites +-1.  Values pushed past the window edge are lost."""
    lat = x.lattice
    if lat.dimension != 1:
        raise UnsupportedOperation("shift-annihilation map is one-dimensional")
    if lat.is_torus:
        raise UnsupportedOperation("shift-annihilation map needs an open window")
    v = x.values
    c = lat.offset
    out = np.zeros_like(v)
    out[c] = v[c]
    out[c + 2:] = v[c + 1:-1]
    out[: c - 1] = v[1: c]
    return x.with_values(out)


def shift_annihilation_closed_form(x: Configuration, t: int) -> Configuration:
    """``T^t x`` written out directly (valid for ``t <= radius``)."""
    lat = x.lattice
    n = lat.radius
    if not 0 <= t <= n:
        raise LatticeDomainError(f"closed form holds for 0 <= t <= {n}")
    v = x.values
    c = lat.offset
    out = np.zeros_like(v)
    out[c] = v[c]
    for i in range(t + 1, n + 1):
        out[c + i] = v[c + i - t]
        out[c - i] = v[c - i + t]
    return x.with_values(out)


# --- toy chains ------------------------------------------------------------

def halving_step(x):
    """``x -> x/2``; exact for floats and :class:`fractions.Fraction`."""
    return x / 2


class _BitSource:
    """Append-only bit buffer refilled from a generator or a constant."""

    __slots__ = ("buf", "length", "fill", "rng")

    def __init__(self, prefix, fill):
        prefix = np.asarray(prefix, dtype=np.uint8)
        self.buf = np.empty(max(64, 2 * prefix.size), dtype=np.uint8)
        self.buf[: prefix.size] = prefix
        self.length = prefix.size
        if isinstance(fill, np.random.Generator):
            self.rng, self.fill = fill, None
        else:
            self.rng, self.fill = None, int(fill)

    def ensure(self, n: int):
        if n <= self.length:
            return
        need = max(n, 2 * self.length)
        if need > self.buf.size:
            grown = np.empty(need, dtype=np.uint8)
            grown[: self.length] = self.buf[: self.length]
            self.buf = grown
        extra = need - self.length
        if self.rng is not None:
            self.buf[self.length: need] = self.rng.integers(0, 2, size=extra, dtype=np.uint8)
        else:
            self.buf[self.length: need] = self.fill
        self.length = need


class BitStream:
    """One-sided binary sequence, the binary expansion of a point of [0, 1).

    Bits are materialized on demand; once read, a bit never changes.  Streams
    produced by :func:`doubling_step` share the underlying buffer.
    """

    __slots__ = ("_src", "offset")

    def __init__(self, source: _BitSource, offset: int = 0):
        self._src = source
        self.offset = offset

    @classmethod
    def uniform(cls, rng: np.random.Generator) -> "BitStream":
        """Fair coin bits: the binary digits of a Lebesgue-random point."""
        return cls(_BitSource([], rng))

    @classmethod
    def zeros(cls) -> "BitStream":
        return cls(_BitSource([], 0))

    @classmethod
    def from_bits(cls, prefix, fill=0) -> "BitStream":
        """Given leading bits, then ``fill`` (0, 1 or a generator) forever."""
        return cls(_BitSource(prefix, fill))

    def bits(self, k: int) -> np.ndarray:
        self._src.ensure(self.offset + k)
        out = self._src.buf[self.offset: self.offset + k].copy()
        return out

    def __getitem__(self, i: int) -> int:
        return int(self.bits(i + 1)[i])

    def shifted(self, t: int) -> "BitStream":
        return BitStream(self._src, self.offset + t)

    def common_prefix(self, other: "BitStream", max_bits: int = 64) -> int:
        a, b = self.bits(max_bits), other.bits(max_bits)
        diff = np.flatnonzero(a != b)
        return int(diff[0]) if diff.size else max_bits

    def value(self, k: int = 53) -> float:
        """Dyadic approximation of the point from its first ``k`` bits."""
        b = self.bits(k).astype(float)
        return float(np.sum(b * 0.5 ** np.arange(1, k + 1)))

    def __repr__(self):
        return "BitStream(" + "".join(map(str, self.bits(16))) + "...)"


def doubling_step(b: BitStream) -> BitStream:
    """``x -> 2x mod 1`` on binary expansions: drop the leading bit."""
    return b.shifted(1)


class DeterministicMap:
    """Adapter giving a deterministic map the ``step(state, rng)`` interface."""

    def __init__(self, name: str, fn: Callable):
        self.name = name
        self.fn = fn

    def step(self, state, rng=None):
        return self.fn(state)

    def __repr__(self):
        return f"DeterministicMap({self.name})"


HALVING = DeterministicMap("halving", halving_step)
DOUBLING = DeterministicMap("doubling", doubling_step)
SHIFT_ANNIHILATION = DeterministicMap("shift_annihilation", shift_annihilation_step)
