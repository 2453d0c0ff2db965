"""Finite lattices, configurations, cylinders and particle densities.

Sites carry centered integer coordinates.  On a lattice of odd side
``s = 2n + 1`` the coordinates along each axis run over ``-n..n``; an even
side ``s`` (torus only) uses ``-s/2..s/2 - 1``.  Array index = coordinate +
``side // 2``.  Flat site indices are row-major over these arrays.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Alphabet",
    "Boundary",
    "Lattice",
    "Configuration",
    "Cylinder",
    "DensitySector",
    "LatticeDomainError",
    "UnsupportedOperation",
    "shift",
    "cylinder_indicator",
    "density",
    "density_full",
]


class LatticeDomainError(ValueError):
    """Argument outside the domain of a lattice operation."""


class UnsupportedOperation(ValueError):
    """Operation not defined for the lattice boundary in use."""


class Boundary(str, enum.Enum):
    TORUS = "torus"
    OPEN = "open"


@dataclass(frozen=True)
class Alphabet:
    """Symbols ``0..size-1``, read as particle counts per site."""

    size: int = 2

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 2:
            raise LatticeDomainError(f"alphabet size must be an integer >= 2, got {self.size}")

    @property
    def max_value(self) -> int:
        return self.size - 1


def _as_alphabet(a) -> Alphabet:
    return a if isinstance(a, Alphabet) else Alphabet(int(a))


@dataclass(frozen=True)
class Lattice:
    """Cubic window of ``side**dimension`` sites, periodic or open."""

    dimension: int
    side: int
    boundary: Boundary = Boundary.TORUS

    def __post_init__(self):
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if self.dimension < 1:
            raise LatticeDomainError("dimension must be >= 1")
        if self.side < 1:
            raise LatticeDomainError("side must be >= 1")
        if self.boundary is Boundary.OPEN and self.side % 2 == 0:
            raise LatticeDomainError("open windows need an odd side 2n+1")

    @classmethod
    def from_radius(cls, radius: int, dimension: int = 1, boundary="torus") -> "Lattice":
        return cls(dimension, 2 * radius + 1, Boundary(boundary))

    @property
    def radius(self) -> int:
        """Largest ``m`` such that the ball ``I_m`` fits without wrapping."""
        return (self.side - 1) // 2

    @property
    def offset(self) -> int:
        return self.side // 2

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.dimension

    @property
    def n_sites(self) -> int:
        return self.side ** self.dimension

    @property
    def is_torus(self) -> bool:
        return self.boundary is Boundary.TORUS

    @cached_property
    def coords(self) -> np.ndarray:
        """Centered coordinates of every site, shape ``(n_sites, d)``."""
        axes = [np.arange(self.side) - self.offset] * self.dimension
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        out = grid.reshape(-1, self.dimension)
        out.flags.writeable = False
        return out

    @cached_property
    def norms(self) -> np.ndarray:
        """Sup-norm ``|l|`` of every site, flat."""
        out = np.abs(self.coords).max(axis=1)
        out.flags.writeable = False
        return out

    @cached_property
    def _strides(self) -> np.ndarray:
        return self.side ** np.arange(self.dimension - 1, -1, -1)

    def contains(self, coords) -> np.ndarray:
        idx = np.asarray(coords) + self.offset
        return np.all((idx >= 0) & (idx < self.side), axis=-1)

    def flat_index(self, coords, *, wrap: bool | None = None) -> np.ndarray:
        """Flat indices for coordinates of shape ``(..., d)``.

        On a torus coordinates wrap; on an open window outside points map to
        ``-1`` when ``wrap`` is False (the default for open windows).
        """
        idx = np.asarray(coords, dtype=np.int64) + self.offset
        if idx.shape[-1] != self.dimension:
            raise LatticeDomainError(
                f"expected {self.dimension}-dimensional coordinates, got shape {idx.shape}"
            )
        if wrap is None:
            wrap = self.is_torus
        if wrap:
            return (idx % self.side) @ self._strides
        inside = np.all((idx >= 0) & (idx < self.side), axis=-1)
        flat = np.clip(idx, 0, self.side - 1) @ self._strides
        return np.where(inside, flat, -1)

    def site_index(self, site) -> int:
        """Flat index of one site; raises if the site is off an open window."""
        c = _as_coord(site, self.dimension)
        if not self.is_torus and not self.contains(c):
            raise LatticeDomainError(f"site {c} outside the window of radius {self.radius}")
        return int(self.flat_index(c))

    def ball(self, m: int) -> np.ndarray:
        """Flat indices of ``I_m = {|l| <= m}`` in row-major order."""
        if m < 0 or m > self.radius:
            raise LatticeDomainError(f"radius {m} not in 0..{self.radius}")
        return np.flatnonzero(self.norms <= m)

    def distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Sup-norm distance between coordinate arrays (torus-aware)."""
        diff = np.abs(np.asarray(a) - np.asarray(b))
        if self.is_torus:
            diff = np.minimum(diff, self.side - diff)
        return diff.max(axis=-1)

    def vectors(self, bound: int) -> list[tuple[int, ...]]:
        """All integer vectors with ``|l| <= bound`` in lexicographic order."""
        r = range(-bound, bound + 1)
        return list(itertools.product(r, repeat=self.dimension))


def _as_coord(site, d: int) -> np.ndarray:
    c = np.atleast_1d(np.asarray(site, dtype=np.int64))
    if c.shape != (d,):
        raise LatticeDomainError(f"site {site!r} is not a {d}-dimensional point")
    return c


class Configuration:
    """Immutable alphabet-valued field on a lattice."""

    __slots__ = ("lattice", "alphabet", "values")

    def __init__(self, lattice: Lattice, alphabet, values):
        alphabet = _as_alphabet(alphabet)
        arr = np.array(values, dtype=np.int64, copy=True)
        if arr.size != lattice.n_sites:
            raise LatticeDomainError(
                f"expected {lattice.n_sites} values for {lattice}, got {arr.size}"
            )
        arr = arr.reshape(lattice.shape)
        if arr.size and (arr.min() < 0 or arr.max() > alphabet.max_value):
            raise LatticeDomainError(f"values must lie in 0..{alphabet.max_value}")
        arr.flags.writeable = False
        self.lattice = lattice
        self.alphabet = alphabet
        self.values = arr

    @classmethod
    def zeros(cls, lattice: Lattice, alphabet=2) -> "Configuration":
        return cls(lattice, alphabet, np.zeros(lattice.shape, dtype=np.int64))

    @classmethod
    def full(cls, lattice: Lattice, value: int, alphabet=2) -> "Configuration":
        return cls(lattice, alphabet, np.full(lattice.shape, value, dtype=np.int64))

    @classmethod
    def from_sites(cls, lattice: Lattice, sites: Mapping | Iterable, alphabet=2) -> "Configuration":
        """Build from ``{site: value}`` or an iterable of occupied sites (value 1 each)."""
        vals = np.zeros(lattice.n_sites, dtype=np.int64)
        items = sites.items() if isinstance(sites, Mapping) else ((s, 1) for s in sites)
        for site, v in items:
            vals[lattice.site_index(site)] += v
        return cls(lattice, alphabet, vals)

    @classmethod
    def bernoulli(cls, lattice: Lattice, r: float, rng: np.random.Generator, alphabet=2) -> "Configuration":
        """I.i.d. sample with mean occupancy ``r`` per site.

        For larger alphabets the symbol is ``floor(r)`` or ``floor(r) + 1``.
        """
        alphabet = _as_alphabet(alphabet)
        if not 0 <= r <= alphabet.max_value:
            raise LatticeDomainError(f"density {r} outside [0, {alphabet.max_value}]")
        lo = int(np.floor(r))
        if lo == alphabet.max_value:
            return cls.full(lattice, lo, alphabet)
        vals = lo + (rng.random(lattice.shape) < (r - lo))
        return cls(lattice, alphabet, vals)

    @classmethod
    def from_line(cls, line: str, lattice: Lattice, alphabet=2) -> "Configuration":
        line = line.strip()
        tokens = line.split(",") if "," in line else list(line)
        return cls(lattice, alphabet, [int(t) for t in tokens])

    def to_line(self) -> str:
        flat = self.values.ravel()
        if self.alphabet.size <= 10:
            return "".join(map(str, flat))
        return ",".join(map(str, flat))

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def with_values(self, values) -> "Configuration":
        return Configuration(self.lattice, self.alphabet, values)

    def __getitem__(self, site) -> int:
        return int(self.flat[self.lattice.site_index(site)])

    def particle_count(self) -> int:
        return int(self.values.sum())

    def _compatible(self, other: "Configuration"):
        if self.lattice != other.lattice or self.alphabet != other.alphabet:
            raise LatticeDomainError("configurations live on different lattices or alphabets")

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return (
            self.lattice == other.lattice
            and self.alphabet == other.alphabet
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.lattice, self.alphabet, self.values.tobytes()))

    def __repr__(self):
        body = self.to_line()
        if len(body) > 40:
            body = body[:37] + "..."
        return f"Configuration({self.lattice.dimension}d side={self.lattice.side} {self.lattice.boundary.value}: {body})"


@dataclass(frozen=True)
class Cylinder:
    """Configurations with prescribed values on a finite base."""

    sites: tuple[tuple[int, ...], ...]
    values: tuple[int, ...]

    def __post_init__(self):
        if not self.sites:
            raise LatticeDomainError("cylinder base must be nonempty")
        if len(self.sites) != len(self.values):
            raise LatticeDomainError("prescription must cover exactly the base")
        if len(set(self.sites)) != len(self.sites):
            raise LatticeDomainError("cylinder base has repeated sites")
        dims = {len(s) for s in self.sites}
        if len(dims) != 1:
            raise LatticeDomainError("cylinder base mixes dimensions")

    @classmethod
    def of(cls, prescription: Mapping) -> "Cylinder":
        """``Cylinder.of({0: 1, 1: 0})`` or with tuple keys in higher dimension."""
        sites, values = [], []
        for s, v in prescription.items():
            sites.append(tuple(int(c) for c in np.atleast_1d(s)))
            values.append(int(v))
        return cls(tuple(sites), tuple(values))

    @property
    def dimension(self) -> int:
        return len(self.sites[0])

    @property
    def size(self) -> int:
        return len(self.sites)

    @property
    def radius(self) -> int:
        """Sup-norm extent of the base around the origin."""
        return int(np.abs(np.array(self.sites)).max())

    def shifted(self, ell) -> "Cylinder":
        ell = tuple(int(c) for c in np.atleast_1d(ell))
        return Cylinder(tuple(tuple(a + b for a, b in zip(s, ell)) for s in self.sites), self.values)

    def base_indices(self, lattice: Lattice) -> np.ndarray:
        if self.dimension != lattice.dimension:
            raise LatticeDomainError("cylinder and lattice dimensions differ")
        coords = np.array(self.sites)
        if not lattice.is_torus and not np.all(lattice.contains(coords)):
            raise LatticeDomainError("cylinder base leaves the window")
        if lattice.is_torus and np.any(np.abs(coords).max(axis=1) > lattice.radius):
            raise LatticeDomainError("cylinder base leaves the lattice")
        return lattice.flat_index(coords)

    def __call__(self, x: Configuration) -> int:
        return cylinder_indicator(x, self)


@dataclass(frozen=True)
class DensitySector:
    """Configurations whose full-window density is within ``tolerance`` of ``target``."""

    target: Fraction
    tolerance: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "target", Fraction(self.target))
        object.__setattr__(self, "tolerance", Fraction(self.tolerance))
        if self.target < 0 or self.tolerance < 0:
            raise LatticeDomainError("density sector needs target >= 0 and tolerance >= 0")

    def __contains__(self, x: Configuration) -> bool:
        return abs(density_full(x) - self.target) <= self.tolerance


def shift(x: Configuration, ell) -> Configuration:
    """``sigma^ell``: result at site ``i`` is ``x`` at ``i + ell`` (torus only)."""
    if not x.lattice.is_torus:
        raise UnsupportedOperation("shift is only defined on a torus")
    ell = _as_coord(ell, x.lattice.dimension)
    axes = tuple(range(x.lattice.dimension))
    return x.with_values(np.roll(x.values, tuple(-ell), axis=axes))


def cylinder_indicator(x: Configuration, c: Cylinder) -> int:
    idx = c.base_indices(x.lattice)
    return int(np.array_equal(x.flat[idx], np.asarray(c.values)))


def _site_indices(lattice: Lattice, sites) -> np.ndarray:
    arr = np.asarray(sites, dtype=np.int64)
    if arr.ndim == 1 and lattice.dimension > 1 and arr.size == lattice.dimension:
        arr = arr[None, :]
    if arr.ndim == 1:
        arr = arr[:, None]
    if not np.all(lattice.contains(arr)):
        raise LatticeDomainError("site set leaves the lattice")
    return lattice.flat_index(arr)


def density(x: Configuration, sites) -> Fraction:
    """Particles in the site set divided by its size.

    ``sites`` is either an integer radius ``m`` (the ball ``I_m``) or a
    sequence of site coordinates.
    """
    if isinstance(sites, (int, np.integer)):
        idx = x.lattice.ball(int(sites))
    else:
        idx = _site_indices(x.lattice, sites)
        if idx.size == 0:
            raise LatticeDomainError("density over an empty site set")
        idx = np.unique(idx)
    return Fraction(int(x.flat[idx].sum()), idx.size)


def density_full(x: Configuration) -> Fraction:
    return Fraction(x.particle_count(), x.lattice.n_sites)
