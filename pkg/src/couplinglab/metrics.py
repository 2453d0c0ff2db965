"""Cylinder metric, discrepancy densities and shift averages of cylinders."""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .lattice import (
    Configuration,
    Cylinder,
    LatticeDomainError,
    UnsupportedOperation,
    shift,
)

__all__ = [
    "KAPPA_INFINITY",
    "kappa",
    "cylinder_metric",
    "discrepancy_set",
    "discrepancy_density",
    "shifted_discrepancy_density",
    "psi_n",
    "psi_lipschitz_bound",
    "bit_metric",
]

#: Returned by :func:`kappa` when the configurations agree everywhere.
KAPPA_INFINITY = math.inf


def _check_pair(x: Configuration, y: Configuration):
    if x.lattice != y.lattice or x.alphabet != y.alphabet:
        raise LatticeDomainError("configurations live on different lattices or alphabets")


def kappa(x: Configuration, y: Configuration):
    """Largest radius ``m`` with ``x == y`` on ``I_m``.

    Returns 0 when there is no positive agreement radius (in particular when
    the configurations differ at the origin) and :data:`KAPPA_INFINITY` when
    they agree on the whole lattice.
    """
    _check_pair(x, y)
    diff = x.flat != y.flat
    if not diff.any():
        return KAPPA_INFINITY
    return max(int(x.lattice.norms[diff].min()) - 1, 0)


def cylinder_metric(x: Configuration, y: Configuration) -> float:
    k = kappa(x, y)
    return 0.0 if k == KAPPA_INFINITY else 2.0 ** (-k)


def _check_radius(x: Configuration, m: int):
    if m < 0 or m > x.lattice.radius:
        raise LatticeDomainError(f"radius {m} not in 0..{x.lattice.radius}")


def discrepancy_set(x: Configuration, y: Configuration, m: int) -> set[tuple[int, ...]]:
    """``D_m(x, y)``: sites of ``I_m`` where the configurations disagree."""
    _check_pair(x, y)
    _check_radius(x, m)
    lat = x.lattice
    mask = (x.flat != y.flat) & (lat.norms <= m)
    return {tuple(int(c) for c in row) for row in lat.coords[mask]}


def _mismatch_count(xf: np.ndarray, yf: np.ndarray, ball: np.ndarray) -> int:
    return int(np.count_nonzero(xf[ball] != yf[ball]))


def discrepancy_density(x: Configuration, y: Configuration, m: int | None = None) -> Fraction:
    """``|D_m(x, y)| / (2m+1)^d``; ``m=None`` uses every site of the lattice."""
    _check_pair(x, y)
    if m is None:
        return Fraction(int(np.count_nonzero(x.flat != y.flat)), x.lattice.n_sites)
    _check_radius(x, m)
    ball = x.lattice.ball(m)
    return Fraction(_mismatch_count(x.flat, y.flat, ball), ball.size)


def shifted_discrepancy_density(
    x: Configuration, y: Configuration, L: int, m: int | None = None
) -> tuple[Fraction, tuple[int, ...]]:
    """Minimum over ``|l| <= L`` of the discrepancy density of ``x`` and ``shift(y, l)``.

    Ties go to the lexicographically smallest ``l``.
    """
    _check_pair(x, y)
    lat = x.lattice
    if not lat.is_torus:
        raise UnsupportedOperation("shifted discrepancy needs a torus")
    if L < 0 or 2 * L >= lat.side:
        raise LatticeDomainError(f"shift bound {L} must satisfy 0 <= L < side/2")
    if m is None:
        idx = np.arange(lat.n_sites)
    else:
        _check_radius(x, m)
        idx = lat.ball(m)
    coords = lat.coords[idx]
    xv = x.flat[idx]
    yf = y.flat
    best, best_ell = None, None
    for ell in lat.vectors(L):
        # shift(y, ell) at site i is y at i + ell
        count = int(np.count_nonzero(xv != yf[lat.flat_index(coords + np.asarray(ell))]))
        if best is None or count < best:
            best, best_ell = count, ell
    return Fraction(best, idx.size), best_ell


def psi_n(x: Configuration, c: Cylinder, m: int) -> Fraction:
    """Average of the cylinder indicator over the shifts ``sigma^l x``, ``|l| <= m``."""
    lat = x.lattice
    if not lat.is_torus:
        raise UnsupportedOperation("psi_n averages over shifts and needs a torus")
    _check_radius(x, m)
    c.base_indices(lat)  # validates the base
    shifts = lat.coords[lat.ball(m)]
    hit = np.ones(len(shifts), dtype=bool)
    for site, value in zip(c.sites, c.values):
        hit &= x.flat[lat.flat_index(shifts + np.asarray(site))] == value
    return Fraction(int(hit.sum()), len(shifts))


def psi_lipschitz_bound(x: Configuration, y: Configuration, c: Cylinder, m: int) -> Fraction:
    """Upper bound for ``|psi_n(x, c, m) - psi_n(y, c, m)|``.

    A discrepancy at one site changes the indicator for at most ``|base|``
    of the ``(2m+1)^d`` shifts, and only sites within ``m + radius(c)`` of
    the origin are ever read, so the bound is
    ``|base| * |D_{m+r}(x, y)| / (2m+1)^d``.
    """
    _check_pair(x, y)
    r = m + c.radius
    _check_radius(x, r)
    count = len(discrepancy_set(x, y, r))
    return Fraction(c.size * count, (2 * m + 1) ** x.lattice.dimension)


def bit_metric(a, b, max_bits: int = 64) -> float:
    """``2**-k`` with ``k`` the common-prefix length of two bit streams.

    Agreement over ``max_bits`` bits is reported as ``2**-max_bits``.
    """
    k = a.common_prefix(b, max_bits)
    return 2.0 ** (-k)
