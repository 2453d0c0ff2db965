"""Exact computations on small finite Markov chains.

Matrices are held either as float arrays (checked to 1e-12) or, with
``exact=True``, as object arrays of :class:`fractions.Fraction`, in which
case every comparison is exact.

A coupling kernel acts on ordered pairs of states; the pair ``(a, b)`` has
index ``a * n + b``.
"""
from __future__ import annotations

import io
import itertools
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy.sparse import csgraph, csr_matrix

from .coupling import rosenthal_splice

__all__ = [
    "TOL",
    "ChainError",
    "StochasticityError",
    "InvalidCoupling",
    "MultiplicityError",
    "PathExplosion",
    "FiniteChain",
    "CouplingKernel",
    "total_variation",
    "invariant_measure",
    "invariant_measures",
    "independent_kernel",
    "glued_independent_kernel",
    "tau_distribution",
    "meeting_time_pmf",
    "coupling_inequality_verify",
    "splice_marginal_check",
    "look_ahead_path_law",
    "parse_matrix",
    "load_matrix",
]

TOL = 1e-12


class ChainError(ValueError):
    pass


class StochasticityError(ChainError):
    """A matrix row is negative somewhere or does not sum to one."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class InvalidCoupling(ChainError):
    pass


class MultiplicityError(ChainError):
    pass


class PathExplosion(RuntimeError):
    pass


def _as_matrix(P, exact: bool) -> np.ndarray:
    if exact:
        A = np.array(P, dtype=object)
        if A.ndim != 2:
            raise ChainError("transition matrix must be two-dimensional")
        return np.vectorize(Fraction, otypes=[object])(A)
    A = np.array(P, dtype=float)
    if A.ndim != 2:
        raise ChainError("transition matrix must be two-dimensional")
    return A


def _check_stochastic(P: np.ndarray, exact: bool, what="row"):
    if P.shape[0] != P.shape[1]:
        raise ChainError(f"matrix must be square, got shape {P.shape}")
    for i, row in enumerate(P):
        if any(v < 0 for v in row) if exact else bool((row < -TOL).any()):
            raise StochasticityError(f"{what} {i} has a negative entry", row=i)
        s = sum(row) if exact else float(row.sum())
        if (s != 1) if exact else abs(s - 1.0) > TOL:
            raise StochasticityError(f"{what} {i} sums to {s}, expected 1", row=i)


class FiniteChain:
    """Row-stochastic transition matrix on states ``0..n-1``."""

    def __init__(self, P, exact: bool = False):
        self.exact = bool(exact)
        self.P = _as_matrix(P, self.exact)
        _check_stochastic(self.P, self.exact)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def point_mass(self, x: int) -> np.ndarray:
        self._check_state(x)
        v = np.array([Fraction(0)] * self.n, dtype=object) if self.exact else np.zeros(self.n)
        v[x] = 1
        return v

    def _check_state(self, x):
        if not 0 <= x < self.n:
            raise ChainError(f"state {x} not in 0..{self.n - 1}")

    def evolve(self, mu: np.ndarray) -> np.ndarray:
        """One step of the law, ``mu P``."""
        return mu @ self.P

    def laws(self, x: int, T: int) -> list[np.ndarray]:
        """``P^t(x, .)`` for ``t = 0..T``."""
        out = [self.point_mass(x)]
        for _ in range(T):
            out.append(self.evolve(out[-1]))
        return out

    def __repr__(self):
        return f"FiniteChain(n={self.n}, exact={self.exact})"


def total_variation(mu, nu):
    """``sup_A |mu(A) - nu(A)|``, half the L1 distance."""
    mu = np.asarray(mu)
    nu = np.asarray(nu)
    if mu.shape != nu.shape:
        raise ChainError(f"distributions have different sizes {mu.shape} and {nu.shape}")
    if mu.dtype == object or nu.dtype == object:
        return sum(abs(a - b) for a, b in zip(mu, nu)) / 2
    return 0.5 * float(np.abs(mu - nu).sum())


def _closed_classes(P: np.ndarray) -> list[np.ndarray]:
    """Closed communicating classes, ordered by their smallest state."""
    support = csr_matrix((P != 0).astype(np.int8))
    n_comp, labels = csgraph.connected_components(support, directed=True, connection="strong")
    rows, cols = support.nonzero()
    leaks = np.zeros(n_comp, dtype=bool)
    leaks[labels[rows][labels[rows] != labels[cols]]] = True
    classes = [np.flatnonzero(labels == c) for c in range(n_comp) if not leaks[c]]
    return sorted(classes, key=lambda c: c[0])


def _solve_exact(A: list[list[Fraction]], b: list[Fraction]) -> list[Fraction]:
    """Gauss-Jordan on a consistent (possibly overdetermined) system."""
    rows = [list(r) + [v] for r, v in zip(A, b)]
    m = len(rows[0]) - 1
    piv_row = 0
    pivots = []
    for col in range(m):
        pr = next((r for r in range(piv_row, len(rows)) if rows[r][col] != 0), None)
        if pr is None:
            continue
        rows[piv_row], rows[pr] = rows[pr], rows[piv_row]
        pv = rows[piv_row][col]
        rows[piv_row] = [v / pv for v in rows[piv_row]]
        for r in range(len(rows)):
            if r != piv_row and rows[r][col] != 0:
                f = rows[r][col]
                rows[r] = [a - f * c for a, c in zip(rows[r], rows[piv_row])]
        pivots.append(col)
        piv_row += 1
    if len(pivots) < m:
        raise ChainError("invariant measure of a closed class is not determined")
    if any(r[-1] != 0 for r in rows[piv_row:]):
        raise ChainError("inconsistent stationarity system")
    x = [Fraction(0)] * m
    for r, col in enumerate(pivots):
        x[col] = rows[r][-1]
    return x


def _class_measure(chain: FiniteChain, cls: np.ndarray) -> np.ndarray:
    Q = chain.P[np.ix_(cls, cls)]
    k = cls.size
    if chain.exact:
        # mu (Q - I) = 0 and sum(mu) = 1
        A = [[Q[j, i] - (1 if i == j else 0) for j in range(k)] for i in range(k)]
        A.append([Fraction(1)] * k)
        sol = _solve_exact(A, [Fraction(0)] * k + [Fraction(1)])
        mu = np.array([Fraction(0)] * chain.n, dtype=object)
        mu[cls] = sol
        return mu
    A = np.vstack([Q.T - np.eye(k), np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    sol = np.linalg.lstsq(A, b, rcond=None)[0]
    sol = np.clip(sol, 0.0, None)
    sol /= sol.sum()
    mu = np.zeros(chain.n)
    mu[cls] = sol
    residual = np.abs(mu @ chain.P - mu).max()
    if residual > TOL:
        raise ChainError(f"stationarity residual {residual:.3g} exceeds {TOL}")
    return mu


def invariant_measures(chain: FiniteChain) -> list[np.ndarray]:
    """One invariant measure per closed class; every invariant measure mixes these."""
    return [_class_measure(chain, c) for c in _closed_classes(chain.P)]


def invariant_measure(chain: FiniteChain, unique: bool = True):
    """The invariant measure of the chain.

    With ``unique=True`` a chain with several closed classes raises
    :class:`MultiplicityError`; with ``unique=False`` the list of
    class-wise measures is returned.
    """
    mus = invariant_measures(chain)
    if not unique:
        return mus
    if len(mus) > 1:
        raise MultiplicityError(f"chain has {len(mus)} closed classes")
    return mus[0]


# --- couplings -----------------------------------------------------------

class CouplingKernel:
    """Transition matrix on pairs whose marginals reproduce ``chain``."""

    def __init__(self, chain: FiniteChain, Q):
        self.chain = chain
        self.exact = chain.exact
        n = chain.n
        Q = _as_matrix(Q, self.exact)
        if Q.shape != (n * n, n * n):
            raise InvalidCoupling(f"kernel must be {n * n}x{n * n}, got {Q.shape}")
        try:
            _check_stochastic(Q, self.exact, what="kernel row")
        except StochasticityError as e:
            raise InvalidCoupling(str(e)) from None
        self.Q = Q
        self._check_marginals()

    @property
    def n(self) -> int:
        return self.chain.n

    def _check_marginals(self):
        n = self.n
        P = self.chain.P
        T = self.Q.reshape(n, n, n, n)  # (a, b, a', b')
        first = T.sum(axis=3)
        second = T.sum(axis=2)
        for a, b in itertools.product(range(n), repeat=2):
            for comp, got, want in ((0, first[a, b], P[a]), (1, second[a, b], P[b])):
                if self.exact:
                    bad = any(g != w for g, w in zip(got, want))
                else:
                    bad = np.abs(np.asarray(got, float) - want).max() > TOL
                if bad:
                    raise InvalidCoupling(
                        f"marginal {comp} of kernel row ({a},{b}) differs from the chain"
                    )

    def index(self, a: int, b: int) -> int:
        return a * self.n + b

    @property
    def glues_diagonal(self) -> bool:
        """Whether pairs on the diagonal stay on the diagonal."""
        n = self.n
        diag = np.array([self.index(a, a) for a in range(n)])
        off = np.setdiff1d(np.arange(n * n), diag)
        block = self.Q[np.ix_(diag, off)]
        return not any(v != 0 for v in block.ravel())

    def transitions(self, a: int, b: int):
        """``((a', b'), probability)`` for every positive entry of row ``(a, b)``."""
        row = self.Q[self.index(a, b)]
        for k in np.flatnonzero(row != 0):
            yield divmod(int(k), self.n), row[k]


def independent_kernel(chain: FiniteChain) -> CouplingKernel:
    """Both components move independently, also after meeting."""
    return CouplingKernel(chain, np.kron(chain.P, chain.P))


def glued_independent_kernel(chain: FiniteChain) -> CouplingKernel:
    """Independent moves until the components meet, identical moves afterwards."""
    n = chain.n
    Q = np.kron(chain.P, chain.P)
    for a in range(n):
        row = Q[a * n + a]
        row[:] = 0
        for a2 in range(n):
            row[a2 * n + a2] = chain.P[a, a2]
    return CouplingKernel(chain, Q)


def _off_diagonal(n: int) -> np.ndarray:
    return np.array([k for k in range(n * n) if k // n != k % n], dtype=np.int64)


def _absorption_walk(kernel: CouplingKernel, x: int, y: int, T: int):
    """Sub-stochastic walk on off-diagonal pairs: (survival, hitting pmf)."""
    if not kernel.glues_diagonal:
        raise ChainError("kernel does not keep the diagonal absorbing")
    kernel.chain._check_state(x)
    kernel.chain._check_state(y)
    n = kernel.n
    zero = Fraction(0) if kernel.exact else 0.0
    one = Fraction(1) if kernel.exact else 1.0
    if x == y:
        return [zero] * (T + 1), [one] + [zero] * T
    off = _off_diagonal(n)
    diag = np.array([a * n + a for a in range(n)])
    Qoo = kernel.Q[np.ix_(off, off)]
    into_diag = kernel.Q[np.ix_(off, diag)].sum(axis=1)
    v = np.array([zero] * off.size, dtype=object if kernel.exact else float)
    v[int(np.searchsorted(off, x * n + y))] = one
    survival = [one]
    pmf = [zero]
    for _ in range(T):
        pmf.append(v @ into_diag)
        v = v @ Qoo
        survival.append(v.sum())
    return survival, pmf


def tau_distribution(kernel: CouplingKernel, x: int, y: int, T: int) -> list:
    """Survival function ``P(tau0 > t)``, ``t = 0..T``, of the meeting time.

    The diagonal must be absorbing; the survival is the mass still off the
    diagonal after ``t`` steps.
    """
    return _absorption_walk(kernel, x, y, T)[0]


def meeting_time_pmf(kernel: CouplingKernel, x: int, y: int, T: int) -> list:
    """``P(tau0 = t)``, ``t = 0..T``, from the one-step flow into the diagonal."""
    return _absorption_walk(kernel, x, y, T)[1]


@dataclass
class InequalityReport:
    x: int
    y: int
    T: int
    exact: bool
    tv: list
    survival: list
    violations: list = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return not self.violations

    @property
    def verdict(self) -> str:
        return "inequality holds" if self.holds else "inequality violated"

    def rows(self):
        for t, (a, b) in enumerate(zip(self.tv, self.survival)):
            yield t, a, b

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tv"] = [_num(v) for v in self.tv]
        d["survival"] = [_num(v) for v in self.survival]
        d["verdict"] = self.verdict
        d["holds"] = self.holds
        return d


def _num(v):
    if isinstance(v, Fraction):
        return float(v) if v.denominator != 1 else int(v)
    return float(v)


def coupling_inequality_verify(chain: FiniteChain, kernel: CouplingKernel, x: int, y: int,
                               T: int) -> InequalityReport:
    """Compare ``TV(P^t(x,.), P^t(y,.))`` with ``P(tau0 > t)`` for ``t <= T``.

    Both sides are computed independently: the left from powers of the
    chain, the right from the absorbing pair walk of the kernel.
    """
    if kernel.chain is not chain and not np.array_equal(kernel.chain.P, chain.P):
        raise InvalidCoupling("kernel was built for a different chain")
    survival = tau_distribution(kernel, x, y, T)
    lx = chain.laws(x, T)
    ly = chain.laws(y, T)
    tv = [total_variation(a, b) for a, b in zip(lx, ly)]
    tol = 0 if chain.exact else TOL
    bad = [t for t in range(T + 1) if tv[t] > survival[t] + tol]
    return InequalityReport(x, y, T, chain.exact, tv, survival, bad)


# --- splice check --------------------------------------------------------

def _kernel_paths(kernel: CouplingKernel, x: int, y: int, T: int, max_paths: int):
    one = Fraction(1) if kernel.exact else 1.0
    paths = [((x,), (y,), one)]
    for _ in range(T):
        nxt = []
        for xs, ys, w in paths:
            for (a, b), q in kernel.transitions(xs[-1], ys[-1]):
                nxt.append((xs + (a,), ys + (b,), w * q))
        if len(nxt) > max_paths:
            raise PathExplosion(f"more than {max_paths} coupled paths; lower the horizon")
        paths = nxt
    return paths


def look_ahead_path_law(chain: FiniteChain, x: int, y: int, T: int, max_paths: int = 10 ** 6):
    """A coupling that is not Markov: the second copy copies the next state of the first.

    The first copy runs from ``x``; the second starts at ``y`` and is set to
    ``xi^(t+1)`` at every ``t >= 1``.  Its marginal is the chain's law only
    when all rows of the matrix are equal, which is the intended use.
    """
    one = Fraction(1) if chain.exact else 1.0
    paths = [((x,), one)]
    for _ in range(T + 1):
        nxt = []
        for xs, w in paths:
            for b in np.flatnonzero(chain.P[xs[-1]] != 0):
                nxt.append((xs + (int(b),), w * chain.P[xs[-1], b]))
        if len(nxt) > max_paths:
            raise PathExplosion(f"more than {max_paths} paths; lower the horizon")
        paths = nxt
    for xs, w in paths:
        yield xs[: T + 1], (y,) + xs[2: T + 2], w


@dataclass
class SpliceReport:
    x: int
    y: int
    T: int
    n_paths: int
    l1: list
    tol: float

    @property
    def max_error(self):
        return max(self.l1)

    @property
    def holds(self) -> bool:
        return all(e <= self.tol for e in self.l1)

    def to_dict(self) -> dict:
        return {
            "x": self.x, "y": self.y, "T": self.T, "n_paths": self.n_paths,
            "l1": [_num(v) for v in self.l1], "max_error": _num(self.max_error),
            "holds": self.holds,
        }


def _first_meeting(xs, ys):
    return next((t for t, (a, b) in enumerate(zip(xs, ys)) if a == b), None)


def splice_marginal_check(chain: FiniteChain, kernel: CouplingKernel | None, x: int, y: int, T: int,
                          *, path_law: Callable | None = None, max_paths: int = 10 ** 6) -> SpliceReport:
    """Law of the spliced process against ``P^t(y, .)`` by full path enumeration.

    Every coupled path of length ``T`` is cut at the first meeting time and
    the splice (second copy before, first copy after) is accumulated into
    time-``t`` laws.  ``path_law(x, y, T)`` may replace the kernel with any
    iterable of ``(xs, ys, probability)``.
    """
    if path_law is not None:
        paths = path_law(x, y, T)
    elif kernel is not None:
        paths = _kernel_paths(kernel, x, y, T, max_paths)
    else:
        raise ChainError("need a kernel or a path law")
    zero = Fraction(0) if chain.exact else 0.0
    laws = [[zero] * chain.n for _ in range(T + 1)]
    count = 0
    for xs, ys, w in paths:
        count += 1
        if count > max_paths:
            raise PathExplosion(f"more than {max_paths} coupled paths; lower the horizon")
        spliced = rosenthal_splice(list(xs), list(ys), _first_meeting(xs, ys))
        for t, s in enumerate(spliced):
            laws[t][s] += w
    target = chain.laws(y, T)
    l1 = [sum(abs(a - b) for a, b in zip(laws[t], target[t])) for t in range(T + 1)]
    return SpliceReport(x, y, T, count, l1, 0 if chain.exact else TOL)


# --- plain-text matrices -------------------------------------------------

def _tokens(text: str) -> Iterable[list[str]]:
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line.replace(",", " ").split()


def parse_matrix(text: str, exact: bool = False) -> np.ndarray:
    """Read ``n`` on the first line, then ``n`` rows of ``n`` numbers.

    Entries may be decimals or fractions such as ``1/3``.
    """
    lines = list(_tokens(text))
    if not lines or len(lines[0]) != 1:
        raise ChainError("first line must hold the matrix size")
    try:
        n = int(lines[0][0])
    except ValueError:
        raise ChainError(f"bad matrix size {lines[0][0]!r}") from None
    rows = lines[1:]
    if len(rows) != n:
        raise ChainError(f"expected {n} rows, found {len(rows)}")
    out = []
    for i, row in enumerate(rows):
        if len(row) != n:
            raise ChainError(f"row {i} has {len(row)} entries, expected {n}")
        try:
            vals = [Fraction(tok) for tok in row]
        except (ValueError, ZeroDivisionError):
            raise ChainError(f"row {i} has an unreadable entry") from None
        out.append(vals if exact else [float(v) for v in vals])
    return np.array(out, dtype=object if exact else float)


def load_matrix(source, exact: bool = False) -> np.ndarray:
    """:func:`parse_matrix` applied to a path or an open text stream."""
    if isinstance(source, io.TextIOBase):
        return parse_matrix(source.read(), exact)
    return parse_matrix(Path(source).read_text(), exact)


def dumps_report(report) -> str:
    return json.dumps(report.to_dict(), indent=2)
