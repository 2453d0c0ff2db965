"""Couplings of two copies of a particle system.

Four kinds are supported:

``independent``
    The components use independent randomness.
``synchronous``
    Both components read the same per-site random numbers.
``equal_pairing`` / ``L_pairing``
    Particles of the two components are matched dynamically.  Matched
    particles share their random number, so they move together until their
    admissibility outcomes differ, at which point the pair is broken.  After
    every move the matching is revised by the sweep in :func:`pairing_update`
    (equal pairing is the sweep with ``L = 0``).

Each component, viewed on its own, follows the law of the uncoupled system:
within one component every occupied site still receives an independent
uniform number, whether it was drawn fresh or copied from a partner.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import _pairing
from .lattice import Configuration, LatticeDomainError
from .systems import InvariantViolation, SystemRule, move_particles, propose_moves

__all__ = [
    "CouplingKind",
    "ParticleRegistry",
    "CoupledState",
    "enumerate_particles",
    "pairing_update",
    "equal_pairing_update",
    "coupled_step",
    "rosenthal_splice",
    "tau_epsilon",
    "PAIRING_EVENT_NAMES",
]

PAIRING_EVENT_NAMES = {
    _pairing.BREAK: "break",
    _pairing.DESYNC: "break",
    _pairing.SWAP: "swap",
    _pairing.FORM: "formation",
    _pairing.STEAL: "swap",
}


class CouplingKind(str, enum.Enum):
    INDEPENDENT = "independent"
    SYNCHRONOUS = "synchronous"
    EQUAL_PAIRING = "equal_pairing"
    L_PAIRING = "L_pairing"

    @property
    def pairs(self) -> bool:
        return self in (CouplingKind.EQUAL_PAIRING, CouplingKind.L_PAIRING)


@dataclass(frozen=True)
class ParticleRegistry:
    """Particles of both components with their pairing state.

    Component ``c`` (0 for ``x``, 1 for ``y``) is described by parallel
    arrays ``ids[c]``, ``sites[c]`` (flat site index), ``state[c]`` (1 if
    paired) and ``partner[c]`` (index of the partner inside the other
    component's arrays, -1 when unpaired).
    """

    ids: tuple[np.ndarray, np.ndarray]
    sites: tuple[np.ndarray, np.ndarray]
    state: tuple[np.ndarray, np.ndarray]
    partner: tuple[np.ndarray, np.ndarray]
    next_id: int

    @classmethod
    def unpaired(cls, x: Configuration, y: Configuration) -> "ParticleRegistry":
        sx = np.repeat(np.arange(x.lattice.n_sites), x.flat)
        sy = np.repeat(np.arange(y.lattice.n_sites), y.flat)
        ids = (np.arange(sx.size), sx.size + np.arange(sy.size))
        return cls(
            ids=ids,
            sites=(sx, sy),
            state=(np.zeros(sx.size, np.int64), np.zeros(sy.size, np.int64)),
            partner=(np.full(sx.size, -1, np.int64), np.full(sy.size, -1, np.int64)),
            next_id=sx.size + sy.size,
        )

    def counts(self) -> tuple[int, int]:
        return self.ids[0].size, self.ids[1].size

    @property
    def n_pairs(self) -> int:
        return int(self.state[0].sum())

    def partner_ids(self, component: int) -> np.ndarray:
        """Partner identities for one component (-1 where unpaired)."""
        other = self.ids[1 - component]
        p = self.partner[component]
        return np.where(p >= 0, other[np.maximum(p, 0)] if other.size else -1, -1)

    def pairs(self) -> list[tuple[int, int]]:
        """``(x id, y id)`` for every current pair."""
        i = np.flatnonzero(self.state[0])
        return [(int(self.ids[0][k]), int(self.ids[1][self.partner[0][k]])) for k in i]


@dataclass(frozen=True)
class CoupledState:
    x: Configuration
    y: Configuration
    registry: ParticleRegistry
    L: int = 1
    kind: CouplingKind = CouplingKind.L_PAIRING
    t: int = 0

    @classmethod
    def start(cls, x: Configuration, y: Configuration, kind="L_pairing", L: int = 1) -> "CoupledState":
        """All particles unpaired, time 0."""
        if x.lattice != y.lattice or x.alphabet != y.alphabet:
            raise LatticeDomainError("coupled configurations must share lattice and alphabet")
        kind = CouplingKind(kind)
        if kind is CouplingKind.L_PAIRING and L <= 0:
            raise LatticeDomainError("L-pairing needs L > 0")
        if kind is CouplingKind.EQUAL_PAIRING:
            L = 0
        return cls(x, y, ParticleRegistry.unpaired(x, y), int(L), kind, 0)

    def linked(self, pairs) -> "CoupledState":
        """Same state with the given ``(x index, y index)`` particles paired.

        Indices refer to the registry arrays; listed particles must be free.
        """
        reg = self.registry
        st = (reg.state[0].copy(), reg.state[1].copy())
        pa = (reg.partner[0].copy(), reg.partner[1].copy())
        for i, j in pairs:
            if st[0][i] or st[1][j]:
                raise InvariantViolation(f"particle {i} or {j} is already paired")
            st[0][i] = st[1][j] = 1
            pa[0][i], pa[1][j] = j, i
        out = replace(self, registry=replace(reg, state=st, partner=pa))
        check_registry(out)
        return out

    @property
    def unpaired_fraction(self) -> float:
        nx, ny = self.registry.counts()
        total = nx + ny
        return 0.0 if total == 0 else 1.0 - 2.0 * self.registry.n_pairs / total


def check_registry(state: CoupledState):
    """Raise :class:`InvariantViolation` unless registry and configurations agree."""
    reg = state.registry
    n = state.x.lattice.n_sites
    for c, conf in enumerate((state.x, state.y)):
        if not np.array_equal(np.bincount(reg.sites[c], minlength=n), conf.flat):
            raise InvariantViolation(f"registry of component {c} disagrees with its configuration")
        paired = reg.partner[c] >= 0
        if not np.array_equal(paired, reg.state[c] == 1):
            raise InvariantViolation(f"state flags of component {c} disagree with partner links")
    px, py = reg.partner
    ix = np.flatnonzero(px >= 0)
    if ix.size and (np.any(px[ix] >= py.size) or not np.array_equal(py[px[ix]], ix)):
        raise InvariantViolation("partner links are not symmetric")
    if int((py >= 0).sum()) != ix.size:
        raise InvariantViolation("partner links are not symmetric")


def _enumeration_order(norms: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # integer norms plus a uniform key in [0, 1): sorts by norm, ties at random
    return np.argsort(norms + rng.random(norms.size))


def enumerate_particles(x: Configuration, rng: np.random.Generator) -> np.ndarray:
    """Coordinates of all particles ordered by sup-norm distance to the origin.

    A site holding ``k`` particles appears ``k`` times; ties are ordered
    uniformly at random.
    """
    sites = np.repeat(np.arange(x.lattice.n_sites), x.flat)
    order = _enumeration_order(x.lattice.norms[sites], rng)
    return x.lattice.coords[sites[order]]


def pairing_update(state: CoupledState, rng: np.random.Generator, L: int | None = None, log: list | None = None) -> CoupledState:
    """One sweep of the pairing procedure over first-component particles.

    For each particle of ``x``, nearest to the origin first:

    * a paired particle whose partner is farther than ``L`` is unpaired
      together with the partner;
    * a paired particle with a strictly closer free particle of ``y`` drops
      its partner and pairs with that particle;
    * a free particle looks at the closest particle of ``y``; if it is within
      ``L`` it is taken when free, or taken over when it is paired to a
      strictly farther particle.

    Ties between equally close particles go to the one enumerated first.
    """
    check_registry(state)
    return _sweep(state, rng, L, log)


def _sweep(state: CoupledState, rng: np.random.Generator, L: int | None, log: list | None) -> CoupledState:
    if L is None:
        L = state.L
    reg = state.registry
    lat = state.x.lattice
    cx = lat.coords[reg.sites[0]]
    cy = lat.coords[reg.sites[1]]
    order_x = _enumeration_order(lat.norms[reg.sites[0]], rng)
    order_y = _enumeration_order(lat.norms[reg.sites[1]], rng)
    st = (reg.state[0].copy(), reg.state[1].copy())
    pa = (reg.partner[0].copy(), reg.partner[1].copy())
    events = _pairing.pairing_pass(
        np.ascontiguousarray(cx), np.ascontiguousarray(cy), order_x, order_y,
        st[0], st[1], pa[0], pa[1], int(L), lat.side, lat.is_torus,
    )
    if log is not None:
        _log_events(log, state.t, events, reg)
    new = replace(reg, state=st, partner=pa)
    return replace(state, registry=new)


def equal_pairing_update(state: CoupledState, rng: np.random.Generator, log: list | None = None) -> CoupledState:
    """Pair particles only when they share a site."""
    return pairing_update(state, rng, L=0, log=log)


def _log_events(log: list, t: int, events: np.ndarray, reg: ParticleRegistry):
    ix, iy = reg.ids
    for code, a, b, c in events:
        entry = {"t": int(t), "event": PAIRING_EVENT_NAMES[int(code)]}
        if code == _pairing.BREAK:
            entry.update(x=int(ix[a]), y=int(iy[b]), reason="distance")
        elif code == _pairing.DESYNC:
            entry.update(x=int(ix[a]), y=int(iy[b]), reason="desync")
        elif code == _pairing.SWAP:
            entry.update(x=int(ix[a]), y_old=int(iy[b]), y_new=int(iy[c]))
        elif code == _pairing.FORM:
            entry.update(x=int(ix[a]), y=int(iy[c]))
        else:
            entry.update(x=int(ix[a]), x_old=int(ix[b]), y=int(iy[c]))
        log.append(entry)


def _movers(ids: np.ndarray, sites: np.ndarray, n_sites: int) -> np.ndarray:
    """Index of the particle that moves from each occupied site (lowest id), -1 elsewhere."""
    out = np.full(n_sites, -1, dtype=np.int64)
    if ids.size:
        order = np.lexsort((ids, sites))
        s = sites[order]
        first = np.ones(s.size, dtype=bool)
        first[1:] = s[1:] != s[:-1]
        out[s[first]] = order[first]
    return out


def coupled_step(state: CoupledState, rule: SystemRule, rng: np.random.Generator,
                 log: list | None = None, compiled: bool | None = None) -> CoupledState:
    """Advance both components one step under the state's coupling kind.

    Paired particles share their random number; every other particle gets a
    fresh one.  A pair whose members end up with different displacements is
    broken.  Pairing kinds then run the pairing sweep.

    Built-in rules on binary tori run through a compiled kernel that draws the
    same random numbers as the array implementation and gives identical
    results; ``compiled=False`` forces the array implementation.
    """
    rule.check(state.x)
    eligible = (
        rule.kernel is not None
        and state.x.alphabet.size == 2
        and state.x.lattice.is_torus
    )
    if compiled is None:
        compiled = eligible
    elif compiled and not eligible:
        raise LatticeDomainError("compiled coupled step needs a built-in rule on a binary torus")
    if compiled:
        return _coupled_step_compiled(state, rule, rng, log)
    return _coupled_step_arrays(state, rule, rng, log)


def _coupled_step_compiled(state, rule, rng, log):
    reg = state.registry
    lat = state.x.lattice
    kind = state.kind
    nx, ny = reg.counts()
    site_noise = kind is CouplingKind.SYNCHRONOUS
    if site_noise:
        u_x = u_y = rng.random(lat.n_sites)
    else:
        u_x = rng.random(nx)
        u_y = rng.random(ny)
    if kind.pairs:
        key_x = rng.random(nx)
        key_y = rng.random(ny)
    else:
        key_x = key_y = np.empty(0)
    occ_x = state.x.flat.copy()
    occ_y = state.y.flat.copy()
    sites = (reg.sites[0].copy(), reg.sites[1].copy())
    st = (reg.state[0].copy(), reg.state[1].copy())
    pa = (reg.partner[0].copy(), reg.partner[1].copy())
    events = _pairing.coupled_step_kernel(
        rule.kernel, float(rule.params.get("p", 0.0)), kind.pairs, site_noise, int(state.L),
        lat.side, True, lat.coords, lat.norms, occ_x, occ_y, sites[0], sites[1],
        st[0], st[1], pa[0], pa[1], u_x, u_y, key_x, key_y,
    )
    if log is not None:
        _log_events(log, state.t + 1, events, reg)
    registry = replace(reg, sites=sites, state=st, partner=pa)
    return CoupledState(
        _trusted(state.x, occ_x), _trusted(state.y, occ_y), registry,
        state.L, kind, state.t + 1,
    )


def _trusted(template: Configuration, flat: np.ndarray) -> Configuration:
    """Configuration from values already known to be valid."""
    out = Configuration.__new__(Configuration)
    vals = flat.reshape(template.lattice.shape)
    vals.flags.writeable = False
    out.lattice, out.alphabet, out.values = template.lattice, template.alphabet, vals
    return out


def _coupled_step_arrays(state, rule, rng, log):
    reg = state.registry
    lat = state.x.lattice
    n = lat.n_sites
    kind = state.kind

    mover_x = _movers(reg.ids[0], reg.sites[0], n)
    mover_y = _movers(reg.ids[1], reg.sites[1], n)
    if kind is CouplingKind.SYNCHRONOUS:
        noise_x = noise_y = rng.random(n)
    else:
        px = rng.random(reg.ids[0].size)
        py = rng.random(reg.ids[1].size)
        if kind.pairs:
            linked = reg.partner[1] >= 0
            py[linked] = px[reg.partner[1][linked]]
        noise_x = np.ones(n)
        noise_y = np.ones(n)
        occ = mover_x >= 0
        noise_x[occ] = px[mover_x[occ]]
        occ = mover_y >= 0
        noise_y[occ] = py[mover_y[occ]]

    shape = lat.shape
    mx, tx, vx = propose_moves(rule, state.x.values, noise_x.reshape(shape), lat)
    my, ty, vy = propose_moves(rule, state.y.values, noise_y.reshape(shape), lat)
    new_x = move_particles(rule, state.x.values, mx, tx, lat, state.x.alphabet.max_value)
    new_y = move_particles(rule, state.y.values, my, ty, lat, state.y.alphabet.max_value)

    d = lat.dimension
    disp = []
    new_sites = []
    for mover, moves, targets, vel, sites in (
        (mover_x, mx, tx, vx, reg.sites[0]),
        (mover_y, my, ty, vy, reg.sites[1]),
    ):
        moves, targets, vel = moves.reshape(-1), targets.reshape(-1), vel.reshape(-1, d)
        moved = np.zeros(sites.size, dtype=bool)
        go = np.flatnonzero((mover >= 0) & moves)
        moved[mover[go]] = True
        s = sites.copy()
        s[moved] = targets[sites[moved]]
        dv = np.zeros((sites.size, d), dtype=np.int64)
        dv[moved] = vel[sites[moved]]
        disp.append(dv)
        new_sites.append(s)

    state_x, state_y = reg.state[0].copy(), reg.state[1].copy()
    part_x, part_y = reg.partner[0].copy(), reg.partner[1].copy()
    ix = np.flatnonzero(part_x >= 0)
    if ix.size:
        desync = np.any(disp[0][ix] != disp[1][part_x[ix]], axis=1)
        bx = ix[desync]
        by = part_x[bx]
        state_x[bx] = 0
        state_y[by] = 0
        part_x[bx] = -1
        part_y[by] = -1
        if log is not None:
            for a, b in zip(bx, by):
                log.append({"t": state.t + 1, "event": "break", "x": int(reg.ids[0][a]),
                            "y": int(reg.ids[1][b]), "reason": "desync"})

    ids = list(reg.ids)
    comps = [(new_sites[0], state_x, part_x), (new_sites[1], state_y, part_y)]
    if not lat.is_torus:
        ids, comps = _drop_exited(ids, comps)

    registry = ParticleRegistry(
        ids=(ids[0], ids[1]),
        sites=(comps[0][0], comps[1][0]),
        state=(comps[0][1], comps[1][1]),
        partner=(comps[0][2], comps[1][2]),
        next_id=reg.next_id,
    )
    out = CoupledState(
        state.x.with_values(new_x), state.y.with_values(new_y), registry,
        state.L, kind, state.t + 1,
    )
    check_registry(out)
    if kind.pairs:
        out = _sweep(out, rng, None, log)
    return out


def _drop_exited(ids, comps):
    """Remove particles that left an open window and reindex partner links."""
    keep = [comps[c][0] >= 0 for c in range(2)]
    if all(k.all() for k in keep):
        return ids, comps
    remap = []
    for c in range(2):
        m = np.full(keep[c].size, -1, dtype=np.int64)
        m[keep[c]] = np.arange(int(keep[c].sum()))
        remap.append(m)
    out = []
    for c in range(2):
        sites, st, part = comps[c]
        part = part.copy()
        st = st.copy()
        linked = part >= 0
        part[linked] = remap[1 - c][part[linked]]
        st[part < 0] = 0
        k = keep[c]
        out.append((sites[k], st[k], part[k]))
    return [ids[c][keep[c]] for c in range(2)], out


# --- trajectory-level tools ------------------------------------------------

def rosenthal_splice(traj_x: Sequence, traj_y: Sequence, tau) -> list:
    """Follow ``traj_y`` up to time ``tau`` and ``traj_x`` afterwards.

    ``tau`` is a meeting time (``traj_x[tau] == traj_y[tau]``); ``None`` or a
    value past the horizon means the trajectories never met and ``traj_y``
    is returned unchanged.
    """
    if len(traj_x) != len(traj_y):
        raise LatticeDomainError("trajectories must have the same length")
    T = len(traj_y) - 1
    if tau is None or tau >= T:
        if tau is not None and tau == T and not _same(traj_x[T], traj_y[T]):
            raise LatticeDomainError(f"trajectories differ at the meeting time {tau}")
        return list(traj_y)
    if tau < 0:
        raise LatticeDomainError("meeting time must be nonnegative")
    if not _same(traj_x[tau], traj_y[tau]):
        raise LatticeDomainError(f"trajectories differ at the meeting time {tau}")
    return list(traj_y[: tau + 1]) + list(traj_x[tau + 1:])


def _same(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return bool(np.array_equal(a, b))
    return a == b


def tau_epsilon(traj_x: Sequence, traj_y: Sequence, eps: float, metric: Callable | str = "abs"):
    """First time after which the metric stays ``<= eps`` up to the horizon.

    Returns ``None`` when the last observed distance exceeds ``eps``.  The
    answer only concerns the observed window ``0..T``.
    """
    metric = _metric(metric)
    if len(traj_x) != len(traj_y):
        raise LatticeDomainError("trajectories must have the same length")
    tau = None
    for t in range(len(traj_x) - 1, -1, -1):
        if metric(traj_x[t], traj_y[t]) <= eps:
            tau = t
        else:
            break
    return tau


def _metric(metric):
    if callable(metric):
        return metric
    from . import metrics

    table = {
        "abs": lambda a, b: abs(a - b),
        "cylinder": metrics.cylinder_metric,
        "discrepancy": lambda a, b: metrics.discrepancy_density(a, b),
        "bits": metrics.bit_metric,
    }
    try:
        return table[metric]
    except KeyError:
        raise LatticeDomainError(f"unknown metric {metric!r}; choose one of {sorted(table)}") from None
