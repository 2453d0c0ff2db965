"""Compiled core of the L-pairing procedure.

Particles of each component are given by coordinate rows; ``partner_*``
holds the index of the partner in the other component or -1.  Event rows
are ``(code, first, second_old, second_new)`` with the codes below.
"""
import numpy as np
from numba import njit

BREAK = 1  # pair dissolved: members farther apart than L
SWAP = 2  # paired first-component particle moved to a closer free partner
FORM = 3  # two free particles paired
STEAL = 4  # free first-component particle took a partner from a farther one


@njit(cache=True)
def _dist(cx, i, cy, j, side, torus):
    best = 0
    for k in range(cx.shape[1]):
        d = abs(cx[i, k] - cy[j, k])
        if torus and side - d < d:
            d = side - d
        if d > best:
            best = d
    return best


@njit(cache=True)
def _closest(i, cx, cy, order_y, state_y, free_only, side, torus):
    best_j = -1
    best_d = 1 << 60
    for k in range(order_y.shape[0]):
        j = order_y[k]
        if free_only and state_y[j] != 0:
            continue
        d = _dist(cx, i, cy, j, side, torus)
        if d < best_d:
            best_d = d
            best_j = j
            if d == 0:
                break
    return best_j, best_d


@njit(cache=True)
def _closest_local(i, cx, cy, rank_y, state_y, free_only, side, torus,
                   offsets, ring, head, members):
    """Closest particle of ``y`` within the offset ball, -1 if none.

    Offsets come sorted by their sup-norm ``ring``, so the scan stops once
    the rings are farther than the best candidate.
    """
    d = cx.shape[1]
    half = side // 2
    best_j = -1
    best_d = 1 << 60
    best_r = 1 << 60
    for k in range(offsets.shape[0]):
        if ring[k] > best_d:
            break
        flat = 0
        inside = True
        for a in range(d):
            idx = cx[i, a] + offsets[k, a] + half
            if torus:
                idx = idx % side
            elif idx < 0 or idx >= side:
                inside = False
                break
            flat = flat * side + idx
        if not inside:
            continue
        for m in range(head[flat], head[flat + 1]):
            j = members[m]
            if free_only and state_y[j] != 0:
                continue
            dj = _dist(cx, i, cy, j, side, torus)
            if dj < best_d or (dj == best_d and rank_y[j] < best_r):
                best_d = dj
                best_j = j
                best_r = rank_y[j]
    return best_j, best_d


@njit(cache=True)
def _site_index(cy, side):
    """CSR lists of ``y`` particles per flat site."""
    d = cy.shape[1]
    half = side // 2
    n_sites = side ** d
    flat = np.empty(cy.shape[0], dtype=np.int64)
    for j in range(cy.shape[0]):
        f = 0
        for a in range(d):
            f = f * side + (cy[j, a] + half)
        flat[j] = f
    head = np.zeros(n_sites + 1, dtype=np.int64)
    for j in range(flat.shape[0]):
        head[flat[j] + 1] += 1
    for s in range(n_sites):
        head[s + 1] += head[s]
    fill = head[:-1].copy()
    members = np.empty(flat.shape[0], dtype=np.int64)
    for j in range(flat.shape[0]):
        members[fill[flat[j]]] = j
        fill[flat[j]] += 1
    return head, members


@njit(cache=True)
def _ball_offsets(L, d):
    """Vectors with ``|v| <= L`` sorted by sup-norm, with their norms."""
    w = 2 * L + 1
    n = w ** d
    out = np.empty((n, d), dtype=np.int64)
    ring = np.empty(n, dtype=np.int64)
    for k in range(n):
        r = k
        m = 0
        for a in range(d - 1, -1, -1):
            out[k, a] = r % w - L
            m = max(m, abs(out[k, a]))
            r //= w
        ring[k] = m
    order = np.argsort(ring, kind="mergesort")
    return out[order], ring[order]


@njit(cache=True)
def pairing_pass(cx, cy, order_x, order_y, state_x, state_y, partner_x, partner_y,
                 L, side, torus):
    """Run one sweep in place; returns the event rows.

    Only partners within distance ``L`` can change the matching, so the
    nearest-particle searches look at the ``L``-ball when that is cheaper
    than scanning every particle of ``y``.
    """
    d = cx.shape[1]
    local = 2 * L + 1 < side and (2 * L + 1) ** d < order_y.shape[0]
    rank_y = np.empty(order_y.shape[0], dtype=np.int64)
    for k in range(order_y.shape[0]):
        rank_y[order_y[k]] = k
    if local:
        head, members = _site_index(cy, side)
        offsets, ring = _ball_offsets(L, d)
    else:
        head = np.zeros(1, dtype=np.int64)
        members = head
        offsets = np.zeros((0, d), dtype=np.int64)
        ring = head
    events = np.empty((3 * order_x.shape[0] + 1, 4), dtype=np.int64)
    ne = 0
    for k in range(order_x.shape[0]):
        i = order_x[k]
        if state_x[i] == 1:
            j = partner_x[i]
            ell = _dist(cx, i, cy, j, side, torus)
            if ell > L:
                state_x[i] = 0
                state_y[j] = 0
                partner_x[i] = -1
                partner_y[j] = -1
                events[ne, 0] = BREAK
                events[ne, 1] = i
                events[ne, 2] = j
                events[ne, 3] = -1
                ne += 1
            else:
                if local:
                    j2, ell2 = _closest_local(i, cx, cy, rank_y, state_y, True, side, torus,
                                              offsets, ring, head, members)
                else:
                    j2, ell2 = _closest(i, cx, cy, order_y, state_y, True, side, torus)
                if j2 >= 0 and ell2 < ell:
                    state_y[j] = 0
                    partner_y[j] = -1
                    state_y[j2] = 1
                    partner_y[j2] = i
                    partner_x[i] = j2
                    events[ne, 0] = SWAP
                    events[ne, 1] = i
                    events[ne, 2] = j
                    events[ne, 3] = j2
                    ne += 1
        if state_x[i] == 0:
            if local:
                j, ell = _closest_local(i, cx, cy, rank_y, state_y, False, side, torus,
                                        offsets, ring, head, members)
            else:
                j, ell = _closest(i, cx, cy, order_y, state_y, False, side, torus)
            if j < 0 or ell > L:
                continue
            if state_y[j] == 0:
                state_x[i] = 1
                state_y[j] = 1
                partner_x[i] = j
                partner_y[j] = i
                events[ne, 0] = FORM
                events[ne, 1] = i
                events[ne, 2] = -1
                events[ne, 3] = j
                ne += 1
            else:
                other = partner_y[j]
                if ell < _dist(cx, other, cy, j, side, torus):
                    state_x[other] = 0
                    partner_x[other] = -1
                    state_x[i] = 1
                    partner_x[i] = j
                    partner_y[j] = i
                    events[ne, 0] = STEAL
                    events[ne, 1] = i
                    events[ne, 2] = other
                    events[ne, 3] = j
                    ne += 1
    return events[:ne]


DESYNC = 5  # pair broken because its members moved differently

# built-in rule codes understood by coupled_step_kernel
RULE_IDENTITY = 0
RULE_FORWARD = 1  # hop +1 along axis 0


@njit(cache=True)
def _displacements(rule_code, p, occ, sites, noise, coords, stride0, side):
    """Axis-0 displacement and target of every particle of a binary torus configuration."""
    n = sites.shape[0]
    disp = np.zeros(n, dtype=np.int64)
    target = sites.copy()
    for i in range(n):
        if rule_code == RULE_IDENTITY or noise[i] >= p:
            continue
        s = sites[i]
        c0 = coords[s, 0]
        dv = 1
        idx0 = (c0 + side // 2 + dv) % side
        t = s + (idx0 - (c0 + side // 2)) * stride0
        if occ[t] == 0:
            disp[i] = dv
            target[i] = t
    return disp, target


@njit(cache=True)
def coupled_step_kernel(rule_code, p, pairs, site_noise, L, side, torus, coords, norms,
                        occ_x, occ_y, sites_x, sites_y, state_x, state_y,
                        partner_x, partner_y, u_x, u_y, key_x, key_y):
    """Move both binary components, break desynchronized pairs, run the sweep.

    Arrays ``occ_*``, ``sites_*``, ``state_*`` and ``partner_*`` are updated
    in place.  With ``site_noise`` the ``u_*`` arrays are indexed by site,
    otherwise by particle; paired second-component particles reuse the
    number of their partner.
    """
    stride0 = 1
    for _ in range(coords.shape[1] - 1):
        stride0 *= side
    nx = sites_x.shape[0]
    ny = sites_y.shape[0]
    nz_x = np.empty(nx)
    nz_y = np.empty(ny)
    for i in range(nx):
        nz_x[i] = u_x[sites_x[i]] if site_noise else u_x[i]
    for j in range(ny):
        if site_noise:
            nz_y[j] = u_y[sites_y[j]]
        elif pairs and partner_y[j] >= 0:
            nz_y[j] = u_x[partner_y[j]]
        else:
            nz_y[j] = u_y[j]
    dx, tx = _displacements(rule_code, p, occ_x, sites_x, nz_x, coords, stride0, side)
    dy, ty = _displacements(rule_code, p, occ_y, sites_y, nz_y, coords, stride0, side)
    for i in range(nx):
        if dx[i] != 0:
            occ_x[sites_x[i]] -= 1
            occ_x[tx[i]] += 1
            sites_x[i] = tx[i]
    for j in range(ny):
        if dy[j] != 0:
            occ_y[sites_y[j]] -= 1
            occ_y[ty[j]] += 1
            sites_y[j] = ty[j]

    desync = np.empty((nx + 1, 4), dtype=np.int64)
    nd = 0
    for i in range(nx):
        j = partner_x[i]
        if j >= 0 and dx[i] != dy[j]:
            state_x[i] = 0
            state_y[j] = 0
            partner_x[i] = -1
            partner_y[j] = -1
            desync[nd, 0] = DESYNC
            desync[nd, 1] = i
            desync[nd, 2] = j
            desync[nd, 3] = -1
            nd += 1
    if not pairs:
        return desync[:nd]
    kx = np.empty(nx)
    ky = np.empty(ny)
    for i in range(nx):
        kx[i] = norms[sites_x[i]] + key_x[i]
    for j in range(ny):
        ky[j] = norms[sites_y[j]] + key_y[j]
    order_x = np.argsort(kx)
    order_y = np.argsort(ky)
    cx = np.empty((nx, coords.shape[1]), dtype=np.int64)
    cy = np.empty((ny, coords.shape[1]), dtype=np.int64)
    for i in range(nx):
        cx[i] = coords[sites_x[i]]
    for j in range(ny):
        cy[j] = coords[sites_y[j]]
    ev = pairing_pass(cx, cy, order_x, order_y, state_x, state_y, partner_x, partner_y,
                      L, side, torus)
    out = np.empty((nd + ev.shape[0], 4), dtype=np.int64)
    out[:nd] = desync[:nd]
    out[nd:] = ev
    return out


@njit(cache=True)
def step_kernel(rule_code, p, vals, noise, coords, side):
    """One synchronous step of a built-in rule on rows of binary torus values."""
    stride0 = 1
    for _ in range(coords.shape[1] - 1):
        stride0 *= side
    B, n = vals.shape
    out = vals.copy()
    if rule_code == RULE_IDENTITY:
        return out
    half = side // 2
    for b in range(B):
        for s in range(n):
            if vals[b, s] == 0 or noise[b, s] >= p:
                continue
            c0 = coords[s, 0]
            dv = 1
            idx0 = c0 + half + dv
            t = s + dv * stride0
            if idx0 >= side:
                t -= side * stride0
            elif idx0 < 0:
                t += side * stride0
            if vals[b, t] == 0:
                out[b, s] -= 1
                out[b, t] += 1
    return out
