"""Compiled event loop for the strip process.

Enabled events are kept in five index sets (one per event kind) with O(1)
insert/remove, so each event costs O(1) regardless of strip size.
Site codes: 0 hole, 1 zero, 2 vee.
"""
import numpy as np
from numba import njit

VSWAP, FLOW, BOTTOM, TOP, PERTURB = 0, 1, 2, 3, 4
N_KINDS = 5
HOLE, ZERO, VEE = 0, 1, 2


@njit(cache=True, nogil=True)
def _set_member(members, pos, counts, kind, idx, on):
    p = pos[kind, idx]
    if on:
        if p < 0:
            c = counts[kind]
            members[kind, c] = idx
            pos[kind, idx] = c
            counts[kind] = c + 1
    elif p >= 0:
        c = counts[kind] - 1
        last = members[kind, c]
        members[kind, p] = last
        pos[kind, last] = p
        pos[kind, idx] = -1
        counts[kind] = c


@njit(cache=True, nogil=True)
def _refresh_site(grid, k, x, members, pos, counts):
    """Re-evaluate every event whose enabling condition reads site (k, x)."""
    L, W = grid.shape
    v = grid[k, x]
    if k > 0:
        _set_member(members, pos, counts, VSWAP, (k - 1) * W + x, grid[k - 1, x] != v)
    if k < L - 1:
        _set_member(members, pos, counts, VSWAP, k * W + x, grid[k + 1, x] != v)
    if W >= 2:
        xl = (x - 1) % W
        xr = (x + 1) % W
        _set_member(members, pos, counts, FLOW, k * W + xl, grid[k, xl] == VEE and v == HOLE)
        _set_member(members, pos, counts, FLOW, k * W + x, v == VEE and grid[k, xr] == HOLE)
    if k == 0:
        _set_member(members, pos, counts, BOTTOM, x, v == VEE)
    if k == L - 1:
        _set_member(members, pos, counts, TOP, x, v == ZERO)
    _set_member(members, pos, counts, PERTURB, k * W + x, v != HOLE)


@njit(cache=True, nogil=True)
def build_event_sets(grid):
    L, W = grid.shape
    cap = L * W
    members = np.empty((N_KINDS, cap), dtype=np.int64)
    pos = -np.ones((N_KINDS, cap), dtype=np.int64)
    counts = np.zeros(N_KINDS, dtype=np.int64)
    for k in range(L):
        for x in range(W):
            _refresh_site(grid, k, x, members, pos, counts)
    return members, pos, counts


@njit(cache=True, nogil=True)
def _flush_layer(acc, lc, last, k, j, t):
    dt = t - last[k]
    if dt > 0.0:
        for e in range(3):
            acc[j, k, e] += lc[k, e] * dt
    last[k] = t


@njit(cache=True, nogil=True)
def _set_site(grid, lc, k, x, new, acc, last, j, t, measuring):
    old = grid[k, x]
    if old == new:
        return
    if measuring:
        _flush_layer(acc, lc, last, k, j, t)
    lc[k, old] -= 1
    lc[k, new] += 1
    grid[k, x] = new


@njit(cache=True, nogil=True)
def simulate(grid, rates, rng, t_stop, edges, snap_times, include_noop):
    """Advance ``grid`` in place from time 0 to ``t_stop``.

    ``edges`` holds the batch boundaries of the measurement window (length
    ``n_batches + 1``; empty disables measurement). Returns time-integrated
    layer counts per batch, layer counts at ``snap_times``, event counts per
    kind, the number of conservation violations, an absorbed flag and the
    final enabled-event counts per kind.

    With ``include_noop`` every vertical pair fires at rate ``lam`` and
    equal-value swaps are applied as identity events.
    """
    L, W = grid.shape
    members, pos, counts = build_event_sets(grid)
    lc = np.zeros((L, 3), dtype=np.int64)
    for k in range(L):
        for x in range(W):
            lc[k, grid[k, x]] += 1

    nb = edges.size - 1
    acc = np.zeros((max(nb, 0), L, 3))
    last = np.zeros(L)
    snaps = np.zeros((snap_times.size, L, 3), dtype=np.int64)
    events = np.zeros(N_KINDS + 1, dtype=np.int64)  # last slot: identity swaps
    weights = np.empty(N_KINDS)
    violations = 0
    absorbed = False

    t = 0.0
    j = -1  # current batch; -1 before the window opens
    si = 0
    while True:
        total = 0.0
        for kind in range(N_KINDS):
            n = counts[kind]
            if kind == VSWAP and include_noop:
                n = (L - 1) * W
            weights[kind] = rates[kind] * n
            total += weights[kind]
        if total > 0.0:
            t_next = t - np.log(1.0 - rng.random()) / total
        else:
            t_next = np.inf
        t_hold = min(t_next, t_stop)

        while si < snap_times.size and snap_times[si] < t_next and snap_times[si] <= t_stop:
            snaps[si, :, :] = lc
            si += 1
        # batch boundaries crossed while the state is held
        while nb > 0 and j < nb and (j < 0 and edges[0] <= t_hold or j >= 0 and edges[j + 1] <= t_hold):
            if j < 0:
                last[:] = edges[0]
                j = 0
                continue
            for k in range(L):
                _flush_layer(acc, lc, last, k, j, edges[j + 1])
            j += 1
        measuring = nb > 0 and 0 <= j < nb

        if t_next >= t_stop:
            absorbed = total <= 0.0
            break
        t = t_next

        u = rng.random() * total
        kind = 0
        while kind < N_KINDS - 1 and (u >= weights[kind] or weights[kind] == 0.0):
            u -= weights[kind]
            kind += 1
        if weights[kind] == 0.0:
            # floating round-off past the last nonzero weight
            kind = N_KINDS - 1
            while weights[kind] == 0.0:
                kind -= 1
        if kind == VSWAP and include_noop:
            idx = int(rng.random() * (L - 1) * W)
        else:
            idx = members[kind, int(rng.random() * counts[kind])]

        if kind == VSWAP:
            k = idx // W
            x = idx % W
            a = grid[k, x]
            b = grid[k + 1, x]
            if a == b:
                events[N_KINDS] += 1
                continue
            _set_site(grid, lc, k, x, b, acc, last, j, t, measuring)
            _set_site(grid, lc, k + 1, x, a, acc, last, j, t, measuring)
            if (a != HOLE) + (b != HOLE) != (grid[k, x] != HOLE) + (grid[k + 1, x] != HOLE):
                violations += 1
            _refresh_site(grid, k, x, members, pos, counts)
            _refresh_site(grid, k + 1, x, members, pos, counts)
        elif kind == FLOW:
            k = idx // W
            x = idx % W
            xr = (x + 1) % W
            a = grid[k, x]
            b = grid[k, xr]
            _set_site(grid, lc, k, x, b, acc, last, j, t, measuring)
            _set_site(grid, lc, k, xr, a, acc, last, j, t, measuring)
            if (a != HOLE) + (b != HOLE) != (grid[k, x] != HOLE) + (grid[k, xr] != HOLE):
                violations += 1
            _refresh_site(grid, k, x, members, pos, counts)
            _refresh_site(grid, k, xr, members, pos, counts)
        else:
            if kind == BOTTOM:
                k = 0
                x = idx
            elif kind == TOP:
                k = L - 1
                x = idx
            else:
                k = idx // W
                x = idx % W
            a = grid[k, x]
            _set_site(grid, lc, k, x, 3 - a, acc, last, j, t, measuring)
            if (a != HOLE) != (grid[k, x] != HOLE):
                violations += 1
            _refresh_site(grid, k, x, members, pos, counts)
        events[kind] += 1

    return acc, snaps, events, violations, absorbed, counts
