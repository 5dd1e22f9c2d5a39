"""Compiled inner loops: counter-based labels and union-find cluster labeling.

All kernels work on CSR adjacency (``indptr``, ``indices``) and boolean
vertex masks. Anything that loops over replicas is written so that each
replica's result depends only on its own index, which keeps outputs
identical whatever the thread count.
"""

import heapq

import numpy as np
import numba
from numba import njit, prange

# the bundled TBB is too old for numba; skip probing it
numba.config.THREADING_LAYER = "workqueue"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

EVENT_ORIGIN = 0
EVENT_ANY = 1


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def label_at(k1, k2, replica, vertex):
    """Uniform label in the open interval (0, 1) for one (replica, vertex)."""
    c = (np.uint64(replica) << _S32) | np.uint64(vertex)
    z = _mix64(k1 + c * _GOLDEN)
    z = _mix64(z ^ k2)
    return (np.float64(z >> _S11) + 0.5) * _INV53


@njit(cache=True)
def fill_labels(k1, k2, replica, out):
    for v in range(out.shape[0]):
        out[v] = label_at(k1, k2, replica, v)


@njit(cache=True)
def label_block(k1, k2, first_replica, count, n):
    out = np.empty((count, n), dtype=np.float64)
    for r in range(count):
        fill_labels(k1, k2, first_replica + r, out[r])
    return out


# ---------------------------------------------------------------------------
# union-find


@njit(cache=True, inline="always")
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@njit(cache=True)
def components(indptr, indices, mask):
    """Dense component ids (-1 for closed vertices) numbered by first vertex."""
    n = mask.shape[0]
    parent = np.arange(n)
    for u in range(n):
        if not mask[u]:
            continue
        for j in range(indptr[u], indptr[u + 1]):
            w = indices[j]
            if w > u and mask[w]:
                ru = _find(parent, u)
                rw = _find(parent, w)
                if ru != rw:
                    if ru < rw:
                        parent[rw] = ru
                    else:
                        parent[ru] = rw
    comp = np.full(n, -1, dtype=np.int64)
    root_id = np.full(n, -1, dtype=np.int64)
    ncomp = 0
    for u in range(n):
        if mask[u]:
            r = _find(parent, u)
            if root_id[r] < 0:
                root_id[r] = ncomp
                ncomp += 1
            comp[u] = root_id[r]
    return comp, ncomp


@njit(cache=True)
def component_stats(comp, ncomp, boundary):
    sizes = np.zeros(ncomp, dtype=np.int64)
    touches = np.zeros(ncomp, dtype=np.bool_)
    for u in range(comp.shape[0]):
        c = comp[u]
        if c >= 0:
            sizes[c] += 1
            if boundary[u]:
                touches[c] = True
    return sizes, touches


@njit(cache=True)
def infinite_mask(indptr, indices, boundary, mask):
    """Open vertices whose cluster touches the boundary; also returns the count."""
    n = mask.shape[0]
    parent = np.arange(n)
    for u in range(n):
        if not mask[u]:
            continue
        for j in range(indptr[u], indptr[u + 1]):
            w = indices[j]
            if w > u and mask[w]:
                ru = _find(parent, u)
                rw = _find(parent, w)
                if ru != rw:
                    parent[rw] = ru
    touch = np.zeros(n, dtype=np.bool_)
    for u in range(n):
        if mask[u] and boundary[u]:
            touch[_find(parent, u)] = True
    out = np.zeros(n, dtype=np.bool_)
    n_inf = 0
    for u in range(n):
        if mask[u]:
            r = _find(parent, u)
            out[u] = touch[r]
            if r == u and touch[u]:
                n_inf += 1
    return out, n_inf


@njit(cache=True)
def origin_reaches_boundary(indptr, indices, boundary, mask, origin):
    """Search from the origin inside ``mask``; True if a boundary vertex is hit."""
    if not mask[origin]:
        return False
    n = mask.shape[0]
    seen = np.zeros(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    top = 0
    stack[top] = origin
    top += 1
    seen[origin] = True
    while top > 0:
        top -= 1
        u = stack[top]
        if boundary[u]:
            return True
        for j in range(indptr[u], indptr[u + 1]):
            w = indices[j]
            if mask[w] and not seen[w]:
                seen[w] = True
                stack[top] = w
                top += 1
    return False


@njit(cache=True)
def _event(indptr, indices, boundary, mask, origin, event):
    if event == EVENT_ORIGIN:
        return origin_reaches_boundary(indptr, indices, boundary, mask, origin)
    # some open boundary vertex means some boundary-touching component
    for u in range(mask.shape[0]):
        if mask[u] and boundary[u]:
            return True
    return False


# ---------------------------------------------------------------------------
# batched Monte Carlo kernels


@njit(cache=True, parallel=True)
def batch_level_event(indptr, indices, boundary, origin, k1, k2, first, count, p, event):
    """Event indicator on level sets {label <= p} for ``count`` replicas."""
    n = boundary.shape[0]
    out = np.zeros(count, dtype=np.bool_)
    for r in prange(count):
        lab = np.empty(n)
        fill_labels(k1, k2, first + r, lab)
        out[r] = _event(indptr, indices, boundary, lab <= p, origin, event)
    return out


@njit(cache=True, parallel=True)
def batch_sdp_event(indptr, indices, boundary, origin, ka1, ka2, kb1, kb2,
                    first, count, p, delta, event):
    """Event indicator on (omega_p minus its boundary clusters) union reinforcement."""
    n = boundary.shape[0]
    out = np.zeros(count, dtype=np.bool_)
    for r in prange(count):
        lab = np.empty(n)
        rein = np.empty(n)
        fill_labels(ka1, ka2, first + r, lab)
        fill_labels(kb1, kb2, first + r, rein)
        omega = lab <= p
        destroyed, _ = infinite_mask(indptr, indices, boundary, omega)
        phi = (omega & ~destroyed) | (rein <= delta)
        out[r] = _event(indptr, indices, boundary, phi, origin, event)
    return out


@njit(cache=True, parallel=True)
def batch_fresh_birth(indptr, indices, boundary, origin, k1, k2, first, count, p, p_hi, event):
    """Event on {label <= p_hi} minus boundary clusters of {label <= p}, same field."""
    n = boundary.shape[0]
    out = np.zeros(count, dtype=np.bool_)
    for r in prange(count):
        lab = np.empty(n)
        fill_labels(k1, k2, first + r, lab)
        destroyed, _ = infinite_mask(indptr, indices, boundary, lab <= p)
        out[r] = _event(indptr, indices, boundary, (lab <= p_hi) & ~destroyed, origin, event)
    return out


# ---------------------------------------------------------------------------
# incremental sweep


STAT_ORIGIN = 0
STAT_N_INFINITE = 1
STAT_DENSITY = 2


@njit(cache=True)
def sweep(indptr, indices, boundary, origin, labels, grid, stat):
    """Insert vertices grid interval by grid interval; record ``stat`` at each grid p.

    Vertices are bucketed by the first grid point >= their label and
    inserted in id order within a bucket. The recorded values only depend
    on which vertices are open at each grid point, so this matches a full
    sort by label while avoiding it.
    """
    n = labels.shape[0]
    g = grid.shape[0]
    bucket = np.searchsorted(grid, labels)
    counts = np.zeros(g + 2, dtype=np.int64)
    for v in range(n):
        counts[bucket[v] + 1] += 1
    for i in range(g + 1):
        counts[i + 1] += counts[i]
    order = np.empty(n, dtype=np.int64)
    for v in range(n):
        b = bucket[v]
        order[counts[b]] = v
        counts[b] += 1
    # counts[i] is now the end of bucket i
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    touch = boundary.copy()
    is_open = np.zeros(n, dtype=np.bool_)
    n_inf = 0
    inf_vertices = 0
    out = np.empty(grid.shape[0], dtype=np.float64)
    k = 0
    for gi in range(grid.shape[0]):
        while k < counts[gi]:
            v = order[k]
            k += 1
            is_open[v] = True
            if touch[v]:
                n_inf += 1
                inf_vertices += 1
            for j in range(indptr[v], indptr[v + 1]):
                w = indices[j]
                if not is_open[w]:
                    continue
                rv = _find(parent, v)
                rw = _find(parent, w)
                if rv == rw:
                    continue
                tv = touch[rv]
                tw = touch[rw]
                if tv and tw:
                    n_inf -= 1
                elif tv:
                    inf_vertices += size[rw]
                elif tw:
                    inf_vertices += size[rv]
                if size[rv] < size[rw]:
                    rv, rw = rw, rv
                parent[rw] = rv
                size[rv] += size[rw]
                touch[rv] = tv or tw
        if stat == STAT_ORIGIN:
            out[gi] = 1.0 if (is_open[origin] and touch[_find(parent, origin)]) else 0.0
        elif stat == STAT_N_INFINITE:
            out[gi] = n_inf
        else:
            out[gi] = inf_vertices / n
    return out


@njit(cache=True, parallel=True)
def batch_sweep(indptr, indices, boundary, origin, k1, k2, first, count, grid, stat):
    n = boundary.shape[0]
    out = np.empty((count, grid.shape[0]), dtype=np.float64)
    for r in prange(count):
        lab = np.empty(n)
        fill_labels(k1, k2, first + r, lab)
        out[r] = sweep(indptr, indices, boundary, origin, lab, grid, stat)
    return out


# ---------------------------------------------------------------------------
# per-replica origin thresholds


@njit(cache=True)
def tree_origin_threshold(indptr, indices, boundary, labels):
    """Smallest p at which the origin (vertex 0) joins the boundary, for trees
    numbered breadth first from the origin. ``inf`` if it never does."""
    n = labels.shape[0]
    t = np.empty(n)
    for v in range(n - 1, -1, -1):
        if boundary[v]:
            t[v] = labels[v]
            continue
        best = np.inf
        for j in range(indptr[v], indptr[v + 1]):
            w = indices[j]
            if w > v and t[w] < best:
                best = t[w]
        t[v] = max(labels[v], best)
    return t[0]


@njit(cache=True)
def origin_threshold(indptr, indices, boundary, labels, origin):
    """Minimax path label from the origin to the boundary (bottleneck search)."""
    n = labels.shape[0]
    best = np.full(n, np.inf)
    done = np.zeros(n, dtype=np.bool_)
    best[origin] = labels[origin]
    heap = [(labels[origin], origin)]
    while len(heap) > 0:
        b, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if boundary[u]:
            return b
        for j in range(indptr[u], indptr[u + 1]):
            w = indices[j]
            c = max(b, labels[w])
            if not done[w] and c < best[w]:
                best[w] = c
                heapq.heappush(heap, (c, w))
    return np.inf


@njit(cache=True, parallel=True)
def batch_origin_threshold(indptr, indices, boundary, origin, k1, k2, first, count, tree_order):
    n = boundary.shape[0]
    out = np.empty(count)
    for r in prange(count):
        lab = np.empty(n)
        fill_labels(k1, k2, first + r, lab)
        if tree_order:
            out[r] = tree_origin_threshold(indptr, indices, boundary, lab)
        else:
            out[r] = origin_threshold(indptr, indices, boundary, lab, origin)
    return out


@njit(cache=True)
def _threshold(indptr, indices, boundary, labels, origin, tree_order):
    if tree_order:
        return tree_origin_threshold(indptr, indices, boundary, labels)
    return origin_threshold(indptr, indices, boundary, labels, origin)


@njit(cache=True)
def _event_threshold(indptr, indices, boundary, labels, origin, tree_order, event):
    if event == EVENT_ORIGIN:
        return _threshold(indptr, indices, boundary, labels, origin, tree_order)
    best = np.inf
    for v in range(labels.shape[0]):
        if boundary[v] and labels[v] < best:
            best = labels[v]
    return best


@njit(cache=True, parallel=True)
def batch_sdp_threshold(indptr, indices, boundary, origin, ka1, ka2, kb1, kb2,
                        first, count, p, tree_order, event):
    """Per replica: least delta at which ``event`` holds for Phi(p, delta).

    Survivors of omega_p get label 0 (always open); every other vertex keeps
    its reinforcement label, so Phi(p, delta) is the level set at delta.
    """
    n = boundary.shape[0]
    out = np.empty(count)
    for r in prange(count):
        lab = np.empty(n)
        rein = np.empty(n)
        fill_labels(ka1, ka2, first + r, lab)
        fill_labels(kb1, kb2, first + r, rein)
        omega = lab <= p
        destroyed, _ = infinite_mask(indptr, indices, boundary, omega)
        for v in range(n):
            if omega[v] and not destroyed[v]:
                rein[v] = 0.0
        out[r] = _event_threshold(indptr, indices, boundary, rein, origin, tree_order, event)
    return out


@njit(cache=True)
def tree_theta_restricted(indptr, indices, boundary, allowed, q):
    """Exact P[origin joined to the boundary] for Bernoulli(q) on the allowed
    vertices of a tree numbered breadth first from the origin."""
    n = allowed.shape[0]
    r = np.empty(n)
    for v in range(n - 1, -1, -1):
        if not allowed[v]:
            r[v] = 0.0
        elif boundary[v]:
            r[v] = q
        else:
            miss = 1.0
            for j in range(indptr[v], indptr[v + 1]):
                w = indices[j]
                if w > v:
                    miss *= 1.0 - r[w]
            r[v] = q * (1.0 - miss)
    return r[0]


@njit(cache=True)
def tree_level_crossing(indptr, indices, boundary, allowed, level, tol):
    """Bisect q so that ``tree_theta_restricted`` crosses ``level``; NaN if it never does."""
    if tree_theta_restricted(indptr, indices, boundary, allowed, 1.0) < level:
        return np.nan
    lo = 0.0
    hi = 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if tree_theta_restricted(indptr, indices, boundary, allowed, mid) >= level:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@njit(cache=True, parallel=True)
def batch_removed_crossing(indptr, indices, boundary, origin, k1, k2, first, count,
                           p, level, tol):
    """Per replica: remove omega_p's boundary clusters, then find the q at
    which the exact origin-crossing probability on what is left reaches
    ``level``. NaN marks replicas where the origin is cut off entirely."""
    n = boundary.shape[0]
    out = np.empty(count)
    for r in prange(count):
        lab = np.empty(n)
        fill_labels(k1, k2, first + r, lab)
        destroyed, _ = infinite_mask(indptr, indices, boundary, lab <= p)
        allowed = ~destroyed
        if not origin_reaches_boundary(indptr, indices, boundary, allowed, origin):
            out[r] = np.nan
        else:
            out[r] = tree_level_crossing(indptr, indices, boundary, allowed, level, tol)
    return out


@njit(cache=True, parallel=True)
def batch_removed_crossing_mc(indptr, indices, boundary, origin, ka1, ka2, kb1, kb2,
                              first, count, p, level, inner):
    """Like ``batch_removed_crossing`` for general graphs: the crossing is the
    ``level``-quantile of ``inner`` fresh origin thresholds on what is left."""
    n = boundary.shape[0]
    out = np.empty(count)
    k = max(int(np.ceil(level * inner)), 1)
    for r in prange(count):
        lab = np.empty(n)
        fresh = np.empty(n)
        fill_labels(ka1, ka2, first + r, lab)
        destroyed, _ = infinite_mask(indptr, indices, boundary, lab <= p)
        if not origin_reaches_boundary(indptr, indices, boundary, ~destroyed, origin):
            out[r] = np.nan
            continue
        thr = np.empty(inner)
        for j in range(inner):
            fill_labels(kb1, kb2, (first + r) * inner + j, fresh)
            for v in range(n):
                if destroyed[v]:
                    fresh[v] = np.inf
            thr[j] = origin_threshold(indptr, indices, boundary, fresh, origin)
        thr.sort()
        out[r] = thr[k - 1] if np.isfinite(thr[k - 1]) else np.nan
    return out
