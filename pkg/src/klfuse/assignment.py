"""Rectangular minimum-cost assignment and KL cost matrices.

Cost matrices have one row per local component and one column per candidate
global component.  Every row is matched to a distinct column.
"""

import itertools
import math

import numpy as np

from .expfam import check_compatible, kl_divergence

SENTINEL = 1e18


def _check_cost(cost):
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    n, m = cost.shape
    if n > m:
        raise ValueError(f"cost matrix has more rows than columns ({n} > {m})")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains a non-finite entry")
    return cost


def solve_rectangular_assignment(cost):
    """Exact minimum-cost injective row-to-column assignment.

    Shortest augmenting path Hungarian method with row and column potentials,
    adding one row at a time; O(rows^2 * cols).  Among equally cheap columns
    the search always settles the lowest index first, so results are
    deterministic.

    Returns ``(row_to_col, total_cost)`` where ``row_to_col`` is an int array.
    """
    cost = _check_cost(cost)
    n, m = cost.shape
    if n == 0:
        return np.zeros(0, dtype=int), 0.0
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=int)  # owner[j] = 1-based row matched to column j
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            used_idx = np.flatnonzero(used)
            u[owner[used_idx]] += delta
            v[used_idx] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=int)
    for j in range(1, m + 1):
        if owner[j]:
            row_to_col[owner[j] - 1] = j - 1
    total = float(sum(cost[r, c] for r, c in enumerate(row_to_col)))
    return row_to_col, total


def brute_force_assignment(cost):
    """Exhaustive search over injective maps; ties go to the lexicographically
    smallest ``row_to_col``.  Limited to at most 8 columns."""
    cost = _check_cost(cost)
    n, m = cost.shape
    if m > 8:
        raise ValueError(f"brute force limited to 8 columns, got {m}")
    best, best_cost = None, math.inf
    rows = range(n)
    for perm in itertools.permutations(range(m), n):
        total = sum(cost[r, c] for r, c in zip(rows, perm))
        if total < best_cost:
            best, best_cost = perm, total
    return np.array(best, dtype=int), float(best_cost)


def assignment_cost(cost, row_to_col):
    cost = np.asarray(cost)
    return float(sum(cost[r, c] for r, c in enumerate(row_to_col)))


def build_cost_matrix(locals_, globals_):
    """Entry ``(l, g)`` is ``KL(globals_[g] || locals_[l])``."""
    locals_, globals_ = list(locals_), list(globals_)
    if locals_ and globals_:
        check_compatible(locals_ + globals_)
    out = np.empty((len(locals_), len(globals_)))
    for g, glob in enumerate(globals_):
        for l, loc in enumerate(locals_):
            out[l, g] = kl_divergence(glob, loc)
    return out


def marginal_penalty(usage_counts, lam):
    """Increase of ``lam * sqrt(count)`` when a column gains one more dataset."""
    counts = np.asarray(usage_counts, dtype=float)
    return lam * (np.sqrt(counts + 1.0) - np.sqrt(counts))


def build_augmented_cost_matrix(base, usage_counts, lam):
    """Append the group-sparsity marginal cost and one new-component column per row.

    ``usage_counts[g]`` is the number of *other* datasets currently assigned
    to global ``g``.  Column ``G + l`` stands for opening a fresh global
    initialized at local component ``l``: it costs ``lam`` for row ``l`` and
    :data:`SENTINEL` for every other row.
    """
    base = np.asarray(base, dtype=float)
    counts = np.asarray(usage_counts)
    if base.ndim != 2 or counts.shape != (base.shape[1],):
        raise ValueError("usage_counts must have one entry per column of base")
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    if np.any(counts < 0):
        raise ValueError("usage counts must be nonnegative")
    n = base.shape[0]
    fresh = np.full((n, n), SENTINEL)
    np.fill_diagonal(fresh, lam)
    return np.hstack([base + marginal_penalty(counts, lam), fresh])
