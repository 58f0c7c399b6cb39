"""Evaluation of fused models against ground truth."""

import numpy as np

FW_TOL = 1e-8
FW_MAX_ITER = 10_000


def _check_points(points, name):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0 or pts.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if pts.ndim != 2 or not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} must be a finite (n, D) array")
    return pts


def _polish(P, v, alpha):
    """Exact projection onto the affine hull of the active vertices, if it stays feasible."""
    active = np.flatnonzero(alpha > 0)
    k = active.size
    A = P[active]
    # KKT system of min ||A^T w - v||^2 s.t. sum(w) = 1
    gram = A @ A.T
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = gram
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.concatenate([A @ v, [1.0]])
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    w = sol[:k]
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        return None
    out = np.zeros_like(alpha)
    out[active] = w
    return out


def point_to_hull_distance(v, hull_points, tol=FW_TOL, max_iter=FW_MAX_ITER):
    """Euclidean distance from ``v`` to the convex hull of ``hull_points``.

    Away-step Frank-Wolfe over the simplex of convex weights with exact line
    search, stopped once the duality gap of ``0.5 * ||x - v||^2`` falls below
    ``tol``; the final active face is then solved exactly when possible.
    """
    P = _check_points(hull_points, "hull_points")
    v = np.asarray(v, dtype=float).ravel()
    if v.shape[0] != P.shape[1]:
        raise ValueError(f"dimension mismatch: point has {v.shape[0]}, hull has {P.shape[1]}")
    n = P.shape[0]
    alpha = np.zeros(n)
    alpha[int(np.argmin(np.sum((P - v) ** 2, axis=1)))] = 1.0
    x = P.T @ alpha
    for _ in range(max_iter):
        r = x - v
        grad = P @ r
        s = int(np.argmin(grad))
        gap = grad @ alpha - grad[s]
        if gap <= tol:
            break
        active = np.flatnonzero(alpha > 0)
        a = active[int(np.argmax(grad[active]))]
        away_gap = grad[a] - grad @ alpha
        if gap >= away_gap:
            d_alpha = -alpha.copy()
            d_alpha[s] += 1.0
            max_step = 1.0
        else:
            d_alpha = alpha.copy()
            d_alpha[a] -= 1.0
            max_step = alpha[a] / (1.0 - alpha[a])
        d = P.T @ d_alpha
        denom = d @ d
        step = max_step if denom <= 0 else min(max_step, max(0.0, -(r @ d) / denom))
        alpha = alpha + step * d_alpha
        alpha[alpha < 1e-15] = 0.0
        alpha /= alpha.sum()
        x = P.T @ alpha
    best = np.linalg.norm(x - v)
    polished = _polish(P, v, alpha)
    if polished is not None:
        best = min(best, np.linalg.norm(P.T @ polished - v))
    return float(best)


def directed_polytope_distance(a, b):
    """``max_{v in a} dist(v, hull(b))``."""
    return max(point_to_hull_distance(v, b) for v in a)


def polytope_hausdorff(a, b):
    """Hausdorff distance between the convex hulls of two point sets.

    The distance from a point of one hull to the other hull is convex, so its
    maximum is attained at a vertex; checking the generating points suffices.
    """
    a = _check_points(a, "a")
    b = _check_points(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return max(directed_polytope_distance(a, b), directed_polytope_distance(b, a))


def point_set_hausdorff(a, b):
    """Hausdorff distance between the finite point sets themselves.

    Diagnostic only; the evaluation metric is :func:`polytope_hausdorff`.
    """
    a = _check_points(a, "a")
    b = _check_points(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    dist = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return float(max(dist.min(axis=1).max(), dist.min(axis=0).max()))


def size_estimation_error(estimated_G, true_G):
    if estimated_G < 0 or true_G < 0:
        raise ValueError("model sizes must be nonnegative")
    return abs(int(estimated_G) - int(true_G))
