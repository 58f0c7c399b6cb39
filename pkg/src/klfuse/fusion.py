"""Assign-and-average fusion of mean-field posteriors.

Each local posterior (a *bundle*) is a list of components of one exponential
family.  Fusion alternates between matching local components to global ones
and moving every global component to the KL barycenter of its matches.

In heterogeneous mode the number of global components is inferred: the
objective adds ``lam * sum_g sqrt(n_g)`` where ``n_g`` counts the datasets
that use global ``g``, and each dataset's assignment is solved exactly with
an augmented Hungarian problem that may also open new components.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_bundles, check_seed, split_rng
from .assignment import (
    build_augmented_cost_matrix,
    build_cost_matrix,
    solve_rectangular_assignment,
)
from .exceptions import ConsistencyError
from .expfam import barycenter, kl_divergence, to_natural

MODES = ("homogeneous", "heterogeneous")
INITS = ("kl_kmeanspp", "first_dataset")
SWEEPS = ("sequential", "jacobi")

_INIT_STREAM = 0


@dataclass(frozen=True)
class FusionConfig:
    """Settings for one fusion run.

    ``sweep="jacobi"`` solves every dataset against the same snapshot of
    usage counts (parallelizable, approximate, no descent guarantee).
    ``merge_moves`` enables the pairwise merge step of heterogeneous mode.
    """

    lambda_base: float = 0.1
    max_iters: int = 100
    rel_tol: float = 1e-6
    seed: int = 0
    mode: str = "heterogeneous"
    init: str = "kl_kmeanspp"
    sweep: str = "sequential"
    n_jobs: int = 1
    merge_moves: bool = True

    def __post_init__(self):
        if not self.lambda_base >= 0:
            raise ValueError(f"lambda_base must be >= 0, got {self.lambda_base}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.rel_tol > 0:
            raise ValueError(f"rel_tol must be > 0, got {self.rel_tol}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")
        if self.sweep not in SWEEPS:
            raise ValueError(f"sweep must be one of {SWEEPS}, got {self.sweep!r}")
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be >= 1")
        check_seed(self.seed)


@dataclass
class GlobalModel:
    components: list
    usage: np.ndarray = None

    def __post_init__(self):
        if self.usage is None:
            self.usage = np.zeros(len(self.components), dtype=int)
        self.usage = np.asarray(self.usage, dtype=int)

    def __len__(self):
        return len(self.components)


@dataclass
class FusionResult:
    global_model: GlobalModel
    assignments: list
    objective_trace: list = field(default_factory=list)
    iterations: int = 0
    scale: float = 1.0


def assignment_matrix(row_to_col, n_globals):
    """Binary ``L x G`` matrix form of a row-to-column map."""
    P = np.zeros((len(row_to_col), n_globals), dtype=int)
    P[np.arange(len(row_to_col)), row_to_col] = 1
    return P


def usage_counts(assignments, n_globals, exclude=None):
    """Number of datasets whose assignment uses each global component."""
    counts = np.zeros(n_globals, dtype=int)
    for j, r2c in enumerate(assignments):
        if r2c is None or j == exclude:
            continue
        counts[np.unique(r2c)] += 1
    return counts


def check_assignments(bundles, assignments, n_globals):
    if len(assignments) != len(bundles):
        raise ConsistencyError(f"{len(assignments)} assignments for {len(bundles)} bundles")
    for j, (b, r2c) in enumerate(zip(bundles, assignments)):
        r2c = np.asarray(r2c)
        if r2c.shape != (len(b),):
            raise ConsistencyError(f"dataset {j}: expected {len(b)} assigned rows")
        if np.any(r2c < 0) or np.any(r2c >= n_globals):
            raise ConsistencyError(f"dataset {j}: column index out of range")
        if len(np.unique(r2c)) != len(r2c):
            raise ConsistencyError(f"dataset {j}: a global receives two local components")


def canonical_order(components):
    """Indices sorting components by their natural parameters (lexicographic)."""
    etas = np.array([to_natural(c).eta for c in components])
    return np.lexsort(etas.T[::-1])


def init_kl_kmeanspp(pooled, k, seed=0):
    """k-means++ seeding with KL divergence in place of squared distance.

    The first center is drawn uniformly; each next one with probability
    proportional to ``min_c KL(candidate || c)`` over the centers chosen so
    far.  Once every remaining candidate coincides with a center the draw
    falls back to uniform over the unchosen ones.
    """
    pooled = list(pooled)
    if not 1 <= k <= len(pooled):
        raise ValueError(f"k must lie in [1, {len(pooled)}], got {k}")
    rng = split_rng(seed, _INIT_STREAM)
    chosen = [int(rng.integers(len(pooled)))]
    dist = np.array([kl_divergence(c, pooled[chosen[0]]) for c in pooled])
    dist[chosen[0]] = 0.0
    while len(chosen) < k:
        weights = np.clip(dist, 0.0, None)
        total = weights.sum()
        if total > 0 and np.isfinite(total):
            idx = int(rng.choice(len(pooled), p=weights / total))
        else:
            remaining = np.setdiff1d(np.arange(len(pooled)), chosen)
            idx = int(rng.choice(remaining))
        chosen.append(idx)
        new = np.array([kl_divergence(c, pooled[idx]) for c in pooled])
        dist = np.minimum(dist, new)
        dist[chosen] = 0.0
    return GlobalModel([pooled[i] for i in chosen])


def normalize_costs(cost_matrices):
    """Divide all costs by the population standard deviation of their pooled entries."""
    mats = [np.asarray(c, dtype=float) for c in cost_matrices]
    if not mats:
        raise ValueError("no cost matrices given")
    pooled = np.concatenate([m.ravel() for m in mats])
    if not np.all(np.isfinite(pooled)):
        raise ValueError("cost matrices contain a non-finite entry")
    scale = float(pooled.std()) if pooled.size else 0.0
    if scale < 1e-12:
        return mats, 1.0
    return [m / scale for m in mats], scale


def objective(bundles, globals_, assignments, lam, scale=1.0):
    """Scaled KL matching cost plus ``lam * sum_g sqrt(#datasets using g)``."""
    components = globals_.components if isinstance(globals_, GlobalModel) else list(globals_)
    check_assignments(bundles, assignments, len(components))
    kl_total = 0.0
    mass = np.zeros(len(components))
    for b, r2c in zip(bundles, assignments):
        for l, g in enumerate(r2c):
            kl_total += kl_divergence(components[g], b[l]) / scale
            mass[g] += 1.0
    return float(kl_total + lam * np.sum(np.sqrt(mass)))


def update_global_components(bundles, assignments, n_globals):
    """Equal-weight barycenter of the local components matched to each global.

    Members are visited in dataset order, which makes the result independent
    of the order of components inside a bundle.
    """
    check_assignments(bundles, assignments, n_globals)
    members = [[] for _ in range(n_globals)]
    for b, r2c in zip(bundles, assignments):
        for l, g in enumerate(r2c):
            members[g].append(b[l])
    for g, m in enumerate(members):
        if not m:
            raise ConsistencyError(f"global component {g} has no members; prune first")
    return GlobalModel([barycenter(m) for m in members], usage_counts(assignments, n_globals))


def prune_unused(globals_, assignments):
    """Drop globals no dataset uses and remap assignment columns.

    Returns the reduced model and the remapped assignments.
    """
    counts = usage_counts(assignments, len(globals_))
    keep = np.flatnonzero(counts > 0)
    remap = np.full(len(globals_), -1, dtype=int)
    remap[keep] = np.arange(len(keep))
    model = GlobalModel([globals_.components[g] for g in keep], counts[keep])
    return model, [remap[np.asarray(r2c)] for r2c in assignments]


def _initial_globals(bundles, config, k):
    if config.init == "first_dataset":
        first = bundles[0]
        if len(first) >= k:
            return GlobalModel(list(first[:k]))
    pooled = [c for b in bundles for c in b]
    pooled = [pooled[i] for i in canonical_order(pooled)]
    return init_kl_kmeanspp(pooled, k, config.seed)


def _map(fn, items, n_jobs):
    if n_jobs == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def _converged(trace, rel_tol):
    if len(trace) < 2:
        return False
    prev, cur = trace[-2], trace[-1]
    return prev - cur < rel_tol * max(abs(prev), 1e-300)


def _fuse_homogeneous(bundles, config):
    L = len(bundles[0])
    model = _initial_globals(bundles, config, L)
    costs = _map(lambda b: build_cost_matrix(b, model.components), bundles, config.n_jobs)
    _, scale = normalize_costs(costs)
    assignments = [None] * len(bundles)
    trace = []
    it = 0
    for it in range(1, config.max_iters + 1):
        comps = model.components

        def solve(b):
            return solve_rectangular_assignment(build_cost_matrix(b, comps) / scale)[0]

        new = _map(solve, bundles, config.n_jobs)
        changed = any(a is None or not np.array_equal(a, n) for a, n in zip(assignments, new))
        assignments = new
        model = update_global_components(bundles, assignments, L)
        trace.append(objective(bundles, model, assignments, 0.0, scale))
        if not changed or _converged(trace, config.rel_tol):
            break
    return FusionResult(model, assignments, trace, it, scale)


def _solve_block(bundle, components, counts, lam, scale):
    """Exact assignment of one dataset given all other datasets' assignments."""
    base = build_cost_matrix(bundle, components) / scale
    r2c, _ = solve_rectangular_assignment(build_augmented_cost_matrix(base, counts, lam))
    return r2c


def _open_new(bundle, r2c, components):
    """Turn new-component columns into fresh globals placed at the local component."""
    G = len(components)
    r2c = r2c.copy()
    for l in range(len(r2c)):
        if r2c[l] >= G:
            r2c[l] = len(components)
            components.append(bundle[l])
    return r2c


def _members(bundles, assignments, n_globals):
    members = [[] for _ in range(n_globals)]
    for j, (b, r2c) in enumerate(zip(bundles, assignments)):
        for l, g in enumerate(r2c):
            members[g].append((j, l))
    return members


def merge_components(bundles, model, assignments, lam, scale):
    """Greedily merge pairs of globals used by disjoint sets of datasets.

    A pair is merged into the barycenter of the union of their members when
    that lowers the objective; the best pair is merged first and the search
    repeats until no merge helps.  Returns the new model, assignments and
    whether anything changed.
    """
    n = len(model)
    members = _members(bundles, assignments, n)
    # cluster id -> [component, members, datasets, own KL cost]
    clusters = {
        g: [model.components[g], members[g], frozenset(j for j, _ in members[g]),
            sum(kl_divergence(model.components[g], bundles[j][l]) for j, l in members[g]) / scale]
        for g in range(n)
    }
    order = list(range(n))
    cache = {}
    next_id = n
    changed = False

    def evaluate(a, b):
        ca, cb = clusters[a], clusters[b]
        if ca[2] & cb[2]:
            return None
        reg = lam * (np.sqrt(len(ca[2]) + len(cb[2])) - np.sqrt(len(ca[2])) - np.sqrt(len(cb[2])))
        bound = reg - ca[3] - cb[3]
        if bound >= 0:
            return None
        union = sorted(ca[1] + cb[1])
        merged = barycenter([bundles[j][l] for j, l in union])
        kl = sum(kl_divergence(merged, bundles[j][l]) for j, l in union) / scale
        return kl + bound, merged, union, kl

    while True:
        best = None
        for pos, a in enumerate(order):
            for b in order[pos + 1:]:
                if (a, b) not in cache:
                    cache[a, b] = evaluate(a, b)
                entry = cache[a, b]
                if entry is not None and entry[0] < -1e-12 and (best is None or entry[0] < best[0][0]):
                    best = (entry, a, b)
        if best is None:
            break
        (_, merged, union, kl), a, b = best
        changed = True
        new = next_id
        next_id += 1
        clusters[new] = [merged, union, clusters[a][2] | clusters[b][2], kl]
        order[order.index(a)] = new
        order.remove(b)
        del clusters[a], clusters[b]
        cache = {k: v for k, v in cache.items() if a not in k and b not in k}
    if not changed:
        return model, assignments, False
    assignments = [a.copy() for a in assignments]
    for g, cid in enumerate(order):
        for j, l in clusters[cid][1]:
            assignments[j][l] = g
    components = [clusters[cid][0] for cid in order]
    return GlobalModel(components, usage_counts(assignments, len(components))), assignments, True


def _fuse_heterogeneous(bundles, config):
    k = max(len(b) for b in bundles)
    model = _initial_globals(bundles, config, k)
    costs = _map(lambda b: build_cost_matrix(b, model.components), bundles, config.n_jobs)
    _, scale = normalize_costs(costs)
    lam = config.lambda_base
    components = list(model.components)
    assignments = [None] * len(bundles)
    trace = []
    it = 0
    for it in range(1, config.max_iters + 1):
        previous = [None if a is None else a.copy() for a in assignments]
        if config.sweep == "sequential":
            for j, b in enumerate(bundles):
                counts = usage_counts(assignments, len(components), exclude=j)
                r2c = _solve_block(b, components, counts, lam, scale)
                assignments[j] = _open_new(b, r2c, components)
        else:
            snapshot = list(components)
            n_old = len(snapshot)

            def solve(j):
                counts = usage_counts(previous, n_old, exclude=j)
                return _solve_block(bundles[j], snapshot, counts, lam, scale)

            solved = _map(solve, range(len(bundles)), config.n_jobs)
            for j, r2c in enumerate(solved):
                assignments[j] = _open_new(bundles[j], r2c, components)
        changed = any(p is None or not np.array_equal(p, a) for p, a in zip(previous, assignments))
        model, assignments = prune_unused(GlobalModel(components), assignments)
        model = update_global_components(bundles, assignments, len(model))
        if config.merge_moves:
            model, assignments, merged = merge_components(bundles, model, assignments, lam, scale)
            changed = changed or merged
        components = list(model.components)
        trace.append(objective(bundles, model, assignments, lam, scale))
        if not changed or _converged(trace, config.rel_tol):
            break
    return FusionResult(model, assignments, trace, it, scale)


def fuse(bundles, config=None):
    """Fuse local posterior bundles into one global model."""
    config = config or FusionConfig()
    bundles, _, _ = check_bundles(bundles, require_equal_sizes=config.mode == "homogeneous")
    if config.mode == "homogeneous":
        return _fuse_homogeneous(bundles, config)
    return _fuse_heterogeneous(bundles, config)


class KLFusion(BaseEstimator):
    """Estimator wrapper around :func:`fuse`.

    ``fit`` takes a list of bundles, each a list of
    :class:`~klfuse.expfam.ExpFamComponent`.

    Attributes
    ----------
    components_ : list of ExpFamComponent
        Fused global components.
    usage_ : ndarray of int
        Number of datasets matched to each global component.
    assignments_ : list of ndarray
        Per dataset, the global index of each local component.
    objective_trace_ : list of float
    n_iter_ : int
    scale_ : float
        Cost normalization used for the run.
    """

    def __init__(self, mode="heterogeneous", lambda_base=0.1, max_iters=100, rel_tol=1e-6,
                 init="kl_kmeanspp", sweep="sequential", merge_moves=True, n_jobs=1,
                 random_state=0):
        self.mode = mode
        self.lambda_base = lambda_base
        self.max_iters = max_iters
        self.rel_tol = rel_tol
        self.init = init
        self.sweep = sweep
        self.merge_moves = merge_moves
        self.n_jobs = n_jobs
        self.random_state = random_state

    def get_config(self):
        return FusionConfig(
            lambda_base=self.lambda_base, max_iters=self.max_iters, rel_tol=self.rel_tol,
            seed=self.random_state, mode=self.mode, init=self.init, sweep=self.sweep,
            n_jobs=self.n_jobs, merge_moves=self.merge_moves,
        )

    def fit(self, X, y=None):
        result = fuse(X, self.get_config())
        self.result_ = result
        self.components_ = result.global_model.components
        self.usage_ = result.global_model.usage
        self.assignments_ = result.assignments
        self.objective_trace_ = result.objective_trace
        self.n_iter_ = result.iterations
        self.scale_ = result.scale
        return self

    def predict(self, bundle):
        """Index of the closest global (by ``KL(global || local)``) per local component."""
        if not hasattr(self, "components_"):
            raise AttributeError("KLFusion instance is not fitted yet")
        bundle, _, _ = check_bundles([bundle])
        return build_cost_matrix(bundle[0], self.components_).argmin(axis=1)

    def fit_predict(self, X, y=None):
        return self.fit(X).assignments_
