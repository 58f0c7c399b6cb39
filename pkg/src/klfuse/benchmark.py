"""Synthetic benchmark: generate, fit local posteriors, fuse, evaluate."""

import time
from dataclasses import asdict, dataclass

import numpy as np

from .fusion import FusionConfig, fuse
from .localvi import fit_bayesian_gmm
from .metrics import polytope_hausdorff, size_estimation_error
from .synthgen import SynthConfig, generate_benchmark

METHODS = ("kl_fusion", "oracle_vi")

_VI_STREAM = 4


@dataclass
class SweepRow:
    seed: int
    separation: float
    noise: float
    method: str
    hausdorff: float
    size_error: int
    fused_G: int
    wall_seconds: float

    FIELDS = ("seed", "separation", "noise", "method", "hausdorff", "size_error", "fused_G",
              "wall_seconds")

    def as_dict(self):
        return asdict(self)


def vi_seed(seed, index):
    return int(np.random.SeedSequence(seed, spawn_key=(_VI_STREAM, index)).generate_state(1)[0])


def local_posteriors(datasets, n_components, seed=0, **vi_kwargs):
    """Fit one variational GMM per dataset and return the exported bundles."""
    bundles = []
    for j, (X, K) in enumerate(zip(datasets, n_components)):
        res = fit_bayesian_gmm(X, min(K, len(X)), seed=vi_seed(seed, j), **vi_kwargs)
        bundles.append(res.components)
    return bundles


def fused_means(components):
    return np.array([c.mean() for c in components])


def run_cell(synth, method="kl_fusion", fusion_config=None, vi_kwargs=None):
    """One benchmark cell; ``wall_seconds`` times the fusion (or pooled fit) step only."""
    vi_kwargs = vi_kwargs or {}
    truth, locals_, data = generate_benchmark(synth)
    if method == "kl_fusion":
        bundles = local_posteriors(data, [loc.n_components for loc in locals_], synth.seed,
                                   **vi_kwargs)
        config = fusion_config or FusionConfig(seed=synth.seed)
        start = time.perf_counter()
        result = fuse(bundles, config)
        wall = time.perf_counter() - start
        comps = result.global_model.components
    elif method == "oracle_vi":
        pooled = np.vstack(data)
        start = time.perf_counter()
        res = fit_bayesian_gmm(pooled, truth.n_components, seed=vi_seed(synth.seed, -1 % 2**32),
                               **vi_kwargs)
        wall = time.perf_counter() - start
        comps = res.components
    else:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    est = fused_means(comps)
    return SweepRow(
        seed=synth.seed,
        separation=synth.separation,
        noise=synth.hetero_noise,
        method=method,
        hausdorff=polytope_hausdorff(est, truth.means),
        size_error=size_estimation_error(len(comps), truth.n_components),
        fused_G=len(comps),
        wall_seconds=wall,
    )


def sweep_cells(separations, noises, seeds, methods=("kl_fusion",), **synth_kwargs):
    """Grid cells in deterministic order: separation, noise, seed, method."""
    for s in separations:
        for sigma in noises:
            for seed in seeds:
                for method in methods:
                    yield SynthConfig(separation=s, hetero_noise=sigma, seed=seed,
                                      **synth_kwargs), method
