"""Synthetic heterogeneous Gaussian-mixture benchmark.

Global components are drawn once; each dataset keeps a random subset of them,
jitters their means, perturbs their covariances and samples points from the
resulting local mixture.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import ortho_group, wishart

from ._validation import check_seed, split_rng
from .expfam import normal_wishart

_TRUTH_STREAM = 1
_LOCAL_STREAM = 2
_SAMPLE_STREAM = 3


@dataclass(frozen=True)
class SynthConfig:
    G: int = 5
    D: int = 10
    J: int = 50
    separation: float = 1.0
    hetero_noise: float = 0.5
    n_per_dataset: int = 500
    seed: int = 0
    wishart_df: float = None

    def __post_init__(self):
        for name in ("G", "D", "J", "n_per_dataset"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.separation > 0:
            raise ValueError(f"separation must be > 0, got {self.separation}")
        if not self.hetero_noise >= 0:
            raise ValueError(f"hetero_noise must be >= 0, got {self.hetero_noise}")
        if self.wishart_df is not None and self.wishart_df <= self.D - 1:
            raise ValueError(f"wishart_df must exceed D - 1, got {self.wishart_df}")
        check_seed(self.seed)


@dataclass
class GroundTruth:
    means: np.ndarray  # (G, D)
    covariances: np.ndarray  # (G, D, D)
    inclusion: np.ndarray  # (G,)

    @property
    def n_components(self):
        return self.means.shape[0]


@dataclass
class LocalMixture:
    subset: np.ndarray  # indices into the ground truth
    means: np.ndarray
    covariances: np.ndarray
    weights: np.ndarray

    @property
    def n_components(self):
        return len(self.subset)


def random_spd(dim, rng, low=0.5, high=1.5):
    """``Q diag(d) Q^T`` with Haar-random orthogonal ``Q`` and ``d ~ U(low, high)``."""
    eig = rng.uniform(low, high, size=dim)
    if dim == 1:
        return eig.reshape(1, 1)
    Q = ortho_group.rvs(dim, random_state=rng)
    S = (Q * eig) @ Q.T
    return 0.5 * (S + S.T)


def generate_global(config):
    rng = split_rng(config.seed, _TRUTH_STREAM)
    sigma0_sq = config.separation * config.G
    means = rng.normal(0.0, np.sqrt(sigma0_sq), size=(config.G, config.D))
    covs = np.stack([random_spd(config.D, rng) for _ in range(config.G)])
    inclusion = rng.uniform(0.3, 0.9, size=config.G)
    return GroundTruth(means, covs, inclusion)


def wishart_df(config):
    """Degrees of freedom of the covariance perturbation (default ``100 D``).

    The perturbed covariance is ``Wishart(df, Sigma / df)``, whose mean is
    ``Sigma`` and whose entries fluctuate with relative size about
    ``sqrt(2 / df)``.
    """
    return 100.0 * config.D if config.wishart_df is None else float(config.wishart_df)


def _local_mixture(truth, config, rng):
    D = truth.means.shape[1]
    while True:
        keep = rng.random(truth.n_components) < truth.inclusion
        if keep.any():
            break
    subset = np.flatnonzero(keep)
    means = truth.means[subset] + config.hetero_noise * rng.standard_normal((len(subset), D))
    df = wishart_df(config)
    covs = np.stack([
        np.atleast_2d(wishart.rvs(df=df, scale=truth.covariances[g] / df, random_state=rng))
        for g in subset
    ])
    covs = 0.5 * (covs + np.swapaxes(covs, -1, -2))
    weights = rng.dirichlet(np.ones(len(subset)))
    return LocalMixture(subset, means, covs, weights)


def generate_local_models(truth, config):
    """One local mixture per dataset, each from its own random stream."""
    return [
        _local_mixture(truth, config, split_rng(config.seed, _LOCAL_STREAM, j))
        for j in range(config.J)
    ]


def sample_local_dataset(local, n, seed=0, index=0):
    """Draw ``n`` i.i.d. points from a local mixture."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = split_rng(seed, _SAMPLE_STREAM, index)
    labels = rng.choice(local.n_components, size=n, p=local.weights)
    D = local.means.shape[1]
    chol = np.linalg.cholesky(local.covariances)
    z = rng.standard_normal((n, D))
    return local.means[labels] + np.einsum("nij,nj->ni", chol[labels], z)


def generate_benchmark(config):
    """Ground truth, local mixtures and one sampled dataset per local mixture."""
    truth = generate_global(config)
    locals_ = generate_local_models(truth, config)
    data = [sample_local_dataset(loc, config.n_per_dataset, config.seed, j)
            for j, loc in enumerate(locals_)]
    return truth, locals_, data


def analytic_posteriors(means, covariances, n_eff=500.0):
    """Normal-Wishart posteriors concentrated on given Gaussian components.

    Each factor has ``m = mean``, ``kappa = nu = n_eff`` and ``W = inv(cov) / n_eff``
    so that ``E[Lambda] = inv(cov)``.  Stands in for a local fit with exact
    knowledge of the generating mixture.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    if not n_eff > means.shape[1] - 1:
        raise ValueError(f"n_eff must exceed D - 1, got {n_eff}")
    out = []
    for mu, cov in zip(means, np.asarray(covariances, dtype=float)):
        W = np.linalg.inv(cov) / n_eff
        out.append(normal_wishart(mu, n_eff, 0.5 * (W + W.T), n_eff))
    return out
