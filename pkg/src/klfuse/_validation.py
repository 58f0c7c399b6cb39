"""Input checks shared by the estimators and the command line."""

import numbers

import numpy as np

from .expfam import ExpFamComponent, check_compatible


def check_bundles(bundles, require_equal_sizes=False):
    """Validate a list of posterior bundles (lists of components).

    Returns the bundles as a list of lists together with ``(family, dim)``.
    """
    if bundles is None:
        raise ValueError("no bundles given")
    bundles = [list(b) for b in bundles]
    if not bundles:
        raise ValueError("at least one bundle is required")
    for j, b in enumerate(bundles):
        if not b:
            raise ValueError(f"bundle {j} has no components")
        for c in b:
            if not isinstance(c, ExpFamComponent):
                raise TypeError(f"bundle {j} holds {type(c).__name__}, not ExpFamComponent")
    family, dim = check_compatible([c for b in bundles for c in b])
    if require_equal_sizes:
        sizes = {len(b) for b in bundles}
        if len(sizes) != 1:
            raise ValueError(
                f"homogeneous fusion needs equal component counts, got {sorted(sizes)}"
            )
    return bundles, family, dim


def check_seed(seed):
    if seed is None:
        return 0
    if isinstance(seed, numbers.Integral) and 0 <= seed < 2**64:
        return int(seed)
    raise ValueError(f"seed must be an integer in [0, 2**64), got {seed!r}")


def split_rng(seed, purpose, index=0):
    """Independent generator for one (purpose, index) stream of a seeded run."""
    return np.random.default_rng(np.random.SeedSequence(check_seed(seed), spawn_key=(purpose, index)))
