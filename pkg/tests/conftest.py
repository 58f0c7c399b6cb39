import numpy as np
import pytest
from scipy.stats import ortho_group

from klfuse.expfam import diag_gaussian, dirichlet, normal_wishart

FAMILIES = ("diag_gaussian", "dirichlet", "normal_wishart")


def random_spd(dim, rng, low=0.5, high=2.0):
    eig = rng.uniform(low, high, size=dim)
    if dim == 1:
        return eig.reshape(1, 1)
    Q = ortho_group.rvs(dim, random_state=rng)
    S = (Q * eig) @ Q.T
    return 0.5 * (S + S.T)


def random_component(family, dim, rng):
    if family == "diag_gaussian":
        return diag_gaussian(rng.uniform(-2, 2, dim), np.exp(rng.uniform(-1, 1, dim)))
    if family == "dirichlet":
        return dirichlet(rng.uniform(0.8, 5.0, dim))
    nu = dim + 2.0 + rng.uniform(0, 8)
    return normal_wishart(rng.uniform(-1, 1, dim), rng.uniform(0.5, 3.0),
                          random_spd(dim, rng) / nu, nu)


def random_bundles(rng, family="diag_gaussian", dim=2, J=None, max_L=5, n_clusters=None):
    """Heterogeneous bundles whose components scatter around a few centers."""
    J = J or int(rng.integers(2, 11))
    n_clusters = n_clusters or int(rng.integers(2, 6))
    centers = [random_component(family, dim, rng) for _ in range(n_clusters)]
    bundles = []
    for _ in range(J):
        L = int(rng.integers(1, min(max_L, n_clusters) + 1))
        picks = rng.choice(n_clusters, size=L, replace=False)
        bundle = []
        for g in picks:
            c = centers[g]
            if family == "diag_gaussian":
                bundle.append(diag_gaussian(c["mean"] + 0.3 * rng.standard_normal(dim),
                                            c["variance"] * np.exp(0.2 * rng.standard_normal(dim))))
            elif family == "dirichlet":
                bundle.append(dirichlet(c["alpha"] * np.exp(0.2 * rng.standard_normal(dim))))
            else:
                bundle.append(normal_wishart(c["m"] + 0.3 * rng.standard_normal(dim), c["kappa"],
                                             c["W"], c["nu"]))
        bundles.append(bundle)
    return bundles


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance criteria record their outcome here; the summary hook prints one line each.
ACCEPTANCE_RESULTS = {}


def record_criterion(number, title, passed, detail):
    ACCEPTANCE_RESULTS[number] = (title, bool(passed), detail)
    assert passed, f"criterion {number} ({title}) failed: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title} | {detail}")
