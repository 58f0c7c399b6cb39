"""Exponential-family parameter algebra for mean-field factors.

Three families are supported:

``diag_gaussian``
    Product of independent normals, ``mean`` and ``variance`` in R^D.
    Natural parameters, interleaved per dimension: ``(mu_d / s2_d, -1 / (2 s2_d))``.
``dirichlet``
    Concentration ``alpha`` in R^D. Natural parameters: ``alpha - 1``.
``normal_wishart``
    Joint prior on a Gaussian mean and precision, ``Lambda ~ Wishart(W, nu)``
    and ``mu | Lambda ~ N(m, (kappa Lambda)^-1)``, so that ``E[Lambda] = nu W``.
    Natural parameters: ``kappa m`` (D), ``kappa`` (1), the upper triangle
    (row-major) of ``W^-1 + kappa m m^T``, and ``nu - D``.

The KL barycenter of a set of members of one family is the member whose
natural parameters are the weighted mean of theirs, see :func:`barycenter`.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import digamma, gammaln, multigammaln

from .exceptions import IncompatibleComponentsError, ParameterDomainError

FAMILIES = ("diag_gaussian", "dirichlet", "normal_wishart")

VARIANCE_FLOOR = 1e-12
ALPHA_FLOOR = 1e-8
PD_JITTER = 1e-10


def _frozen(x):
    x = np.array(x, dtype=float)
    x.setflags(write=False)
    return x


def _floored(x, floor, field):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or x.size == 0:
        raise ParameterDomainError(field, "expected a nonempty vector")
    if not np.all(np.isfinite(x)):
        raise ParameterDomainError(field, "non-finite entry")
    if np.any(x < 0):
        raise ParameterDomainError(field, "negative entry")
    return np.maximum(x, floor)


def _inv_spd(a, field="W"):
    """Inverse and log-determinant of an SPD matrix via Cholesky."""
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise ParameterDomainError(field, "matrix is not positive definite") from None
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    chol_inv = np.linalg.inv(chol)
    inv = chol_inv.T @ chol_inv
    return 0.5 * (inv + inv.T), logdet


@dataclass(frozen=True, eq=False)
class ExpFamComponent:
    """A single mean-field factor: family tag plus standard parameters.

    Build instances through :func:`diag_gaussian`, :func:`dirichlet` or
    :func:`normal_wishart`, which validate and freeze the arrays.
    """

    family: str
    params: dict

    @property
    def dim(self):
        if self.family == "normal_wishart":
            return self.params["m"].shape[0]
        return next(iter(self.params.values())).shape[0]

    def __getitem__(self, key):
        return self.params[key]

    def __repr__(self):
        body = ", ".join(f"{k}={np.array2string(np.asarray(v), precision=4)}"
                         for k, v in self.params.items())
        return f"{self.family}({body})"

    # Cached derived quantities used repeatedly by KL evaluation.
    @cached_property
    def _w_inv_logdet(self):
        return _inv_spd(self.params["W"])

    @cached_property
    def _log_alpha_norm(self):
        alpha = self.params["alpha"]
        return gammaln(alpha.sum()) - gammaln(alpha).sum()

    def mean(self):
        """Expected value of the latent variable (location for Normal-Wishart)."""
        if self.family == "diag_gaussian":
            return np.array(self.params["mean"])
        if self.family == "dirichlet":
            alpha = self.params["alpha"]
            return alpha / alpha.sum()
        return np.array(self.params["m"])


@dataclass(frozen=True)
class NaturalParams:
    family: str
    dim: int
    eta: np.ndarray


def diag_gaussian(mean, variance):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if mean.ndim != 1 or mean.size == 0 or not np.all(np.isfinite(mean)):
        raise ParameterDomainError("mean", "expected a finite nonempty vector")
    variance = _floored(variance, VARIANCE_FLOOR, "variance")
    if variance.shape != mean.shape:
        raise ParameterDomainError("variance", "shape does not match mean")
    return ExpFamComponent("diag_gaussian", {"mean": _frozen(mean), "variance": _frozen(variance)})


def dirichlet(alpha):
    return ExpFamComponent("dirichlet", {"alpha": _frozen(_floored(alpha, ALPHA_FLOOR, "alpha"))})


def normal_wishart(m, kappa, W, nu):
    m = np.atleast_1d(np.asarray(m, dtype=float))
    if m.ndim != 1 or m.size == 0 or not np.all(np.isfinite(m)):
        raise ParameterDomainError("m", "expected a finite nonempty vector")
    d = m.shape[0]
    kappa = float(kappa)
    if not np.isfinite(kappa) or kappa <= 0:
        raise ParameterDomainError("kappa", f"must be positive, got {kappa}")
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape != (d, d):
        raise ParameterDomainError("W", f"expected shape {(d, d)}, got {W.shape}")
    if not np.all(np.isfinite(W)):
        raise ParameterDomainError("W", "non-finite entry")
    if not np.allclose(W, W.T, rtol=1e-10, atol=1e-12 * np.abs(W).max()):
        raise ParameterDomainError("W", "matrix is not symmetric")
    W = 0.5 * (W + W.T)
    _inv_spd(W)
    nu = float(nu)
    if not np.isfinite(nu) or nu <= d - 1:
        raise ParameterDomainError("nu", f"must exceed D - 1 = {d - 1}, got {nu}")
    return ExpFamComponent(
        "normal_wishart", {"m": _frozen(m), "kappa": kappa, "W": _frozen(W), "nu": nu}
    )


def check_compatible(components):
    """Raise unless all components share one family and dimension."""
    components = list(components)
    if not components:
        raise IncompatibleComponentsError("no components given")
    family, dim = components[0].family, components[0].dim
    for c in components[1:]:
        if c.family != family or c.dim != dim:
            raise IncompatibleComponentsError(
                f"cannot combine {family}(D={dim}) with {c.family}(D={c.dim})"
            )
    return family, dim


# Natural-parameter maps


def to_natural(c):
    if c.family == "diag_gaussian":
        mean, var = c["mean"], c["variance"]
        eta = np.column_stack([mean / var, -0.5 / var]).ravel()
    elif c.family == "dirichlet":
        eta = c["alpha"] - 1.0
    elif c.family == "normal_wishart":
        m, kappa, nu = c["m"], c["kappa"], c["nu"]
        d = m.shape[0]
        w_inv, _ = c._w_inv_logdet
        scatter = w_inv + kappa * np.outer(m, m)
        eta = np.concatenate([kappa * m, [kappa], scatter[np.triu_indices(d)], [nu - d]])
    else:
        raise ParameterDomainError("family", f"unknown family {c.family!r}")
    return NaturalParams(c.family, c.dim, _frozen(eta))


def _nw_dim(size):
    # size = D + 1 + D(D+1)/2 + 1
    d = int(round((-3 + np.sqrt(9 + 8 * (size - 2))) / 2))
    if d < 1 or d + 2 + d * (d + 1) // 2 != size:
        raise ParameterDomainError("eta", f"length {size} is not a Normal-Wishart layout")
    return d


def from_natural(n, repair=False):
    """Convert natural parameters back to a component.

    With ``repair=True`` the recovered Normal-Wishart ``W^-1`` is symmetrized
    and, if not positive definite, shifted by ``(|lambda_min| + 1e-10) I``.
    """
    eta = np.asarray(n.eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise ParameterDomainError("eta", "non-finite entry")
    if n.family == "diag_gaussian":
        pairs = eta.reshape(-1, 2)
        if np.any(pairs[:, 1] >= 0):
            raise ParameterDomainError("eta", "second coordinate must be negative")
        var = -0.5 / pairs[:, 1]
        return diag_gaussian(pairs[:, 0] * var, var)
    if n.family == "dirichlet":
        alpha = eta + 1.0
        if np.any(alpha <= 0):
            raise ParameterDomainError("eta", "recovered alpha is not positive")
        return dirichlet(alpha)
    if n.family == "normal_wishart":
        d = _nw_dim(eta.size)
        kappa = eta[d]
        if kappa <= 0:
            raise ParameterDomainError("kappa", "recovered kappa is not positive")
        m = eta[:d] / kappa
        scatter = np.zeros((d, d))
        scatter[np.triu_indices(d)] = eta[d + 1:-1]
        scatter = scatter + np.triu(scatter, 1).T
        w_inv = scatter - kappa * np.outer(m, m)
        w_inv = 0.5 * (w_inv + w_inv.T)
        if repair:
            lam_min = np.linalg.eigvalsh(w_inv)[0]
            if lam_min <= 0:
                w_inv = w_inv + (abs(lam_min) + PD_JITTER) * np.eye(d)
        W, _ = _inv_spd(w_inv, field="W^-1")
        return normal_wishart(m, kappa, W, eta[-1] + d)
    raise ParameterDomainError("family", f"unknown family {n.family!r}")


# Divergences


def _kl_diag_gaussian(q, p):
    vq, vp = q["variance"], p["variance"]
    diff = p["mean"] - q["mean"]
    return 0.5 * np.sum(vq / vp + diff * diff / vp - 1.0 + np.log(vp / vq))


def _kl_dirichlet(q, p):
    aq, ap = q["alpha"], p["alpha"]
    return (q._log_alpha_norm - p._log_alpha_norm
            + np.dot(aq - ap, digamma(aq) - digamma(aq.sum())))


def _kl_normal_wishart(q, p):
    d = q.dim
    mq, kq, Wq, nq = q["m"], q["kappa"], q["W"], q["nu"]
    mp, kp, np_ = p["m"], p["kappa"], p["nu"]
    _, logdet_q = q._w_inv_logdet
    wp_inv, logdet_p = p._w_inv_logdet
    # multivariate digamma psi_D(nu / 2) = sum_i psi((nu + 1 - i) / 2)
    psi_d = np.sum(digamma(0.5 * (nq - np.arange(d))))
    wishart = (
        multigammaln(0.5 * np_, d) - multigammaln(0.5 * nq, d)
        + 0.5 * (nq - np_) * psi_d
        + 0.5 * np_ * (logdet_p - logdet_q)
        + 0.5 * nq * (np.sum(wp_inv * Wq) - d)
    )
    diff = mq - mp
    gaussian = 0.5 * (d * kp / kq - d + d * np.log(kq / kp) + kp * nq * diff @ Wq @ diff)
    return wishart + gaussian


_KL = {
    "diag_gaussian": _kl_diag_gaussian,
    "dirichlet": _kl_dirichlet,
    "normal_wishart": _kl_normal_wishart,
}


def kl_divergence(q, p):
    """KL(q || p) in closed form; q is the candidate, p the reference."""
    check_compatible([q, p])
    return float(_KL[q.family](q, p))


# Sampling and log densities (used by the Monte Carlo oracle)


def sample_wishart(W, nu, size, rng):
    """Draw ``size`` precision matrices from Wishart(W, nu) by Bartlett decomposition."""
    d = W.shape[0]
    chol = np.linalg.cholesky(W)
    A = np.zeros((size, d, d))
    for i in range(d):
        A[:, i, i] = np.sqrt(rng.chisquare(nu - i, size=size))
        if i:
            A[:, i, :i] = rng.standard_normal((size, i))
    LA = chol @ A
    return LA @ np.swapaxes(LA, -1, -2)


def sample(c, size, rng):
    """Draw ``size`` samples; Normal-Wishart samples are ``(mu, Lambda)`` pairs."""
    if c.family == "diag_gaussian":
        return c["mean"] + np.sqrt(c["variance"]) * rng.standard_normal((size, c.dim))
    if c.family == "dirichlet":
        return rng.dirichlet(c["alpha"], size=size)
    lam = sample_wishart(c["W"], c["nu"], size, rng)
    chol = np.linalg.cholesky(c["kappa"] * lam)
    z = rng.standard_normal((size, c.dim))
    # mu - m = L^-T z has covariance (kappa Lambda)^-1
    offset = np.linalg.solve(np.swapaxes(chol, -1, -2), z[..., None])[..., 0]
    return c["m"] + offset, lam


def log_density(c, x):
    if c.family == "diag_gaussian":
        mean, var = c["mean"], c["variance"]
        return -0.5 * np.sum(np.log(2 * np.pi * var) + (x - mean) ** 2 / var, axis=-1)
    if c.family == "dirichlet":
        return c._log_alpha_norm + np.sum((c["alpha"] - 1.0) * np.log(x), axis=-1)
    mu, lam = x
    d = c.dim
    m, kappa, nu = c["m"], c["kappa"], c["nu"]
    w_inv, logdet_w = c._w_inv_logdet
    _, logdet_lam = np.linalg.slogdet(lam)
    diff = mu - m
    quad = np.einsum("ni,nij,nj->n", diff, lam, diff)
    log_gauss = 0.5 * (d * np.log(kappa / (2 * np.pi)) + logdet_lam - kappa * quad)
    log_wishart = (
        0.5 * (nu - d - 1) * logdet_lam
        - 0.5 * np.einsum("ij,nji->n", w_inv, lam)
        - 0.5 * nu * d * np.log(2.0)
        - 0.5 * nu * logdet_w
        - multigammaln(0.5 * nu, d)
    )
    return log_gauss + log_wishart


def mc_kl_estimate(q, p, n_samples=100_000, seed=None):
    """Monte Carlo estimate of KL(q || p) with its standard error.

    Averages ``log q(x) - log p(x)`` over ``x ~ q``.
    """
    check_compatible([q, p])
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    rng = np.random.default_rng(seed)
    x = sample(q, n_samples, rng)
    ratio = log_density(q, x) - log_density(p, x)
    return float(ratio.mean()), float(ratio.std(ddof=1) / np.sqrt(n_samples))


# Barycenters


def check_weights(weights, n):
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return w


def barycenter(components, weights=None):
    """Minimizer of ``sum_i w_i KL(q || c_i)`` over the components' family.

    Equal weights are used when ``weights`` is omitted.
    """
    components = list(components)
    if not components:
        raise ValueError("barycenter of an empty list")
    family, dim = check_compatible(components)
    if weights is None:
        weights = np.full(len(components), 1.0 / len(components))
    w = check_weights(weights, len(components))
    if len(components) == 1:
        return components[0]
    eta = np.zeros_like(to_natural(components[0]).eta)
    for wi, c in zip(w, components):
        eta = eta + wi * to_natural(c).eta
    return from_natural(NaturalParams(family, dim, eta), repair=True)


def params_close(a, b, rtol=1e-8, atol=0.0):
    """True when two components share a family and all parameters match."""
    if a.family != b.family or a.dim != b.dim:
        return False
    return all(np.allclose(a.params[k], b.params[k], rtol=rtol, atol=atol) for k in a.params)
