"""Mean-field variational Bayes for a Gaussian mixture.

Variational factors are ``q(pi) = Dir(alpha)`` and, per component,
``q(mu_k, Lambda_k) = N(mu_k | m_k, (kappa_k Lambda_k)^-1) Wishart(Lambda_k | W_k, nu_k)``.
Updates follow the usual coordinate-ascent scheme (responsibilities, then
Dirichlet and Normal-Wishart parameters from weighted sufficient statistics).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln, logsumexp, multigammaln
from sklearn.base import BaseEstimator
from sklearn.cluster import KMeans
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_seed
from .expfam import normal_wishart

WEIGHT_FLOOR = 1.0


@dataclass
class GmmPrior:
    m0: np.ndarray
    kappa0: float
    W0: np.ndarray
    nu0: float
    alpha0: float

    def __post_init__(self):
        self.m0 = np.asarray(self.m0, dtype=float)
        self.W0 = np.atleast_2d(np.asarray(self.W0, dtype=float))
        D = self.m0.shape[0]
        if self.kappa0 <= 0 or self.alpha0 <= 0:
            raise ValueError("kappa0 and alpha0 must be positive")
        if self.nu0 <= D - 1:
            raise ValueError(f"nu0 must exceed D - 1 = {D - 1}")
        if self.W0.shape != (D, D) or np.any(np.linalg.eigvalsh(self.W0) <= 0):
            raise ValueError("W0 must be a symmetric positive definite D x D matrix")

    @classmethod
    def default(cls, X, K):
        """Weakly informative prior centred on the data.

        ``E[Lambda] = nu0 W0`` equals the inverse data covariance.
        """
        X = np.asarray(X, dtype=float)
        n, D = X.shape
        nu0 = D + 2.0
        cov = np.atleast_2d(np.cov(X, rowvar=False)) if n > 1 else np.eye(D)
        cov = cov + 1e-6 * np.trace(cov) / D * np.eye(D) + 1e-12 * np.eye(D)
        W0 = np.linalg.inv(nu0 * cov)
        return cls(X.mean(axis=0), 1.0, 0.5 * (W0 + W0.T), nu0, 1.0 / K)


@dataclass
class VIState:
    resp: np.ndarray  # (n, K)
    alpha: np.ndarray  # (K,)
    kappa: np.ndarray  # (K,)
    m: np.ndarray  # (K, D)
    W: np.ndarray  # (K, D, D)
    nu: np.ndarray  # (K,)


@dataclass
class VIResult:
    state: VIState
    components: list  # exported Normal-Wishart factors
    weights: np.ndarray  # mixing weights of the exported factors
    elbo_trace: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    @property
    def responsibilities(self):
        return self.state.resp


def _stats(X, resp):
    Nk = resp.sum(axis=0)
    safe = np.maximum(Nk, 1e-300)
    xbar = (resp.T @ X) / safe[:, None]
    diff = X[None, :, :] - xbar[:, None, :]
    scatter = np.einsum("nk,kni,knj->kij", resp, diff, diff)  # N_k S_k
    return Nk, xbar, scatter


def _m_step(X, resp, prior):
    Nk, xbar, scatter = _stats(X, resp)
    alpha = prior.alpha0 + Nk
    kappa = prior.kappa0 + Nk
    m = (prior.kappa0 * prior.m0 + Nk[:, None] * xbar) / kappa[:, None]
    W0_inv = np.linalg.inv(prior.W0)
    dx = xbar - prior.m0
    shrink = prior.kappa0 * Nk / (prior.kappa0 + Nk)
    W_inv = W0_inv + scatter + shrink[:, None, None] * np.einsum("ki,kj->kij", dx, dx)
    W_inv = 0.5 * (W_inv + np.swapaxes(W_inv, -1, -2))
    W = np.linalg.inv(W_inv)
    W = 0.5 * (W + np.swapaxes(W, -1, -2))
    return alpha, kappa, m, W, prior.nu0 + Nk


def _expected_log_det(W, nu):
    D = W.shape[-1]
    _, logdet = np.linalg.slogdet(W)
    return np.sum(digamma(0.5 * (nu[:, None] - np.arange(D))), axis=1) + D * np.log(2.0) + logdet


def _log_rho(X, state):
    D = X.shape[1]
    e_log_pi = digamma(state.alpha) - digamma(state.alpha.sum())
    e_log_det = _expected_log_det(state.W, state.nu)
    diff = X[:, None, :] - state.m[None, :, :]
    maha = np.einsum("nki,kij,nkj->nk", diff, state.W, diff)
    quad = D / state.kappa + state.nu * maha
    return e_log_pi + 0.5 * e_log_det - 0.5 * D * np.log(2 * np.pi) - 0.5 * quad


def _e_step(X, state):
    log_rho = _log_rho(X, state)
    return np.exp(log_rho - logsumexp(log_rho, axis=1, keepdims=True))


def _log_wishart_norm(W, nu):
    """``ln B(W, nu)`` for each component."""
    D = W.shape[-1]
    _, logdet = np.linalg.slogdet(W)
    return -0.5 * nu * logdet - 0.5 * nu * D * np.log(2.0) - multigammaln(0.5 * nu, D)


def _log_dirichlet_norm(alpha):
    return gammaln(alpha.sum()) - gammaln(alpha).sum()


def elbo(X, state, prior):
    """Evidence lower bound of a variational state (exact, constants included)."""
    X = np.asarray(X, dtype=float)
    D = X.shape[1]
    K = state.alpha.shape[0]
    resp = state.resp
    Nk, xbar, scatter = _stats(X, resp)
    e_log_pi = digamma(state.alpha) - digamma(state.alpha.sum())
    e_log_det = _expected_log_det(state.W, state.nu)
    nu, kappa, W, m = state.nu, state.kappa, state.W, state.m

    dx = xbar - m
    trace_sw = np.einsum("kij,kji->k", scatter, W)
    maha_x = np.einsum("ki,kij,kj->k", dx, W, dx)
    log_lik = 0.5 * np.sum(
        Nk * (e_log_det - D / kappa - nu * maha_x - D * np.log(2 * np.pi)) - nu * trace_sw
    )
    log_pz = np.sum(resp @ e_log_pi)
    alpha0 = np.full(K, prior.alpha0)
    log_ppi = _log_dirichlet_norm(alpha0) + (prior.alpha0 - 1.0) * e_log_pi.sum()

    dm = m - prior.m0
    W0_inv = np.linalg.inv(prior.W0)
    log_pmu = 0.5 * np.sum(
        D * np.log(prior.kappa0 / (2 * np.pi)) + e_log_det - D * prior.kappa0 / kappa
        - prior.kappa0 * nu * np.einsum("ki,kij,kj->k", dm, W, dm)
    )
    log_plam = (
        K * _log_wishart_norm(prior.W0[None], np.array([prior.nu0]))[0]
        + 0.5 * (prior.nu0 - D - 1) * e_log_det.sum()
        - 0.5 * np.sum(nu * np.einsum("ij,kji->k", W0_inv, W))
    )

    nz = resp > 0
    log_qz = np.sum(resp[nz] * np.log(resp[nz]))
    log_qpi = np.sum((state.alpha - 1.0) * e_log_pi) + _log_dirichlet_norm(state.alpha)
    entropy_lam = -_log_wishart_norm(W, nu) - 0.5 * (nu - D - 1) * e_log_det + 0.5 * nu * D
    log_qmu_lam = np.sum(0.5 * e_log_det + 0.5 * D * np.log(kappa / (2 * np.pi)) - 0.5 * D
                         - entropy_lam)

    return float(log_lik + log_pz + log_ppi + log_pmu + log_plam
                 - log_qz - log_qpi - log_qmu_lam)


def _init_resp(X, K, seed):
    labels = KMeans(n_clusters=K, n_init=1, random_state=seed % 2**32).fit(X).labels_
    resp = np.zeros((X.shape[0], K))
    resp[np.arange(X.shape[0]), labels] = 1.0
    return resp


def _export(state, weight_floor):
    Nk = state.resp.sum(axis=0)
    keep = np.flatnonzero(Nk >= weight_floor)
    if keep.size == 0:
        keep = np.array([int(np.argmax(Nk))])
    comps = [normal_wishart(state.m[k], state.kappa[k], state.W[k], state.nu[k]) for k in keep]
    weights = state.alpha[keep] / state.alpha[keep].sum()
    return comps, weights


def fit_bayesian_gmm(X, K, prior=None, max_iters=2000, tol=1e-8, seed=0,
                     weight_floor=WEIGHT_FLOOR):
    """Coordinate-ascent VI; stops when the relative ELBO change drops below ``tol``.

    Only components carrying at least ``weight_floor`` effective points are
    exported.
    """
    X = check_array(X, dtype=float, ensure_all_finite=True)
    n = X.shape[0]
    if not 1 <= K <= n:
        raise ValueError(f"need 1 <= K <= n, got K={K}, n={n}")
    prior = prior or GmmPrior.default(X, K)
    resp = _init_resp(X, K, check_seed(seed))
    state = VIState(resp, *_m_step(X, resp, prior))
    trace = [elbo(X, state, prior)]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        resp = _e_step(X, state)
        state = VIState(resp, *_m_step(X, resp, prior))
        trace.append(elbo(X, state, prior))
        if abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            converged = True
            break
    comps, weights = _export(state, weight_floor)
    return VIResult(state, comps, weights, trace, it, converged)


class BayesianGMM(BaseEstimator):
    """Variational Gaussian mixture with Normal-Wishart factors.

    Prior hyperparameters left as ``None`` take data-driven defaults
    (see :meth:`GmmPrior.default`).
    """

    def __init__(self, n_components=1, alpha0=None, kappa0=1.0, nu0=None, mean_prior=None,
                 W0=None, max_iter=2000, tol=1e-8, weight_floor=WEIGHT_FLOOR, random_state=0):
        self.n_components = n_components
        self.alpha0 = alpha0
        self.kappa0 = kappa0
        self.nu0 = nu0
        self.mean_prior = mean_prior
        self.W0 = W0
        self.max_iter = max_iter
        self.tol = tol
        self.weight_floor = weight_floor
        self.random_state = random_state

    def _prior(self, X):
        base = GmmPrior.default(X, self.n_components)
        nu0 = base.nu0 if self.nu0 is None else self.nu0
        W0 = self.W0
        if W0 is None:
            W0 = base.W0 * base.nu0 / nu0
        return GmmPrior(
            base.m0 if self.mean_prior is None else self.mean_prior,
            self.kappa0, W0, nu0,
            base.alpha0 if self.alpha0 is None else self.alpha0,
        )

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.prior_ = self._prior(X)
        res = fit_bayesian_gmm(X, self.n_components, self.prior_, self.max_iter, self.tol,
                               self.random_state, self.weight_floor)
        self.result_ = res
        s = res.state
        self.weight_concentration_ = s.alpha
        self.mean_precision_ = s.kappa
        self.means_ = s.m
        self.W_ = s.W
        self.degrees_of_freedom_ = s.nu
        self.elbo_trace_ = res.elbo_trace
        self.n_iter_ = res.n_iter
        self.converged_ = res.converged
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "result_")
        X = check_array(X, dtype=float)
        return _e_step(X, self.result_.state)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def posterior_bundle(self):
        """Exported Normal-Wishart factors (components above the weight floor)."""
        check_is_fitted(self, "result_")
        return list(self.result_.components)
