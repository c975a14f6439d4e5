"""Single-layer inference core: exact GP regression, the inter-domain
sparse variational posterior, Gaussian KL, and Gaussian likelihood
expectations.

The sparse posterior follows the standard inter-domain construction: with
inducing variables v (projections of the latent force), q(v) = N(m, S),

    mean(x) = k_fv(x) Kvv^-1 m
    var(x)  = k(x, x) + diag(k_fv Kvv^-1 (S - Kvv) Kvv^-1 k_vf)

where k_fv and Kvv come from the features module.  All solves go through
Cholesky factors with escalating jitter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DomainError, NumericalError
from .features import KVV_JITTER, VfrfContext, kfv_matrix, kvv_gram
from .kernels import lfm_kernel_eval
from .numerics import cholesky_with_jitter

VAR_CLAMP = -1e-10  # predictive variances in [VAR_CLAMP, 0) clamp to zero


@dataclass(frozen=True)
class NoiseModel:
    """Homoscedastic Gaussian observation noise."""

    noise_variance: float

    def __post_init__(self):
        if not (self.noise_variance > 0):
            raise DomainError("noise_variance must be positive")


@dataclass(frozen=True)
class GaussianState:
    """Gaussian q(v) stored as mean vector and lower-triangular factor."""

    mean: np.ndarray
    cov_factor: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        fac = np.asarray(self.cov_factor, dtype=float)
        if fac.shape != (mean.size, mean.size):
            raise DomainError("cov_factor must be square and match mean size")
        if np.max(np.abs(np.triu(fac, 1))) > 0:
            raise DomainError("cov_factor must be lower triangular")
        if np.any(np.diag(fac) < 0):
            raise DomainError("cov_factor diagonal must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov_factor", fac)

    @property
    def cov(self) -> np.ndarray:
        return self.cov_factor @ self.cov_factor.T

    @classmethod
    def from_moments(cls, mean, cov) -> "GaussianState":
        return cls(np.asarray(mean, dtype=float), cholesky_with_jitter(cov, 1e-12, 1e-6))


def prior_state(ctx: VfrfContext) -> GaussianState:
    """q(v) equal to the prior N(0, Kvv)."""
    kvv = np.asarray(kvv_gram(ctx))
    return GaussianState(np.zeros(kvv.shape[0]), cholesky_with_jitter(kvv))


def _clamp_variance(var):
    if np.any(var < VAR_CLAMP):
        raise NumericalError(
            f"predictive variance fell below {VAR_CLAMP:g}: min {var.min():g}")
    return np.maximum(var, 0.0)


def exact_posterior(kernel_fn, x, y, noise: NoiseModel, xstar):
    """Exact GP posterior mean and variance at ``xstar`` (zero prior mean).

    ``kernel_fn(x1, x2)`` must return the Gram matrix of any covariance
    (Matern or latent-force); inputs are 1-D location arrays.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xstar = np.asarray(xstar, dtype=float)
    if x.size > 5000:
        raise DomainError("exact_posterior is desk-scale only (N <= 5000)")
    kxx = np.asarray(kernel_fn(x, x), dtype=float)
    ell = cholesky_with_jitter(kxx + noise.noise_variance * np.eye(x.size))
    kxs = np.asarray(kernel_fn(x, xstar), dtype=float)
    alpha = solve_triangular(ell, y, lower=True)
    aq = solve_triangular(ell, kxs, lower=True)
    mean = aq.T @ alpha
    kss = np.asarray(kernel_fn(xstar, xstar), dtype=float)
    var = np.diag(kss) - np.sum(aq**2, axis=0)
    return mean, _clamp_variance(var)


def log_marginal_likelihood(kernel_fn, x, y, noise: NoiseModel) -> float:
    """Exact Gaussian log marginal likelihood log N(y | 0, K + noise I)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    kxx = np.asarray(kernel_fn(x, x), dtype=float)
    ell = cholesky_with_jitter(kxx + noise.noise_variance * np.eye(x.size))
    alpha = solve_triangular(ell, y, lower=True)
    return float(-0.5 * alpha @ alpha - np.sum(np.log(np.diag(ell)))
                 - 0.5 * x.size * np.log(2.0 * np.pi))


def svgp_posterior(ctx: VfrfContext, q: GaussianState, xstar):
    """Sparse posterior marginals at ``xstar`` from the variational state."""
    kvv = np.asarray(kvv_gram(ctx))
    if q.mean.size != kvv.shape[0]:
        raise DomainError(
            f"state dimension {q.mean.size} != inducing count {kvv.shape[0]}")
    kfv = np.asarray(kfv_matrix(ctx, xstar))
    prior_var = float(lfm_kernel_eval(ctx.kernel, ctx.ode, 0.0)) * np.ones(kfv.shape[0])
    return _svgp_marginals_np(kfv, kvv, q, prior_var)


def _svgp_marginals_np(kfv, kvv, q: GaussianState, prior_var):
    scale = float(np.mean(np.diag(kvv)))
    ell = cholesky_with_jitter(kvv + KVV_JITTER * scale * np.eye(kvv.shape[0]))
    a = solve_triangular(ell, kfv.T, lower=True)            # L^-1 Kvf
    mean = a.T @ solve_triangular(ell, q.mean, lower=True)
    proj = solve_triangular(ell.T, a, lower=False)          # Kvv^-1 Kvf
    su = q.cov_factor.T @ proj
    var = prior_var - np.sum(a**2, axis=0) + np.sum(su**2, axis=0)
    return mean, _clamp_variance(var)


def optimal_variational_state(kfv, kvv, y, noise: NoiseModel) -> GaussianState:
    """Analytically optimal q(v) for a Gaussian likelihood.

    With Sigma = Kvv + Kvf Kfv / noise:  m* = Kvv Sigma^-1 Kvf y / noise,
    S* = Kvv Sigma^-1 Kvv.
    """
    kfv = np.asarray(kfv, dtype=float)
    kvv = np.asarray(kvv, dtype=float)
    y = np.asarray(y, dtype=float)
    sigma = kvv + kfv.T @ kfv / noise.noise_variance
    ell = cholesky_with_jitter(sigma, 1e-12, 1e-6)
    half = solve_triangular(ell, kvv, lower=True)            # L^-1 Kvv
    mean = half.T @ solve_triangular(ell, kfv.T @ y, lower=True) / noise.noise_variance
    cov = half.T @ half
    return GaussianState.from_moments(mean, 0.5 * (cov + cov.T))


def gaussian_kl(q: GaussianState, p: GaussianState) -> float:
    """KL(q || p) between multivariate Gaussians given as (mean, factor)."""
    if q.mean.size != p.mean.size:
        raise DomainError("dimension mismatch in gaussian_kl")
    lp = p.cov_factor
    if np.any(np.diag(lp) <= 0):
        raise NumericalError("p covariance factor is singular")
    lq = q.cov_factor
    a = solve_triangular(lp, lq, lower=True)
    mdiff = solve_triangular(lp, q.mean - p.mean, lower=True)
    logdet_q = 2.0 * np.sum(np.log(np.abs(np.diag(lq)))) if np.all(np.diag(lq) != 0) else -np.inf
    logdet_p = 2.0 * np.sum(np.log(np.diag(lp)))
    kl = 0.5 * (np.sum(a**2) + mdiff @ mdiff - q.mean.size + logdet_p - logdet_q)
    return float(max(kl, 0.0))


def expected_gaussian_loglik(pred_mean, pred_var, y, noise: NoiseModel) -> float:
    """Sum_i E_{f_i ~ N(mu_i, v_i)} log N(y_i | f_i, noise) in closed form."""
    mu = np.asarray(pred_mean, dtype=float)
    v = np.asarray(pred_var, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(v < 0):
        raise DomainError("pred_var must be nonnegative")
    s2 = noise.noise_variance
    return float(np.sum(-0.5 * np.log(2.0 * np.pi * s2)
                        - ((y - mu) ** 2 + v) / (2.0 * s2)))
