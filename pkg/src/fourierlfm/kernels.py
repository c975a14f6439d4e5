"""Matern kernels and the first-order ODE latent force kernels.

A latent force model drives a linear ODE

    beta * df/dt + alpha * f = u(t),      u ~ GP(0, k_matern)

whose Green's function G(t) = exp(-gamma*t)/beta (gamma = alpha/beta) acts
as a first-order low-pass filter.  The output covariance is the double
convolution G o k o G, available in closed form for half-integer Matern
orders; ``lfm_kernel_eval`` implements those closed forms in a way that is
numerically stable for every gamma, including the confluent point
gamma = lam where the generic expressions have removable singularities.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np

from . import config  # noqa: F401
from .errors import DomainError
from .numerics import psi


class MaternOrder(enum.Enum):
    HALF = "1/2"
    THREE_HALVES = "3/2"
    FIVE_HALVES = "5/2"

    @property
    def p(self) -> int:
        """Smoothness index p = nu + 1/2 (number of exponential-polynomial
        terms; also the order of the associated differential operator)."""
        return {MaternOrder.HALF: 1, MaternOrder.THREE_HALVES: 2,
                MaternOrder.FIVE_HALVES: 3}[self]

    @property
    def nu(self) -> float:
        return self.p - 0.5

    @property
    def lam_factor(self) -> float:
        """lam = lam_factor / lengthscale: 1, sqrt(3), sqrt(5)."""
        return math.sqrt(2 * self.p - 1)


def _as_order(order) -> MaternOrder:
    if isinstance(order, MaternOrder):
        return order
    try:
        return MaternOrder(str(order))
    except ValueError:
        raise DomainError(f"unknown Matern order {order!r}; use '1/2', '3/2' or '5/2'")


@dataclass(frozen=True)
class KernelSpec:
    """Stationary Matern kernel: order, variance sigma^2 and lengthscale."""

    order: MaternOrder
    variance: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "order", _as_order(self.order))
        if not (self.variance > 0):
            raise DomainError(f"variance must be positive, got {self.variance}")
        if not (self.lengthscale > 0):
            raise DomainError(f"lengthscale must be positive, got {self.lengthscale}")

    @property
    def lam(self) -> float:
        return self.order.lam_factor / self.lengthscale


@dataclass(frozen=True)
class OdeSpec:
    """First-order ODE coefficients: beta * df/dt + alpha * f = u."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0):
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        if not (self.beta > 0):
            raise DomainError(f"beta must be positive, got {self.beta}")

    @property
    def gamma(self) -> float:
        return self.alpha / self.beta


def matern_fn(p: int, variance, lam, r):
    """Matern kernel value for smoothness index p at distance r >= 0."""
    lr = lam * r
    if p == 1:
        poly = 1.0
    elif p == 2:
        poly = 1.0 + lr
    else:
        poly = 1.0 + lr + lr**2 / 3.0
    return variance * poly * jnp.exp(-lr)


def matern_eval(spec: KernelSpec, r):
    """Stationary Matern kernel value at distance ``r`` (scalar or array)."""
    r = jnp.asarray(r, dtype=float)
    if jnp.any(r < 0):
        raise DomainError("matern_eval requires r >= 0")
    return matern_fn(spec.order.p, spec.variance, spec.lam, r)


def matern_gram(spec: KernelSpec, x, x2=None):
    """Gram matrix k(|x_i - x2_j|); symmetric PSD when x2 is x."""
    x = jnp.atleast_1d(jnp.asarray(x, dtype=float))
    x2 = x if x2 is None else jnp.atleast_1d(jnp.asarray(x2, dtype=float))
    if not (jnp.all(jnp.isfinite(x)) and jnp.all(jnp.isfinite(x2))):
        raise DomainError("matern_gram requires finite inputs")
    r = jnp.abs(x[:, None] - x2[None, :])
    return matern_fn(spec.order.p, spec.variance, spec.lam, r)


def lfm_kernel_fn(p: int, variance, lam, alpha, beta, r):
    """Latent force kernel G o k o G at lag r >= 0, stable for all gamma.

    The generic closed forms carry removable poles at gamma = lam; they are
    evaluated here through psi_k(lam, d, r) = exp(-lam r) phi_k(-d r) with
    d = gamma - lam, which reproduces the confluent limit exactly.
    """
    gam = alpha / beta
    d = gam - lam
    gl = gam + lam
    e_lam = jnp.exp(-lam * r)
    e_gam = jnp.exp(-gam * r)
    if p == 1:
        reg = -1.0 / (2.0 * lam * gl)
        expc = (0.5 * gam + lam) / (gam * lam * gl)
        sing = r / (2.0 * lam) * psi(1, lam, d, r)
    elif p == 2:
        reg = (-lam + gl * (-lam * r - 2.0)) / (2.0 * lam * gl**2)
        expc = -gam / (lam * gl**2) - 1.5 / gl**2 + 2.0 / (gam * lam)
        sing = (r / lam) * psi(1, lam, d, r) + 0.5 * r**2 * psi(2, lam, d, r)
    else:
        reg = -(2.0 * lam**2 + lam * gl * (2.0 * lam * r + 5.0)
                + gl**2 * (lam**2 * r**2 + 5.0 * lam * r + 8.0)) / (6.0 * lam * gl**3)
        expc = (-5.0 * gam - 7.0 * lam) / (6.0 * gl**3) \
            - 4.0 / (3.0 * lam * gl) + 8.0 / (3.0 * gam * lam)
        sing = (4.0 * r / (3.0 * lam)) * psi(1, lam, d, r) \
            + (5.0 * r**2 / 6.0) * psi(2, lam, d, r) \
            + (lam * r**3 / 3.0) * psi(3, lam, d, r)
    return (variance / beta**2) * (reg * e_lam + expc * e_gam + sing)


def lfm_kernel_eval(kspec: KernelSpec, ode: OdeSpec, r):
    """Closed-form LFM covariance at lag ``r`` (scalar or array)."""
    r = jnp.asarray(r, dtype=float)
    if jnp.any(r < 0):
        raise DomainError("lfm_kernel_eval requires r >= 0")
    return lfm_kernel_fn(kspec.order.p, kspec.variance, kspec.lam,
                         ode.alpha, ode.beta, r)


def lfm_gram(kspec: KernelSpec, ode: OdeSpec, x, x2=None):
    """Gram matrix of the LFM kernel over 1-D input locations."""
    x = jnp.atleast_1d(jnp.asarray(x, dtype=float))
    x2 = x if x2 is None else jnp.atleast_1d(jnp.asarray(x2, dtype=float))
    if not (jnp.all(jnp.isfinite(x)) and jnp.all(jnp.isfinite(x2))):
        raise DomainError("lfm_gram requires finite inputs")
    r = jnp.abs(x[:, None] - x2[None, :])
    return lfm_kernel_fn(kspec.order.p, kspec.variance, kspec.lam,
                         ode.alpha, ode.beta, r)


def spectral_sample(kspec: KernelSpec, count: int, rng: np.random.Generator):
    """Draw ``count`` spectral frequencies of the Matern kernel.

    Frequencies are omega = omega' / lengthscale with omega' i.i.d. from a
    zero-mean Student-t with 2*nu degrees of freedom (standard Cauchy for
    order 1/2).  Deterministic for a fixed generator state.
    """
    if count < 1:
        raise DomainError("count must be >= 1")
    dof = 2.0 * kspec.order.nu
    return rng.standard_t(dof, size=count) / kspec.lengthscale
