"""Low-level numerical helpers: stable exponential-difference functions,
Gauss-Legendre panel rules, and Cholesky factorisation with jitter.

The ``psi_k`` family evaluates

    psi_k(lam, d, r) = exp(-lam*r) * phi_k(-d*r),
    phi_k(x) = (exp(x) - sum_{i<k} x^i / i!) / x^k,

which is how every (gamma - lam)-singular term of the closed-form latent
force expressions is written here (d = gamma - lam).  The direct formula
uses only exp(-gamma*r) and exp(-lam*r), so it never overflows for r >= 0;
a truncated series takes over for |d*r| < 0.5 where the direct formula
would cancel.  Both branches agree to ~1e-15 at the switch, so the
functions are smooth in every argument for all gamma, including the
confluent point gamma = lam.
"""

from __future__ import annotations

import math

import jax.numpy as jnp
import numpy as np

from . import config  # noqa: F401  (enables float64)
from .errors import NumericalError

_SERIES_RADIUS = 0.5
_SERIES_TERMS = 12  # truncation below 1e-12 relative at |x| = 0.5


def _phi_series(x, k):
    # sum_{j>=0} x^j / (j+k)!  evaluated by Horner's rule
    acc = jnp.zeros_like(x) + 1.0 / float(math.factorial(_SERIES_TERMS + k))
    for j in range(_SERIES_TERMS - 1, -1, -1):
        acc = acc * x + 1.0 / float(math.factorial(j + k))
    return acc


def psi(k: int, lam, d, r):
    """exp(-lam*r) * phi_k(-(d)*r) for k in {1, 2, 3}, stable for all d."""
    lam, d, r = jnp.asarray(lam), jnp.asarray(d), jnp.asarray(r)
    x = -d * r
    small = jnp.abs(x) < _SERIES_RADIUS
    x_safe = jnp.where(small, 1.0, x)
    e_lam = jnp.exp(-lam * r)
    e_gam = jnp.exp(-(lam + d) * r)
    if k == 1:
        direct = (e_gam - e_lam) / x_safe
    elif k == 2:
        direct = (e_gam - e_lam * (1.0 + x)) / x_safe**2
    elif k == 3:
        direct = (e_gam - e_lam * (1.0 + x + 0.5 * x**2)) / x_safe**3
    else:
        raise ValueError(f"psi order {k} not implemented")
    series = e_lam * _phi_series(jnp.where(small, x, 0.0), k)
    return jnp.where(small, series, direct)


def gauss_legendre_panels(edges, order: int):
    """Composite Gauss-Legendre nodes/weights over consecutive ``edges``.

    Returns flat arrays (nodes, weights); ``edges`` must be increasing.
    """
    edges = np.asarray(edges, dtype=float)
    x, w = np.polynomial.legendre.leggauss(order)
    lo = edges[:-1][:, None]
    hi = edges[1:][:, None]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (hi + lo) + half * x[None, :]).ravel()
    weights = (half * w[None, :]).ravel()
    return nodes, weights


def graded_edges(start: float, stop: float, first_width: float, ratio: float = 1.7):
    """Panel edges on [start, stop] with widths growing geometrically away
    from ``start``; resolves an exponential boundary layer at ``start``."""
    if stop <= start:
        return np.array([start, stop])
    edges = [start]
    width = first_width
    while edges[-1] + width < stop:
        edges.append(edges[-1] + width)
        width *= ratio
    edges.append(stop)
    return np.asarray(edges)


def two_sided_graded_edges(inner: float = 1e-7):
    """Edges on [0, 1] geometrically refined toward both endpoints."""
    left = [inner]
    while left[-1] < 0.25:
        left.append(2.0 * left[-1])
    left = np.asarray(left)
    edges = np.concatenate([[0.0], left, [0.5], 1.0 - left[::-1], [1.0]])
    return np.unique(edges)


def cholesky_with_jitter(mat, start: float = 1e-8, stop: float = 1e-4):
    """Lower Cholesky factor of ``mat`` with escalating diagonal jitter.

    Jitter is relative to the mean diagonal, escalated by factors of 10 from
    ``start`` up to ``stop``; raises NumericalError if all attempts fail.
    """
    mat = np.asarray(mat, dtype=float)
    scale = float(np.mean(np.diag(mat)))
    if not np.isfinite(scale):
        raise NumericalError("matrix has non-finite diagonal")
    jitters = [0.0] + [start * 10.0**k for k in range(int(np.log10(stop / start)) + 1)]
    for jit in jitters:
        try:
            return np.linalg.cholesky(mat + jit * scale * np.eye(mat.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"Cholesky failed after jitter escalation up to {stop:g} * mean diagonal"
    )
