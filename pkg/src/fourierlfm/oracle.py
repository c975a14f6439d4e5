"""Independent quadrature oracles for the closed-form expressions.

Everything here is plain NumPy and shares no code with the inference path:
tests compare the analytic kernels and features against these routines.

``convolve_green`` integrates a bounded piecewise-smooth function against
the ODE Green's function;  ``double_convolve_kernel`` estimates the latent
force covariance by nested quadrature of

    K(t, t') = int_-inf^t int_-inf^t' G(t-u) k(|u - v|) G(t'-v) du dv.

Writing w = t' - v for the outer variable, the inner integral splits at the
kernel kink u = v into a mapped finite panel integral plus an exponential
tail whose Green's factor is pulled out analytically; both reductions use
only the exponential form of G, never the closed forms under test.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import DomainError, NumericalError
from .kernels import KernelSpec, OdeSpec
from .numerics import gauss_legendre_panels, graded_edges, two_sided_graded_edges

MAX_PANELS = 2**14


@dataclass(frozen=True)
class QuadratureConfig:
    """Truncation and refinement parameters for the oracle integrals.

    ``truncation_lengths`` counts decay lengths (of the slowest relevant
    exponential rate) kept below the leftmost breakpoint before the
    integrals are cut off; 40 lengths leave a tail below exp(-40).
    """

    truncation_lengths: float = 40.0
    panel_count: int = 64
    tolerance: float = 1e-8

    def __post_init__(self):
        if self.truncation_lengths <= 0 or self.panel_count < 1 or self.tolerance <= 0:
            raise DomainError("invalid quadrature configuration")


def _matern_np(p: int, variance: float, lam: float, r):
    lr = lam * np.abs(r)
    if p == 1:
        poly = 1.0
    elif p == 2:
        poly = 1.0 + lr
    else:
        poly = 1.0 + lr + lr**2 / 3.0
    return variance * poly * np.exp(-lr)


def convolve_green(fn: Callable, ode: OdeSpec, t: float,
                   cfg: QuadratureConfig = QuadratureConfig(),
                   breakpoints=(), decay_rate=None) -> float:
    """Truncated adaptive estimate of int_-inf^t G(t - tau) fn(tau) dtau.

    ``fn`` must accept NumPy arrays.  ``breakpoints`` are abscissae where
    ``fn`` switches branches (panel edges are placed there).  The lower
    truncation sits ``cfg.truncation_lengths / decay_rate`` below the
    leftmost of {t, breakpoints}; ``decay_rate`` defaults to gamma and
    should be min(lam, gamma) when ``fn`` itself decays no faster than the
    integrand requires.
    """
    gamma = ode.gamma
    rate = gamma if decay_rate is None else float(decay_rate)
    lo = min([t] + list(breakpoints)) - cfg.truncation_lengths / rate
    edges = np.array(sorted({lo, t} | {b for b in breakpoints if lo < b < t}))

    def estimate(panels_per_unit: float) -> float:
        all_nodes, all_weights = [], []
        for a_, b_ in zip(edges[:-1], edges[1:]):
            n = max(4, int(np.ceil((b_ - a_) * panels_per_unit)))
            seg = np.linspace(a_, b_, n + 1)
            nodes, weights = gauss_legendre_panels(seg, 10)
            all_nodes.append(nodes)
            all_weights.append(weights)
        nodes = np.concatenate(all_nodes)
        weights = np.concatenate(all_weights)
        # pad to a power-of-two size so array-backend callers see a small,
        # recurring set of shapes (keeps jitted feature evaluations cached)
        size = 1 << int(np.ceil(np.log2(nodes.size)))
        nodes = np.concatenate([nodes, np.full(size - nodes.size, edges[0])])
        weights = np.concatenate([weights, np.zeros(size - weights.size)])
        vals = np.asarray(fn(nodes), dtype=float) * np.exp(-gamma * (t - nodes)) / ode.beta
        return float(np.sum(weights * vals))

    span = edges[-1] - edges[0]
    per_unit = cfg.panel_count / max(span, 1e-12)
    prev = estimate(per_unit)
    total_panels = cfg.panel_count
    last_change = np.inf
    while total_panels <= MAX_PANELS:
        per_unit *= 2.0
        total_panels *= 2
        cur = estimate(per_unit)
        last_change = abs(cur - prev)
        if last_change < cfg.tolerance:
            return cur
        prev = cur
    raise NumericalError(
        f"convolve_green did not converge below {cfg.tolerance:g} within "
        f"{MAX_PANELS} panels (last change {last_change:g})"
    )


def _double_convolve_core(p, variance, lam, alpha, beta, r_values, cfg, refine):
    """Vectorised nested quadrature of the LFM covariance on a lag grid."""
    gamma = alpha / beta
    rate = min(lam, gamma)
    trunc = cfg.truncation_lengths

    def split(edges, k):
        for _ in range(k):
            edges = np.sort(np.concatenate([edges, 0.5 * (edges[:-1] + edges[1:])]))
        return edges

    # tail constant C0 = (1/beta) int_0^inf exp(-gamma s) k(s) ds
    e_tail = split(graded_edges(0.0, trunc / (lam + gamma), 0.02 / (lam + gamma)), refine)
    s_nodes, s_w = gauss_legendre_panels(e_tail, 10)
    c0 = float(np.sum(s_w * np.exp(-gamma * s_nodes)
                      * _matern_np(p, variance, lam, s_nodes))) / beta

    # outer nodes w in [0, trunc/rate]: truncation follows the slowest decay
    # rate, the first panel resolves the fastest boundary layer
    e_w = split(graded_edges(0.0, trunc / rate, 0.02 / (lam + gamma)), refine)
    w_nodes, w_w = gauss_legendre_panels(e_w, 10)
    e_sig = split(two_sided_graded_edges(), refine)
    sig, sig_w = gauss_legendre_panels(e_sig, 10)

    out = np.empty_like(np.asarray(r_values, dtype=float))
    chunk = max(1, int(2e6 / (w_nodes.size * sig.size) + 1))
    r_values = np.asarray(r_values, dtype=float)
    for i0 in range(0, r_values.size, chunk):
        r = r_values[i0:i0 + chunk][:, None]
        d = r + w_nodes[None, :]                        # (R, W)
        dx = d[:, :, None] * sig[None, None, :]         # (R, W, S)
        inner = np.exp(-gamma * (d[:, :, None] - dx)) * _matern_np(p, variance, lam, dx)
        a_of_d = d * np.einsum("s,rws->rw", sig_w, inner) / beta
        i_of_d = np.exp(-gamma * d) * c0 + a_of_d
        out[i0:i0 + chunk] = (i_of_d * np.exp(-gamma * w_nodes[None, :]) @ w_w) / beta
    return out


def double_convolve_grid(kspec: KernelSpec, ode: OdeSpec, r_values,
                         cfg: QuadratureConfig = QuadratureConfig()):
    """LFM covariance on a grid of lags, with a convergence self-check.

    Refinement is verified on a subsample of the grid by halving every
    quadrature panel; raises NumericalError if the two estimates disagree
    by more than the configured tolerance.
    """
    r_values = np.atleast_1d(np.asarray(r_values, dtype=float))
    if np.any(r_values < 0):
        raise DomainError("lags must be nonnegative")
    args = (kspec.order.p, kspec.variance, kspec.lam, ode.alpha, ode.beta)
    base = _double_convolve_core(*args, r_values, cfg, refine=0)
    probe = r_values[:: max(1, r_values.size // 5)]
    check = _double_convolve_core(*args, probe, cfg, refine=1)
    err = float(np.max(np.abs(check - base[:: max(1, r_values.size // 5)])))
    if err > max(cfg.tolerance, 1e-10 * float(np.max(np.abs(base)))):
        fine = _double_convolve_core(*args, r_values, cfg, refine=1)
        finer = _double_convolve_core(*args, probe, cfg, refine=2)
        err2 = float(np.max(np.abs(finer - fine[:: max(1, r_values.size // 5)])))
        if err2 > max(cfg.tolerance, 1e-10 * float(np.max(np.abs(fine)))):
            raise NumericalError(
                f"double convolution did not converge (changes {err:g} -> {err2:g})"
            )
        return fine
    return base


def double_convolve_kernel(kspec: KernelSpec, ode: OdeSpec, t: float, t2: float,
                           cfg: QuadratureConfig = QuadratureConfig()) -> float:
    """Nested-quadrature estimate of the LFM covariance at (t, t2)."""
    return float(double_convolve_grid(kspec, ode, [abs(t - t2)], cfg)[0])


class PsdReport(NamedTuple):
    ok: bool
    min_eigenvalue: float
    threshold: float


def psd_check(matrix, rel_tol: float = 1e-8) -> PsdReport:
    """Check min eigenvalue >= -rel_tol * trace / size for a symmetric matrix."""
    mat = np.asarray(matrix, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DomainError("psd_check requires a square matrix")
    scale = float(np.max(np.abs(mat))) or 1.0
    if float(np.max(np.abs(mat - mat.T))) > 1e-10 * scale:
        raise DomainError("psd_check requires a symmetric matrix")
    eigs = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    min_eig = float(eigs[0])
    threshold = -rel_tol * float(np.trace(mat)) / mat.shape[0]
    return PsdReport(min_eig >= threshold, min_eig, threshold)
