"""Fourier features on a Matern RKHS and their ODE-filtered responses.

The inducing variables are projections of the latent force u onto the
truncated Fourier basis

    phi = [1, cos(z_1 (x-a)), ..., cos(z_M (x-a)), sin(z_1 (x-a)), ...]

with harmonic frequencies z_m = 2*pi*m/(b-a) on an interval [a, b].  Three
covariance objects drive the sparse model:

* ``vff_eval``  -- Cov[u(t), v_m]: the sinusoid itself inside [a, b] and an
  exponential-polynomial extension outside (order-dependent);
* ``vfrf_eval`` -- Cov[f(t), v_m] for the ODE output f = G o u: a sinusoid
  with amplitude 1/(beta*sqrt(z^2+gamma^2)), phase -arctan(z/gamma) and
  exponential boundary corrections, again piecewise over t<a, [a,b], t>b;
* ``kvv_gram``  -- Cov[v_i, v_j]: the RKHS inner products of basis pairs,
  computed as (1/C_p) int_a^b (L phi_i)(L phi_j) dx + jet_a^T Q_p jet_a
  with L = (d/dx + lam)^p and a small boundary form Q_p.

All closed forms are exact for harmonic z and numerically stable for every
gamma including the confluent point gamma = lam (see ``numerics.psi``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import jax.numpy as jnp
import numpy as np

from . import config  # noqa: F401
from .errors import DomainError, NumericalError, UnsupportedOrderError
from .kernels import KernelSpec, MaternOrder, OdeSpec
from .numerics import gauss_legendre_panels, psi

KVV_JITTER = 1e-6  # relative to mean diagonal, applied before factorisation


def harmonic_frequencies(count_m: int, interval_a: float, interval_b: float):
    """Harmonic inducing frequencies z_m = 2*pi*m/(b-a), m = 1..M."""
    if interval_a >= interval_b:
        raise DomainError("interval_a must be below interval_b")
    if count_m < 1:
        raise DomainError("count_m must be >= 1")
    m = np.arange(1, count_m + 1, dtype=float)
    return 2.0 * np.pi * m / (interval_b - interval_a)


@dataclass(frozen=True)
class FeatureSet:
    """Fourier basis layout on [a, b]: index 0 is the constant, 1..M the
    cosines, M+1..2M the sines; total size 2M+1."""

    interval_a: float
    interval_b: float
    count_m: int
    frequencies: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.interval_a >= self.interval_b:
            raise DomainError("interval_a must be below interval_b")
        if self.count_m < 1:
            raise DomainError("count_m must be >= 1")
        harm = harmonic_frequencies(self.count_m, self.interval_a, self.interval_b)
        if self.frequencies is None:
            object.__setattr__(self, "frequencies", harm)
        else:
            freq = np.asarray(self.frequencies, dtype=float)
            if freq.shape != (self.count_m,) or not np.allclose(freq, harm, rtol=1e-12):
                raise DomainError("frequencies must be the harmonics 2*pi*m/(b-a)")
            object.__setattr__(self, "frequencies", freq)

    @property
    def size(self) -> int:
        return 2 * self.count_m + 1


@dataclass(frozen=True)
class VfrfContext:
    """Kernel + ODE + feature set bundle; immutable after construction."""

    kernel: KernelSpec
    ode: OdeSpec
    features: FeatureSet

    def theta(self, z) -> float:
        """Phase shift -arctan(z/gamma) in (-pi/2, 0]."""
        return -np.arctan(np.asarray(z) / self.ode.gamma)


def _check_index(fs: FeatureSet, basis_index: int):
    if not (0 <= basis_index <= 2 * fs.count_m):
        raise DomainError(
            f"basis index {basis_index} out of range 0..{2 * fs.count_m}")


def _split_z(fs: FeatureSet):
    """Frequencies for the cosine block (with the z=0 constant) and sines."""
    z = jnp.asarray(fs.frequencies)
    return jnp.concatenate([jnp.zeros(1), z]), z


# ---------------------------------------------------------------------------
# VFF cross-covariance h(z, t) = Cov[u(t), v_m]
# ---------------------------------------------------------------------------

def _vff_blocks(p: int, lam, z_cos, z_sin, a, b, t):
    """Feature matrices (t-rows) for the cosine and sine families."""
    t = t[:, None]
    below = t < a
    above = t > b
    ra = jnp.where(below, a - t, 0.0)
    rb = jnp.where(above, t - b, 0.0)

    def tail_cos(r, z):
        if p == 1:
            poly = 1.0
        elif p == 2:
            poly = 1.0 + lam * r
        else:
            poly = 1.0 + lam * r - 0.5 * (z**2 - lam**2) * r**2
        return poly * jnp.exp(-lam * r)

    def tail_sin(signed, r, z):
        if p == 1:
            return jnp.zeros_like(signed * z)
        if p == 2:
            return z * signed * jnp.exp(-lam * r)
        return z * signed * (1.0 + lam * r) * jnp.exp(-lam * r)

    inside_cos = jnp.cos(z_cos[None, :] * (t - a))
    inside_sin = jnp.sin(z_sin[None, :] * (t - a))
    cos = jnp.where(below, tail_cos(ra, z_cos[None, :]),
                    jnp.where(above, tail_cos(rb, z_cos[None, :]), inside_cos))
    sin = jnp.where(below, tail_sin(-ra, ra, z_sin[None, :]),
                    jnp.where(above, tail_sin(rb, rb, z_sin[None, :]), inside_sin))
    return cos, sin


def vff_matrix(kspec: KernelSpec, fs: FeatureSet, t):
    """N x (2M+1) matrix of VFF cross-covariances at input locations t."""
    t = jnp.atleast_1d(jnp.asarray(t, dtype=float))
    z_cos, z_sin = _split_z(fs)
    cos, sin = _vff_blocks(kspec.order.p, kspec.lam, z_cos, z_sin,
                           fs.interval_a, fs.interval_b, t)
    return jnp.concatenate([cos, sin], axis=1)


def vff_eval(kspec: KernelSpec, fs: FeatureSet, basis_index: int, t):
    """Piecewise VFF feature h(z, t) for one basis function."""
    _check_index(fs, basis_index)
    t = jnp.asarray(t, dtype=float)
    return vff_matrix(kspec, fs, jnp.atleast_1d(t))[:, basis_index].reshape(t.shape)


# ---------------------------------------------------------------------------
# VFRF cross-covariance Cov[f(t), v_m] = int G(t - tau) h(z, tau) dtau
# ---------------------------------------------------------------------------

def _vfrf_blocks(p: int, lam, gam, beta, z_cos, z_sin, a, b, t):
    """Closed-form response features; rows index t, columns index z.

    The t > b rows are evaluated through psi_k (stable for all gamma); the
    remaining regions only involve (gamma + lam) denominators.
    """
    t = t[:, None]
    below = t < a
    above = t > b
    ra_b = jnp.where(below, a - t, 0.0)        # distance below a
    ra = jnp.where(below, 0.0, t - a)          # distance above a
    rb = jnp.where(above, t - b, 0.0)          # distance above b
    gl = gam + lam
    d = gam - lam

    def theta_z(z):
        return -jnp.arctan(z / gam)

    def cos_family(z):
        zg = z**2 + gam**2
        # decay coefficient of exp(-gamma*(t-a)) shared by interior and t>b
        if p == 1:
            c_in = gam / zg - 1.0 / gl
            tail = (1.0 / gl) * jnp.exp(-lam * ra_b)
        elif p == 2:
            c_in = gam / zg - (gam + 2.0 * lam) / gl**2
            tail = ((lam * ra_b + 1.0) / gl + lam / gl**2) * jnp.exp(-lam * ra_b)
        else:
            c_in = gam / zg + (z**2 - gam**2 - 3.0 * gam * lam - 3.0 * lam**2) / gl**3
            tail = -(0.5 * (z**2 - lam**2) * ra_b**2 / gl
                     + (z**2 - gam * lam - 2.0 * lam**2) * ra_b / gl**2
                     + (z**2 - gam**2 - 3.0 * gam * lam - 3.0 * lam**2) / gl**3
                     ) * jnp.exp(-lam * ra_b)
        interior = (jnp.cos(z * ra + theta_z(z)) / jnp.sqrt(zg)
                    - c_in * jnp.exp(-gam * ra))
        sing = rb * psi(1, lam, d, rb)
        if p >= 2:
            sing = sing + lam * rb**2 * psi(2, lam, d, rb)
        if p == 3:
            sing = sing + (lam**2 - z**2) * rb**3 * psi(3, lam, d, rb)
        upper = (-c_in * jnp.exp(-gam * ra)
                 + (gam / zg) * jnp.exp(-gam * rb) + sing)
        return jnp.where(below, tail, jnp.where(above, upper, interior)) / beta

    def sin_family(z):
        zg = z**2 + gam**2
        if p == 1:
            s_in = z / zg
            tail = jnp.zeros_like(z * ra_b)
        elif p == 2:
            s_in = z * (1.0 / zg - 1.0 / gl**2)
            tail = -z * (ra_b / gl + 1.0 / gl**2) * jnp.exp(-lam * ra_b)
        else:
            s_in = z * (1.0 / zg - (gam + 3.0 * lam) / gl**3)
            tail = -z * (lam * ra_b**2 / gl + (gam + 3.0 * lam) * ra_b / gl**2
                         + (gam + 3.0 * lam) / gl**3) * jnp.exp(-lam * ra_b)
        interior = (jnp.sin(z * ra + theta_z(z)) / jnp.sqrt(zg)
                    + s_in * jnp.exp(-gam * ra))
        sing = jnp.zeros_like(z * rb)
        if p >= 2:
            sing = sing + z * rb**2 * psi(2, lam, d, rb)
        if p == 3:
            sing = sing + 2.0 * lam * z * rb**3 * psi(3, lam, d, rb)
        upper = (s_in * jnp.exp(-gam * ra)
                 - (z / zg) * jnp.exp(-gam * rb) + sing)
        return jnp.where(below, tail, jnp.where(above, upper, interior)) / beta

    return cos_family(z_cos[None, :]), sin_family(z_sin[None, :])


def kfv_matrix(ctx: VfrfContext, t):
    """N x (2M+1) matrix of VFRF cross-covariances at input locations t."""
    t = jnp.atleast_1d(jnp.asarray(t, dtype=float))
    if not jnp.all(jnp.isfinite(t)):
        raise DomainError("kfv_matrix requires finite inputs")
    z_cos, z_sin = _split_z(ctx.features)
    cos, sin = _vfrf_blocks(ctx.kernel.order.p, ctx.kernel.lam, ctx.ode.gamma,
                            ctx.ode.beta, z_cos, z_sin,
                            ctx.features.interval_a, ctx.features.interval_b, t)
    return jnp.concatenate([cos, sin], axis=1)


def vfrf_eval(ctx: VfrfContext, basis_index: int, t):
    """Closed-form response feature for one basis function at time t."""
    _check_index(ctx.features, basis_index)
    t = jnp.asarray(t, dtype=float)
    return kfv_matrix(ctx, jnp.atleast_1d(t))[:, basis_index].reshape(t.shape)


# ---------------------------------------------------------------------------
# RKHS inner products and the inducing Gram matrix K_vv
# ---------------------------------------------------------------------------

_INTEGRAL_NORM = {1: lambda lam: 2.0 * lam,
                  2: lambda lam: 4.0 * lam**3,
                  3: lambda lam: 16.0 * lam**5 / 3.0}


def _boundary_form(p: int, lam):
    """Boundary quadratic form Q_p on the jet (g(a), g'(a)[, g''(a)]).

    Derived by matching the inner product against the reproducing kernel;
    exact for the Matern family (variance divided out)."""
    if p == 1:
        return jnp.array([[1.0]])
    if p == 2:
        return jnp.array([[1.0, 0.0], [0.0, 0.0]]) + \
            jnp.array([[0.0, 0.0], [0.0, 1.0]]) / lam**2
    q = jnp.zeros((3, 3))
    q = q.at[0, 0].set(9.0 / 8.0)
    q = q.at[1, 1].set(3.0 / lam**2)
    q = q.at[2, 2].set(9.0 / (8.0 * lam**4))
    q = q.at[0, 2].set(3.0 / (8.0 * lam**2))
    q = q.at[2, 0].set(3.0 / (8.0 * lam**2))
    return q


def _basis_l_values(p: int, lam, z_cos, z_sin, x, a):
    """Rows of (d/dx + lam)^p phi_i evaluated at quadrature nodes x.

    Uses the phasor identity L e^{iz(x-a)} = (lam + iz)^p e^{iz(x-a)}."""
    phase = jnp.exp(1j * z_cos[:, None] * (x[None, :] - a))
    amp_c = (lam + 1j * z_cos) ** p
    cos_rows = jnp.real(amp_c[:, None] * phase)
    phase_s = jnp.exp(1j * z_sin[:, None] * (x[None, :] - a))
    amp_s = (lam + 1j * z_sin) ** p
    sin_rows = jnp.imag(amp_s[:, None] * phase_s)
    return jnp.concatenate([cos_rows, sin_rows], axis=0)


def _basis_jets(p: int, z_cos, z_sin):
    """Jet (value, derivative[, second derivative]) of each basis at x=a."""
    jc = jnp.stack([jnp.ones_like(z_cos), jnp.zeros_like(z_cos), -z_cos**2])[:p]
    js = jnp.stack([jnp.zeros_like(z_sin), z_sin, jnp.zeros_like(z_sin)])[:p]
    return jnp.concatenate([jc, js], axis=1).T  # (2M+1, p)


def _kvv_nodes(fs: FeatureSet, refine: int = 0):
    z_max = float(fs.frequencies[-1])
    length = fs.interval_b - fs.interval_a
    n_panels = max(8, int(np.ceil(length * z_max / 3.0))) * (1 + refine)
    edges = np.linspace(fs.interval_a, fs.interval_b, n_panels + 1)
    return gauss_legendre_panels(edges, 16)


def kvv_gram_fn(p: int, lam, variance, fs: FeatureSet, nodes, weights):
    """Differentiable K_vv builder at fixed quadrature nodes."""
    z_cos, z_sin = _split_z(fs)
    rows = _basis_l_values(p, lam, z_cos, z_sin, jnp.asarray(nodes), fs.interval_a)
    wrows = rows * jnp.asarray(weights)[None, :]
    integral = wrows @ rows.T / (_INTEGRAL_NORM[p](lam) * variance)
    jets = _basis_jets(p, z_cos, z_sin)
    boundary = jets @ _boundary_form(p, lam) @ jets.T / variance
    return integral + boundary


def kvv_gram_closed_fn(p: int, lam, variance, fs: FeatureSet):
    """Exact K_vv for harmonic frequencies.

    Full-period orthogonality makes the operator-product integral diagonal:
    (L/2)(lam^2 + z^2)^p per sinusoid and L*lam^(2p) for the constant, with
    the boundary jet form as the only dense correction.  Equal to the
    quadrature route to rounding (asserted in tests); used on the hot path.
    """
    z_cos, z_sin = _split_z(fs)
    length = fs.interval_b - fs.interval_a
    amp = jnp.concatenate([(lam**2 + z_cos**2) ** p, (lam**2 + z_sin**2) ** p])
    half = jnp.concatenate([jnp.full(1, 2.0), jnp.ones(2 * fs.count_m)]) / 2.0
    diag = length * half * amp / (_INTEGRAL_NORM[p](lam) * variance)
    jets = _basis_jets(p, z_cos, z_sin)
    boundary = jets @ _boundary_form(p, lam) @ jets.T / variance
    return jnp.diag(diag) + boundary


def kvv_gram(ctx: VfrfContext):
    """Inducing Gram matrix Cov[v_i, v_j]; independent of the ODE.

    Runs the quadrature at two resolutions and raises NumericalError with
    the observed change if they disagree."""
    p = ctx.kernel.order.p
    base = kvv_gram_fn(p, ctx.kernel.lam, ctx.kernel.variance, ctx.features,
                       *_kvv_nodes(ctx.features, refine=0))
    fine = kvv_gram_fn(p, ctx.kernel.lam, ctx.kernel.variance, ctx.features,
                       *_kvv_nodes(ctx.features, refine=1))
    scale = float(jnp.mean(jnp.diag(fine)))
    err = float(jnp.max(jnp.abs(fine - base)))
    if not np.isfinite(err) or err > 1e-8 * scale:
        raise NumericalError(
            f"K_vv quadrature did not converge: change {err:g} at scale {scale:g}")
    return fine


def rkhs_inner_half(kspec: KernelSpec, fs: FeatureSet, g, h, breakpoints=()):
    """Matern-1/2 RKHS inner product of two differentiable functions on [a, b].

    ``g`` and ``h`` are pairs (f, f') of array-capable callables:

        <g, h> = (1/(2 lam sigma^2)) int_a^b (lam g + g')(lam h + h') dx
                 + g(a) h(a) / sigma^2

    ``breakpoints`` lists interior abscissae where either function kinks.
    """
    if kspec.order is not MaternOrder.HALF:
        raise UnsupportedOrderError(
            "rkhs_inner_half supports order 1/2 only; other orders are "
            "handled internally by kvv_gram")
    a, b = fs.interval_a, fs.interval_b
    gf, gd = g
    hf, hd = h
    lam = kspec.lam
    pts = np.array(sorted({a, b} | {p for p in breakpoints if a < p < b}))
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        n = max(16, int(np.ceil((hi - lo) * (fs.frequencies[-1] + lam) * 4)))
        nodes, weights = gauss_legendre_panels(np.linspace(lo, hi, n + 1), 10)
        vals = (lam * np.asarray(gf(nodes)) + np.asarray(gd(nodes))) * \
               (lam * np.asarray(hf(nodes)) + np.asarray(hd(nodes)))
        total += float(np.sum(weights * vals))
    total /= 2.0 * lam * kspec.variance
    return total + float(gf(np.array([a]))[0]) * float(hf(np.array([a]))[0]) / kspec.variance


# ---------------------------------------------------------------------------
# Random Fourier response features (baseline approximation)
# ---------------------------------------------------------------------------

def rfrf_eval(ode: OdeSpec, omega, t):
    """Filtered random Fourier feature e^{i omega t} / (beta (gamma + i omega))."""
    omega = jnp.asarray(omega, dtype=float)
    t = jnp.asarray(t, dtype=float)
    return jnp.exp(1j * omega * t) / (ode.beta * (ode.gamma + 1j * omega))


def rff_feature_matrix(ode: OdeSpec, variance, omegas, t):
    """Real features [Re phi, Im phi] scaled so the prior weight covariance
    is the identity; N x 2M design matrix of the weight-space baseline."""
    omegas = jnp.asarray(omegas, dtype=float)
    t = jnp.atleast_1d(jnp.asarray(t, dtype=float))
    gam = ode.gamma
    denom = ode.beta * (gam**2 + omegas[None, :] ** 2)
    wt = omegas[None, :] * t[:, None]
    re = (gam * jnp.cos(wt) + omegas[None, :] * jnp.sin(wt)) / denom
    im = (gam * jnp.sin(wt) - omegas[None, :] * jnp.cos(wt)) / denom
    scale = jnp.sqrt(variance / omegas.size)
    return scale * jnp.concatenate([re, im], axis=1)


def rff_kernel_approx(kspec: KernelSpec, ode: OdeSpec, omegas, t, t2):
    """Monte Carlo LFM kernel estimate (sigma^2/M) sum Re[phi(t) conj(phi(t2))]."""
    omegas = jnp.asarray(omegas, dtype=float)
    if omegas.size == 0:
        raise DomainError("omegas must be non-empty")
    f1 = rfrf_eval(ode, omegas, jnp.asarray(t, dtype=float)[..., None])
    f2 = rfrf_eval(ode, omegas, jnp.asarray(t2, dtype=float)[..., None])
    return kspec.variance * jnp.mean(jnp.real(f1 * jnp.conj(f2)), axis=-1)
