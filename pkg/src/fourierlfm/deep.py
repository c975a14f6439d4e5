"""Compositional latent force model with layer-wise sampled inference.

A model is a chain of layers; each layer maps an in_dim-vector to an
out_dim-vector of independent GPs, where output r sums in_dim independent
one-dimensional latent force models evaluated at the respective input
coordinates.  Inducing variables are the Fourier projections of each
dimension's latent force, so cross-dimension inducing blocks are zero and
K_vv is block diagonal.

Training maximises the doubly stochastic bound

    (1/|B|) sum_i E_q log p(y_i | g_i^L)  -  (1/N) sum_l KL[q(V^l) || p(V^l)]

with hidden layers sampled by the reparameterisation trick (marginal,
per-point draws) and the final Gaussian expectation taken in closed form.
Predictions are Gaussian mixtures over hidden-layer sample paths.

All parameters are trained in unconstrained form: positive scalars via
log, variational covariances via lower-triangular factors.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.linalg import block_diag, solve_triangular

from . import config  # noqa: F401
from .errors import DomainError, NumericalError, ParseError
from .features import (KVV_JITTER, FeatureSet, VfrfContext, _kvv_nodes,
                       _split_z, _vff_blocks, _vfrf_blocks, kvv_gram_closed_fn,
                       kvv_gram_fn)
from .gp import GaussianState, NoiseModel
from .kernels import KernelSpec, OdeSpec, lfm_kernel_fn

FAMILIES = ("vfrf", "vff", "rff")
INNER_Q_VARIANCE = 1e-5  # initial variational variance scale for inner layers


# ---------------------------------------------------------------------------
# Layer specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    """One layer: per-input-dimension contexts plus output structure.

    ``mean_mode`` is 'linear' for inner layers (fixed weights, identity when
    dimensions match) and 'zero' for the outermost layer.  ``feature_family``
    selects the inducing features: 'vfrf' (ODE-filtered Fourier features),
    'vff' (raw Fourier features of the force, no filtering) or 'rff'
    (random-frequency weight-space features; ``rff_omegas`` holds the raw
    unit-lengthscale frequency draws, shape (in_dim, n)).
    """

    contexts: tuple
    out_dim: int
    mean_mode: str = "zero"
    feature_family: str = "vfrf"
    mean_weights: np.ndarray = None
    rff_omegas: np.ndarray = None

    def __post_init__(self):
        if self.mean_mode not in ("zero", "linear"):
            raise DomainError(f"unknown mean_mode {self.mean_mode!r}")
        if self.feature_family not in FAMILIES:
            raise DomainError(f"unknown feature_family {self.feature_family!r}")
        if self.out_dim < 1 or len(self.contexts) < 1:
            raise DomainError("layer dimensions must be >= 1")
        if self.mean_mode == "linear" and self.mean_weights is None:
            raise DomainError("linear mean_mode requires mean_weights")
        if self.feature_family == "rff" and self.rff_omegas is None:
            raise DomainError("rff family requires rff_omegas")
        def signature(ctx):
            fs = ctx.features
            return (ctx.kernel.order, fs.interval_a, fs.interval_b, fs.count_m)

        first = signature(self.contexts[0])
        if any(signature(ctx) != first for ctx in self.contexts[1:]):
            raise DomainError(
                "all contexts of a layer must share order and feature set")

    @property
    def in_dim(self) -> int:
        return len(self.contexts)

    @property
    def block_size(self) -> int:
        if self.feature_family == "rff":
            return 2 * self.rff_omegas.shape[1]
        return self.contexts[0].features.size

    @property
    def num_inducing(self) -> int:
        return self.in_dim * self.block_size


def fixed_linear_mean(train_inputs, in_dim: int, out_dim: int) -> np.ndarray:
    """Frozen linear mean weights (in_dim x out_dim).

    Identity when dimensions match; otherwise the leading right-singular
    vectors of the training input matrix.  Rank-deficient inputs are padded
    with an orthonormal complement; when out_dim exceeds in_dim the extra
    columns are zero (no orthonormal completion exists).
    """
    if in_dim == out_dim:
        return np.eye(in_dim)
    x = np.asarray(train_inputs, dtype=float).reshape(-1, in_dim)
    if x.shape[0] < 1:
        raise DomainError("train_inputs must be non-degenerate")
    cov = x.T @ x
    eigval, eigvec = np.linalg.eigh(cov)
    order = np.argsort(eigval)[::-1]
    v = eigvec[:, order]  # full orthonormal basis, dominant direction first
    w = np.zeros((in_dim, out_dim))
    k = min(in_dim, out_dim)
    w[:, :k] = v[:, :k]
    return w


# ---------------------------------------------------------------------------
# Static configuration / parameter pytrees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _LayerStatic:
    p: int
    m: int
    a: float
    b: float
    family: str
    in_dim: int
    out_dim: int
    mean_mode: str
    block: int


@dataclass(frozen=True)
class _ModelStatic:
    layers: tuple
    train_samples: int
    eval_samples: int


def _layer_static(spec: LayerSpec) -> _LayerStatic:
    ctx = spec.contexts[0]
    return _LayerStatic(
        p=ctx.kernel.order.p,
        m=int(ctx.features.count_m) if spec.feature_family != "rff"
        else int(spec.rff_omegas.shape[1]),
        a=float(ctx.features.interval_a),
        b=float(ctx.features.interval_b),
        family=spec.feature_family,
        in_dim=spec.in_dim,
        out_dim=spec.out_dim,
        mean_mode=spec.mean_mode,
        block=spec.block_size,
    )


def _layer_params(spec: LayerSpec, q_variance: float) -> dict:
    p = spec.num_inducing
    return {
        "log_lengthscale": jnp.log(jnp.array([c.kernel.lengthscale for c in spec.contexts])),
        "log_variance": jnp.log(jnp.array([c.kernel.variance for c in spec.contexts])),
        "log_alpha": jnp.log(jnp.array([c.ode.alpha for c in spec.contexts])),
        "log_beta": jnp.log(jnp.array([c.ode.beta for c in spec.contexts])),
        "q_mu": jnp.zeros((spec.out_dim, p)),
        "q_sqrt": jnp.sqrt(q_variance) * jnp.broadcast_to(jnp.eye(p), (spec.out_dim, p, p)),
    }


def _layer_fixed(spec: LayerSpec) -> dict:
    return {
        "mean_w": jnp.asarray(spec.mean_weights, dtype=float)
        if spec.mean_weights is not None else jnp.zeros((0, 0)),
        "omega_raw": jnp.asarray(spec.rff_omegas, dtype=float)
        if spec.rff_omegas is not None else jnp.zeros((0, 0)),
    }


# ---------------------------------------------------------------------------
# Differentiable covariance assembly
# ---------------------------------------------------------------------------

def _layer_covariances_fn(stat: _LayerStatic, lp: dict, fx: dict, t_flat,
                          kvv_nodes=None, kvv_weights=None):
    """K_fv (N x P), block-diagonal K_vv (P x P) and prior variances (N,).

    K_vv blocks come from the quadrature route when nodes are supplied and
    from the equivalent closed form otherwise (hot path).
    """
    fs = FeatureSet(stat.a, stat.b, stat.m) if stat.family != "rff" else None
    kfv_blocks, kvv_blocks, prior = [], [], 0.0
    lam_fac = {1: 1.0, 2: np.sqrt(3.0), 3: np.sqrt(5.0)}[stat.p]
    for d in range(stat.in_dim):
        ell = jnp.exp(lp["log_lengthscale"][d])
        var = jnp.exp(lp["log_variance"][d])
        alpha = jnp.exp(lp["log_alpha"][d])
        beta = jnp.exp(lp["log_beta"][d])
        lam = lam_fac / ell
        gam = alpha / beta
        td = t_flat[:, d]
        if stat.family == "rff":
            omegas = fx["omega_raw"][d] / ell
            denom = beta * (gam**2 + omegas[None, :] ** 2)
            wt = omegas[None, :] * td[:, None]
            re = (gam * jnp.cos(wt) + omegas[None, :] * jnp.sin(wt)) / denom
            im = (gam * jnp.sin(wt) - omegas[None, :] * jnp.cos(wt)) / denom
            scale = jnp.sqrt(var / omegas.size)
            kfv_blocks.append(scale * jnp.concatenate([re, im], axis=1))
            kvv_blocks.append(jnp.eye(2 * omegas.size))
            prior = prior + var * jnp.mean(1.0 / (beta**2 * (gam**2 + omegas**2)))
            continue
        z_cos, z_sin = _split_z(fs)
        if stat.family == "vfrf":
            cos, sin = _vfrf_blocks(stat.p, lam, gam, beta, z_cos, z_sin,
                                    stat.a, stat.b, td)
            prior = prior + lfm_kernel_fn(stat.p, var, lam, alpha, beta, 0.0)
        else:  # raw Fourier features of the force itself
            cos, sin = _vff_blocks(stat.p, lam, z_cos, z_sin, stat.a, stat.b, td)
            prior = prior + var
        kfv_blocks.append(jnp.concatenate([cos, sin], axis=1))
        if kvv_nodes is not None:
            kvv_blocks.append(kvv_gram_fn(stat.p, lam, var, fs, kvv_nodes, kvv_weights))
        else:
            kvv_blocks.append(kvv_gram_closed_fn(stat.p, lam, var, fs))
    kfv = jnp.concatenate(kfv_blocks, axis=1)
    kvv = block_diag(*kvv_blocks) if len(kvv_blocks) > 1 else kvv_blocks[0]
    return kfv, kvv, prior * jnp.ones(t_flat.shape[0])


def _sparse_marginals(kfv, kvv, q_mu, q_sqrt, prior_var):
    """Posterior marginals for every output dim, plus the KL to the prior.

    Returns (means (N, Dout), vars (N, Dout), kl scalar, chol diag log-det
    pieces are consumed internally).
    """
    p = kvv.shape[0]
    scale = jnp.mean(jnp.diag(kvv))
    ell = jnp.linalg.cholesky(kvv + KVV_JITTER * scale * jnp.eye(p))
    a = solve_triangular(ell, kfv.T, lower=True)                 # (P, N)
    alpha = solve_triangular(ell, q_mu.T, lower=True)            # (P, Dout)
    means = a.T @ alpha                                          # (N, Dout)
    proj = solve_triangular(ell.T, a, lower=False)               # (P, N)
    tril = jnp.tril(q_sqrt)                                      # (Dout, P, P)
    su = jnp.einsum("rji,jn->rin", tril, proj)                   # (P,N) per dim
    var = (prior_var[:, None] - jnp.sum(a**2, axis=0)[:, None]
           + jnp.sum(su**2, axis=1).T)
    # KL[q || N(0, Kvv)] summed over output dims
    linv_ls = solve_triangular(ell, tril.transpose(1, 0, 2).reshape(p, -1), lower=True)
    trace = jnp.sum(linv_ls**2)
    mahal = jnp.sum(alpha**2)
    logdet_p = 2.0 * jnp.sum(jnp.log(jnp.diag(ell)))
    diags = jnp.abs(jnp.diagonal(tril, axis1=1, axis2=2))
    logdet_q = 2.0 * jnp.sum(jnp.log(diags))
    dout = q_mu.shape[0]
    kl = 0.5 * (trace + mahal - dout * p + dout * logdet_p - logdet_q)
    return means, var, kl


def _forward(params, fixed, static: _ModelStatic, x, key, n_samples: int):
    """Propagate sample paths; returns final means/vars (S, N, 1) and KL.

    The first layer sees the raw inputs, identical across sample paths, so
    its covariances are evaluated once and broadcast before sampling.
    """
    s = n_samples
    n = x.shape[0]
    h = x[None, :, :]  # layer 1 input is sample-independent
    kl_total = 0.0
    final_mean = final_var = None
    for l, stat in enumerate(static.layers):
        lp, fx = params["layers"][l], fixed["layers"][l]
        paths = h.shape[0]
        flat = h.reshape(-1, stat.in_dim)
        kfv, kvv, pvar = _layer_covariances_fn(stat, lp, fx, flat)
        means, var, kl = _sparse_marginals(kfv, kvv, lp["q_mu"], lp["q_sqrt"], pvar)
        kl_total = kl_total + kl
        if stat.mean_mode == "linear":
            means = means + flat @ fx["mean_w"]
        var = jnp.maximum(var, 0.0)
        means = jnp.broadcast_to(means.reshape(paths, n, stat.out_dim),
                                 (s, n, stat.out_dim))
        var = jnp.broadcast_to(var.reshape(paths, n, stat.out_dim),
                               (s, n, stat.out_dim))
        if l < len(static.layers) - 1:
            eps = jax.random.normal(jax.random.fold_in(key, l), (s, n, stat.out_dim))
            h = means + jnp.sqrt(var) * eps
        else:
            final_mean = means
            final_var = var
    return final_mean, final_var, kl_total


def _elbo_fn(params, fixed, static: _ModelStatic, x, y, n_data, key):
    mean, var, kl = _forward(params, fixed, static, x, key, static.train_samples)
    s2 = jnp.exp(params["log_noise"])
    point_ll = (-0.5 * jnp.log(2.0 * jnp.pi * s2)
                - ((y[None, :, None] - mean) ** 2 + var) / (2.0 * s2))
    return jnp.mean(jnp.mean(point_ll, axis=0)) - kl / n_data


@functools.lru_cache(maxsize=64)
def _compiled_elbo(static: _ModelStatic):
    return jax.jit(functools.partial(_elbo_fn, static=static))


@functools.lru_cache(maxsize=64)
def _compiled_elbo_grad(static: _ModelStatic):
    fn = functools.partial(_elbo_fn, static=static)
    return jax.jit(jax.value_and_grad(fn, argnums=0))


@functools.lru_cache(maxsize=64)
def _compiled_forward(static: _ModelStatic):
    def fn(params, fixed, x, key):
        return _forward(params, fixed, static, x, key, static.eval_samples)
    return jax.jit(fn)


# ---------------------------------------------------------------------------
# Predictive mixture
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PredictiveDist:
    """Per-point Gaussian mixture over hidden-layer sample paths.

    Component moments live in the model's (possibly standardised) target
    space; ``y_scale``/``y_shift`` carry the inverse target transform so
    accessors report original units.  Densities include observation noise.
    """

    means: np.ndarray        # (S, N)
    variances: np.ndarray    # (S, N), latent (noise-free) variances
    noise_variance: float
    y_scale: float = 1.0
    y_shift: float = 0.0

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def component_moments(self, include_noise: bool = True):
        add = self.noise_variance if include_noise else 0.0
        mean = self.y_shift + self.y_scale * self.means
        var = self.y_scale**2 * (self.variances + add)
        return mean, var

    def mixture_mean(self) -> np.ndarray:
        return self.component_moments()[0].mean(axis=0)

    def mixture_variance(self, include_noise: bool = True) -> np.ndarray:
        mean, var = self.component_moments(include_noise)
        return var.mean(axis=0) + mean.var(axis=0)

    def log_density(self, y) -> np.ndarray:
        """Per-point log mixture density at observed values ``y``."""
        y = np.asarray(y, dtype=float)
        mean, var = self.component_moments(include_noise=True)
        log_comp = (-0.5 * np.log(2.0 * np.pi * var)
                    - (y[None, :] - mean) ** 2 / (2.0 * var))
        top = np.max(log_comp, axis=0)
        return top + np.log(np.mean(np.exp(log_comp - top), axis=0))


# ---------------------------------------------------------------------------
# The model object
# ---------------------------------------------------------------------------

class DeepModel:
    """Chain of latent force layers with variational inducing states."""

    def __init__(self, layers, noise: NoiseModel, train_samples: int = 5,
                 eval_samples: int = 100, freeze_ode: bool = False):
        layers = tuple(layers)
        if layers[-1].out_dim != 1:
            raise DomainError("final layer must have out_dim = 1")
        for prev, nxt in zip(layers[:-1], layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DomainError("adjacent layer dimensions must chain")
        if layers[-1].mean_mode != "zero":
            raise DomainError("outermost layer must use the zero mean")
        self.layers = layers
        self.noise = noise
        self.train_samples = int(train_samples)
        self.eval_samples = int(eval_samples)
        self.freeze_ode = bool(freeze_ode)
        self.static = _ModelStatic(
            layers=tuple(_layer_static(s) for s in layers),
            train_samples=self.train_samples,
            eval_samples=self.eval_samples,
        )
        n_layers = len(layers)
        self.params = {
            "log_noise": jnp.log(jnp.asarray(noise.noise_variance)),
            "layers": tuple(
                _layer_params(s, 1.0 if i == n_layers - 1 else INNER_Q_VARIANCE)
                for i, s in enumerate(layers)),
        }
        self.fixed = {"layers": tuple(_layer_fixed(s) for s in layers)}

    # -- parameter views ----------------------------------------------------

    def layer_context(self, layer: int, dim: int) -> VfrfContext:
        """Materialise the current hyperparameters of one layer dimension."""
        lp = self.params["layers"][layer]
        spec = self.layers[layer]
        order = spec.contexts[dim].kernel.order
        kernel = KernelSpec(order, float(jnp.exp(lp["log_variance"][dim])),
                            float(jnp.exp(lp["log_lengthscale"][dim])))
        ode = OdeSpec(float(jnp.exp(lp["log_alpha"][dim])),
                      float(jnp.exp(lp["log_beta"][dim])))
        return VfrfContext(kernel, ode, spec.contexts[dim].features)

    def variational_state(self, layer: int, out: int) -> GaussianState:
        lp = self.params["layers"][layer]
        tril = np.asarray(jnp.tril(lp["q_sqrt"][out]))
        sign = np.sign(np.diag(tril))
        sign[sign == 0] = 1.0
        return GaussianState(np.asarray(lp["q_mu"][out]), tril * sign[None, :])

    def set_variational_state(self, layer: int, out: int, state: GaussianState):
        lp = dict(self.params["layers"][layer])
        lp["q_mu"] = lp["q_mu"].at[out].set(jnp.asarray(state.mean))
        lp["q_sqrt"] = lp["q_sqrt"].at[out].set(jnp.asarray(state.cov_factor))
        layers = list(self.params["layers"])
        layers[layer] = lp
        self.params = {**self.params, "layers": tuple(layers)}

    @property
    def noise_variance(self) -> float:
        return float(jnp.exp(self.params["log_noise"]))

    # -- inference ----------------------------------------------------------

    def elbo_value(self, batch_inputs, batch_targets, full_data_size: int, rng) -> float:
        x, y = _as_batch(batch_inputs, batch_targets)
        if y.size == 0 or full_data_size < y.size:
            raise DomainError("batch must be nonempty and no larger than N")
        val = _compiled_elbo(self.static)(
            self.params, self.fixed, x=x, y=y, n_data=float(full_data_size),
            key=_as_key(rng))
        _check_finite(float(val))
        return float(val)

    def elbo(self, batch_inputs, batch_targets, full_data_size: int, rng):
        """Bound value and gradients w.r.t. every unconstrained parameter."""
        x, y = _as_batch(batch_inputs, batch_targets)
        if y.size == 0 or full_data_size < y.size:
            raise DomainError("batch must be nonempty and no larger than N")
        val, grads = _compiled_elbo_grad(self.static)(
            self.params, self.fixed, x=x, y=y, n_data=float(full_data_size),
            key=_as_key(rng))
        _check_finite(float(val))
        return float(val), grads

    def predict_mixture(self, xstar, rng=0) -> PredictiveDist:
        """Gaussian-mixture predictive distribution at ``xstar``."""
        x = np.asarray(xstar, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        mean, var, _ = _compiled_forward(self.static)(
            self.params, self.fixed, jnp.asarray(x), _as_key(rng))
        return PredictiveDist(np.asarray(mean[..., 0]), np.asarray(var[..., 0]),
                              self.noise_variance)


def _as_key(rng):
    if isinstance(rng, (int, np.integer)):
        return jax.random.PRNGKey(int(rng))
    return rng


def _as_batch(x, y):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] != y.size:
        raise DomainError("inputs and targets disagree in length")
    return jnp.asarray(x), jnp.asarray(y)


def _check_finite(val: float):
    if not np.isfinite(val):
        raise NumericalError("objective became non-finite")


# ---------------------------------------------------------------------------
# Public layer operations
# ---------------------------------------------------------------------------

def additive_layer_covariances(layer: LayerSpec, t_batch):
    """Assemble (K_fv, block-diagonal K_vv, prior variances) for a layer.

    ``t_batch`` is (N, in_dim); covariances use the hyperparameters stored
    in the layer's contexts.
    """
    t = np.asarray(t_batch, dtype=float)
    if t.ndim == 1:
        t = t[:, None]
    if not np.all(np.isfinite(t)):
        raise DomainError("inputs must be finite")
    stat = _layer_static(layer)
    lp = _layer_params(layer, 1.0)
    fx = _layer_fixed(layer)
    if stat.family != "rff":
        nodes, weights = _kvv_nodes(FeatureSet(stat.a, stat.b, stat.m), refine=1)
    else:
        nodes = weights = np.zeros(0)
    kfv, kvv, pvar = _layer_covariances_fn(stat, lp, fx, jnp.asarray(t), nodes, weights)
    return np.asarray(kfv), np.asarray(kvv), np.asarray(pvar)


def layer_forward(layer: LayerSpec, states, input_batch, noise_draws):
    """One layer pass: posterior marginals plus reparameterised samples.

    ``states`` is a GaussianState per output dimension; ``noise_draws`` is
    (N, out_dim), standard normal or caller-fixed.  Returns (samples,
    means, variances) where means include the fixed mean function.
    """
    t = np.asarray(input_batch, dtype=float)
    if t.ndim == 1:
        t = t[:, None]
    draws = np.asarray(noise_draws, dtype=float)
    if draws.shape != (t.shape[0], layer.out_dim):
        raise DomainError("noise_draws must be (batch, out_dim)")
    kfv, kvv, pvar = additive_layer_covariances(layer, t)
    q_mu = jnp.stack([jnp.asarray(s.mean) for s in states])
    q_sqrt = jnp.stack([jnp.asarray(s.cov_factor) for s in states])
    means, var, _ = _sparse_marginals(jnp.asarray(kfv), jnp.asarray(kvv),
                                      q_mu, q_sqrt, jnp.asarray(pvar))
    means = np.asarray(means)
    var = np.maximum(np.asarray(var), 0.0)
    if layer.mean_mode == "linear":
        means = means + t @ np.asarray(layer.mean_weights)
    samples = means + np.sqrt(var) * draws
    return samples, means, var


def elbo(model: DeepModel, batch_inputs, batch_targets, full_data_size: int, rng):
    """Doubly stochastic bound and its gradients (module-level alias)."""
    return model.elbo(batch_inputs, batch_targets, full_data_size, rng)


def predict_mixture(model: DeepModel, xstar, rng=0) -> PredictiveDist:
    return model.predict_mixture(xstar, rng)


# ---------------------------------------------------------------------------
# Model building
# ---------------------------------------------------------------------------

def build_model(layer_dims, order="3/2", m_features: int = 20,
                interval=(-1.0, 4.0), feature_family: str = "vfrf",
                lengthscale: float = 1.0, alpha: float = 1.0, beta: float = 0.01,
                kernel_variance: float = 0.1, noise_variance: float = 0.01,
                train_samples: int = 5, eval_samples: int = 100,
                train_inputs=None, rff_seed: int = 0) -> DeepModel:
    """Assemble a DeepModel from scalar hyperparameters.

    ``layer_dims`` is (D0, D1, ..., DL) with DL = 1.  Inner layers get the
    fixed linear mean (weights from the propagated training inputs), the
    outer layer a zero mean.  For the 'rff' family, ``m_features`` random
    frequencies per input dimension are drawn once with ``rff_seed``.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or dims[-1] != 1:
        raise DomainError("layer_dims must chain to a single output")
    fs = FeatureSet(float(interval[0]), float(interval[1]), int(m_features))
    kernel = KernelSpec(order, kernel_variance, lengthscale)
    ode = OdeSpec(alpha, beta)
    order_enum = kernel.order
    rng = np.random.default_rng(rff_seed)
    x_prop = None
    if train_inputs is not None:
        x_prop = np.asarray(train_inputs, dtype=float).reshape(-1, dims[0])
    layers = []
    for l in range(len(dims) - 1):
        in_dim, out_dim = dims[l], dims[l + 1]
        last = l == len(dims) - 2
        contexts = tuple(VfrfContext(kernel, ode, fs) for _ in range(in_dim))
        mean_w = None
        if not last:
            source = x_prop if x_prop is not None else np.eye(in_dim)
            mean_w = fixed_linear_mean(source, in_dim, out_dim)
            if x_prop is not None:
                x_prop = x_prop @ mean_w
        omegas = None
        if feature_family == "rff":
            dof = 2.0 * order_enum.nu
            omegas = rng.standard_t(dof, size=(in_dim, int(m_features)))
        layers.append(LayerSpec(contexts, out_dim,
                                mean_mode="zero" if last else "linear",
                                feature_family=feature_family,
                                mean_weights=mean_w, rff_omegas=omegas))
    return DeepModel(layers, NoiseModel(noise_variance),
                     train_samples=train_samples, eval_samples=eval_samples)


# ---------------------------------------------------------------------------
# Persistence: flat text, one "path = values" line per tensor
# ---------------------------------------------------------------------------

def _fmt(arr) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(arr, dtype=float).ravel())


def save_model(model: DeepModel, path: str, extra_config: dict = None):
    """Write the model as UTF-8 text, round-trip exact."""
    lines = ["format = fourierlfm-model-v1"]
    for key, val in (extra_config or {}).items():
        lines.append(f"config.{key} = {val}")
    spec0 = model.layers[0]
    ctx0 = spec0.contexts[0]
    lines.append(f"model.order = {ctx0.kernel.order.value}")
    lines.append(f"model.m_features = {model.static.layers[0].m}")
    lines.append(f"model.interval_a = {repr(model.static.layers[0].a)}")
    lines.append(f"model.interval_b = {repr(model.static.layers[0].b)}")
    dims = [model.static.layers[0].in_dim] + [s.out_dim for s in model.static.layers]
    lines.append("model.layer_dims = " + " ".join(str(d) for d in dims))
    lines.append(f"model.feature_family = {spec0.feature_family}")
    lines.append(f"model.train_samples = {model.train_samples}")
    lines.append(f"model.eval_samples = {model.eval_samples}")
    lines.append(f"model.freeze_ode = {int(model.freeze_ode)}")
    for l, (lp, fx) in enumerate(zip(model.params["layers"], model.fixed["layers"])):
        for name in ("log_lengthscale", "log_variance", "log_alpha", "log_beta",
                     "q_mu", "q_sqrt"):
            lines.append(f"params.layers.{l}.{name} = {_fmt(lp[name])}")
        if fx["mean_w"].size:
            lines.append(f"fixed.layers.{l}.mean_w = {_fmt(fx['mean_w'])}")
        if fx["omega_raw"].size:
            lines.append(f"fixed.layers.{l}.omega_raw = {_fmt(fx['omega_raw'])}")
    lines.append(f"params.log_noise = {_fmt(model.params['log_noise'])}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path: str) -> DeepModel:
    """Reconstruct a model saved by ``save_model``."""
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{ln}: expected 'name = value'")
            name, _, value = line.partition("=")
            entries[name.strip()] = value.strip()
    if entries.get("format") != "fourierlfm-model-v1":
        raise ParseError(f"{path}: unknown model format")

    def floats(name):
        return np.array([float(tok) for tok in entries[name].split()])

    dims = [int(tok) for tok in entries["model.layer_dims"].split()]
    model = build_model(
        dims, order=entries["model.order"],
        m_features=int(entries["model.m_features"]),
        interval=(float(entries["model.interval_a"]), float(entries["model.interval_b"])),
        feature_family=entries["model.feature_family"],
        train_samples=int(entries["model.train_samples"]),
        eval_samples=int(entries["model.eval_samples"]),
    )
    model.freeze_ode = bool(int(entries.get("model.freeze_ode", "0")))
    layers = []
    for l, lp in enumerate(model.params["layers"]):
        new = dict(lp)
        for name in ("log_lengthscale", "log_variance", "log_alpha", "log_beta",
                     "q_mu", "q_sqrt"):
            new[name] = jnp.asarray(floats(f"params.layers.{l}.{name}")).reshape(lp[name].shape)
        layers.append(new)
    model.params = {"log_noise": jnp.asarray(floats("params.log_noise")[0]),
                    "layers": tuple(layers)}
    fixed_layers = []
    for l, fx in enumerate(model.fixed["layers"]):
        new = dict(fx)
        for key, name in (("mean_w", "mean_w"), ("omega_raw", "omega_raw")):
            line = f"fixed.layers.{l}.{name}"
            if line in entries:
                new[key] = jnp.asarray(floats(line)).reshape(fx[key].shape)
        fixed_layers.append(new)
    model.fixed = {"layers": tuple(fixed_layers)}
    return model
