"""Optimisation loop: Adam on the negative bound, positivity via log
transforms, a two-phase schedule that freezes the ODE coefficients early
in training, and finite-difference gradient checking."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np
from jax.flatten_util import ravel_pytree

from . import config  # noqa: F401
from .deep import DeepModel, _compiled_elbo, _compiled_elbo_grad, _ModelStatic
from .errors import DomainError, NumericalError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def unconstrain(x):
    """Map a positive hyperparameter to the real line (log)."""
    return np.log(x)


def constrain(u):
    """Inverse of :func:`unconstrain` (exp)."""
    return np.exp(u)


@dataclass(frozen=True)
class InitConfig:
    """Initial hyperparameters; defaults follow the training recipe used
    throughout the experiments (lengthscale 1, alpha 1, beta 0.01, kernel
    variance 0.1, noise variance 0.01, interval [-1, 4])."""

    lengthscale: float = 1.0
    alpha: float = 1.0
    beta: float = 0.01
    kernel_variance: float = 0.1
    noise_variance: float = 0.01
    interval: tuple = (-1.0, 4.0)

    def __post_init__(self):
        vals = (self.lengthscale, self.alpha, self.beta,
                self.kernel_variance, self.noise_variance)
        if any(not (v > 0) for v in vals):
            raise DomainError("initial hyperparameters must be positive")
        if not self.interval[0] < self.interval[1]:
            raise DomainError("interval must be increasing")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 500
    batch_size: int = 10000
    seed: int = 0
    beta_freeze_epochs: int = 0
    init: InitConfig = field(default_factory=InitConfig)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise DomainError("invalid training configuration")
        if not (0 <= self.beta_freeze_epochs <= max(self.epochs, 1)):
            raise DomainError("beta_freeze_epochs must lie in [0, epochs]")


def adam_init(params):
    zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
    return {"m": zeros, "v": jax.tree_util.tree_map(jnp.zeros_like, params), "t": 0}


def adam_step(params, grads, state, lr: float):
    """One Adam update (beta1=0.9, beta2=0.999, eps=1e-8); returns
    (new_params, new_state)."""
    t = state["t"] + 1
    m = jax.tree_util.tree_map(
        lambda mm, g: ADAM_BETA1 * mm + (1 - ADAM_BETA1) * g, state["m"], grads)
    v = jax.tree_util.tree_map(
        lambda vv, g: ADAM_BETA2 * vv + (1 - ADAM_BETA2) * g**2, state["v"], grads)
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    new = jax.tree_util.tree_map(
        lambda p, mm, vv: p - lr * (mm / c1) / (jnp.sqrt(vv / c2) + ADAM_EPS),
        params, m, v)
    return new, {"m": m, "v": v, "t": t}


def _mask_ode_grads(grads, mult):
    """Scale the ODE-coefficient gradients by ``mult`` (0 while frozen)."""
    layers = tuple(
        {**lp, "log_alpha": lp["log_alpha"] * mult, "log_beta": lp["log_beta"] * mult}
        for lp in grads["layers"])
    return {**grads, "layers": layers}


@functools.lru_cache(maxsize=64)
def _compiled_train_step(static: _ModelStatic, lr: float):
    grad_fn = _compiled_elbo_grad(static)

    def step(params, fixed, opt_m, opt_v, t, x, y, n_data, key, ode_mult):
        val, grads = grad_fn(params, fixed, x=x, y=y, n_data=n_data, key=key)
        grads = jax.tree_util.tree_map(lambda g: -g, grads)  # minimise -ELBO
        grads = _mask_ode_grads(grads, ode_mult)
        t = t + 1
        m = jax.tree_util.tree_map(
            lambda mm, g: ADAM_BETA1 * mm + (1 - ADAM_BETA1) * g, opt_m, grads)
        v = jax.tree_util.tree_map(
            lambda vv, g: ADAM_BETA2 * vv + (1 - ADAM_BETA2) * g**2, opt_v, grads)
        c1 = 1.0 - ADAM_BETA1**t
        c2 = 1.0 - ADAM_BETA2**t
        new = jax.tree_util.tree_map(
            lambda p, mm, vv: p - lr * (mm / c1) / (jnp.sqrt(vv / c2) + ADAM_EPS),
            params, m, v)
        return new, m, v, t, -val

    return jax.jit(step)


def fit(model: DeepModel, data, cfg: TrainConfig, progress_sink=None,
        test_data=None, target_transform=(1.0, 0.0)):
    """Minibatch Adam on the negative bound.

    ``data`` is (inputs, targets); ``test_data``, when given, adds per-epoch
    RMSE/NMLL (reported in original units via ``target_transform`` =
    (scale, shift)) to the progress lines.  The ODE coefficients alpha and
    beta are frozen for the first ``beta_freeze_epochs`` epochs (always, if
    the model pins them).  Deterministic for a fixed seed.  On a non-finite
    loss the model is restored to the last finite state and NumericalError
    is raised.

    Returns (model, nelbo_trace) with one entry per epoch (batch average).
    """
    x, y = data
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n == 0:
        raise DomainError("training data must be nonempty")
    batch = min(cfg.batch_size, n)
    step_fn = _compiled_train_step(model.static, cfg.learning_rate)
    opt = adam_init(model.params)
    opt_m, opt_v, t = opt["m"], opt["v"], jnp.asarray(0)
    params = model.params
    base_key = jax.random.PRNGKey(cfg.seed)
    trace = []
    step_index = 0
    for epoch in range(cfg.epochs):
        frozen = model.freeze_ode or epoch < cfg.beta_freeze_epochs
        mult = 0.0 if frozen else 1.0
        order = np.random.default_rng(cfg.seed + 977 * epoch).permutation(n)
        losses = []
        for lo in range(0, n, batch):
            idx = order[lo:lo + batch]
            key = jax.random.fold_in(base_key, step_index)
            new_params, new_m, new_v, new_t, nelbo = step_fn(
                params, model.fixed, opt_m, opt_v, t,
                jnp.asarray(x[idx]), jnp.asarray(y[idx]), float(n), key,
                jnp.asarray(mult))
            nelbo = float(nelbo)
            if not np.isfinite(nelbo):
                model.params = params  # last finite state
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            params, opt_m, opt_v, t = new_params, new_m, new_v, new_t
            losses.append(nelbo)
            step_index += 1
        epoch_nelbo = float(np.mean(losses))
        trace.append(epoch_nelbo)
        line = f"epoch={epoch} nelbo={epoch_nelbo!r}"
        if test_data is not None:
            model.params = params
            rmse, nmll = _quick_metrics(model, test_data, target_transform, cfg.seed)
            line += f" rmse={rmse!r} nmll={nmll!r}"
        if progress_sink is not None:
            progress_sink(line)
    model.params = params
    return model, np.asarray(trace)


def _quick_metrics(model, test_data, target_transform, seed):
    from .data import metrics  # local import to avoid a cycle

    x_val, y_val = test_data
    pred = model.predict_mixture(np.asarray(x_val, dtype=float), rng=seed)
    scale, shift = target_transform
    pred = type(pred)(pred.means, pred.variances, pred.noise_variance,
                      y_scale=float(scale), y_shift=float(shift))
    return metrics(pred, np.asarray(y_val, dtype=float))


def central_difference(fn, x, step: float = 1e-5):
    """Central finite-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        out[i] = (fn(x + e) - fn(x - e)) / (2.0 * step)
    return out


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_parameter: dict
    rel_tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.rel_tol


def grad_check(model: DeepModel, data, rel_tol: float = 1e-4,
               rng_seed: int = 0) -> GradCheckReport:
    """Compare bound gradients against central finite differences.

    Uses common random numbers (one fixed sampling key across every
    perturbation), step 1e-5 on the unconstrained parameters.  Relative
    error per parameter is |ad - fd| / max(|ad|, |fd|, 1e-3).
    """
    x, y = data
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if y.size > 50:
        raise DomainError("grad_check is intended for small datasets (<= 50)")
    flat, unravel = ravel_pytree(model.params)
    flat = np.asarray(flat)
    key = jax.random.PRNGKey(rng_seed)
    elbo_fn = _compiled_elbo(model.static)

    def value(vec):
        return float(elbo_fn(unravel(jnp.asarray(vec)), model.fixed,
                             x=jnp.asarray(x), y=jnp.asarray(y),
                             n_data=float(y.size), key=key))

    _, grads = _compiled_elbo_grad(model.static)(
        model.params, model.fixed, x=jnp.asarray(x), y=jnp.asarray(y),
        n_data=float(y.size), key=key)
    gflat = np.asarray(ravel_pytree(grads)[0])
    fd = central_difference(value, flat)
    err = np.abs(gflat - fd) / np.maximum(np.maximum(np.abs(gflat), np.abs(fd)), 1e-3)

    leaves = jax.tree_util.tree_flatten_with_path(model.params)[0]
    per_parameter = {}
    offset = 0
    for path, leaf in leaves:
        size = int(np.asarray(leaf).size)
        name = jax.tree_util.keystr(path)
        per_parameter[name] = float(np.max(err[offset:offset + size]))
        offset += size
    return GradCheckReport(float(np.max(err)), per_parameter, rel_tol)
