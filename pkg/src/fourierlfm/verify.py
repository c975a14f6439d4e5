"""Oracle-equivalence suites shared by the CLI and the acceptance tests.

Each suite returns rows (formula_name, max_rel_err, tolerance, passed);
the CLI prints them as ``formula=<name> max_rel_err=<v> pass=<bool>``.
"""

from __future__ import annotations

import numpy as np

from .features import FeatureSet, VfrfContext, kfv_matrix, vff_eval
from .kernels import KernelSpec, MaternOrder, OdeSpec, lfm_kernel_eval
from .oracle import QuadratureConfig, convolve_green, double_convolve_grid

ORDERS = (MaternOrder.HALF, MaternOrder.THREE_HALVES, MaternOrder.FIVE_HALVES)

KERNEL_TOL = 1e-5
VFRF_TOL = 1e-5
GRAD_TOL = 1e-4


def _spec_for(order: MaternOrder, lam: float, variance: float = 1.0) -> KernelSpec:
    return KernelSpec(order, variance, order.lam_factor / lam)


def kernels_suite(r_stop: float = 3.0, r_step: float = 0.01):
    """Closed-form LFM kernels against the double-convolution oracle over
    lam in {1, 5}, gamma in {0.5, 4, lam, lam*(1+1e-5)}, beta in {0.5, 1}."""
    r = np.arange(0.0, r_stop + r_step / 2, r_step)
    rows = []
    for order in ORDERS:
        worst = 0.0
        for lam in (1.0, 5.0):
            kspec = _spec_for(order, lam)
            for gamma in (0.5, 4.0, lam, lam * (1 + 1e-5)):
                for beta in (0.5, 1.0):
                    ode = OdeSpec(alpha=gamma * beta, beta=beta)
                    closed = np.asarray(lfm_kernel_eval(kspec, ode, r))
                    oracle = double_convolve_grid(kspec, ode, r)
                    rel = np.max(np.abs(closed - oracle)
                                 / np.maximum(np.abs(oracle), 1e-12))
                    worst = max(worst, float(rel))
        rows.append((f"lfm_kernel_{order.value}", worst, KERNEL_TOL,
                     worst < KERNEL_TOL))
    return rows


def vfrf_suite(n_points: int = 40):
    """All six response-feature families against single-convolution
    quadrature of the projected force features, spanning [a-1, b+1] and
    both the generic and confluent gamma branches."""
    a, b = -1.0, 4.0
    fs = FeatureSet(a, b, 3)
    cfg = QuadratureConfig(panel_count=256, tolerance=1e-9)
    ts = np.linspace(a - 1.0, b + 1.0, n_points)
    rows = []
    for order in ORDERS:
        lam = 2.0
        kspec = _spec_for(order, lam)
        for family, indices in (("cos", (1, 3)), ("sin", (4, 6))):
            worst = 0.0
            for gamma, beta in ((4.0, 1.0), (0.7, 0.5), (lam, 1.0)):
                ode = OdeSpec(alpha=gamma * beta, beta=beta)
                ctx = VfrfContext(kspec, ode, fs)
                rate = min(kspec.lam, ode.gamma)
                for idx in indices:
                    closed = np.asarray(kfv_matrix(ctx, ts))[:, idx]
                    oracle = np.array([
                        convolve_green(
                            lambda tau: np.asarray(vff_eval(kspec, fs, idx, tau)),
                            ode, float(t), cfg, breakpoints=(a, b),
                            decay_rate=rate)
                        for t in ts])
                    err = np.max(np.abs(closed - oracle)
                                 / np.maximum(1.0, np.abs(oracle)))
                    worst = max(worst, float(err))
            rows.append((f"vfrf_{family}_{order.value}", worst, VFRF_TOL,
                         worst < VFRF_TOL))
    return rows


def gradients_suite(seed: int = 0):
    """Finite-difference check of every unconstrained parameter of a small
    two-layer model on 20 points."""
    from .deep import build_model
    from .train import grad_check

    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 3.0, size=(20, 1))
    y = np.sin(2.0 * x[:, 0]) + 0.1 * rng.standard_normal(20)
    model = build_model([1, 3, 1], order="3/2", m_features=3, train_inputs=x)
    report = grad_check(model, (x, y), rel_tol=GRAD_TOL, rng_seed=seed)
    return [("elbo_gradients", report.max_rel_err, GRAD_TOL, report.passed)]


SUITES = {
    "kernels": kernels_suite,
    "vfrf": vfrf_suite,
    "gradients": gradients_suite,
}


def run_suite(name: str):
    if name == "all":
        rows = []
        for key in ("kernels", "vfrf", "gradients"):
            rows.extend(SUITES[key]())
        return rows
    return SUITES[name]()
