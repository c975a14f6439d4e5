import numpy as np
import pytest

from fourierlfm import FeatureSet, KernelSpec, MaternOrder, OdeSpec, VfrfContext

ORDERS = (MaternOrder.HALF, MaternOrder.THREE_HALVES, MaternOrder.FIVE_HALVES)


def spec_with_lam(order, lam, variance=1.0):
    """KernelSpec whose decay rate is exactly ``lam``."""
    order = MaternOrder(order) if not isinstance(order, MaternOrder) else order
    return KernelSpec(order, variance, order.lam_factor / lam)


@pytest.fixture
def default_features():
    return FeatureSet(-1.0, 4.0, 3)


@pytest.fixture
def half_context(default_features):
    # lengthscale 0.2 -> lam = 5, gamma = 4
    return VfrfContext(KernelSpec("1/2", 1.0, 0.2), OdeSpec(4.0, 1.0),
                       default_features)


def matern_l_image(order: MaternOrder, lam, sigma2, t, x):
    """(d/dx + lam)^p applied to k(x, t) for x < t (zero for x > t).

    Closed forms: 2*lam*sigma2*e^{-lam u}; 4*sigma2*lam^3*u*e^{-lam u};
    (8/3)*sigma2*lam^5*u^2*e^{-lam u}, with u = t - x.
    """
    u = np.asarray(t - x, dtype=float)
    out = np.zeros_like(u)
    mask = u > 0
    um = u[mask]
    if order is MaternOrder.HALF:
        out[mask] = 2.0 * lam * sigma2 * np.exp(-lam * um)
    elif order is MaternOrder.THREE_HALVES:
        out[mask] = 4.0 * sigma2 * lam**3 * um * np.exp(-lam * um)
    else:
        out[mask] = (8.0 / 3.0) * sigma2 * lam**5 * um**2 * np.exp(-lam * um)
    return out
