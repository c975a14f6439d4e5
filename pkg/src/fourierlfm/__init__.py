"""Sparse variational Gaussian processes for ODE-driven latent force models
with adaptive RKHS Fourier features, shallow and compositional."""

from . import config  # noqa: F401  (enables float64 before any jax use)
from .data import Dataset, Transforms, fit_transforms, load_csv, metrics, multistep_synthetic
from .deep import (DeepModel, LayerSpec, PredictiveDist,
                   additive_layer_covariances, build_model, elbo,
                   fixed_linear_mean, layer_forward, load_model,
                   predict_mixture, save_model)
from .errors import DomainError, NumericalError, ParseError, UnsupportedOrderError
from .estimator import DeepLatentForceRegressor
from .features import (FeatureSet, VfrfContext, harmonic_frequencies,
                       kfv_matrix, kvv_gram, rff_kernel_approx, rfrf_eval,
                       rkhs_inner_half, vff_eval, vfrf_eval)
from .gp import (GaussianState, NoiseModel, exact_posterior, expected_gaussian_loglik,
                 gaussian_kl, log_marginal_likelihood, optimal_variational_state,
                 svgp_posterior)
from .kernels import (KernelSpec, MaternOrder, OdeSpec, lfm_gram,
                      lfm_kernel_eval, matern_eval, matern_gram, spectral_sample)
from .oracle import (PsdReport, QuadratureConfig, convolve_green,
                     double_convolve_kernel, psd_check)
from .train import (InitConfig, TrainConfig, adam_init, adam_step, fit,
                    grad_check)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
