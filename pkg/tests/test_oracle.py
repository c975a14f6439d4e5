import numpy as np
import pytest

from fourierlfm import (DomainError, FeatureSet, KernelSpec, OdeSpec,
                        QuadratureConfig, convolve_green,
                        double_convolve_kernel, matern_eval, psd_check,
                        rfrf_eval, vff_eval)
from fourierlfm.oracle import double_convolve_grid

from conftest import spec_with_lam


class TestConvolveGreen:
    def test_constant_integrates_to_inverse_alpha(self):
        ode = OdeSpec(2.5, 0.8)
        val = convolve_green(lambda tau: np.ones_like(tau), ode, 0.3)
        assert val == pytest.approx(1.0 / 2.5, abs=1e-9)

    def test_sine_feature_below_interval_is_zero(self):
        fs = FeatureSet(-1.0, 4.0, 2)
        kspec = KernelSpec("1/2", 1.0, 0.5)
        ode = OdeSpec(3.0, 1.0)
        val = convolve_green(lambda tau: np.asarray(vff_eval(kspec, fs, 3, tau)),
                             ode, -1.5, breakpoints=(-1.0, 4.0),
                             decay_rate=min(kspec.lam, ode.gamma))
        assert val == pytest.approx(0.0, abs=1e-8)

    def test_complex_exponential_matches_rfrf(self):
        ode = OdeSpec(1.5, 0.7)
        omega, t = 2.3, 0.9
        re = convolve_green(lambda tau: np.cos(omega * tau), ode, t)
        im = convolve_green(lambda tau: np.sin(omega * tau), ode, t)
        ref = complex(np.asarray(rfrf_eval(ode, omega, t)))
        assert re + 1j * im == pytest.approx(ref, abs=1e-8)

    def test_self_convergence_on_panel_doubling(self):
        ode = OdeSpec(2.0, 1.0)
        fn = lambda tau: np.cos(3.0 * tau) * np.exp(-np.abs(tau))
        cfg_a = QuadratureConfig(panel_count=64, tolerance=1e-10)
        cfg_b = QuadratureConfig(panel_count=128, tolerance=1e-10)
        va = convolve_green(fn, ode, 0.4, cfg_a, breakpoints=(0.0,))
        vb = convolve_green(fn, ode, 0.4, cfg_b, breakpoints=(0.0,))
        assert abs(va - vb) < 1e-10

    def test_invalid_config_rejected(self):
        with pytest.raises(DomainError):
            QuadratureConfig(tolerance=-1.0)


class TestDoubleConvolve:
    def test_matern_half_zero_lag(self):
        spec = spec_with_lam("1/2", 5.0)
        val = double_convolve_kernel(spec, OdeSpec(4.0, 1.0), 0.0, 0.0)
        assert val == pytest.approx(1.0 / 36.0, rel=1e-8)

    def test_symmetry(self):
        spec = spec_with_lam("3/2", 2.0)
        ode = OdeSpec(1.1, 0.9)
        cfg = QuadratureConfig()
        assert double_convolve_kernel(spec, ode, 0.7, 0.2, cfg) == pytest.approx(
            double_convolve_kernel(spec, ode, 0.2, 0.7, cfg), abs=2 * cfg.tolerance)

    def test_small_beta_reverts_to_matern(self):
        spec = spec_with_lam("1/2", 5.0)
        ode = OdeSpec(1.0, 1e-3)
        for r in (0.0, 0.3, 1.0):
            val = double_convolve_kernel(spec, ode, r, 0.0)
            assert val == pytest.approx(float(matern_eval(spec, r)), rel=1e-2)

    def test_grid_rejects_negative_lags(self):
        with pytest.raises(DomainError):
            double_convolve_grid(spec_with_lam("1/2", 1.0), OdeSpec(1.0, 1.0), [-0.1])


class TestPsdCheck:
    def test_identity(self):
        report = psd_check(np.eye(3))
        assert report.ok and report.min_eigenvalue == pytest.approx(1.0)

    def test_indefinite(self):
        assert not psd_check(np.diag([1.0, -1.0])).ok

    def test_asymmetric_rejected(self):
        with pytest.raises(DomainError):
            psd_check(np.array([[1.0, 0.5], [0.1, 1.0]]))

    def test_matern_gram_passes(self):
        from fourierlfm import matern_gram
        x = np.random.default_rng(0).uniform(0, 4, size=25)
        assert psd_check(np.asarray(matern_gram(KernelSpec("5/2", 1.0, 0.7), x)),
                         rel_tol=1e-8).ok
