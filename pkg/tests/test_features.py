import jax
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fourierlfm import (DomainError, FeatureSet, KernelSpec,
                        OdeSpec, QuadratureConfig, UnsupportedOrderError,
                        VfrfContext, convolve_green, harmonic_frequencies,
                        kfv_matrix, kvv_gram, lfm_gram, lfm_kernel_eval,
                        psd_check, rff_kernel_approx, rfrf_eval,
                        rkhs_inner_half, spectral_sample, vff_eval, vfrf_eval)
from fourierlfm.features import _basis_l_values, _boundary_form, _split_z, vff_matrix
from fourierlfm.kernels import matern_fn
from fourierlfm.numerics import gauss_legendre_panels

from conftest import ORDERS, matern_l_image, spec_with_lam


class TestHarmonics:
    def test_paper_interval_example(self):
        z = harmonic_frequencies(2, -1.0, 4.0)
        np.testing.assert_allclose(z, [2 * np.pi / 5, 4 * np.pi / 5], rtol=1e-12)

    def test_unit_fundamental(self):
        np.testing.assert_allclose(harmonic_frequencies(1, 0.0, 2 * np.pi), [1.0])

    @given(m=st.integers(1, 30))
    @settings(max_examples=20, deadline=None)
    def test_differences_equal_fundamental(self, m):
        z = harmonic_frequencies(m, -0.5, 2.5)
        np.testing.assert_allclose(np.diff(z), z[0], rtol=1e-12)

    def test_invalid_interval(self):
        with pytest.raises(DomainError):
            harmonic_frequencies(3, 1.0, 1.0)

    def test_feature_set_rejects_non_harmonic(self):
        with pytest.raises(DomainError):
            FeatureSet(0.0, 1.0, 2, frequencies=np.array([1.0, 2.0]))

    def test_layout_size(self):
        assert FeatureSet(0.0, 1.0, 4).size == 9


class TestVff:
    def test_sine_below_interval_is_zero_half(self, default_features):
        kspec = KernelSpec("1/2", 1.0, 0.3)
        for idx in (4, 5, 6):
            assert float(vff_eval(kspec, default_features, idx, -1.7)) == 0.0

    def test_cosine_at_left_edge(self, default_features):
        for order in ORDERS:
            kspec = KernelSpec(order, 1.0, 0.3)
            assert float(vff_eval(kspec, default_features, 2, -1.0)) == pytest.approx(1.0)

    def test_three_halves_cosine_tail_value(self, default_features):
        kspec = spec_with_lam("3/2", 5.0)
        val = vff_eval(kspec, default_features, 1, -1.1)
        assert float(val) == pytest.approx(0.90979598956895014, rel=1e-12)

    def test_index_range(self, default_features):
        with pytest.raises(DomainError):
            vff_eval(KernelSpec("1/2", 1.0, 1.0), default_features, 7, 0.0)

    @pytest.mark.parametrize("order", ORDERS)
    @pytest.mark.parametrize("t", [-1.9, -1.2, 4.3, 5.6])
    def test_exterior_matches_rkhs_projection(self, order, t, default_features):
        """Cov[u(t), v_m] for t outside [a, b] must equal the RKHS inner
        product <k(t, .), phi_m>, computed here from first principles with
        the differential-operator form of the inner product."""
        fs = default_features
        lam, sigma2 = 2.0, 1.7
        kspec = spec_with_lam(order, lam, sigma2)
        inner = _rkhs_inner_with_kernel_section(kspec, fs, t)
        table = np.asarray(vff_matrix(kspec, fs, np.array([t])))[0]
        np.testing.assert_allclose(table, inner, atol=1e-8, rtol=1e-8)

    @pytest.mark.parametrize("order", ORDERS)
    def test_reproducing_property_inside(self, order, default_features):
        fs = default_features
        kspec = spec_with_lam(order, 1.8, 0.9)
        for t in (-0.4, 1.3, 3.9):
            inner = _rkhs_inner_with_kernel_section(kspec, fs, t)
            direct = np.asarray(vff_matrix(kspec, fs, np.array([t])))[0]
            np.testing.assert_allclose(inner, direct, atol=1e-6, rtol=1e-6)


def _rkhs_inner_with_kernel_section(kspec, fs, t):
    """<k(t, .), phi_m> for every basis function, via quadrature of the
    operator form plus the boundary jet term (independent of the closed
    forms under test)."""
    a, b = fs.interval_a, fs.interval_b
    lam, sigma2 = kspec.lam, kspec.variance
    p = kspec.order.p
    hi = min(t, b)
    z_cos, z_sin = _split_z(fs)
    if hi > a:
        edges = np.linspace(a, hi, 200)
        nodes, weights = gauss_legendre_panels(edges, 12)
        lk = matern_l_image(kspec.order, lam, sigma2, t, nodes)
        lphi = np.asarray(_basis_l_values(p, lam, z_cos, z_sin, nodes, a))
        norm = {1: 2 * lam, 2: 4 * lam**3, 3: 16 * lam**5 / 3}[p] * sigma2
        integral = (lphi * (weights * lk)[None, :]).sum(axis=1) / norm
    else:
        integral = np.zeros(fs.size)
    # jets of k(x, t) at x = a on the active branch
    def kfun(x):
        return matern_fn(p, sigma2, lam, abs(x - t))
    d1 = jax.grad(lambda x: kfun(x))
    d2 = jax.grad(lambda x: d1(x))
    jet_k = np.array([float(kfun(a)), float(d1(a)), float(d2(a))])[:p]
    jc = np.stack([np.ones_like(z_cos), np.zeros_like(z_cos), -np.asarray(z_cos)**2])[:p]
    js = np.stack([np.zeros_like(z_sin), np.asarray(z_sin), np.zeros_like(z_sin)])[:p]
    jets = np.concatenate([jc, js], axis=1).T
    q = np.asarray(_boundary_form(p, lam)) / sigma2
    return integral + jets @ q @ jet_k


class TestVfrf:
    def test_half_cosine_below_frozen_value(self, half_context):
        val = vfrf_eval(half_context, 1, -1.1)
        assert float(val) == pytest.approx(0.067392295523625936, rel=1e-12)

    def test_half_sine_below_is_zero(self, half_context):
        for t in (-2.5, -1.01):
            assert float(vfrf_eval(half_context, 4, t)) == 0.0

    @pytest.mark.parametrize("order", ORDERS)
    def test_small_beta_reverts_to_raw_sinusoids(self, order, default_features):
        fs = default_features
        kspec = KernelSpec(order, 1.0, 0.5)
        ctx = VfrfContext(kspec, OdeSpec(1.0, 1e-6), fs)
        ts = np.linspace(fs.interval_a, fs.interval_b, 60)
        feats = np.asarray(kfv_matrix(ctx, ts))
        for m, z in enumerate(fs.frequencies, start=1):
            np.testing.assert_allclose(
                feats[:, m], np.cos(z * (ts - fs.interval_a)), atol=1e-3)
            np.testing.assert_allclose(
                feats[:, fs.count_m + m], np.sin(z * (ts - fs.interval_a)), atol=1e-3)
        np.testing.assert_allclose(feats[:, 0], 1.0, atol=1e-3)

    def test_constant_basis_is_zero_frequency_cosine(self, half_context):
        # amplitude 1/(beta*gamma), zero phase
        ctx = half_context
        t = 2.0
        expected_amp = 1.0 / (ctx.ode.beta * ctx.ode.gamma)
        val = float(vfrf_eval(ctx, 0, t))
        # interior: 1/(beta gamma) - decay*exp(-gamma (t-a))
        gam, lam, beta = ctx.ode.gamma, ctx.kernel.lam, ctx.ode.beta
        decay = (1.0 / (beta * gam) - 1.0 / (beta * (gam + lam))) * np.exp(-gam * (t + 1))
        assert val == pytest.approx(expected_amp - decay, rel=1e-12)

    def test_finite_input_required(self, half_context):
        with pytest.raises(DomainError):
            kfv_matrix(half_context, [np.nan])

    @pytest.mark.parametrize("order", ORDERS)
    @pytest.mark.parametrize("family_offset", [0, 1])  # cos z1, sin z1
    def test_region_boundary_continuity(self, order, family_offset, default_features):
        fs = default_features
        kspec = spec_with_lam(order, 2.0)
        for gamma in (4.0, 2.0):  # generic and confluent
            ctx = VfrfContext(kspec, OdeSpec(gamma, 1.0), fs)
            idx = 1 + family_offset * fs.count_m
            for edge in (fs.interval_a, fs.interval_b):
                lo = float(vfrf_eval(ctx, idx, edge - 1e-7))
                hi = float(vfrf_eval(ctx, idx, edge + 1e-7))
                assert abs(hi - lo) < 1e-5

    @pytest.mark.parametrize("order", ORDERS)
    def test_confluence_branch_agreement(self, order, default_features):
        """Values just off gamma = lam must track the defining integral;
        cross-checked against adaptive quadrature of the projected force."""
        fs = default_features
        lam = 2.0
        kspec = spec_with_lam(order, lam)
        cfg = QuadratureConfig(panel_count=256, tolerance=1e-10)
        for rel in (1 - 1e-5, 1.0, 1 + 1e-5):
            ctx = VfrfContext(kspec, OdeSpec(lam * rel, 1.0), fs)
            for idx in (1, fs.count_m + 1):
                for t in (4.3, 5.0):
                    mine = float(vfrf_eval(ctx, idx, t))
                    oracle = convolve_green(
                        lambda tau: np.asarray(vff_eval(kspec, fs, idx, tau)),
                        ctx.ode, t, cfg, breakpoints=(fs.interval_a, fs.interval_b),
                        decay_rate=min(lam, ctx.ode.gamma))
                    assert mine == pytest.approx(oracle, abs=1e-8, rel=1e-8)

    def test_interior_sine_vanishes_at_left_edge_half(self, default_features):
        # only the order-1/2 sine features are zero below a, hence zero at a;
        # higher orders have nonzero tails there (checked by continuity)
        fs = default_features
        ctx = VfrfContext(spec_with_lam("1/2", 3.0), OdeSpec(2.2, 0.7), fs)
        for idx in range(fs.count_m + 1, 2 * fs.count_m + 1):
            assert abs(float(vfrf_eval(ctx, idx, fs.interval_a))) < 1e-12

    @pytest.mark.parametrize("order", ORDERS[1:])
    def test_interior_sine_matches_tail_at_left_edge(self, order, default_features):
        fs = default_features
        ctx = VfrfContext(spec_with_lam(order, 3.0), OdeSpec(2.2, 0.7), fs)
        z = fs.frequencies[0]
        gam, lam, beta = ctx.ode.gamma, ctx.kernel.lam, ctx.ode.beta
        expected = -z / (beta * (gam + lam) ** 2)
        if order.p == 3:
            expected = -z * (gam + 3 * lam) / (beta * (gam + lam) ** 3)
        idx = fs.count_m + 1
        assert float(vfrf_eval(ctx, idx, fs.interval_a)) == pytest.approx(expected, rel=1e-10)

    @pytest.mark.parametrize("order", ORDERS)
    def test_interior_amplitude_and_phase(self, order, default_features):
        """Least-squares decomposition of the interior feature onto
        {cos, sin, exp(-gamma r)} recovers amplitude 1/(beta sqrt(z^2+g^2))
        and phase -arctan(z/gamma)."""
        fs = default_features
        gamma, beta = 3.0, 0.8
        ctx = VfrfContext(spec_with_lam(order, 1.5), OdeSpec(gamma * beta, beta), fs)
        z = fs.frequencies[1]
        ts = np.linspace(fs.interval_a, fs.interval_b, 400)
        ra = ts - fs.interval_a
        design = np.stack([np.cos(z * ra), np.sin(z * ra), np.exp(-gamma * ra)], axis=1)
        amp_true = 1.0 / (beta * np.hypot(z, gamma))
        theta_true = -np.arctan(z / gamma)
        cos_vals = np.asarray(vfrf_eval(ctx, 2, ts))
        c = np.linalg.lstsq(design, cos_vals, rcond=None)[0]
        assert np.hypot(c[0], c[1]) == pytest.approx(amp_true, rel=1e-9)
        assert np.arctan2(-c[1], c[0]) == pytest.approx(theta_true, rel=1e-9)
        sin_vals = np.asarray(vfrf_eval(ctx, 2 + fs.count_m, ts))
        s = np.linalg.lstsq(design, sin_vals, rcond=None)[0]
        assert np.hypot(s[0], s[1]) == pytest.approx(amp_true, rel=1e-9)
        assert np.arctan2(s[0], s[1]) == pytest.approx(theta_true, rel=1e-9)

    def test_kfv_matrix_matches_pointwise_eval(self, half_context):
        fs1 = FeatureSet(-1.0, 4.0, 1)
        ctx = VfrfContext(half_context.kernel, half_context.ode, fs1)
        row = np.asarray(kfv_matrix(ctx, [0.7]))[0]
        ref = [float(vfrf_eval(ctx, i, 0.7)) for i in range(3)]
        np.testing.assert_allclose(row, ref, rtol=1e-14)

    def test_joint_prior_psd(self, default_features):
        fs = default_features
        ctx = VfrfContext(spec_with_lam("3/2", 2.0), OdeSpec(1.5, 0.9), fs)
        ts = np.linspace(-0.5, 3.5, 10)
        kff = np.asarray(lfm_gram(ctx.kernel, ctx.ode, ts))
        kfv = np.asarray(kfv_matrix(ctx, ts))
        kvv = np.asarray(kvv_gram(ctx))
        joint = np.block([[kff, kfv], [kfv.T, kvv]])
        assert psd_check(joint, rel_tol=1e-6).ok


class TestKvv:
    def test_constant_inner_product_example(self):
        fs = FeatureSet(0.0, 2.0, 2)
        ctx = VfrfContext(KernelSpec("1/2", 1.0, 1.0), OdeSpec(1.0, 1.0), fs)
        k = np.asarray(kvv_gram(ctx))
        assert k[0, 0] == pytest.approx(2.0, rel=1e-10)
        assert k[0, fs.count_m + 1] == pytest.approx(0.0, abs=1e-10)

    @pytest.mark.parametrize("order", ORDERS)
    def test_psd(self, order):
        fs = FeatureSet(-1.0, 4.0, 5)
        ctx = VfrfContext(spec_with_lam(order, 2.3, 1.4), OdeSpec(1.0, 1.0), fs)
        k = np.asarray(kvv_gram(ctx))
        assert psd_check(k, rel_tol=1e-8).ok

    def test_independent_of_ode(self, default_features):
        kspec = spec_with_lam("5/2", 1.1)
        k1 = np.asarray(kvv_gram(VfrfContext(kspec, OdeSpec(1.0, 1.0), default_features)))
        k2 = np.asarray(kvv_gram(VfrfContext(kspec, OdeSpec(9.0, 0.1), default_features)))
        np.testing.assert_array_equal(k1, k2)

    def test_symmetry(self, default_features):
        ctx = VfrfContext(spec_with_lam("3/2", 2.0), OdeSpec(1.0, 1.0), default_features)
        k = np.asarray(kvv_gram(ctx))
        np.testing.assert_allclose(k, k.T, atol=1e-14)

    @pytest.mark.parametrize("order", ORDERS)
    def test_closed_form_equals_quadrature(self, order):
        from fourierlfm.features import _kvv_nodes, kvv_gram_closed_fn, kvv_gram_fn
        fs = FeatureSet(-1.0, 4.0, 7)
        lam, var = 2.3, 1.4
        quad = np.asarray(kvv_gram_fn(order.p, lam, var, fs,
                                      *_kvv_nodes(fs, refine=1)))
        closed = np.asarray(kvv_gram_closed_fn(order.p, lam, var, fs))
        scale = np.mean(np.diag(closed))
        np.testing.assert_allclose(quad, closed, atol=1e-9 * scale)


class TestRkhsInnerHalf:
    def test_constants_example(self):
        fs = FeatureSet(0.0, 2.0, 2)
        kspec = KernelSpec("1/2", 1.0, 1.0)
        one = (lambda x: np.ones_like(x), lambda x: np.zeros_like(x))
        assert rkhs_inner_half(kspec, fs, one, one) == pytest.approx(2.0, rel=1e-12)

    def test_constant_vs_first_sine_is_zero(self):
        fs = FeatureSet(0.0, 2.0, 2)
        kspec = KernelSpec("1/2", 1.0, 1.0)
        z1 = fs.frequencies[0]
        one = (lambda x: np.ones_like(x), lambda x: np.zeros_like(x))
        sine = (lambda x: np.sin(z1 * x), lambda x: z1 * np.cos(z1 * x))
        assert rkhs_inner_half(kspec, fs, one, sine) == pytest.approx(0.0, abs=1e-12)

    def test_reproducing_property(self):
        fs = FeatureSet(0.0, 2.0, 3)
        kspec = KernelSpec("1/2", 1.3, 0.7)
        lam, sig2 = kspec.lam, kspec.variance
        t = 0.9
        ksec = (lambda x: sig2 * np.exp(-lam * np.abs(x - t)),
                lambda x: sig2 * lam * np.sign(t - x) * np.exp(-lam * np.abs(x - t)))
        for m in (0, 1, 4):
            phi = _basis_callable(fs, m)
            val = rkhs_inner_half(kspec, fs, ksec, phi, breakpoints=(t,))
            assert val == pytest.approx(float(phi[0](np.array([t]))[0]), abs=1e-6)

    def test_rejects_other_orders(self):
        fs = FeatureSet(0.0, 2.0, 1)
        one = (lambda x: np.ones_like(x), lambda x: np.zeros_like(x))
        with pytest.raises(UnsupportedOrderError):
            rkhs_inner_half(KernelSpec("3/2", 1.0, 1.0), fs, one, one)


def _basis_callable(fs, index):
    a = fs.interval_a
    if index == 0:
        return (lambda x: np.ones_like(x), lambda x: np.zeros_like(x))
    if index <= fs.count_m:
        z = fs.frequencies[index - 1]
        return (lambda x: np.cos(z * (x - a)), lambda x: -z * np.sin(z * (x - a)))
    z = fs.frequencies[index - fs.count_m - 1]
    return (lambda x: np.sin(z * (x - a)), lambda x: z * np.cos(z * (x - a)))


class TestRandomFourier:
    def test_zero_frequency_is_inverse_alpha(self):
        ode = OdeSpec(2.0, 0.5)
        val = complex(np.asarray(rfrf_eval(ode, 0.0, 1.3)))
        assert val == pytest.approx(0.5 + 0j)

    def test_modulus_independent_of_time(self):
        ode = OdeSpec(1.0, 0.7)
        mags = [abs(complex(np.asarray(rfrf_eval(ode, 2.0, t)))) for t in (-1, 0.3, 5)]
        np.testing.assert_allclose(mags, mags[0], rtol=1e-12)

    def test_modulus_at_omega_equal_gamma(self):
        ode = OdeSpec(3.0, 1.0)
        val = abs(complex(np.asarray(rfrf_eval(ode, 3.0, 0.2))))
        assert val == pytest.approx(1.0 / (1.0 * 3.0 * np.sqrt(2)), rel=1e-12)

    def test_single_frequency_diagonal(self):
        kspec = KernelSpec("1/2", 1.4, 0.5)
        ode = OdeSpec(2.0, 1.0)
        val = float(np.asarray(rff_kernel_approx(kspec, ode, [3.0], 0.7, 0.7)))
        assert val == pytest.approx(1.4 / (1.0 * (4.0 + 9.0)), rel=1e-12)

    def test_monte_carlo_converges_to_closed_form(self):
        kspec = spec_with_lam("1/2", 5.0)
        ode = OdeSpec(4.0, 1.0)
        omegas = spectral_sample(kspec, 100_000, np.random.default_rng(0))
        approx = float(np.asarray(rff_kernel_approx(kspec, ode, omegas, 0.3, 0.1)))
        exact = float(lfm_kernel_eval(kspec, ode, 0.2))
        assert approx == pytest.approx(exact, rel=0.05)

    def test_empty_frequencies_rejected(self):
        with pytest.raises(DomainError):
            rff_kernel_approx(KernelSpec("1/2", 1.0, 1.0), OdeSpec(1.0, 1.0),
                              [], 0.0, 0.0)
