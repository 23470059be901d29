"""Tests for coupling models, final costs, and the structural audit."""

from __future__ import annotations

import math

import numpy as np
import pytest

from fbmfg.models import (
    CouplingModel,
    HamiltonianSpec,
    build_congestion_coupling,
    build_mfg_coupling,
    congestion_model,
    decoupled_heat_model,
    final_cost_constant,
    final_cost_convolution,
    final_cost_scaled_identity,
    linear_counterexample_model,
    periodic_gaussian_kernel,
    quadratic_mfg_model,
    validate_assumptions,
)
from fbmfg.torus_grid import (
    Field,
    TorusGrid,
    gradient_values,
    hessian_values,
    norm_C1,
    norm_C2,
)


def random_batch(rng, dim, size, m_low=0.5, m_high=2.0):
    u = rng.uniform(-1.0, 1.0, size)
    m = rng.uniform(m_low, m_high, size)
    Du = rng.uniform(-1.5, 1.5, (dim, size))
    Dm = rng.uniform(-1.5, 1.5, (dim, size))
    P = rng.uniform(-2.0, 2.0, (dim, dim, size))
    D2u = 0.5 * (P + np.swapaxes(P, 0, 1))
    x = tuple(rng.uniform(0.0, 1.0, size) for _ in range(dim))
    return u, m, Du, Dm, D2u, x


class TestQuadraticModel:
    def test_source_formulas(self):
        rng = np.random.default_rng(3)
        for dim in (1, 2):
            model = quadratic_mfg_model(dim)
            u, m, Du, Dm, D2u, x = random_batch(rng, dim, 40)
            F = model.F(u, m, Du, Dm, x, 0.2)
            assert np.allclose(F, 0.5 * np.sum(Du * Du, axis=0) - m, atol=1e-13)
            G = model.G(u, m, Du, Dm, D2u, x, 0.2)
            lap = np.trace(D2u, axis1=0, axis2=1)
            expected = -np.sum(Du * Dm, axis=0) - m * lap
            assert np.allclose(G, expected, atol=1e-12)

    def test_diffusion_and_drift(self):
        model = quadratic_mfg_model(2)
        grid = TorusGrid(dim=2, n=8, nt=2, T=0.1)
        assert np.allclose(model.diffusion_values(grid, "u"), 0.5 * np.eye(2))
        assert np.allclose(model.diffusion_values(grid, "m"), 0.5 * np.eye(2))
        rng = np.random.default_rng(4)
        u, m, Du, Dm, _, x = random_batch(rng, 2, 10)
        assert np.array_equal(model.optimal_drift(u, m, Du, Dm, x, 0.0), Du)

    def test_derivative_validation_catches_wrong_gradient(self):
        spec = HamiltonianSpec(
            H=lambda x, t, p, m: 0.5 * np.sum(p * p, axis=0),
            H_p=lambda x, t, p, m: 2.0 * p,  # wrong by a factor of two
            H_pp=lambda x, t, p, m: np.broadcast_to(
                np.eye(p.shape[0]).reshape((p.shape[0],) * 2 + (1,) * (p.ndim - 1)),
                (p.shape[0],) * 2 + p.shape[1:],
            ),
        )
        with pytest.raises(ValueError, match="H_p"):
            build_mfg_coupling(spec, dim=1, L_F=lambda M: M**2, L_G=lambda M: M**2)

    def test_divergence_form_identity(self):
        # The pointwise G must match the discrete divergence-form transport
        # c : D2m - d_ij(A_ij m) - div(m H_p) up to the stencil error O(h^2).
        def residual(n):
            grid = TorusGrid(dim=1, n=n, nt=2, T=0.01)
            (x,) = grid.coordinates()
            u = 0.3 * np.cos(2 * np.pi * x)
            m = 1.0 + 0.4 * np.sin(2 * np.pi * x)
            Du = gradient_values(u, grid.h, 1)
            Dm = gradient_values(m, grid.h, 1)
            D2u = hessian_values(u, grid.h, 1)
            model = quadratic_mfg_model(1)
            G = model.G(u, m, Du, Dm, D2u, (x,), 0.0)
            # constant A = I/2: c:D2m and d_ij(A_ij m) cancel discretely
            div = gradient_values(m * Du[0], grid.h, 1)[0]
            return float(np.max(np.abs(G + div)))

        coarse, fine = residual(32), residual(64)
        assert fine > 0
        assert coarse / fine > 3.4


class TestVariableDiffusionCoupling:
    def _model(self):
        def A(x, t):
            a = 1.0 + 0.3 * np.sin(2.0 * np.pi * x[0])
            return a[np.newaxis, np.newaxis]

        def A_div1(x, t):
            return (0.6 * np.pi * np.cos(2.0 * np.pi * x[0]))[np.newaxis]

        def A_div2(x, t):
            return -1.2 * np.pi**2 * np.sin(2.0 * np.pi * x[0])

        spec = HamiltonianSpec(
            H=lambda x, t, p, m: 0.5 * np.sum(p * p, axis=0) - m,
            H_p=lambda x, t, p, m: p,
            H_pp=lambda x, t, p, m: np.ones((1, 1) + p.shape[1:]),
            A=A, A_div1=A_div1, A_div2=A_div2,
        )
        return build_mfg_coupling(
            spec, dim=1, L_F=lambda M: M**2 + M + 1, L_G=lambda M: 8 * (M + 1) ** 3
        )

    def test_fd_validation_accepts_consistent_divergences(self):
        self._model()  # would raise if the declared A derivatives were off

    def test_fd_validation_rejects_wrong_divergence(self):
        def A(x, t):
            a = 1.0 + 0.3 * np.sin(2.0 * np.pi * x[0])
            return a[np.newaxis, np.newaxis]

        spec = HamiltonianSpec(
            H=lambda x, t, p, m: 0.5 * np.sum(p * p, axis=0),
            H_p=lambda x, t, p, m: p,
            H_pp=lambda x, t, p, m: np.ones((1, 1) + p.shape[1:]),
            A=A,
            A_div1=lambda x, t: np.zeros((1,) + np.shape(x[0])),  # wrong: A varies
            A_div2=lambda x, t: np.zeros(np.shape(x[0])),
        )
        with pytest.raises(ValueError, match="A_div1"):
            build_mfg_coupling(spec, dim=1, L_F=lambda M: M**2, L_G=lambda M: M**3)

    def test_divergence_form_identity_with_varying_A(self):
        model = self._model()

        def residual(n):
            grid = TorusGrid(dim=1, n=n, nt=2, T=0.01)
            (x,) = grid.coordinates()
            a = 1.0 + 0.3 * np.sin(2.0 * np.pi * x)
            u = 0.3 * np.cos(2.0 * np.pi * x)
            m = 1.0 + 0.4 * np.sin(2.0 * np.pi * x)
            Du = gradient_values(u, grid.h, 1)
            Dm = gradient_values(m, grid.h, 1)
            D2u = hessian_values(u, grid.h, 1)
            G = model.G(u, m, Du, Dm, D2u, (x,), 0.0)
            c_d2m = a * hessian_values(m, grid.h, 1)[0, 0]
            dd_am = hessian_values(a * m, grid.h, 1)[0, 0]
            div = gradient_values(m * Du[0], grid.h, 1)[0]
            return float(np.max(np.abs(G - (c_d2m - dd_am - div))))

        coarse, fine = residual(32), residual(64)
        assert fine > 0
        assert coarse / fine > 3.2

    def test_diffusion_values_stacks_time_slices(self):
        model = self._model()
        grid = TorusGrid(dim=1, n=16, nt=3, T=0.05)
        arr = model.diffusion_values(grid, "m")
        assert arr.shape == (4, 1, 1, 16)
        (x,) = grid.coordinates()
        assert np.allclose(arr[0, 0, 0], 1.0 + 0.3 * np.sin(2 * np.pi * x))


class TestCongestion:
    def test_alpha_one_reduces_to_backward_laplacian(self):
        rng = np.random.default_rng(5)
        model = congestion_model(dim=2, alpha=1.0)
        u, m, Du, Dm, D2u, x = random_batch(rng, 2, 30)
        G = model.G(u, m, Du, Dm, D2u, x, 0.1)
        assert np.allclose(G, -np.trace(D2u, axis1=0, axis2=1), atol=1e-12)

    def test_source_values(self):
        rng = np.random.default_rng(6)
        model = congestion_model(dim=1, alpha=1.0)
        u, m, Du, Dm, D2u, x = random_batch(rng, 1, 30)
        F = model.F(u, m, Du, Dm, x, 0.0)
        assert np.allclose(F, 0.5 * Du[0] ** 2 / m - m, atol=1e-13)

    def test_rejects_nonpositive_density(self):
        model = congestion_model(dim=1, alpha=0.5)
        bad_m = np.array([0.5, 0.0, 1.0])
        args = (np.zeros(3), bad_m, np.zeros((1, 3)), np.zeros((1, 3)))
        x = (np.linspace(0, 1, 3, endpoint=False),)
        with pytest.raises(ValueError, match="positive"):
            model.F(*args, x, 0.0)
        with pytest.raises(ValueError, match="positive"):
            model.G(*args[:4], np.zeros((1, 1, 3)), x, 0.0)

    def test_small_alpha_limit_matches_hamiltonian_coupling(self):
        rng = np.random.default_rng(7)
        cong = congestion_model(dim=1, alpha=1e-8)
        mfg = build_mfg_coupling(
            HamiltonianSpec(
                H=lambda x, t, p, m: 0.5 * np.sum(p * p, axis=0) - m,
                H_p=lambda x, t, p, m: p,
                H_pp=lambda x, t, p, m: np.ones((1, 1) + p.shape[1:]),
            ),
            dim=1, L_F=lambda M: M**2 + M + 1, L_G=lambda M: 4 * (M + 1) ** 2,
        )
        u, m, Du, Dm, D2u, x = random_batch(rng, 1, 50)
        assert np.max(np.abs(cong.F(u, m, Du, Dm, x, 0.0) - mfg.F(u, m, Du, Dm, x, 0.0))) < 1e-6
        assert np.max(np.abs(
            cong.G(u, m, Du, Dm, D2u, x, 0.0) - mfg.G(u, m, Du, Dm, D2u, x, 0.0)
        )) < 1e-6

    def test_transport_divergence_identity(self):
        # G must be -div(m H1_p(Du / m^alpha)) up to the stencil error.
        alpha = 0.7
        model = congestion_model(dim=1, alpha=alpha)

        def residual(n):
            grid = TorusGrid(dim=1, n=n, nt=2, T=0.01)
            (x,) = grid.coordinates()
            u = 0.3 * np.cos(2.0 * np.pi * x)
            m = 1.0 + 0.4 * np.sin(2.0 * np.pi * x)
            Du = gradient_values(u, grid.h, 1)
            Dm = gradient_values(m, grid.h, 1)
            D2u = hessian_values(u, grid.h, 1)
            G = model.G(u, m, Du, Dm, D2u, (x,), 0.0)
            v = model.optimal_drift(u, m, Du, Dm, (x,), 0.0)
            div = gradient_values(m * v[0], grid.h, 1)[0]
            return float(np.max(np.abs(G + div)))

        coarse, fine = residual(32), residual(64)
        assert fine > 0
        assert coarse / fine > 3.4

    def test_custom_H1_needs_bounds_and_derivatives(self):
        H1 = lambda q: np.cosh(q[0])
        with pytest.raises(ValueError, match="H1_p"):
            build_congestion_coupling(0.5, dim=1, H1=H1, L_F=lambda M: 10.0, L_G=lambda M: 10.0)
        with pytest.raises(ValueError, match="growth bounds"):
            build_congestion_coupling(
                0.5, dim=1, H1=H1,
                H1_p=lambda q: np.sinh(q)[...],
                H1_pp=lambda q: np.cosh(q)[np.newaxis],
            )

    def test_custom_H1_derivative_check(self):
        with pytest.raises(ValueError, match="H1_p"):
            build_congestion_coupling(
                0.5, dim=1,
                H1=lambda q: np.cosh(q[0]),
                H1_p=lambda q: 2.0 * np.sinh(q),  # wrong factor
                H1_pp=lambda q: np.cosh(q)[np.newaxis],
                L_F=lambda M: 100.0, L_G=lambda M: 100.0,
            )

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError, match="alpha"):
            build_congestion_coupling(-0.1, dim=1)


class TestFinalCostConvolution:
    def test_kernel_mass_and_sign(self):
        for dim in (1, 2):
            grid = TorusGrid(dim=dim, n=32, nt=2, T=0.1)
            kern = periodic_gaussian_kernel(grid)
            assert np.all(kern >= 0)
            assert abs(np.sum(kern) * grid.h**dim - 1.0) < 1e-13

    def test_fft_matches_direct_sum(self):
        grid = TorusGrid(dim=1, n=32, nt=2, T=0.1)
        cost = final_cost_convolution(grid)
        rng = np.random.default_rng(11)
        m = rng.uniform(0.2, 2.0, 32)
        out = cost(Field(grid, m)).values
        direct = np.zeros(32)
        for i in range(32):
            for j in range(32):
                direct[i] += m[j] * cost.kernel[(i - j) % 32]
        direct *= grid.h
        assert np.max(np.abs(out - direct)) < 1e-12

    def test_fft_matches_direct_sum_2d(self):
        grid = TorusGrid(dim=2, n=12, nt=2, T=0.1)
        cost = final_cost_convolution(grid)
        rng = np.random.default_rng(12)
        m = rng.uniform(0.2, 2.0, (12, 12))
        out = cost(Field(grid, m)).values
        direct = np.zeros((12, 12))
        for j in range(12):
            for k in range(12):
                direct += m[j, k] * np.roll(cost.kernel, (j, k), axis=(0, 1))
        direct *= grid.h**2
        assert np.max(np.abs(out - direct)) < 1e-12

    def test_single_mode_attenuation(self):
        # Convolving 1 + cos(2 pi x)/2 with the Gaussian scales the wave by
        # exp(-2 pi^2 sigma^2) and leaves the constant untouched.
        grid = TorusGrid(dim=1, n=64, nt=2, T=0.1)
        cost = final_cost_convolution(grid)
        (x,) = grid.coordinates()
        sigma = 4.0 * grid.h
        out = cost(Field(grid, 1.0 + 0.5 * np.cos(2 * np.pi * x))).values
        expected = 1.0 + 0.5 * math.exp(-2.0 * np.pi**2 * sigma**2) * np.cos(2 * np.pi * x)
        assert np.max(np.abs(out - expected)) < 1e-10

    def test_affine_constants(self):
        grid = TorusGrid(dim=1, n=48, nt=2, T=0.1)
        cost = final_cost_convolution(grid, c0=0.7, c1=2.0)
        assert cost.regularizing
        assert abs(cost.C0 - 0.7) < 1e-13
        flat = cost(Field.full(grid, 1.5)).values
        assert np.max(np.abs(flat - (0.7 + 3.0))) < 1e-12

    def test_smoothing_estimate_on_rough_fields(self):
        # |h[m1] - h[m2]|_C2 <= L_h |m1 - m2|_C1 must hold for arbitrary
        # grid functions, white noise included.
        grid = TorusGrid(dim=1, n=48, nt=2, T=0.1)
        cost = final_cost_convolution(grid, c0=0.3, c1=1.7)
        rng = np.random.default_rng(13)
        for _ in range(100):
            m1 = Field(grid, rng.uniform(-1.0, 1.0, 48))
            m2 = Field(grid, rng.uniform(-1.0, 1.0, 48))
            lhs = norm_C2(Field(grid, cost(m1).values - cost(m2).values))
            w = Field(grid, m1.values - m2.values)
            assert lhs <= cost.L_h * norm_C1(w) * (1.0 + 1e-9)

    def test_smoothing_estimate_2d(self):
        grid = TorusGrid(dim=2, n=16, nt=2, T=0.1)
        cost = final_cost_convolution(grid)
        rng = np.random.default_rng(14)
        for _ in range(25):
            m1 = Field(grid, rng.uniform(-1.0, 1.0, (16, 16)))
            m2 = Field(grid, rng.uniform(-1.0, 1.0, (16, 16)))
            lhs = norm_C2(Field(grid, cost(m1).values - cost(m2).values))
            w = Field(grid, m1.values - m2.values)
            assert lhs <= cost.L_h * norm_C1(w) * (1.0 + 1e-9)

    def test_nonlinear_outer_function(self):
        grid = TorusGrid(dim=1, n=48, nt=2, T=0.1)
        cost = final_cost_convolution(
            grid, h0=np.sin, derivative_bounds=(1.0, 1.0, 1.0), input_range=2.0
        )
        rng = np.random.default_rng(15)
        (x,) = grid.coordinates()

        def smooth_sample():
            vals = rng.uniform(-0.5, 0.5) * np.ones(48)
            for k in (1, 2, 3):
                vals += rng.uniform(-0.5, 0.5) * np.cos(2 * np.pi * k * x)
                vals += rng.uniform(-0.5, 0.5) * np.sin(2 * np.pi * k * x)
            f = Field(grid, vals)
            return Field(grid, vals * (1.8 / norm_C1(f)))

        for _ in range(50):
            m1, m2 = smooth_sample(), smooth_sample()
            lhs = norm_C2(Field(grid, cost(m1).values - cost(m2).values))
            w = Field(grid, m1.values - m2.values)
            assert lhs <= cost.L_h * norm_C1(w) * (1.0 + 1e-9)

    def test_nonlinear_range_enforced(self):
        grid = TorusGrid(dim=1, n=32, nt=2, T=0.1)
        cost = final_cost_convolution(
            grid, h0=np.sin, derivative_bounds=(1.0, 1.0, 1.0), input_range=0.5
        )
        with pytest.raises(ValueError, match="range"):
            cost(Field.full(grid, 5.0))

    def test_degenerate_kernel_is_opt_in(self):
        grid = TorusGrid(dim=1, n=32, nt=2, T=0.1)
        with pytest.raises(ValueError, match="allow_degenerate"):
            final_cost_convolution(grid, sigma=0.0)
        cost = final_cost_convolution(grid, sigma=0.0, allow_degenerate=True)
        assert not cost.regularizing
        rng = np.random.default_rng(16)
        m = rng.uniform(0.5, 1.5, 32)
        # delta kernel: the cost is exactly the (affine) identity
        assert np.max(np.abs(cost(Field(grid, m)).values - m)) < 1e-12

    def test_shape_mismatch_rejected(self):
        grid = TorusGrid(dim=1, n=32, nt=2, T=0.1)
        other = TorusGrid(dim=1, n=64, nt=2, T=0.1)
        cost = final_cost_convolution(grid)
        with pytest.raises(ValueError, match="does not match"):
            cost(Field.zeros(other))


class TestOtherFinalCosts:
    def test_constant_cost(self):
        grid = TorusGrid(dim=1, n=32, nt=4, T=0.2)
        (x,) = grid.coordinates()
        u_T = Field(grid, 0.3 * np.sin(2 * np.pi * x))
        cost = final_cost_constant(u_T)
        assert cost.L_h == 0.0
        assert abs(cost.C0 - norm_C2(u_T)) < 1e-14
        assert cost.regularizing
        m = Field.full(grid, 7.0)
        assert np.array_equal(cost(m).values, u_T.values)

    def test_scaled_identity(self):
        grid = TorusGrid(dim=1, n=16, nt=2, T=0.1)
        cost = final_cost_scaled_identity(-3.0)
        assert cost.L_h == 3.0
        assert cost.C0 == 0.0
        assert not cost.regularizing
        m = Field.full(grid, 2.0)
        assert np.array_equal(cost(m).values, -6.0 * np.ones(16))


class TestAssumptionAudit:
    def test_builtin_models_pass(self):
        for model in (
            decoupled_heat_model(1),
            quadratic_mfg_model(1),
            quadratic_mfg_model(2),
            congestion_model(1, alpha=1.0),
            linear_counterexample_model(-3.0),
        ):
            report = validate_assumptions(model, 3.0, samples=150, seed=2)
            assert report.ok, f"{model.name}: {report.flags}"
            assert report.bound_F_ratio <= 1.0
            assert report.lipschitz_G_ratio <= 1.0

    def test_flags_undeclared_growth(self):
        model = CouplingModel(
            name="dishonest", dim=1,
            F=lambda u, m, Du, Dm, x, t: 10.0 * u,
            G=lambda u, m, Du, Dm, D2u, x, t: np.zeros(np.shape(u)),
            diffusion_u=np.eye(1), diffusion_m=np.eye(1),
            L_F=lambda M: 1.0, L_G=lambda M: 1.0,
        )
        report = validate_assumptions(model, 3.0, samples=200, seed=0)
        assert not report.ok
        assert any("exceeds" in f for f in report.flags)
        assert report.bound_F_ratio > 5.0
        assert "FLAG" in report.describe()

    def test_flags_nonaffine_hessian_dependence(self):
        model = CouplingModel(
            name="quadratic-in-hessian", dim=1,
            F=lambda u, m, Du, Dm, x, t: np.zeros(np.shape(u)),
            G=lambda u, m, Du, Dm, D2u, x, t: np.trace(D2u, axis1=0, axis2=1) ** 2,
            diffusion_u=np.eye(1), diffusion_m=np.eye(1),
            L_F=lambda M: 1.0, L_G=lambda M: 1e6,
        )
        report = validate_assumptions(model, 2.0, samples=120, seed=1)
        assert any("affine" in f for f in report.flags)

    def test_sample_floor(self):
        with pytest.raises(ValueError, match="100"):
            validate_assumptions(quadratic_mfg_model(1), 2.0, samples=50)
