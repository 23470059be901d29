from __future__ import annotations

import numpy as np
import pytest

from fbmfg.torus_grid import (
    Field,
    SpaceTimeField,
    TorusGrid,
    gradient,
    hessian,
    norm_C1,
    norm_C10,
    norm_C2,
    norm_W21p,
    time_derivative,
)

TWO_PI = 2.0 * np.pi


def grid1d(n=64, nt=8, T=1.0):
    return TorusGrid(dim=1, n=n, nt=nt, T=T)


def grid2d(n=32, nt=8, T=1.0):
    return TorusGrid(dim=2, n=n, nt=nt, T=T)


class TestTorusGrid:
    def test_spacing_and_shape(self):
        g = grid1d(n=64)
        assert g.h == 1.0 / 64
        assert g.shape == (64,)
        assert grid2d(n=32).shape == (32, 32)

    def test_time_axis(self):
        g = grid1d(nt=10, T=0.5)
        t = g.times()
        assert t[0] == 0.0
        assert abs(g.dt * g.nt - g.T) <= np.finfo(float).eps * g.T
        assert len(t) == 11

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(dim=3, n=16, nt=4, T=1.0),
            dict(dim=1, n=4, nt=4, T=1.0),
            dict(dim=1, n=16, nt=1, T=1.0),
            dict(dim=1, n=16, nt=4, T=-1.0),
        ],
    )
    def test_rejects_bad_parameters(self, kwargs):
        with pytest.raises(ValueError):
            TorusGrid(**kwargs)

    def test_field_shape_validation(self):
        g = grid1d(n=16)
        with pytest.raises(ValueError):
            Field(g, np.zeros(8))
        with pytest.raises(ValueError):
            SpaceTimeField(g, np.zeros((3, 16)))


class TestGradient:
    def test_constant_is_flat(self):
        f = Field.full(grid1d(), 3.7)
        assert np.all(gradient(f) == 0.0)

    def test_cosine_matches_analytic_derivative(self):
        # Taylor remainder of the centered stencil: |error| <= (2*pi)^3 h^2 / 6.
        g = grid1d(n=64)
        f = Field.from_function(g, lambda x: np.cos(TWO_PI * x))
        exact = -TWO_PI * np.sin(TWO_PI * g.coordinates()[0])
        err = np.max(np.abs(gradient(f)[0] - exact))
        assert err <= TWO_PI**3 * g.h**2 / 6.0

    def test_axis_independence_in_2d(self):
        g = grid2d()
        f = Field.from_function(g, lambda x, y: np.sin(TWO_PI * x))
        grad = gradient(f)
        assert np.all(grad[1] == 0.0)

    def test_linearity(self):
        g = grid2d(n=16)
        rng = np.random.default_rng(7)
        a = rng.normal(size=g.shape)
        b = rng.normal(size=g.shape)
        lhs = gradient(Field(g, 2.0 * a - 3.0 * b))
        rhs = 2.0 * gradient(Field(g, a)) - 3.0 * gradient(Field(g, b))
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-13)


class TestHessian:
    def test_constant_is_zero_matrix(self):
        assert np.all(hessian(Field.full(grid2d(), -2.0)) == 0.0)

    def test_1d_second_derivative(self):
        g = grid1d(n=64)
        f = Field.from_function(g, lambda x: np.cos(TWO_PI * x))
        exact = -TWO_PI**2 * np.cos(TWO_PI * g.coordinates()[0])
        err = np.max(np.abs(hessian(f)[0, 0] - exact))
        assert err <= 5.0 * g.h**2 * TWO_PI**4  # O(h^2) with a generous constant

    def test_mixed_derivative(self):
        g = grid2d(n=64)
        f = Field.from_function(g, lambda x, y: np.sin(TWO_PI * x) * np.sin(TWO_PI * y))
        x, y = g.coordinates()
        exact = TWO_PI**2 * np.cos(TWO_PI * x) * np.cos(TWO_PI * y)
        err = np.max(np.abs(hessian(f)[0, 1] - exact))
        assert err <= 5.0 * g.h**2 * TWO_PI**4

    def test_symmetry_exact(self):
        g = grid2d(n=16)
        v = np.random.default_rng(3).normal(size=g.shape)
        H = hessian(Field(g, v))
        assert np.all(H[0, 1] == H[1, 0])

    def test_refinement_factor(self):
        # Doubling n should shrink the max error by at least 3.5 (asymptotically 4).
        def max_err(n):
            g = grid1d(n=n)
            f = Field.from_function(g, lambda x: np.sin(TWO_PI * x))
            exact_g = TWO_PI * np.cos(TWO_PI * g.coordinates()[0])
            exact_h = -TWO_PI**2 * np.sin(TWO_PI * g.coordinates()[0])
            return (
                np.max(np.abs(gradient(f)[0] - exact_g)),
                np.max(np.abs(hessian(f)[0, 0] - exact_h)),
            )

        for n in (32, 64):
            coarse = max_err(n)
            fine = max_err(2 * n)
            assert coarse[0] / fine[0] >= 3.5
            assert coarse[1] / fine[1] >= 3.5


class TestNorms:
    def test_zero_field(self):
        g = grid1d(n=16, nt=4)
        z = SpaceTimeField.zeros(g)
        assert norm_C10(z) == 0.0
        assert norm_W21p(z, 3.0) == 0.0

    def test_constant_field_sup_norm(self):
        g = grid1d(n=16, nt=4)
        f = SpaceTimeField(g, np.full((g.nt + 1, g.n), 5.0))
        assert norm_C10(f) == 5.0

    def test_cosine_sup_norms(self):
        g = grid1d(n=64, nt=4)
        f = SpaceTimeField.from_function(g, lambda x, t: np.cos(TWO_PI * x))
        # sup|f| = 1 on the grid; sup|Df| = 2*pi up to the stencil's O(h^2) bias.
        assert abs(norm_C10(f) - (1.0 + TWO_PI)) <= TWO_PI**3 * g.h**2 / 6.0

    def test_w21p_of_unit_constant_is_one(self):
        g = grid1d(n=16, nt=8, T=1.0)
        f = SpaceTimeField(g, np.ones((g.nt + 1, g.n)))
        assert norm_W21p(f, 4.0) == pytest.approx(1.0, abs=1e-13)

    def test_w21p_rejects_small_exponent(self):
        g = grid1d(n=16, nt=4)
        with pytest.raises(ValueError):
            norm_W21p(SpaceTimeField.zeros(g), 1.5)

    def test_w21p_horizon_scaling_for_constant_field(self):
        # For a constant-in-time bounded field only |f|^p contributes, so the
        # norm over [0, T] is exactly T^(1/p); the log-log slope over several
        # horizons must come out as 1/p.
        p = 4.0
        norms, horizons = [], [0.25, 0.5, 1.0]
        for T in horizons:
            g = grid1d(n=16, nt=16, T=T)
            f = SpaceTimeField(g, np.full((g.nt + 1, g.n), 1.0))
            norms.append(norm_W21p(f, p))
        slope = np.polyfit(np.log(horizons), np.log(norms), 1)[0]
        assert slope == pytest.approx(1.0 / p, abs=1e-10)

    def test_homogeneity_and_triangle(self):
        g = grid1d(n=32, nt=6, T=0.5)
        rng = np.random.default_rng(11)
        for _ in range(5):
            a = SpaceTimeField(g, rng.normal(size=(g.nt + 1, g.n)))
            b = SpaceTimeField(g, rng.normal(size=(g.nt + 1, g.n)))
            c = rng.normal()
            for norm in (norm_C10, lambda f: norm_W21p(f, 4.0)):
                na, nb = norm(a), norm(b)
                nsum = norm(SpaceTimeField(g, a.values + b.values))
                assert nsum <= na + nb + 1e-12 * (na + nb)
                assert norm(SpaceTimeField(g, c * a.values)) == pytest.approx(
                    abs(c) * na, rel=1e-12
                )

    def test_single_slice_norms(self):
        g = grid1d(n=64)
        f = Field.from_function(g, lambda x: np.cos(TWO_PI * x))
        assert abs(norm_C1(f) - (1.0 + TWO_PI)) <= 2e-2
        assert abs(norm_C2(f) - (1.0 + TWO_PI + TWO_PI**2)) <= 5e-2


class TestTimeDerivative:
    def test_linear_ramp(self):
        g = grid1d(n=16, nt=4, T=2.0)
        f = SpaceTimeField.from_function(g, lambda x, t: 3.0 * t + 0.0 * x)
        dtf = time_derivative(f)
        assert np.allclose(dtf, 3.0, rtol=0, atol=1e-12)

    def test_last_slice_uses_backward_difference(self):
        g = grid1d(n=8, nt=4, T=1.0)
        vals = np.zeros((g.nt + 1, g.n))
        vals[-1] = 1.0
        dtf = time_derivative(SpaceTimeField(g, vals))
        assert np.allclose(dtf[-1], 1.0 / g.dt)
        assert np.allclose(dtf[-2], 1.0 / g.dt)
        assert np.all(dtf[:-2] == 0.0)
