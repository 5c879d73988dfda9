import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burgers_control.spectral import (
    SpectralField,
    dealiased_intervals,
    eigen_pair,
    eigenvalues,
    f_m,
    f_m_gradient,
    fractional_norm,
    g_m_prime,
    g_m_second,
    g_m_value,
    grid_points,
    nonlinearity_B,
    phi_m,
    phi_m_gradient,
    project,
    regularized_B_m,
    transform_forward,
    transform_inverse,
    trilinear_b,
    unit_mode,
    zero_field,
)
from conftest import flat_field, smooth_field


class TestEigenPairs:
    def test_first_eigenvalue_is_pi_squared(self):
        lam, _ = eigen_pair(1)
        assert lam == pytest.approx(math.pi**2, rel=1e-15)

    def test_second_eigenvalue(self):
        lam, _ = eigen_pair(2)
        assert lam == pytest.approx(4 * math.pi**2, rel=1e-15)

    def test_eigenfunction_peak(self):
        _, e1 = eigen_pair(1)
        assert e1(0.5) == pytest.approx(math.sqrt(2), rel=1e-15)

    def test_rejects_nonpositive_mode(self):
        with pytest.raises(ValueError):
            eigen_pair(0)

    def test_eigenvalues_increasing(self):
        lam = eigenvalues(10)
        assert np.all(np.diff(lam) > 0)


class TestTransforms:
    def test_e1_sampled_gives_unit_coefficient(self):
        _, e1 = eigen_pair(1)
        xi = grid_points(64)
        field = transform_forward(e1(xi), m=4)
        assert field.coeffs == pytest.approx([1, 0, 0, 0], abs=1e-12)

    def test_zero_field_round_trip(self):
        vals = transform_inverse(zero_field(3), 63)
        assert np.all(vals == 0)
        assert transform_forward(vals, 3).norm() == 0

    def test_round_trip_identity(self, rng):
        for m in (3, 8, 16):
            u = flat_field(rng, m, 2.0)
            vals = transform_inverse(u, 127)
            back = transform_forward(vals, m)
            assert np.max(np.abs(back.coeffs - u.coeffs)) <= 1e-12 * max(u.norm(), 1)

    def test_parseval_against_grid_quadrature(self, rng):
        # independent oracle: trapezoid of u^2 on the grid (endpoints vanish)
        n_int = 128
        for _ in range(20):
            u = flat_field(rng, 8, 1.5)
            vals = transform_inverse(u, n_int - 1)
            quad = np.sum(vals**2) / n_int
            assert abs(quad - u.norm() ** 2) <= 1e-10 * max(u.norm() ** 2, 1e-12)

    def test_underresolved_grid_rejected(self):
        with pytest.raises(ValueError, match="resolution"):
            transform_forward(np.zeros(3), m=4)


class TestFractionalNorm:
    def test_single_mode_half_power(self):
        assert fractional_norm(unit_mode(1), 0.5) == pytest.approx(math.pi, rel=1e-14)

    def test_alpha_zero_is_l2(self, rng):
        u = flat_field(rng, 6)
        assert fractional_norm(u, 0.0) == pytest.approx(u.norm(), rel=1e-14)

    def test_interpolation_inequality(self, rng):
        # || A^s u || <= || A^s1 u ||^theta || A^s2 u ||^(1-theta)
        for _ in range(100):
            u = smooth_field(rng, 10, 2.0)
            s1, s2 = np.sort(rng.uniform(0.0, 1.0, 2))
            if s2 - s1 < 1e-3:
                continue
            theta = rng.uniform(0.05, 0.95)
            s = theta * s1 + (1 - theta) * s2
            lhs = fractional_norm(u, s)
            rhs = fractional_norm(u, s1) ** theta * fractional_norm(u, s2) ** (1 - theta)
            assert lhs <= rhs * (1 + 1e-12)


class TestNonlinearity:
    def test_zero_maps_to_zero(self):
        assert nonlinearity_B(zero_field(4)).norm() == 0

    def test_e1_quadrature_oracle(self):
        # (1/2) D_xi(2 sin^2(pi xi)) = pi sin(2 pi xi): project by trapezoid
        n_int = 256
        xi = grid_points(n_int)
        target = math.pi * np.sin(2 * math.pi * xi)
        oracle = np.array(
            [np.sum(target * math.sqrt(2) * np.sin(k * math.pi * xi)) / n_int for k in (1, 2, 3, 4)]
        )
        got = nonlinearity_B(unit_mode(1, 4)).coeffs
        assert got == pytest.approx(oracle, abs=1e-12)
        assert got[1] == pytest.approx(math.pi / math.sqrt(2), rel=1e-13)

    def test_skewness_raw(self, rng):
        for _ in range(100):
            u = flat_field(rng, 12, 2.0)
            b = nonlinearity_B(u)
            assert abs(b.dot(u)) <= 1e-10 * u.norm() ** 3

    def test_skewness_regularized(self, rng):
        for _ in range(100):
            u = smooth_field(rng, 12, 1.5)
            bm = regularized_B_m(u, 12)
            assert abs(bm.dot(u)) <= 1e-10 * max(u.norm() ** 3, 1e-9)

    def test_regularized_level_validation(self):
        with pytest.raises(ValueError):
            regularized_B_m(unit_mode(1), 0)


class TestGm:
    def test_g1_at_one(self):
        assert g_m_value(1.0, 1) == pytest.approx(0.5, rel=1e-15)

    def test_prime_vanishes_at_origin(self):
        for m in (1, 4, 16):
            assert g_m_prime(0.0, m) == 0.0

    def test_second_derivative_peak(self):
        # sup g_1'' = 2, attained at 0 (dense sample + symbolic value)
        x = np.linspace(-6, 6, 20001)
        vals = g_m_second(x, 1)
        assert vals.max() == pytest.approx(2.0, abs=1e-6)
        assert abs(x[np.argmax(vals)]) < 1e-3
        assert g_m_second(0.0, 1) == pytest.approx(2.0, rel=1e-15)

    def test_derivatives_match_finite_differences(self):
        xs = np.linspace(-3, 3, 41)
        eps = 1e-6
        for m in (1, 5):
            fd1 = (g_m_value(xs + eps, m) - g_m_value(xs - eps, m)) / (2 * eps)
            fd2 = (g_m_prime(xs + eps, m) - g_m_prime(xs - eps, m)) / (2 * eps)
            assert np.max(np.abs(fd1 - g_m_prime(xs, m))) < 1e-7
            assert np.max(np.abs(fd2 - g_m_second(xs, m))) < 1e-5

    @given(x=st.floats(-50, 50), m=st.integers(1, 32))
    @settings(max_examples=200)
    def test_bounds_property(self, x, m):
        g = g_m_value(x, m)
        assert 0.0 <= g <= min(x * x, m) + 1e-12
        assert g_m_second(x, m) <= 2.0 + 1e-12


class TestTrilinear:
    def test_self_pairing_vanishes(self, rng):
        for _ in range(100):
            u = flat_field(rng, 8, 2.0)
            assert abs(trilinear_b(u, u, u)) <= 1e-10 * u.norm() ** 3

    def test_antisymmetry_identity(self, rng):
        # b(u,u,v) = -b(u,v,u)/2 = b(v,u,u)
        for _ in range(50):
            u = flat_field(rng, 6, 1.5)
            v = flat_field(rng, 6, 1.5)
            scale = max(u.norm() ** 2 * v.norm(), 1e-12)
            lhs = trilinear_b(u, u, v)
            assert abs(lhs + 0.5 * trilinear_b(u, v, u)) <= 1e-10 * scale
            assert abs(lhs - trilinear_b(v, u, u)) <= 1e-10 * scale

    def test_single_mode_triple(self):
        e1 = unit_mode(1)
        assert abs(trilinear_b(e1, e1, e1)) < 1e-12

    def test_pairing_matches_nonlinearity(self, rng):
        # (B(u), v) = (u u', v) = b(u, u, v): coefficient dot vs quadrature
        u = flat_field(rng, 6, 1.2)
        v = flat_field(rng, 6, 1.2)
        b_uv = nonlinearity_B(u).dot(v)
        scale = max(1.0, u.norm() ** 2 * v.norm())
        assert b_uv == pytest.approx(trilinear_b(u, u, v), abs=1e-10 * scale)


class TestCostNonlinearities:
    def test_zero_values(self):
        z = zero_field(3)
        assert f_m(z, 3) == 0.0
        assert phi_m(z, 3) == 0.0

    def test_f1_at_e1(self):
        assert f_m(unit_mode(1), 1) == pytest.approx(0.5, rel=1e-15)

    def test_bounds(self, rng):
        for _ in range(50):
            u = flat_field(rng, 8, 2.0)
            lvl = 8
            assert phi_m(u, lvl) <= fractional_norm(u, 0.5) ** 2 + 1e-12
            assert f_m(u, lvl) <= min(u.norm() ** 2, lvl) + 1e-12

    def test_gradients_match_finite_differences(self, rng):
        u = flat_field(rng, 5, 1.3)
        eps = 1e-6
        for fn, grad in ((f_m, f_m_gradient), (phi_m, phi_m_gradient)):
            g = grad(u.coeffs[None, :], 5)[0]
            for k in range(5):
                up = u.coeffs.copy()
                um = u.coeffs.copy()
                up[k] += eps
                um[k] -= eps
                fd = (fn(SpectralField(up), 5) - fn(SpectralField(um), 5)) / (2 * eps)
                assert g[k] == pytest.approx(fd, abs=2e-6)


class TestProjection:
    def test_truncates_high_mode(self):
        assert project(unit_mode(3), 2).norm() == 0.0

    def test_idempotent(self, rng):
        u = flat_field(rng, 6)
        assert np.array_equal(project(u, 6).coeffs, u.coeffs)

    def test_norm_nonincreasing(self, rng):
        for _ in range(20):
            u = flat_field(rng, 9)
            assert project(u, 4).norm() <= u.norm() + 1e-15

    def test_enlarging_warns_and_returns_identity(self, rng):
        u = flat_field(rng, 3)
        with pytest.warns(UserWarning):
            out = project(u, 5)
        assert np.array_equal(out.coeffs, u.coeffs)


class TestDealiasing:
    def test_minimum_grid(self):
        assert dealiased_intervals(4) >= 2 * 4 + 2
        assert dealiased_intervals(100) >= 202
        # power of two
        n = dealiased_intervals(13)
        assert n & (n - 1) == 0

    @given(st.integers(1, 64))
    def test_power_of_two_and_capacity(self, m):
        n = dealiased_intervals(m)
        assert n & (n - 1) == 0 and n >= 2 * m + 2
