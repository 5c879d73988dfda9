import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from burgers_control.control import (
    ControlSpec,
    VerificationAccumulator,
    admissible_projection,
    chi,
    cost_functional,
    cost_samples,
    dpp_check,
    grid_refinement_budget,
    optimality_comparison,
    verification_identity_check,
)
from burgers_control.hjb import FeedbackPolicy, fd_hjb_solve
from burgers_control.integrator import IntegratorConfig
from burgers_control.noise import CovarianceOperator, LevyModel, NoiseModel
from burgers_control.spectral import SpectralField, unit_mode, zero_field

LAM1 = math.pi**2
RHO1 = LAM1**-0.75


def m1_cfg(T=0.25):
    return IntegratorConfig(m=1, dt=1e-3, T=T)


@pytest.fixture(scope="module")
def fd_grid():
    noise = NoiseModel(
        covariance=CovarianceOperator.a_power(0.75),
        levy=LevyModel(atoms=((1.0, 0.5), (-1.0, 0.5)), sigma_j=0.3),
    )
    grid = fd_hjb_solve(m1_cfg(), noise, rho=0.5, R=2.0, n_pts=201, n_slices=20)
    return grid, noise


class TestAdmissibleProjection:
    def test_zero_fixed(self):
        assert admissible_projection(zero_field(2), 0.5).norm() == 0.0

    def test_scaling_to_radius(self):
        u = SpectralField(np.array([2.0, 0.0]))
        out = admissible_projection(u, 1.0)
        assert out.norm() == pytest.approx(1.0, rel=1e-14)
        assert out.coeffs[0] > 0

    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=4), st.floats(0.01, 3))
    @settings(max_examples=100)
    def test_idempotent_property(self, coeffs, rho):
        u = SpectralField(np.asarray(coeffs))
        once = admissible_projection(u, rho)
        twice = admissible_projection(once, rho)
        assert np.allclose(once.coeffs, twice.coeffs, rtol=0, atol=1e-15)
        assert once.norm() <= rho * (1 + 1e-12)


class TestChi:
    def test_reference_values(self):
        assert chi(-1.0) == 0.0
        assert chi(0.0) == 0.0
        assert chi(2.0) == 4.0

    def test_continuous_and_flat_at_zero(self):
        eps = 1e-8
        assert chi(eps) <= 2 * eps**2
        assert chi(-eps) == 0.0

    @given(st.floats(-10, 10))
    @settings(max_examples=200)
    def test_properties(self, a):
        v = chi(a)
        assert v >= 0.0
        if a >= 0:
            assert v == a * a


class TestCostFunctional:
    def test_deterministic_zero(self):
        cfg = m1_cfg(T=0.05)
        rep = cost_functional(
            zero_field(1), ControlSpec.zero(), cfg, NoiseModel(), n_paths=8, seed=0
        )
        assert rep.j == 0.0
        assert rep.enstrophy == rep.control_energy == rep.terminal == 0.0

    def test_ou_oracle(self, gaussian_only):
        # B off, U = 0, m = 1: J = int lam E[X^2] dt + E[X(T)^2]
        cfg = IntegratorConfig(m=1, dt=1e-3, T=0.25, include_nonlinearity=False)
        x0 = 1.0
        rep = cost_functional(
            unit_mode(1), ControlSpec.zero(), cfg, gaussian_only, n_paths=20_000, seed=1
        )
        second_moment = lambda t: math.exp(-2 * LAM1 * t) * x0**2 + RHO1 * (
            1 - math.exp(-2 * LAM1 * t)
        ) / (2 * LAM1)
        run, _ = quad(lambda t: LAM1 * second_moment(t), 0, 0.25)
        exact = run + second_moment(0.25)
        assert abs(rep.j - exact) <= 3 * rep.stderr + 0.01 * exact

    def test_parts_nonnegative_and_sum(self, standard_noise):
        cfg = m1_cfg(T=0.1)
        rep = cost_functional(
            unit_mode(1), ControlSpec.constant(SpectralField(np.array([0.3])), 0.5),
            cfg, standard_noise, n_paths=200, seed=2,
        )
        assert rep.enstrophy >= 0 and rep.control_energy >= 0 and rep.terminal >= 0
        assert rep.j == pytest.approx(rep.enstrophy + rep.control_energy + rep.terminal, rel=1e-12)

    def test_zero_field_control_equals_zero_kind(self, standard_noise):
        cfg = m1_cfg(T=0.1)
        a = cost_functional(unit_mode(1), ControlSpec.zero(0.5), cfg, standard_noise, 500, seed=3)
        b = cost_functional(
            unit_mode(1), ControlSpec.constant(zero_field(1), 0.5), cfg, standard_noise, 500, seed=3
        )
        assert a.j == b.j

    def test_inadmissible_constant_is_clipped(self, standard_noise):
        cfg = m1_cfg(T=0.05)
        spec = ControlSpec.constant(SpectralField(np.array([10.0])), rho=0.5)
        realized = spec.realize(cfg)
        assert np.linalg.norm(realized.coeffs) == pytest.approx(0.5, rel=1e-12)

    def test_regularized_cost_bounded_by_raw(self, standard_noise):
        cfg = m1_cfg(T=0.1)
        raw = cost_functional(unit_mode(1), ControlSpec.zero(), cfg, standard_noise, 500, seed=4)
        reg = cost_functional(
            unit_mode(1), ControlSpec.zero(), cfg, standard_noise, 500, seed=4, regularized=True
        )
        assert reg.j <= raw.j + 1e-12


class TestVerificationIdentity:
    def test_uncontrolled_reduces_to_value(self, fd_grid):
        # rho = 0 limit of the identity with U = 0: J = v(T, x); here the
        # rho = 0.5 grid still applies with U = 0 since the quadratic term
        # keeps the correction, so solve a rho = 0 grid instead
        grid, noise = fd_grid
        cfg = m1_cfg()
        grid0 = fd_hjb_solve(cfg, noise, rho=0.0, R=2.0, n_pts=201, n_slices=20)
        rep = verification_identity_check(
            SpectralField(np.array([0.5])), ControlSpec.zero(0.0), grid0, cfg, noise,
            n_paths=4000, seed=5,
        )
        # with rho=0: chi(||p||) = ||p||^2 cancels ||0 + p||^2 pathwise
        assert abs(rep.rhs - rep.v_at_x) <= 1e-10
        assert rep.passed(rel=0.05)

    def test_feedback_integrand_vanishes(self, fd_grid):
        grid, noise = fd_grid
        cfg = m1_cfg()
        x = SpectralField(np.array([0.5]))
        spec = ControlSpec.feedback(FeedbackPolicy(grid, 0.5))
        out = cost_samples(
            x, spec, cfg, noise, n_paths=64, seed=6,
            extra_accumulators=((VerificationAccumulator, {"grid": grid, "rho": 0.5, "T": cfg.T}),),
        )
        assert np.max(np.abs(out["verify_quad"])) <= 1e-10

    def test_constant_control_gap_within_tolerance(self, fd_grid):
        grid, noise = fd_grid
        cfg = m1_cfg()
        x = SpectralField(np.array([0.5]))
        spec = ControlSpec.constant(SpectralField(np.array([0.25])), 0.5)
        rep = verification_identity_check(x, spec, grid, cfg, noise, n_paths=5000, seed=7)
        assert rep.reliable
        assert rep.passed(), f"gap {rep.gap} vs tol {rep.tolerance()}"

    def test_escape_fraction_reported(self, fd_grid):
        grid, noise = fd_grid
        cfg = m1_cfg(T=0.05)
        rep = verification_identity_check(
            SpectralField(np.array([1.9])), ControlSpec.zero(0.5), grid, cfg, noise,
            n_paths=200, seed=8,
        )
        assert 0.0 <= rep.escape_fraction <= 1.0


class TestGridBudget:
    def test_refinement_budget_small_for_m1(self, fd_grid):
        _, noise = fd_grid
        cfg = m1_cfg()
        budget = grid_refinement_budget(
            lambda n: fd_hjb_solve(cfg, noise, 0.5, 2.0, n, n_slices=10),
            coarse_pts=101,
            fine_pts=201,
        )
        assert 0.0 <= budget <= 0.02


class TestDpp:
    def test_zero_radius_family_degenerates_to_equality(self, standard_noise):
        cfg = m1_cfg()
        grid = fd_hjb_solve(cfg, standard_noise, rho=0.0, R=2.0, n_pts=201, n_slices=20)
        rep = dpp_check(
            SpectralField(np.array([0.5])), 0.0, 0.125, grid, cfg, standard_noise,
            n_paths=4000, seed=9,
        )
        assert len(rep.family) == 1
        assert rep.inequality_ok
        # equality within MC + discretization slack
        assert abs(rep.v_tx - rep.family_min) <= 0.05 * abs(rep.v_tx) + 3 * rep.family[0][2] + 0.01

    def test_short_interval_recovers_value(self, fd_grid):
        grid, noise = fd_grid
        cfg = m1_cfg()
        rep = dpp_check(
            SpectralField(np.array([0.5])), 0.0, 3 * cfg.dt, grid, cfg, noise,
            n_paths=2000, seed=10,
        )
        assert abs(rep.feedback_value - rep.v_tx) <= 0.05 * abs(rep.v_tx) + 3 * rep.feedback_stderr + 0.02

    def test_m1_family_inequality_and_attainment(self, fd_grid):
        grid, noise = fd_grid
        cfg = m1_cfg()
        rep = dpp_check(
            SpectralField(np.array([0.8])), 0.05, 0.15, grid, cfg, noise,
            n_paths=4000, seed=11,
        )
        assert len(rep.family) == 9
        assert rep.inequality_ok
        assert rep.attainment_ok

    def test_rejects_bad_interval(self, fd_grid):
        grid, noise = fd_grid
        with pytest.raises(ValueError):
            dpp_check(unit_mode(1), 0.2, 0.1, grid, m1_cfg(), noise, 8, seed=0)


class TestOptimality:
    def test_feedback_wins_or_ties(self, fd_grid):
        grid, noise = fd_grid
        cfg = m1_cfg()
        rho = 0.5
        candidates = {
            "zero": ControlSpec.zero(rho),
            "push_up": ControlSpec.constant(SpectralField(np.array([rho])), rho),
            "push_down": ControlSpec.constant(SpectralField(np.array([-rho])), rho),
        }
        rep = optimality_comparison(
            SpectralField(np.array([0.8])), grid, candidates, cfg, noise, n_paths=4000, seed=12
        )
        assert rep.feedback_optimal
        labels = [r[0] for r in rep.rows]
        assert set(labels) == {"zero", "push_up", "push_down", "feedback"}

    def test_zero_radius_all_equal(self, standard_noise):
        cfg = m1_cfg(T=0.1)
        grid = fd_hjb_solve(cfg, standard_noise, rho=0.0, R=2.0, n_pts=101, n_slices=5)
        candidates = {"zero": ControlSpec.zero(0.0)}
        rep = optimality_comparison(
            unit_mode(1), grid, candidates, cfg, standard_noise, n_paths=500, seed=13
        )
        js = {label: j for label, j, _ in rep.rows}
        assert js["zero"] == js["feedback"]

    def test_duplicate_candidate_identical_cost(self, fd_grid):
        grid, noise = fd_grid
        cfg = m1_cfg(T=0.1)
        candidates = {
            "a": ControlSpec.constant(SpectralField(np.array([0.2])), 0.5),
            "b": ControlSpec.constant(SpectralField(np.array([0.2])), 0.5),
        }
        rep = optimality_comparison(
            unit_mode(1), grid, candidates, cfg, noise, n_paths=300, seed=14
        )
        js = {label: j for label, j, _ in rep.rows}
        assert js["a"] == js["b"]
