import math

import numpy as np
import pytest
from scipy.integrate import quad

from burgers_control.integrator import (
    BlockRequest,
    ConstantControl,
    DivergenceError,
    IntegratorConfig,
    StepDraws,
    energy_identity_report,
    mode_coefficients,
    moment_report,
    run_ensemble,
    simulate_paths,
    simulate_trajectory,
    step_controlled,
    step_first_variation,
    step_second_variation,
    step_uncontrolled,
)
from burgers_control.noise import CovarianceOperator, JumpEvent, LevyModel, NoiseModel
from burgers_control.spectral import SpectralField, unit_mode, zero_field

LAM1 = math.pi**2
LAM2 = 4 * math.pi**2


def ou_second_moment(t, x1, rho1, jump_l2_rate=0.0):
    """Mode-1 closed form: e^(-2 lam t) x^2 + (rho + jump rate)(1 - e^(-2 lam t))/(2 lam)."""
    decay = math.exp(-2 * LAM1 * t)
    return decay * x1**2 + (rho1 + jump_l2_rate) * (1 - decay) / (2 * LAM1)


def linear_cfg(m=1, dt=1e-3, T=0.25):
    return IntegratorConfig(m=m, dt=dt, T=T, include_nonlinearity=False)


class TestConfig:
    def test_step_count_adjusts_dt_downward(self):
        cfg = IntegratorConfig(m=1, dt=0.3, T=1.0)
        assert cfg.steps == 4
        assert cfg.dt_effective == pytest.approx(0.25)
        assert cfg.dt_effective <= cfg.dt

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            IntegratorConfig(m=0, dt=1e-3, T=1.0)
        with pytest.raises(ValueError):
            IntegratorConfig(m=1, dt=0.0, T=1.0)
        with pytest.raises(ValueError):
            IntegratorConfig(m=1, dt=2.0, T=1.0)


class TestLinearExactness:
    def test_one_step_moments_match_ou_closed_form(self, gaussian_only):
        # the scheme's per-mode mean factor and noise variance are exact
        cfg = linear_cfg(m=4)
        mc = mode_coefficients(cfg, gaussian_only)
        lam = mc.lam
        rho = gaussian_only.rho(4)
        dt = cfg.dt_effective
        exact_var = rho * (1 - np.exp(-2 * lam * dt)) / (2 * lam)
        got_var = mc.gauss_a**2 * dt + mc.gauss_s**2
        assert np.max(np.abs(got_var - exact_var)) <= 1e-12 * np.max(exact_var)
        assert np.max(np.abs(mc.decay - np.exp(-lam * dt))) <= 1e-15

    def test_zero_fixed_point(self):
        cfg = IntegratorConfig(m=3, dt=1e-3, T=0.05)
        noise = NoiseModel()
        summary, trajs = simulate_paths(cfg, noise, zero_field(3), n_paths=4, seed=0, n_record=1)
        assert summary.max_sup_norm == 0.0
        assert np.all(trajs[0].states == 0.0)

    def test_ou_second_moment_monte_carlo(self, gaussian_only):
        cfg = linear_cfg()
        req = BlockRequest(
            cfg=cfg, noise=gaussian_only, x0=unit_mode(1).coeffs, master_seed=3,
            snapshot_steps=(cfg.steps,),
        )
        out = run_ensemble(req, 20_000)
        sq = np.sum(out["snapshots"][:, 0, :] ** 2, axis=-1)
        exact = ou_second_moment(0.25, 1.0, LAM1**-0.75)
        stderr = sq.std(ddof=1) / math.sqrt(sq.size)
        assert abs(sq.mean() - exact) <= 3 * stderr

    def test_ou_with_jumps_second_moment(self, standard_cov):
        levy = LevyModel(atoms=((1.0, 0.5), (-1.0, 0.5)), sigma_j=0.3)
        noise = NoiseModel(covariance=standard_cov, levy=levy)
        cfg = linear_cfg()
        req = BlockRequest(
            cfg=cfg, noise=noise, x0=unit_mode(1).coeffs, master_seed=5,
            snapshot_steps=(cfg.steps,),
        )
        out = run_ensemble(req, 20_000)
        sq = np.sum(out["snapshots"][:, 0, :] ** 2, axis=-1)
        exact = ou_second_moment(0.25, 1.0, LAM1**-0.75, jump_l2_rate=0.09)
        stderr = sq.std(ddof=1) / math.sqrt(sq.size)
        assert abs(sq.mean() - exact) <= 3 * stderr


class TestControlledStepping:
    def test_zero_control_matches_uncontrolled(self, standard_noise):
        cfg = IntegratorConfig(m=4, dt=1e-3, T=0.05)
        a = simulate_trajectory(cfg, standard_noise, unit_mode(1, 4), seed=9)
        b = simulate_trajectory(
            cfg, standard_noise, unit_mode(1, 4), seed=9, control=np.zeros(4)
        )
        assert np.array_equal(a.states, b.states)

    def test_constant_control_linear_ode_oracle(self):
        # no noise, B off: X(t) = e^(-lam t) x + (U/lam)(1 - e^(-lam t))
        cfg = IntegratorConfig(m=1, dt=1e-4, T=0.25, include_nonlinearity=False)
        noise = NoiseModel()
        u = 1.0
        traj = simulate_trajectory(
            cfg, noise, unit_mode(1), seed=0, control=ConstantControl(np.array([u]))
        )
        t = 0.25
        exact = math.exp(-LAM1 * t) * 1.0 + (u / LAM1) * (1 - math.exp(-LAM1 * t))
        assert traj.states[-1, 0] == pytest.approx(exact, abs=1e-3)

    def test_superposition_when_linear(self):
        cfg = IntegratorConfig(m=2, dt=1e-3, T=0.1, include_nonlinearity=False)
        noise = NoiseModel()
        x1, x2 = unit_mode(1, 2), unit_mode(2, 2)
        u1, u2 = np.array([0.5, 0.0]), np.array([0.0, -0.3])
        t_a = simulate_trajectory(cfg, noise, x1, 0, control=ConstantControl(u1)).states
        t_b = simulate_trajectory(cfg, noise, x2, 0, control=ConstantControl(u2)).states
        t_ab = simulate_trajectory(
            cfg, noise, x1 + x2, 0, control=ConstantControl(u1 + u2)
        ).states
        assert np.max(np.abs(t_ab - (t_a + t_b))) < 1e-12

    def test_single_step_jump_decay(self, standard_cov):
        # hand check: one jump at tau adds exp(-lam (dt - tau)) z sigma profile
        levy = LevyModel(atoms=((1.0, 1.0),), sigma_j=0.5)
        noise = NoiseModel(covariance=None, levy=levy)
        cfg = IntegratorConfig(m=1, dt=0.01, T=0.01, include_nonlinearity=False)
        tau = 0.004
        ev = JumpEvent(time=tau, mark=1.0, field=SpectralField(levy.jump_field(1.0, 1)))
        draws = StepDraws(dbeta=np.zeros(1), resid=np.zeros(1), jumps=(ev,), t0=0.0)
        out = step_uncontrolled(zero_field(1), cfg, noise, draws)
        expected = math.exp(-LAM1 * (0.01 - tau)) * 0.5  # compensator: -dt*w*z*sig decayed
        expected -= math.exp(-LAM1 * 0.01) * 0.01 * 1.0 * 1.0 * 0.5
        assert out.coeffs[0] == pytest.approx(expected, rel=1e-12)

    def test_controlled_step_adds_decayed_control(self):
        cfg = IntegratorConfig(m=1, dt=0.01, T=0.01, include_nonlinearity=False)
        noise = NoiseModel()
        draws = StepDraws(dbeta=np.zeros(1), resid=np.zeros(1))
        base = step_uncontrolled(unit_mode(1), cfg, noise, draws)
        ctrl = step_controlled(unit_mode(1), unit_mode(1), cfg, noise, draws)
        assert ctrl.coeffs[0] - base.coeffs[0] == pytest.approx(
            math.exp(-LAM1 * 0.01) * 0.01, rel=1e-12
        )


class TestVariations:
    def test_heat_decay_on_zero_path(self):
        # Y == 0: g_m'(0) = 0, so eta(t) = e^(-At) h exactly
        cfg = IntegratorConfig(m=2, dt=1e-4, T=0.1)
        noise = NoiseModel()
        mc = mode_coefficients(cfg, noise)
        eta = unit_mode(1, 2)
        y = zero_field(2)
        for _ in range(cfg.steps):
            eta = step_first_variation(eta, y, cfg, mc)
        assert eta.coeffs[0] == pytest.approx(math.exp(-LAM1 * 0.1), abs=1e-3)
        assert eta.coeffs[1] == 0.0

    def test_zero_direction_stays_zero(self, standard_noise):
        cfg = IntegratorConfig(m=4, dt=1e-3, T=0.05)
        req = BlockRequest(
            cfg=cfg, noise=standard_noise, x0=unit_mode(1, 4).coeffs, master_seed=1,
            h0=np.zeros(4),
        )
        out = run_ensemble(req, 8)
        assert np.all(out["eta_terminal"] == 0.0)

    def test_linearity_in_direction(self, standard_noise):
        cfg = IntegratorConfig(m=4, dt=1e-3, T=0.05)
        outs = []
        for scale in (1.0, 2.5):
            req = BlockRequest(
                cfg=cfg, noise=standard_noise, x0=unit_mode(1, 4).coeffs, master_seed=2,
                h0=scale * unit_mode(1, 4).coeffs,
            )
            outs.append(run_ensemble(req, 8)["eta_terminal"])
        assert np.max(np.abs(outs[1] - 2.5 * outs[0])) < 1e-12

    def test_second_variation_zero_when_eta_zero(self, standard_noise):
        cfg = IntegratorConfig(m=4, dt=1e-3, T=0.05)
        req = BlockRequest(
            cfg=cfg, noise=standard_noise, x0=unit_mode(1, 4).coeffs, master_seed=3,
            h0=np.zeros(4), want_second=True,
        )
        out = run_ensemble(req, 8)
        assert np.all(out["zeta_terminal"] == 0.0)

    def test_second_variation_duhamel_oracle(self):
        # Y == 0, h = e_1: zeta_2(t) = sqrt(2) pi int_0^t e^(-lam2 (t-s)) e^(-2 lam1 s) ds
        cfg = IntegratorConfig(m=2, dt=1e-4, T=0.1)
        noise = NoiseModel()
        mc = mode_coefficients(cfg, noise)
        y = zero_field(2)
        eta = unit_mode(1, 2)
        zeta = zero_field(2)
        for _ in range(cfg.steps):
            new_zeta = step_second_variation(zeta, eta, y, cfg, mc)
            eta = step_first_variation(eta, y, cfg, mc)
            zeta = new_zeta
        oracle, _ = quad(lambda s: math.exp(-LAM2 * (0.1 - s)) * math.exp(-2 * LAM1 * s), 0, 0.1)
        oracle *= math.sqrt(2) * math.pi
        assert zeta.coeffs[1] == pytest.approx(oracle, abs=1e-3)
        assert zeta.coeffs[1] == pytest.approx(oracle, rel=2e-2)

    def test_second_variation_quadratic_scaling(self, standard_noise):
        cfg = IntegratorConfig(m=4, dt=1e-3, T=0.05)
        outs = []
        for scale in (1.0, 3.0):
            req = BlockRequest(
                cfg=cfg, noise=standard_noise, x0=unit_mode(1, 4).coeffs, master_seed=4,
                h0=scale * unit_mode(1, 4).coeffs, want_second=True,
            )
            outs.append(run_ensemble(req, 8)["zeta_terminal"])
        assert np.max(np.abs(outs[1] - 9.0 * outs[0])) < 1e-11


class TestVariationConsistency:
    def _flow(self, cfg, noise, x0, seed):
        return simulate_trajectory(cfg, noise, SpectralField(x0), seed=seed).states[-1]

    def test_first_variation_is_flow_derivative(self, standard_noise):
        cfg = IntegratorConfig(m=4, dt=1e-3, T=0.1)
        x0 = unit_mode(1, 4).coeffs * 0.8
        h = np.array([0.3, -0.2, 0.1, 0.05])
        req = BlockRequest(cfg=cfg, noise=standard_noise, x0=x0, master_seed=7, h0=h)
        eta_T = run_ensemble(req, 1)["eta_terminal"][0]
        errs = []
        deltas = [1e-2, 1e-3, 1e-4]
        for d in deltas:
            quot = (self._flow(cfg, standard_noise, x0 + d * h, 7) - self._flow(cfg, standard_noise, x0, 7)) / d
            errs.append(np.linalg.norm(quot - eta_T))
        slope = np.polyfit(np.log(deltas), np.log(errs), 1)[0]
        assert slope >= 0.8

    def test_second_variation_is_flow_second_derivative(self, standard_noise):
        cfg = IntegratorConfig(m=4, dt=1e-3, T=0.1)
        x0 = unit_mode(1, 4).coeffs * 0.8
        h = np.array([0.3, -0.2, 0.1, 0.05])
        req = BlockRequest(
            cfg=cfg, noise=standard_noise, x0=x0, master_seed=8, h0=h, want_second=True
        )
        zeta_T = run_ensemble(req, 1)["zeta_terminal"][0]
        errs = []
        deltas = [1e-1, 3e-2, 1e-2]
        base = self._flow(cfg, standard_noise, x0, 8)
        for d in deltas:
            plus = self._flow(cfg, standard_noise, x0 + d * h, 8)
            minus = self._flow(cfg, standard_noise, x0 - d * h, 8)
            errs.append(np.linalg.norm((plus - 2 * base + minus) / d**2 - zeta_T))
        slope = np.polyfit(np.log(deltas), np.log(errs), 1)[0]
        assert slope >= 0.8


class TestEnergyIdentity:
    def test_zero_everything(self):
        cfg = IntegratorConfig(m=2, dt=1e-3, T=0.05)
        rep = energy_identity_report(cfg, NoiseModel(), zero_field(2), 16, seed=0)
        assert rep.lhs == pytest.approx(0.0, abs=1e-15)
        assert rep.rhs == pytest.approx(0.0, abs=1e-15)

    def test_small_configuration(self, standard_noise):
        cfg = IntegratorConfig(m=4, dt=1e-3, T=0.1)
        rep = energy_identity_report(
            cfg, standard_noise, unit_mode(1, 4), n_paths=4000, seed=1, checkpoints=[0.05, 0.1]
        )
        tol = 0.02 + 3 * rep.stderr / rep.rhs
        assert np.all(rep.rel_error <= tol)

    def test_rhs_slope_decomposition(self, standard_noise):
        cfg = IntegratorConfig(m=8, dt=1e-3, T=0.1)
        rep = energy_identity_report(cfg, standard_noise, unit_mode(1, 8), 64, seed=2, checkpoints=[0.05, 0.1])
        slope = (rep.rhs[1] - rep.rhs[0]) / (rep.times[1] - rep.times[0])
        assert slope == pytest.approx(rep.trace_q + rep.jump_rate, rel=1e-12)
        assert rep.jump_rate == pytest.approx(0.09, rel=1e-12)


class TestDeterminismAndDivergence:
    def test_same_seed_bitwise_identical(self, standard_noise):
        cfg = IntegratorConfig(m=4, dt=1e-3, T=0.05)
        a = simulate_trajectory(cfg, standard_noise, unit_mode(1, 4), seed=11, path_index=3)
        b = simulate_trajectory(cfg, standard_noise, unit_mode(1, 4), seed=11, path_index=3)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.wiener, b.wiener)

    def test_trajectory_matches_ensemble_member(self, standard_noise):
        cfg = IntegratorConfig(m=4, dt=1e-3, T=0.05)
        req = BlockRequest(
            cfg=cfg, noise=standard_noise, x0=unit_mode(1, 4).coeffs, master_seed=11,
            snapshot_steps=(cfg.steps,),
        )
        out = run_ensemble(req, 8)
        traj = simulate_trajectory(cfg, standard_noise, unit_mode(1, 4), seed=11, path_index=5)
        assert np.array_equal(out["snapshots"][5, 0, :], traj.states[-1])

    def test_block_size_invariance(self, standard_noise):
        cfg = IntegratorConfig(m=4, dt=1e-3, T=0.05)
        req = BlockRequest(
            cfg=cfg, noise=standard_noise, x0=unit_mode(1, 4).coeffs, master_seed=13,
            snapshot_steps=(cfg.steps,),
        )
        a = run_ensemble(req, 100, block_size=7)
        b = run_ensemble(req, 100, block_size=64)
        assert np.array_equal(a["snapshots"], b["snapshots"])

    def test_divergence_reported_with_replay_info(self, standard_noise):
        cfg = IntegratorConfig(m=2, dt=1e-3, T=0.05)
        big = SpectralField(np.array([2.0e6, 0.0]))
        with pytest.raises(DivergenceError) as exc:
            simulate_paths(cfg, standard_noise, big, n_paths=4, seed=21)
        assert exc.value.seed == 21
        assert exc.value.path_index >= 0
        assert "seed" in str(exc.value)


class TestMomentReport:
    def test_deterministic_zero_case(self):
        cfg = IntegratorConfig(m=2, dt=1e-3, T=0.05)
        rep = moment_report(cfg, NoiseModel(), [0.0], [2, 4], n_paths=8, seed=0)
        assert rep.lhs[2][0] == 0.0
        assert rep.lhs[4][0] == 0.0
        assert rep.exp_ratios[0] == pytest.approx(1.0, rel=1e-12)

    def test_p2_linear_case_matches_ou_scale(self, gaussian_only):
        # with B off, E sup ||Y||^2 should sit near the OU scale: bounded by
        # x^2 + equilibrium variance within a small multiple
        cfg = linear_cfg(T=0.1)
        rep = moment_report(cfg, gaussian_only, [1.0], [2], n_paths=4000, seed=3)
        rho1 = LAM1**-0.75
        upper = 1.0 + 4 * rho1 / (2 * LAM1) + 0.5
        assert rep.lhs[2][0] <= upper
        assert rep.lhs[2][0] >= 1.0  # sup includes the initial norm

    def test_rejects_small_p(self, gaussian_only):
        cfg = linear_cfg(T=0.05)
        with pytest.raises(ValueError):
            moment_report(cfg, gaussian_only, [0.0], [1], n_paths=4, seed=0)
