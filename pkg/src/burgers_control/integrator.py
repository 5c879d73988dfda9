"""Exponential-Euler time stepping for the Galerkin state equation, the first
and second variation equations, path ensembles, and the energy/moment
diagnostics.

Per mode the linear part is integrated exactly: the Gaussian update samples
the Ornstein-Uhlenbeck stochastic convolution jointly with the standardized
Wiener increment that is stored for the probabilistic-gradient coupling, so
linear statistics are exact while the pathwise Wiener/state correlation stays
faithful.  Jumps are placed inside the step and decayed by the remaining
semigroup factor; the compensator enters as a deterministic per-step drift.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .noise import JumpEvent, NoiseModel
from .rng import GAUSSIAN_STREAM, JUMP_STREAM, substream
from .spectral import (
    SpectralField,
    eigenvalues,
    dealiased_intervals,
    g_m_prime,
    g_m_second,
    g_m_value,
    project_derivative,
    v_norm_sq,
    values_on_grid,
)

_NOISE_FLOAT_BUDGET = 12_000_000  # per-block gaussian draw budget (~96 MB)


class DivergenceError(RuntimeError):
    """State norm crossed the blow-up threshold; carries replay information."""

    def __init__(self, seed: int, path_index: int, time: float, norm: float):
        self.seed = seed
        self.path_index = path_index
        self.time = time
        self.norm = norm
        super().__init__(
            f"state diverged: ||X|| = {norm:.3e} at t = {time:.6g} "
            f"(path {path_index}, master seed {seed})"
        )


@dataclass(frozen=True)
class IntegratorConfig:
    """Time-stepping parameters for the m-mode Galerkin system."""

    m: int
    dt: float
    T: float
    viscosity: float = 1.0
    include_nonlinearity: bool = True
    regularization: int | None = None  # g_m level; defaults to m
    blowup_threshold: float = 1.0e6
    record_noise: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("mode count must be >= 1")
        if not 0.0 < self.dt <= self.T:
            raise ValueError("need 0 < dt <= T")
        if self.viscosity <= 0:
            raise ValueError("viscosity must be positive")

    @property
    def steps(self) -> int:
        """T/dt rounded up so the step count is an integer."""
        return max(1, math.ceil(self.T / self.dt - 1e-12))

    @property
    def dt_effective(self) -> float:
        """dt adjusted downward so that steps * dt == T."""
        return self.T / self.steps

    @property
    def level(self) -> int:
        return self.m if self.regularization is None else self.regularization

    def with_horizon(self, T: float) -> "IntegratorConfig":
        return replace(self, T=T)


@dataclass(frozen=True)
class ModeCoefficients:
    """Per-mode exact linear-step coefficients (dt fixed)."""

    dt: float
    lam: np.ndarray
    lam_eff: np.ndarray  # viscosity * lam, the semigroup rate
    decay: np.ndarray  # exp(-lam_eff dt)
    rho: np.ndarray
    gauss_a: np.ndarray  # E[g db]/dt: couples OU noise to the stored increment
    gauss_s: np.ndarray  # residual std so the OU variance is exact
    comp: np.ndarray  # compensator increment (already times dt)
    sqrt_rho: np.ndarray


def mode_coefficients(cfg: IntegratorConfig, noise: NoiseModel) -> ModeCoefficients:
    dt = cfg.dt_effective
    lam = eigenvalues(cfg.m)
    lam_eff = cfg.viscosity * lam
    decay = np.exp(-lam_eff * dt)
    rho = noise.rho(cfg.m)
    var = rho * (1.0 - decay**2) / (2.0 * lam_eff)
    a = np.sqrt(rho) * (1.0 - decay) / (lam_eff * dt)
    s = np.sqrt(np.maximum(var - a * a * dt, 0.0))
    if noise.levy is not None:
        comp = -dt * noise.levy.compensator_mean() * noise.levy.profile_coeffs(cfg.m)
    else:
        comp = np.zeros(cfg.m)
    return ModeCoefficients(
        dt=dt,
        lam=lam,
        lam_eff=lam_eff,
        decay=decay,
        rho=rho,
        gauss_a=a,
        gauss_s=s,
        comp=comp,
        sqrt_rho=np.sqrt(rho),
    )


# ---------------------------------------------------------------------------
# nonlinear sources (batch; trailing axis = modes)
# ---------------------------------------------------------------------------

def integrator_grid(cfg: IntegratorConfig) -> int:
    """Pseudo-spectral grid for the time stepper: dealiased with a leaner
    floor than the identity-checking default (the g_m quadrature error at 64
    intervals is far below the scheme's O(dt) bias for desk-scale fields)."""
    return dealiased_intervals(cfg.m, minimum=64)


def _drift_from_values(yvals: np.ndarray, cfg: IntegratorConfig, n_int: int) -> np.ndarray:
    return 0.5 * project_derivative(g_m_value(yvals, cfg.level), cfg.m, n_int)


def drift_nonlinearity(states: np.ndarray, cfg: IntegratorConfig, n_int: int) -> np.ndarray:
    """B_m(Y) = (1/2) P_m D_xi g_m(Y).  Identically zero for m = 1 (the
    mode-1 projection of any field even about xi = 1/2 vanishes)."""
    if not cfg.include_nonlinearity or cfg.m == 1:
        return np.zeros_like(states)
    return _drift_from_values(values_on_grid(states, n_int), cfg, n_int)


def _variation_sources_from_values(
    yvals: np.ndarray,
    eta: np.ndarray,
    zeta: np.ndarray | None,
    cfg: IntegratorConfig,
    n_int: int,
) -> tuple[np.ndarray, np.ndarray | None]:
    gp = g_m_prime(yvals, cfg.level)
    evals = values_on_grid(eta, n_int)
    src_eta = 0.5 * project_derivative(gp * evals, cfg.m, n_int)
    src_zeta = None
    if zeta is not None:
        gpp = g_m_second(yvals, cfg.level)
        zvals = values_on_grid(zeta, n_int)
        src_zeta = 0.5 * project_derivative(gpp * evals**2 + gp * zvals, cfg.m, n_int)
    return src_eta, src_zeta


def variation_sources(
    states: np.ndarray,
    eta: np.ndarray,
    zeta: np.ndarray | None,
    cfg: IntegratorConfig,
    n_int: int,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Sources (1/2) P_m D_xi(g_m'(Y) eta) and, if zeta is given,
    (1/2) P_m D_xi(g_m''(Y) eta^2 + g_m'(Y) zeta)."""
    if not cfg.include_nonlinearity or cfg.m == 1:
        return np.zeros_like(eta), (np.zeros_like(zeta) if zeta is not None else None)
    yvals = values_on_grid(states, n_int)
    return _variation_sources_from_values(yvals, eta, zeta, cfg, n_int)


# ---------------------------------------------------------------------------
# single-step operations (field level), shared math with the block engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepDraws:
    """Noise of one step: standardized Wiener increment N(0, dt), the
    independent OU residual N(0, 1), and the jump events of the step."""

    dbeta: np.ndarray
    resid: np.ndarray
    jumps: tuple[JumpEvent, ...] = ()
    t0: float = 0.0


def _jump_sum(jumps: Sequence[JumpEvent], t0: float, mc: ModeCoefficients, m: int) -> np.ndarray:
    out = np.zeros(m)
    for ev in jumps:
        tau = ev.time - t0
        out += np.exp(-mc.lam_eff * (mc.dt - tau)) * ev.field.pad(m).coeffs
    return out


def step_controlled(
    x: SpectralField,
    u: SpectralField | None,
    cfg: IntegratorConfig,
    noise: NoiseModel,
    draws: StepDraws,
    mc: ModeCoefficients | None = None,
) -> SpectralField:
    """One exponential-Euler step of the controlled Galerkin state equation."""
    mc = mode_coefficients(cfg, noise) if mc is None else mc
    n_int = dealiased_intervals(cfg.m)
    drift = drift_nonlinearity(x.coeffs[None, :], cfg, n_int)[0]
    if u is not None:
        drift = drift + u.pad(cfg.m).coeffs
    new = mc.decay * (x.coeffs + mc.dt * drift + mc.comp)
    new = new + mc.gauss_a * draws.dbeta + mc.gauss_s * draws.resid
    new = new + _jump_sum(draws.jumps, draws.t0, mc, cfg.m)
    out = SpectralField(new)
    if out.norm() > cfg.blowup_threshold:
        raise DivergenceError(seed=-1, path_index=-1, time=draws.t0 + mc.dt, norm=out.norm())
    return out


def step_uncontrolled(
    y: SpectralField,
    cfg: IntegratorConfig,
    noise: NoiseModel,
    draws: StepDraws,
    mc: ModeCoefficients | None = None,
) -> SpectralField:
    """One step of the uncontrolled state equation."""
    return step_controlled(y, None, cfg, noise, draws, mc)


def step_first_variation(
    eta: SpectralField,
    y: SpectralField,
    cfg: IntegratorConfig,
    mc: ModeCoefficients,
) -> SpectralField:
    """One step of the first variation along the state y."""
    n_int = dealiased_intervals(cfg.m)
    src, _ = variation_sources(y.coeffs[None, :], eta.coeffs[None, :], None, cfg, n_int)
    return SpectralField(mc.decay * (eta.coeffs + mc.dt * src[0]))


def step_second_variation(
    zeta: SpectralField,
    eta: SpectralField,
    y: SpectralField,
    cfg: IntegratorConfig,
    mc: ModeCoefficients,
) -> SpectralField:
    """One step of the second variation along the state y and variation eta."""
    n_int = dealiased_intervals(cfg.m)
    _, src = variation_sources(
        y.coeffs[None, :], eta.coeffs[None, :], zeta.coeffs[None, :], cfg, n_int
    )
    return SpectralField(mc.decay * (zeta.coeffs + mc.dt * src[0]))


# ---------------------------------------------------------------------------
# controls
# ---------------------------------------------------------------------------

class ConstantControl:
    def __init__(self, coeffs: np.ndarray):
        self.coeffs = np.asarray(coeffs, dtype=float)

    def controls(self, t: float, states: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.coeffs, states.shape)


class OpenLoopControl:
    """Deterministic control sequence indexed by step."""

    def __init__(self, sequence: np.ndarray, dt: float):
        self.sequence = np.asarray(sequence, dtype=float)
        self.dt = dt

    def control_at_step(self, n: int, states: np.ndarray) -> np.ndarray:
        idx = min(n, self.sequence.shape[0] - 1)
        return np.broadcast_to(self.sequence[idx], states.shape)


def _eval_control(control, n: int, t: float, states: np.ndarray) -> np.ndarray | None:
    if control is None:
        return None
    if isinstance(control, np.ndarray):
        return np.broadcast_to(control, states.shape)
    if isinstance(control, SpectralField):
        return np.broadcast_to(control.coeffs, states.shape)
    if hasattr(control, "control_at_step"):
        return control.control_at_step(n, states)
    return control.controls(t, states)


# ---------------------------------------------------------------------------
# accumulators: per-path statistics gathered during a block run
# ---------------------------------------------------------------------------

class EnergyAccumulator:
    """Per-path ||Y(t)||^2 + 2 int_0^t ||Y||_1^2 at checkpoint step indices."""

    def __init__(self, checkpoint_steps: Sequence[int]):
        self.checkpoint_steps = tuple(checkpoint_steps)

    def setup(self, shape, dt):
        self.dt = dt
        self.integral = np.zeros(shape[:-1])
        self.records = {}

    def at_step(self, n, t, states, controls):
        if n in self.checkpoint_steps:
            self.records[n] = np.sum(states**2, axis=-1) + 2.0 * self.integral
        self.integral = self.integral + self.dt * v_norm_sq(states)

    def at_terminal(self, n, t, states):
        if n in self.checkpoint_steps:
            self.records[n] = np.sum(states**2, axis=-1) + 2.0 * self.integral

    def result(self) -> dict:
        return {f"energy_lhs_{n}": v for n, v in self.records.items()}


class MomentAccumulator:
    """sup_t ||Y||, int ||Y||^(p-2) ||Y||_1^2 dt for each p, and int ||Y||_1^2 dt."""

    def __init__(self, p_list: Sequence[int]):
        self.p_list = tuple(p_list)

    def setup(self, shape, dt):
        self.dt = dt
        base = shape[:-1]
        self.sup = np.zeros(base)
        self.h1_int = np.zeros(base)
        self.p_int = {p: np.zeros(base) for p in self.p_list}

    def at_step(self, n, t, states, controls):
        nrm = np.sqrt(np.sum(states**2, axis=-1))
        np.maximum(self.sup, nrm, out=self.sup)
        h1 = v_norm_sq(states)
        self.h1_int += self.dt * h1
        for p in self.p_list:
            self.p_int[p] += self.dt * nrm ** (p - 2) * h1

    def at_terminal(self, n, t, states):
        nrm = np.sqrt(np.sum(states**2, axis=-1))
        np.maximum(self.sup, nrm, out=self.sup)
        self.terminal_norm = nrm

    def result(self) -> dict:
        out = {"sup_norm": self.sup, "h1_integral": self.h1_int, "terminal_norm": self.terminal_norm}
        for p in self.p_list:
            out[f"weighted_h1_p{p}"] = self.p_int[p]
        return out


class RunningCostAccumulator:
    """int (running cost + 0.5 ||U||^2) dt with either the raw enstrophy
    ||X||_1^2 or its bounded regularization phi_m as the running cost."""

    def __init__(self, level: int, regularized: bool):
        self.level = level
        self.regularized = regularized

    def setup(self, shape, dt):
        self.dt = dt
        base = shape[:-1]
        self.enstrophy = np.zeros(base)
        self.control_energy = np.zeros(base)

    def at_step(self, n, t, states, controls):
        if self.regularized:
            h1 = v_norm_sq(states)
            l2 = np.sum(states**2, axis=-1)
            run = self.level * h1 / (self.level + l2)
        else:
            run = v_norm_sq(states)
        self.enstrophy += self.dt * run
        if controls is not None:
            self.control_energy += 0.5 * self.dt * np.sum(controls**2, axis=-1)

    def at_terminal(self, n, t, states):
        l2 = np.sum(states**2, axis=-1)
        if self.regularized:
            self.terminal = self.level * l2 / (self.level + l2)
        else:
            self.terminal = l2

    def result(self) -> dict:
        return {
            "cost_enstrophy": self.enstrophy,
            "cost_control": self.control_energy,
            "cost_terminal": self.terminal,
        }


# ---------------------------------------------------------------------------
# block engine
# ---------------------------------------------------------------------------

@dataclass
class BlockRequest:
    """Everything a worker needs to simulate paths [lo, hi) deterministically."""

    cfg: IntegratorConfig
    noise: NoiseModel
    x0: np.ndarray  # (m,) or (n_x0, m): initial conditions sharing the noise
    master_seed: int
    control: object | None = None
    h0: np.ndarray | None = None  # first-variation direction
    want_second: bool = False
    want_bel: bool = False
    snapshot_steps: tuple[int, ...] = ()
    accumulators: tuple[tuple[type, dict], ...] = ()
    antithetic: bool = False
    record_full: bool = False

    def run(self, lo: int, hi: int) -> dict:
        return _simulate_block(self, lo, hi)


def _draw_block_noise(req: BlockRequest, lo: int, hi: int):
    cfg, noise = req.cfg, req.noise
    steps, m = cfg.steps, cfg.m
    dt = cfg.dt_effective
    n = hi - lo
    gauss = np.empty((n, steps, m, 2))
    for i, p in enumerate(range(lo, hi)):
        base = p // 2 if req.antithetic else p
        g = substream(req.master_seed, GAUSSIAN_STREAM, base).standard_normal((steps, m, 2))
        if req.antithetic and p % 2 == 1:
            g = -g
        gauss[i] = g
    gauss[..., 0] *= math.sqrt(dt)  # standardized increments N(0, dt)

    jp_path = []
    jp_step = []
    jp_tau = []
    jp_z = []
    levy = noise.levy
    if levy is not None and levy.total_rate > 0:
        lam_tot = levy.total_rate
        probs = levy.weights / lam_tot
        for i, p in enumerate(range(lo, hi)):
            base = p // 2 if req.antithetic else p
            rng = substream(req.master_seed, JUMP_STREAM, base)
            counts = rng.poisson(lam_tot * dt, steps)
            k = int(counts.sum())
            if k == 0:
                continue
            taus = rng.random(k) * dt
            marks = levy.marks[rng.choice(len(levy.atoms), size=k, p=probs)]
            jp_path.append(np.repeat(i, k))
            jp_step.append(np.repeat(np.arange(steps), counts))
            jp_tau.append(taus)
            jp_z.append(marks)
    if jp_path:
        jp_path = np.concatenate(jp_path)
        jp_step = np.concatenate(jp_step)
        jp_tau = np.concatenate(jp_tau)
        jp_z = np.concatenate(jp_z)
        order = np.argsort(jp_step, kind="stable")
        jp_path, jp_step, jp_tau, jp_z = (a[order] for a in (jp_path, jp_step, jp_tau, jp_z))
    else:
        jp_path = np.empty(0, dtype=int)
        jp_step = np.empty(0, dtype=int)
        jp_tau = np.empty(0)
        jp_z = np.empty(0)
    return gauss, (jp_path, jp_step, jp_tau, jp_z)


def _simulate_block(req: BlockRequest, lo: int, hi: int) -> dict:
    cfg, noise = req.cfg, req.noise
    steps, m = cfg.steps, cfg.m
    dt = cfg.dt_effective
    mc = mode_coefficients(cfg, noise)
    n_int = integrator_grid(cfg)
    n = hi - lo

    x0 = np.asarray(req.x0, dtype=float)
    batched_x0 = x0.ndim == 2
    if batched_x0:
        states = np.broadcast_to(x0, (n,) + x0.shape).copy()  # (n, n_x0, m)
    else:
        states = np.broadcast_to(x0, (n, m)).copy()
    shape = states.shape

    gauss, (jp_path, jp_step, jp_tau, jp_z) = _draw_block_noise(req, lo, hi)
    step_starts = np.searchsorted(jp_step, np.arange(steps + 1))
    profile = noise.levy.profile_coeffs(m) if noise.levy is not None else None
    sigma_j = noise.levy.sigma_j if noise.levy is not None else 0.0

    eta = zeta = None
    if req.h0 is not None:
        eta = np.broadcast_to(np.asarray(req.h0, dtype=float), shape).copy()
        if req.want_second:
            zeta = np.zeros(shape)
    w_eta = np.zeros(shape[:-1]) if req.want_bel else None
    w_zeta = np.zeros(shape[:-1]) if (req.want_bel and req.want_second) else None

    accs = [cls(**kwargs) for cls, kwargs in req.accumulators]
    for acc in accs:
        acc.setup(shape, dt)

    snapshots = {}
    if 0 in req.snapshot_steps:
        snapshots[0] = states.copy()

    full_states = full_controls = None
    jump_log = []
    if req.record_full:
        full_states = np.empty((n,) + shape[1:-1] + (steps + 1, m))
        full_states[..., 0, :] = states
        full_controls = np.zeros_like(full_states[..., :-1, :])

    for nstep in range(steps):
        t = nstep * dt
        controls = _eval_control(req.control, nstep, t, states)
        for acc in accs:
            acc.at_step(nstep, t, states, controls)

        if req.want_bel:
            db_over = gauss[:, nstep, :, 0] / mc.sqrt_rho  # (n, m)
            if batched_x0:
                w_eta += np.einsum("pxm,pm->px", eta, db_over)
                if w_zeta is not None:
                    w_zeta += np.einsum("pxm,pm->px", zeta, db_over)
            else:
                w_eta += np.sum(eta * db_over, axis=-1)
                if w_zeta is not None:
                    w_zeta += np.sum(zeta * db_over, axis=-1)

        nonlinear = cfg.include_nonlinearity and m > 1
        if nonlinear:
            yvals = values_on_grid(states, n_int)
            drift = _drift_from_values(yvals, cfg, n_int)
        else:
            drift = np.zeros_like(states)
        if controls is not None:
            drift = drift + controls
        if eta is not None:
            if nonlinear:
                src_eta, src_zeta = _variation_sources_from_values(yvals, eta, zeta, cfg, n_int)
            else:
                src_eta = np.zeros_like(eta)
                src_zeta = np.zeros_like(zeta) if zeta is not None else None

        new = mc.decay * (states + dt * drift + mc.comp)
        # gaussian part (broadcast over the x0 axis when present)
        db = gauss[:, nstep, :, 0]
        xi = gauss[:, nstep, :, 1]
        if batched_x0:
            new = new + (mc.gauss_a * db + mc.gauss_s * xi)[:, None, :]
        else:
            new = new + mc.gauss_a * db + mc.gauss_s * xi

        a, b = step_starts[nstep], step_starts[nstep + 1]
        if b > a:
            rows = jp_path[a:b]
            contrib = (
                np.exp(-mc.lam_eff[None, :] * (dt - jp_tau[a:b, None]))
                * (jp_z[a:b, None] * sigma_j)
                * profile[None, :]
            )
            if batched_x0:
                np.add.at(new, (rows,), contrib[:, None, :])
            else:
                np.add.at(new, (rows,), contrib)
            if req.record_full:
                for r, tau, z in zip(rows, jp_tau[a:b], jp_z[a:b]):
                    jump_log.append((lo + int(r), t + float(tau), float(z)))
        states = new

        nrm2 = np.sum(states**2, axis=-1)
        worst = np.max(nrm2)
        if not np.isfinite(worst) or worst > cfg.blowup_threshold**2:
            flat = np.argmax(nrm2)
            pidx = lo + int(np.unravel_index(flat, nrm2.shape)[0])
            raise DivergenceError(req.master_seed, pidx, t + dt, float(np.sqrt(worst)))

        if eta is not None:
            eta = mc.decay * (eta + dt * src_eta)
            if zeta is not None:
                zeta = mc.decay * (zeta + dt * src_zeta)

        if (nstep + 1) in req.snapshot_steps:
            snapshots[nstep + 1] = states.copy()
        if req.record_full:
            full_states[..., nstep + 1, :] = states
            if controls is not None:
                full_controls[..., nstep, :] = controls

    out: dict = {"terminal": states}
    for acc in accs:
        acc.at_terminal(steps, cfg.T, states)
        out.update(acc.result())
    if eta is not None:
        out["eta_terminal"] = eta
        if zeta is not None:
            out["zeta_terminal"] = zeta
    if w_eta is not None:
        out["w_eta"] = w_eta
        if w_zeta is not None:
            out["w_zeta"] = w_zeta
    if snapshots:
        order = sorted(snapshots)
        out["snapshots"] = np.stack([snapshots[k] for k in order], axis=-2)
        out["snapshot_steps"] = order
    if req.record_full:
        out["full_states"] = full_states
        out["full_controls"] = full_controls
        out["wiener"] = gauss[..., 0]
        out["jump_log"] = jump_log
    return out


def _block_size(cfg: IntegratorConfig, requested: int | None) -> int:
    if requested is not None:
        return requested
    per_path = cfg.steps * cfg.m * 2
    return int(min(4096, max(64, _NOISE_FLOAT_BUDGET // max(per_path, 1))))


def _run_block_range(args):
    req, lo, hi = args
    return _simulate_block(req, lo, hi)


def run_ensemble(
    req: BlockRequest,
    n_paths: int,
    block_size: int | None = None,
    workers: int = 1,
) -> dict:
    """Simulate n_paths paths in fixed-order blocks; the reduction
    (concatenation in path order) is identical for any worker count."""
    bs = _block_size(req.cfg, block_size)
    ranges = [(lo, min(lo + bs, n_paths)) for lo in range(0, n_paths, bs)]
    if workers > 1 and len(ranges) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_block_range, [(req, lo, hi) for lo, hi in ranges]))
    else:
        results = [_simulate_block(req, lo, hi) for lo, hi in ranges]
    merged: dict = {}
    for key in results[0]:
        if key in ("snapshot_steps",):
            merged[key] = results[0][key]
        elif key == "jump_log":
            merged[key] = [ev for r in results for ev in r[key]]
        else:
            merged[key] = np.concatenate([r[key] for r in results], axis=0)
    return merged


# ---------------------------------------------------------------------------
# trajectories and high-level drivers
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Time-indexed path with the driving noise retained for reuse."""

    times: np.ndarray
    states: np.ndarray  # (steps+1, m)
    wiener: np.ndarray | None = None  # standardized increments (steps, m)
    jump_log: list = field(default_factory=list)  # (path_id, t, z)
    control_log: np.ndarray | None = None
    path_id: int = 0

    def __post_init__(self):
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError("times and states lengths differ")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("non-finite states in trajectory")

    @property
    def m(self) -> int:
        return self.states.shape[1]

    def state(self, i: int) -> SpectralField:
        return SpectralField(self.states[i])


@dataclass
class EnsembleSummary:
    """Checkpointed ensemble statistics of ||X(t)||^2, the enstrophy
    integral, and the running sup norm."""

    checkpoint_times: np.ndarray
    mean_sq_norm: np.ndarray
    var_sq_norm: np.ndarray
    stderr_sq_norm: np.ndarray
    mean_h1_integral: float
    stderr_h1_integral: float
    mean_sup_norm: float
    max_sup_norm: float
    n_paths: int

    def as_dict(self) -> dict:
        return {
            "checkpoint_times": self.checkpoint_times.tolist(),
            "mean_sq_norm": self.mean_sq_norm.tolist(),
            "var_sq_norm": self.var_sq_norm.tolist(),
            "stderr_sq_norm": self.stderr_sq_norm.tolist(),
            "mean_h1_integral": self.mean_h1_integral,
            "stderr_h1_integral": self.stderr_h1_integral,
            "mean_sup_norm": self.mean_sup_norm,
            "max_sup_norm": self.max_sup_norm,
            "n_paths": self.n_paths,
        }


class _SummaryAccumulator(MomentAccumulator):
    def __init__(self):
        super().__init__(p_list=())


def checkpoint_steps_for(cfg: IntegratorConfig, checkpoints: Sequence[float]) -> list[int]:
    dt = cfg.dt_effective
    steps = []
    for t in checkpoints:
        s = int(round(t / dt))
        if not 0 <= s <= cfg.steps:
            raise ValueError(f"checkpoint {t} outside [0, T]")
        steps.append(s)
    return steps


def simulate_paths(
    cfg: IntegratorConfig,
    noise: NoiseModel,
    x: SpectralField,
    n_paths: int,
    seed: int,
    control=None,
    checkpoints: Sequence[float] | None = None,
    n_record: int = 0,
    antithetic: bool = False,
    workers: int = 1,
) -> tuple[EnsembleSummary, list[Trajectory]]:
    """Independent paths via substreams; returns summary statistics and,
    optionally, fully recorded trajectories for the first n_record paths."""
    if checkpoints is None:
        checkpoints = [cfg.T]
    snap = tuple(checkpoint_steps_for(cfg, checkpoints))
    req = BlockRequest(
        cfg=cfg,
        noise=noise,
        x0=x.pad(cfg.m).coeffs,
        master_seed=seed,
        control=control,
        snapshot_steps=snap,
        accumulators=((_SummaryAccumulator, {}),),
        antithetic=antithetic,
    )
    out = run_ensemble(req, n_paths, workers=workers)
    snaps = out["snapshots"]  # (n, n_snaps, m)
    sq = np.sum(snaps**2, axis=-1)
    summary = EnsembleSummary(
        checkpoint_times=np.asarray(checkpoints, dtype=float),
        mean_sq_norm=sq.mean(axis=0),
        var_sq_norm=sq.var(axis=0, ddof=1) if n_paths > 1 else np.zeros(sq.shape[1]),
        stderr_sq_norm=(sq.std(axis=0, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else np.zeros(sq.shape[1]),
        mean_h1_integral=float(out["h1_integral"].mean()),
        stderr_h1_integral=float(out["h1_integral"].std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0,
        mean_sup_norm=float(out["sup_norm"].mean()),
        max_sup_norm=float(out["sup_norm"].max()),
        n_paths=n_paths,
    )
    trajectories = [
        simulate_trajectory(cfg, noise, x, seed=seed, path_index=p, control=control)
        for p in range(min(n_record, n_paths))
    ]
    return summary, trajectories


def simulate_trajectory(
    cfg: IntegratorConfig,
    noise: NoiseModel,
    x: SpectralField,
    seed: int,
    path_index: int = 0,
    control=None,
) -> Trajectory:
    """Fully recorded single path; identical to the same index inside an
    ensemble run with the same seed."""
    req = BlockRequest(
        cfg=cfg,
        noise=noise,
        x0=x.pad(cfg.m).coeffs,
        master_seed=seed,
        control=control,
        record_full=True,
    )
    out = _simulate_block(req, path_index, path_index + 1)
    steps = cfg.steps
    times = np.arange(steps + 1) * cfg.dt_effective
    return Trajectory(
        times=times,
        states=out["full_states"][0],
        wiener=out["wiener"][0],
        jump_log=out["jump_log"],
        control_log=out["full_controls"][0] if control is not None else None,
        path_id=path_index,
    )


def simulate_closed_loop(
    cfg: IntegratorConfig,
    noise: NoiseModel,
    x: SpectralField,
    value_gradient_callback: Callable[[float, np.ndarray], np.ndarray],
    rho: float,
    seed: int,
    path_index: int = 0,
) -> Trajectory:
    """Single closed-loop path: U(t) = G(D_x v(T - t, X(t))) with the
    feedback map applied to the callback's gradient."""
    from .hjb import feedback_map  # local import to avoid a cycle

    class _Feedback:
        def controls(self, t, states):
            return feedback_map(value_gradient_callback(t, states), rho)

    return simulate_trajectory(cfg, noise, x, seed, path_index, control=_Feedback())


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

@dataclass
class EnergyReport:
    """Monte Carlo energy balance against the closed-form right-hand side."""

    times: np.ndarray
    lhs: np.ndarray
    stderr: np.ndarray
    rhs: np.ndarray
    x_norm_sq: float
    trace_q: float
    jump_rate: float  # int ||G||^2 mu(dz): slope contribution of the jumps
    n_paths: int

    @property
    def rel_error(self) -> np.ndarray:
        # absolute error where the right-hand side vanishes (zero-noise runs)
        diff = np.abs(self.lhs - self.rhs)
        return np.where(self.rhs > 0, diff / np.where(self.rhs > 0, self.rhs, 1.0), diff)

    @property
    def rel_stderr(self) -> np.ndarray:
        return np.where(self.rhs > 0, self.stderr / np.where(self.rhs > 0, self.rhs, 1.0), self.stderr)

    def as_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "lhs": self.lhs.tolist(),
            "stderr": self.stderr.tolist(),
            "rhs": self.rhs.tolist(),
            "rel_error": self.rel_error.tolist(),
            "rhs_slope": self.trace_q + self.jump_rate,
            "trace_q": self.trace_q,
            "jump_l2_rate": self.jump_rate,
            "n_paths": self.n_paths,
        }


def energy_identity_report(
    cfg: IntegratorConfig,
    noise: NoiseModel,
    x: SpectralField,
    n_paths: int,
    seed: int,
    checkpoints: Sequence[float] | None = None,
    workers: int = 1,
) -> EnergyReport:
    """E[||Y(t)||^2 + 2 int_0^t ||Y||_1^2] versus
    ||x||^2 + t Tr(Q_m) + t int ||G_m||^2 mu(dz)."""
    if checkpoints is None:
        checkpoints = [cfg.T]
    csteps = checkpoint_steps_for(cfg, checkpoints)
    req = BlockRequest(
        cfg=cfg,
        noise=noise,
        x0=x.pad(cfg.m).coeffs,
        master_seed=seed,
        accumulators=((EnergyAccumulator, {"checkpoint_steps": tuple(csteps)}),),
    )
    out = run_ensemble(req, n_paths, workers=workers)
    times = np.asarray(checkpoints, dtype=float)
    lhs = np.array([out[f"energy_lhs_{s}"].mean() for s in csteps])
    stderr = np.array(
        [out[f"energy_lhs_{s}"].std(ddof=1) / math.sqrt(n_paths) for s in csteps]
    )
    tr = noise.trace(cfg.m)
    jr = noise.jump_second_moment_rate(cfg.m)
    xn = float(np.sum(x.pad(cfg.m).coeffs ** 2))
    rhs = xn + times * (tr + jr)
    return EnergyReport(
        times=times,
        lhs=lhs,
        stderr=stderr,
        rhs=rhs,
        x_norm_sq=xn,
        trace_q=tr,
        jump_rate=jr,
        n_paths=n_paths,
    )


@dataclass
class MomentReport:
    """Moment estimates over a grid of initial norms; the fitted constants
    instantiate the polynomial and exponential growth bounds."""

    x_norms: np.ndarray
    p_list: tuple
    lhs: dict  # p -> array over x grid: E sup||Y||^p + E int ||Y||^(p-2)||Y||_1^2
    ratios: dict  # p -> lhs / (1 + ||x||^p)
    exp_ratios: np.ndarray  # E exp(eps(||Y(T)||^2 + int ||Y||_1^2)) / exp(eps ||x||^2)
    exp_saturated: np.ndarray
    epsilon: float
    n_paths: int

    def as_dict(self) -> dict:
        return {
            "x_norms": self.x_norms.tolist(),
            "p_list": list(self.p_list),
            "lhs": {str(p): v.tolist() for p, v in self.lhs.items()},
            "ratios": {str(p): v.tolist() for p, v in self.ratios.items()},
            "exp_ratios": self.exp_ratios.tolist(),
            "exp_saturated": self.exp_saturated.tolist(),
            "epsilon": self.epsilon,
            "n_paths": self.n_paths,
        }


def moment_report(
    cfg: IntegratorConfig,
    noise: NoiseModel,
    x_norms: Sequence[float],
    p_list: Sequence[int],
    n_paths: int,
    seed: int,
    epsilon: float = 0.01,
    direction: SpectralField | None = None,
    workers: int = 1,
) -> MomentReport:
    """Estimates E sup_t ||Y||^p, E int ||Y||^(p-2) ||Y||_1^2 dt and the
    exponential moment ratio over a grid of initial-condition norms."""
    if any(p < 2 for p in p_list):
        raise ValueError("moment orders must satisfy p >= 2")
    direction = SpectralField(np.eye(cfg.m)[0]) if direction is None else direction.pad(cfg.m)
    lhs = {p: np.empty(len(x_norms)) for p in p_list}
    exp_ratios = np.empty(len(x_norms))
    saturated = np.zeros(len(x_norms), dtype=bool)
    for i, r in enumerate(x_norms):
        x = SpectralField(direction.coeffs * r) if r != 0 else SpectralField(np.zeros(cfg.m))
        req = BlockRequest(
            cfg=cfg,
            noise=noise,
            x0=x.coeffs,
            master_seed=seed + i,
            accumulators=((MomentAccumulator, {"p_list": tuple(p_list)}),),
        )
        out = run_ensemble(req, n_paths, workers=workers)
        for p in p_list:
            lhs[p][i] = float((out["sup_norm"] ** p).mean() + out[f"weighted_h1_p{p}"].mean())
        arg = epsilon * (out["terminal_norm"] ** 2 + out["h1_integral"])
        if np.max(arg) > 700.0:
            saturated[i] = True
            exp_ratios[i] = math.inf
        else:
            exp_ratios[i] = float(np.exp(arg).mean() / math.exp(epsilon * r * r))
    ratios = {p: lhs[p] / (1.0 + np.asarray(x_norms, dtype=float) ** p) for p in p_list}
    return MomentReport(
        x_norms=np.asarray(x_norms, dtype=float),
        p_list=tuple(p_list),
        lhs=lhs,
        ratios=ratios,
        exp_ratios=exp_ratios,
        exp_saturated=saturated,
        epsilon=epsilon,
        n_paths=n_paths,
    )
