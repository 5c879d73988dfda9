"""Cost evaluation, the cost-verification identity, the dynamic programming
inequality, and optimality tournaments for the synthesized feedback.

All comparisons difference expectations under common random numbers: the two
sides of an identity are evaluated on the same simulated paths, so sampling
noise largely cancels in the reported gaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .hjb import FeedbackPolicy, ValueGrid, feedback_map
from .integrator import (
    BlockRequest,
    ConstantControl,
    IntegratorConfig,
    OpenLoopControl,
    RunningCostAccumulator,
    run_ensemble,
)
from .noise import NoiseModel
from .spectral import SpectralField

# ---------------------------------------------------------------------------
# admissibility
# ---------------------------------------------------------------------------

def admissible_projection(u: SpectralField, rho: float) -> SpectralField:
    """Radial projection onto the admissible ball {||U|| <= rho}."""
    n = u.norm()
    if n <= rho or n == 0.0:
        return u
    return SpectralField(u.coeffs * (rho / n))


def chi(a: float | np.ndarray) -> float | np.ndarray:
    """chi(a) = 0 for a <= 0 and a^2 for a >= 0 (continuous, C^1 at 0)."""
    arr = np.asarray(a, dtype=float)
    out = np.where(arr > 0.0, arr * arr, 0.0)
    return float(out) if out.ndim == 0 else out


class _ClippedPolicy:
    """Wrap a policy so realized controls are admissible; counts clips."""

    def __init__(self, inner, rho: float):
        self.inner = inner
        self.rho = rho
        self.clip_count = 0

    def controls(self, t, states):
        u = self.inner.controls(t, states)
        norms = np.linalg.norm(u, axis=-1, keepdims=True)
        over = norms > self.rho
        if np.any(over):
            self.clip_count += int(np.sum(over))
            u = np.where(over, u * (self.rho / np.where(norms > 0, norms, 1.0)), u)
        return u


@dataclass
class ControlSpec:
    """Admissible control: zero, a constant field, an open-loop sequence, or
    a feedback policy; realized controls are clipped to the rho-ball."""

    kind: str
    rho: float
    field: SpectralField | None = None
    sequence: np.ndarray | None = None
    policy: FeedbackPolicy | None = None

    @classmethod
    def zero(cls, rho: float = 0.0) -> "ControlSpec":
        return cls(kind="zero", rho=rho)

    @classmethod
    def constant(cls, field: SpectralField, rho: float) -> "ControlSpec":
        return cls(kind="constant", rho=rho, field=field)

    @classmethod
    def open_loop(cls, sequence: np.ndarray, rho: float) -> "ControlSpec":
        return cls(kind="open_loop", rho=rho, sequence=np.asarray(sequence, dtype=float))

    @classmethod
    def feedback(cls, policy: FeedbackPolicy, rho: float | None = None) -> "ControlSpec":
        return cls(kind="feedback", rho=policy.rho if rho is None else rho, policy=policy)

    def realize(self, cfg: IntegratorConfig):
        """Engine-facing control object (None for the zero control)."""
        if self.kind == "zero":
            return None
        if self.kind == "constant":
            u = admissible_projection(self.field.pad(cfg.m), self.rho)
            return ConstantControl(u.coeffs)
        if self.kind == "open_loop":
            seq = self.sequence
            norms = np.linalg.norm(seq, axis=-1, keepdims=True)
            scale = np.where(norms > self.rho, self.rho / np.where(norms > 0, norms, 1.0), 1.0)
            return OpenLoopControl(seq * scale, cfg.dt_effective)
        if self.kind == "feedback":
            return _ClippedPolicy(self.policy, self.rho)
        raise ValueError(f"unknown control kind {self.kind!r}")


# ---------------------------------------------------------------------------
# cost functional
# ---------------------------------------------------------------------------

@dataclass
class CostReport:
    """J with its decomposition: running enstrophy, control energy, terminal."""

    j: float
    stderr: float
    enstrophy: float
    control_energy: float
    terminal: float
    n_paths: int
    regularized: bool

    def __post_init__(self):
        parts = self.enstrophy + self.control_energy + self.terminal
        if not math.isclose(parts, self.j, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError("cost decomposition does not sum to J")

    def as_dict(self) -> dict:
        return {
            "j": self.j,
            "stderr": self.stderr,
            "enstrophy": self.enstrophy,
            "control_energy": self.control_energy,
            "terminal": self.terminal,
            "n_paths": self.n_paths,
            "regularized": self.regularized,
        }


def cost_samples(
    x: SpectralField,
    control: ControlSpec,
    cfg: IntegratorConfig,
    noise: NoiseModel,
    n_paths: int,
    seed: int,
    regularized: bool = False,
    extra_accumulators: tuple = (),
    workers: int = 1,
) -> dict:
    """Per-path cost pieces (and any extra accumulator outputs)."""
    req = BlockRequest(
        cfg=cfg,
        noise=noise,
        x0=x.pad(cfg.m).coeffs,
        master_seed=seed,
        control=control.realize(cfg),
        accumulators=(
            (RunningCostAccumulator, {"level": cfg.level, "regularized": regularized}),
        )
        + tuple(extra_accumulators),
    )
    return run_ensemble(req, n_paths, workers=workers)


def cost_functional(
    x: SpectralField,
    control: ControlSpec,
    cfg: IntegratorConfig,
    noise: NoiseModel,
    n_paths: int,
    seed: int,
    regularized: bool = False,
    workers: int = 1,
) -> CostReport:
    """J = E[int (||D_xi X||^2 + ||U||^2/2) dt + ||X(T)||^2] by Monte Carlo
    with left-endpoint time quadrature.  With regularized=True the running and
    terminal costs are the bounded Galerkin nonlinearities phi_m and f_m, the
    pair actually minimized by the m-mode value function.
    """
    out = cost_samples(x, control, cfg, noise, n_paths, seed, regularized, workers=workers)
    per_path = out["cost_enstrophy"] + out["cost_control"] + out["cost_terminal"]
    return CostReport(
        j=float(per_path.mean()),
        stderr=float(per_path.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0,
        enstrophy=float(out["cost_enstrophy"].mean()),
        control_energy=float(out["cost_control"].mean()),
        terminal=float(out["cost_terminal"].mean()),
        n_paths=n_paths,
        regularized=regularized,
    )


# ---------------------------------------------------------------------------
# cost-verification identity
# ---------------------------------------------------------------------------

class VerificationAccumulator:
    """Pathwise int_0^T [ ||U + D_x v(T-t, X)||^2 - chi(||D_x v(T-t, X)|| - rho) ] dt
    plus grid-escape bookkeeping."""

    def __init__(self, grid: ValueGrid, rho: float, T: float):
        self.grid = grid
        self.rho = rho
        self.T = T

    def setup(self, shape, dt):
        self.dt = dt
        self.quad = np.zeros(shape[:-1])
        self.escapes = np.zeros(shape[:-1])
        self.samples = 0

    def at_step(self, n, t, states, controls):
        p = self.grid.gradient_at(self.T - t, states)
        u = np.zeros_like(states) if controls is None else controls
        pn = np.linalg.norm(p, axis=-1)
        self.quad += self.dt * (
            np.sum((u + p) ** 2, axis=-1) - chi(pn - self.rho)
        )
        self.escapes += np.any(np.abs(states) > self.grid.R, axis=-1)
        self.samples += 1

    def at_terminal(self, n, t, states):
        pass

    def result(self) -> dict:
        return {"verify_quad": self.quad, "verify_escapes": self.escapes / max(self.samples, 1)}


@dataclass
class VerificationReport:
    """Both sides of J = v(T, x) + (1/2) E int [ ||U + D_x v||^2 - chi(||D_x v|| - rho) ] dt."""

    lhs: float
    rhs: float
    gap: float
    stderr: float
    v_at_x: float
    grid_budget: float
    escape_fraction: float
    reliable: bool
    n_paths: int

    def tolerance(self, rel: float = 0.05, n_sigma: float = 3.0) -> float:
        return max(rel * abs(self.lhs), n_sigma * self.stderr + self.grid_budget)

    def passed(self, rel: float = 0.05, n_sigma: float = 3.0) -> bool:
        return abs(self.gap) <= self.tolerance(rel, n_sigma)

    def as_dict(self) -> dict:
        return {
            "lhs_cost": self.lhs,
            "rhs": self.rhs,
            "gap": self.gap,
            "stderr": self.stderr,
            "v_at_x": self.v_at_x,
            "grid_budget": self.grid_budget,
            "escape_fraction": self.escape_fraction,
            "reliable": self.reliable,
            "n_paths": self.n_paths,
        }


def verification_identity_check(
    x: SpectralField,
    control: ControlSpec,
    grid: ValueGrid,
    cfg: IntegratorConfig,
    noise: NoiseModel,
    n_paths: int,
    seed: int,
    grid_budget: float = 0.0,
    workers: int = 1,
) -> VerificationReport:
    """Evaluate the verification identity with both sides on the same paths.

    The cost side uses the bounded Galerkin running/terminal costs, matching
    the finite-m value function the grid solves for.
    """
    out = cost_samples(
        x,
        control,
        cfg,
        noise,
        n_paths,
        seed,
        regularized=True,
        extra_accumulators=(
            (VerificationAccumulator, {"grid": grid, "rho": grid.rho, "T": cfg.T}),
        ),
        workers=workers,
    )
    cost = out["cost_enstrophy"] + out["cost_control"] + out["cost_terminal"]
    v_at_x = float(grid.value_at(grid.T, x.pad(cfg.m).coeffs[None, :])[0])
    diff = cost - 0.5 * out["verify_quad"]  # per-path lhs - (rhs - v(T,x))
    gap = float(diff.mean()) - v_at_x
    stderr = float(diff.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    escape = float(out["verify_escapes"].mean())
    return VerificationReport(
        lhs=float(cost.mean()),
        rhs=v_at_x + 0.5 * float(out["verify_quad"].mean()),
        gap=gap,
        stderr=stderr,
        v_at_x=v_at_x,
        grid_budget=grid_budget,
        escape_fraction=escape,
        reliable=escape <= 0.10,
        n_paths=n_paths,
    )


def grid_refinement_budget(
    make_grid,
    coarse_pts: int,
    fine_pts: int,
    core_fraction: float = 0.5,
) -> float:
    """Discretization-error budget: sup change of the horizon slice under
    grid refinement, restricted to the core |x_k| <= core_fraction * R."""
    g_c = make_grid(coarse_pts)
    g_f = make_grid(fine_pts)
    pts = _core_nodes(g_f, core_fraction)
    vc = g_c.value_at(g_c.T, pts)
    vf = g_f.value_at(g_f.T, pts)
    return float(np.max(np.abs(vc - vf)))


def _core_nodes(grid: ValueGrid, core_fraction: float) -> np.ndarray:
    axis = grid.axis
    keep = np.abs(axis) <= core_fraction * grid.R + 1e-12
    axis = axis[keep]
    if grid.m == 1:
        return axis[:, None]
    A, B = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([A.ravel(), B.ravel()], axis=1)


# ---------------------------------------------------------------------------
# dynamic programming inequality
# ---------------------------------------------------------------------------

@dataclass
class DppReport:
    """V(t,x) against the one-step lookahead over a finite control family."""

    t: float
    tau: float
    v_tx: float
    family: list  # (label, value, stderr)
    family_min: float
    feedback_value: float
    feedback_stderr: float
    grid_budget: float
    inequality_ok: bool
    attainment_ok: bool

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "tau": self.tau,
            "v_tx": self.v_tx,
            "family": [
                {"label": l, "value": v, "stderr": s} for (l, v, s) in self.family
            ],
            "family_min": self.family_min,
            "feedback_value": self.feedback_value,
            "feedback_stderr": self.feedback_stderr,
            "grid_budget": self.grid_budget,
            "inequality_ok": self.inequality_ok,
            "attainment_ok": self.attainment_ok,
        }


class _ShiftedPolicy:
    """Feedback policy evaluated with the wall clock offset by t0."""

    def __init__(self, policy: FeedbackPolicy, t0: float):
        self.policy = policy
        self.t0 = t0
        self.rho = policy.rho

    def controls(self, t, states):
        return self.policy.controls(self.t0 + t, states)


def _lookahead_value(
    x: SpectralField,
    control: ControlSpec,
    grid: ValueGrid,
    t: float,
    tau: float,
    cfg: IntegratorConfig,
    noise: NoiseModel,
    n_paths: int,
    seed: int,
) -> tuple[float, float]:
    """E[int_t^tau (phi_m(X) + ||U||^2/2) ds + V(tau, X(tau))] with
    V(s, .) = v(T - s, .); the dynamics are time homogeneous so the
    simulation runs on [0, tau - t]."""
    sub = replace(cfg, T=tau - t)
    out = cost_samples(x, control, sub, noise, n_paths, seed, regularized=True)
    run = out["cost_enstrophy"] + out["cost_control"]
    cont = grid.value_at(grid.T - tau, out["terminal"])
    samples = run + cont
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(n_paths))


def dpp_check(
    x: SpectralField,
    t: float,
    tau: float,
    grid: ValueGrid,
    cfg: IntegratorConfig,
    noise: NoiseModel,
    n_paths: int,
    seed: int,
    family: Sequence[SpectralField] | None = None,
    grid_budget: float = 0.0,
    n_sigma: float = 3.0,
    rel_tol: float = 0.05,
) -> DppReport:
    """One-sided principle-of-optimality check at (t, x) with intermediate
    time tau: V(t,x) <= min over constant admissible controls of the
    lookahead value, with the feedback policy near-attaining the minimum."""
    if not 0.0 <= t < tau <= grid.T:
        raise ValueError("need 0 <= t < tau <= T")
    rho = grid.rho
    if family is None:
        if rho == 0.0:
            family = [SpectralField(np.zeros(cfg.m))]
        else:
            stencil = np.linspace(-rho, rho, 9)
            family = [SpectralField(np.eye(cfg.m)[0] * a) for a in stencil]
    v_tx = float(grid.value_at(grid.T - t, x.pad(cfg.m).coeffs[None, :])[0])

    rows = []
    for i, u in enumerate(family):
        spec = ControlSpec.constant(u, rho) if u.norm() > 0 else ControlSpec.zero(rho)
        val, err = _lookahead_value(x, spec, grid, t, tau, cfg, noise, n_paths, seed)
        rows.append((f"const_{i}", val, err))
    fam_min = min(v for _, v, _ in rows)
    fam_min_err = [e for _, v, e in rows if v == fam_min][0]

    shifted = _ShiftedPolicy(FeedbackPolicy(grid, rho), t)
    fb_spec = ControlSpec(kind="feedback", rho=rho, policy=shifted)
    fb_val, fb_err = _lookahead_value(x, fb_spec, grid, t, tau, cfg, noise, n_paths, seed)

    slack = n_sigma * fam_min_err + grid_budget + rel_tol * abs(fam_min)
    inequality_ok = v_tx <= fam_min + slack
    attain_slack = n_sigma * fb_err + grid_budget + rel_tol * max(abs(v_tx), abs(fb_val))
    attainment_ok = (fb_val <= fam_min + slack) and (abs(fb_val - v_tx) <= attain_slack)
    return DppReport(
        t=t,
        tau=tau,
        v_tx=v_tx,
        family=rows,
        family_min=fam_min,
        feedback_value=fb_val,
        feedback_stderr=fb_err,
        grid_budget=grid_budget,
        inequality_ok=inequality_ok,
        attainment_ok=attainment_ok,
    )


# ---------------------------------------------------------------------------
# optimality tournament
# ---------------------------------------------------------------------------

@dataclass
class TournamentReport:
    rows: list  # (label, J, stderr) sorted ascending in J
    feedback_label: str
    feedback_optimal: bool

    def as_dict(self) -> dict:
        return {
            "ranking": [{"label": l, "j": j, "stderr": s} for (l, j, s) in self.rows],
            "feedback_label": self.feedback_label,
            "feedback_optimal": self.feedback_optimal,
        }


def optimality_comparison(
    x: SpectralField,
    grid: ValueGrid,
    candidates: dict[str, ControlSpec],
    cfg: IntegratorConfig,
    noise: NoiseModel,
    n_paths: int,
    seed: int,
    n_sigma: float = 3.0,
    feedback_label: str = "feedback",
) -> TournamentReport:
    """Rank J over candidate controls under common random numbers; the
    synthesized feedback must not be beaten beyond combined sampling error."""
    if feedback_label not in candidates:
        candidates = dict(candidates)
        candidates[feedback_label] = ControlSpec.feedback(FeedbackPolicy(grid, grid.rho))
    per_path = {}
    for label, spec in candidates.items():
        out = cost_samples(x, spec, cfg, noise, n_paths, seed, regularized=True)
        per_path[label] = out["cost_enstrophy"] + out["cost_control"] + out["cost_terminal"]
    rows = []
    for label, samples in per_path.items():
        rows.append(
            (label, float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(n_paths)))
        )
    rows.sort(key=lambda r: r[1])
    fb = per_path[feedback_label]
    ok = True
    for label, samples in per_path.items():
        if label == feedback_label:
            continue
        diff = fb - samples  # CRN: paired difference
        dmean = float(diff.mean())
        derr = float(diff.std(ddof=1) / math.sqrt(n_paths))
        if dmean > n_sigma * derr:
            ok = False
    return TournamentReport(rows=rows, feedback_label=feedback_label, feedback_optimal=ok)
