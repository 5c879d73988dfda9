"""Value-function machinery: the constrained Hamiltonian and its minimizer,
an explicit finite-difference solver for the integro-differential equation on
a tensor grid (m <= 2), a mild-form Picard solver driven by Monte Carlo
semigroup applications, and the feedback policy wrapper.

The grid stores v(t, .) in the initial-value convention v(0, x) = f_m(x);
the synthesized control applies the time reversal U(t) = G(D_x v(T - t, x)).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, StabilityError
from .integrator import (
    BlockRequest,
    IntegratorConfig,
    checkpoint_steps_for,
    drift_nonlinearity,
    run_ensemble,
)
from .noise import NoiseModel
from .spectral import SpectralField, dealiased_intervals, eigenvalues, f_m, phi_m

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Hamiltonian and feedback map
# ---------------------------------------------------------------------------

def hamiltonian_values(norms: np.ndarray, rho: float) -> np.ndarray:
    """F(p) = inf_{||U|| <= rho} {(U, p) + ||U||^2/2} as a function of ||p||:
    -||p||^2/2 on the ball, -rho ||p|| + rho^2/2 outside."""
    if rho < 0:
        raise ConfigError("control radius rho must be nonnegative", field="control.rho")
    norms = np.asarray(norms, dtype=float)
    inner = -0.5 * norms**2
    outer = -rho * norms + 0.5 * rho**2
    return np.where(norms <= rho, inner, outer)


def hamiltonian_F(p: SpectralField, rho: float) -> float:
    return float(hamiltonian_values(np.array(p.norm()), rho))


def feedback_map(p: np.ndarray, rho: float) -> np.ndarray:
    """Minimizer G(p) realizing F(p): -p on the ball, -rho p/||p|| outside.

    Batch form; last axis are modes.  The closed ball is used at the switch,
    where both branches agree.
    """
    p = np.asarray(p, dtype=float)
    norms = np.linalg.norm(p, axis=-1, keepdims=True)
    if rho == 0.0:
        return np.zeros_like(p)
    scale = np.where(norms <= rho, 1.0, rho / np.where(norms > 0, norms, 1.0))
    return -scale * p


def feedback_G(p: SpectralField, rho: float) -> SpectralField:
    if rho < 0:
        raise ConfigError("control radius rho must be nonnegative", field="control.rho")
    return SpectralField(feedback_map(p.coeffs[None, :], rho)[0])


# ---------------------------------------------------------------------------
# tensor grid representation of v(t, .)
# ---------------------------------------------------------------------------

def _interp_values(values: np.ndarray, R: float, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a grid function (m = 1 or 2) at pts
    (B, m); out-of-grid points are clamped to the boundary."""
    m = pts.shape[-1]
    n = values.shape[0]
    h = 2.0 * R / (n - 1)
    idx = (pts + R) / h
    idx = np.clip(idx, 0.0, n - 1 - 1e-12)
    i0 = idx.astype(int)
    w = idx - i0
    if m == 1:
        a, wa = i0[:, 0], w[:, 0]
        return values[a] * (1 - wa) + values[a + 1] * wa
    a, b = i0[:, 0], i0[:, 1]
    wa, wb = w[:, 0], w[:, 1]
    return (
        values[a, b] * (1 - wa) * (1 - wb)
        + values[a + 1, b] * wa * (1 - wb)
        + values[a, b + 1] * (1 - wa) * wb
        + values[a + 1, b + 1] * wa * wb
    )


def _central_gradient(values: np.ndarray, h: float) -> np.ndarray:
    """Second-order central differences with one-sided stencils at the edges;
    returns shape (m,) + grid_shape."""
    m = values.ndim
    return np.stack([np.gradient(values, h, axis=k) for k in range(m)], axis=0)


class ValueGrid:
    """v(t_i, x) on a uniform tensor grid over [-R, R]^m, m <= 2, with the
    initial condition slice v(0, .) equal to the terminal-cost nonlinearity."""

    def __init__(
        self,
        m: int,
        R: float,
        times: np.ndarray,
        values: np.ndarray,
        rho: float,
        meta: dict | None = None,
    ):
        if m not in (1, 2):
            raise ConfigError("grid value functions support m <= 2", field="hjb.m")
        self.m = m
        self.R = float(R)
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.rho = float(rho)
        self.meta = meta or {}
        if self.values.shape[0] != self.times.shape[0]:
            raise ValueError("one value slice per time required")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite values in value grid")
        self._grad_cache: dict[int, np.ndarray] = {}
        self.clamp_count = 0
        self.eval_count = 0

    @property
    def n_pts(self) -> int:
        return self.values.shape[1]

    @property
    def h(self) -> float:
        return 2.0 * self.R / (self.n_pts - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.R, self.R, self.n_pts)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def slice_gradient(self, i: int) -> np.ndarray:
        """Cached central-difference gradient of slice i, shape (m,) + grid."""
        if i not in self._grad_cache:
            self._grad_cache[i] = _central_gradient(self.values[i], self.h)
        return self._grad_cache[i]

    def _time_weights(self, t: float) -> tuple[int, int, float]:
        t = min(max(t, self.times[0]), self.times[-1])
        i1 = int(np.searchsorted(self.times, t, side="right"))
        i1 = min(max(i1, 1), len(self.times) - 1)
        i0 = i1 - 1
        span = self.times[i1] - self.times[i0]
        w = 0.0 if span == 0 else (t - self.times[i0]) / span
        return i0, i1, float(w)

    def _count_clamps(self, pts: np.ndarray) -> None:
        self.eval_count += pts.shape[0]
        out = np.any(np.abs(pts) > self.R, axis=-1)
        n = int(np.sum(out))
        if n:
            self.clamp_count += n

    def value_at(self, t: float, x: np.ndarray) -> np.ndarray:
        """v(t, x) for x of shape (B, m) (or a single point of shape (m,))."""
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        self._count_clamps(pts)
        i0, i1, w = self._time_weights(t)
        v0 = _interp_values(self.values[i0], self.R, pts)
        v1 = _interp_values(self.values[i1], self.R, pts)
        out = (1 - w) * v0 + w * v1
        return out if np.asarray(x).ndim > 1 else float(out[0])

    def gradient_at(self, t: float, x: np.ndarray) -> np.ndarray:
        """Interpolated central-difference gradient D_x v(t, x), batch form.

        Points outside the grid are clamped to the nearest interior value and
        counted in clamp_count.
        """
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        self._count_clamps(pts)
        i0, i1, w = self._time_weights(t)
        out = np.empty_like(pts)
        g0, g1 = self.slice_gradient(i0), self.slice_gradient(i1)
        for k in range(self.m):
            c0 = _interp_values(g0[k], self.R, pts)
            c1 = _interp_values(g1[k], self.R, pts)
            out[:, k] = (1 - w) * c0 + w * c1
        return out if np.asarray(x).ndim > 1 else out[0]

    # -- serialization ------------------------------------------------------

    def save_csv(self, path) -> None:
        """Header (m, R, n_pts, time slices, rho), then row-major slice data."""
        with open(path, "w") as fh:
            fh.write(f"m,{self.m}\n")
            fh.write(f"R,{self.R}\n")
            fh.write(f"n_pts,{self.n_pts}\n")
            fh.write(f"rho,{self.rho}\n")
            fh.write("times," + ",".join(f"{t:.17g}" for t in self.times) + "\n")
            flat = self.values.reshape(len(self.times), -1)
            for i in range(flat.shape[0]):
                fh.write(",".join(f"{v:.17g}" for v in flat[i]) + "\n")

    @classmethod
    def load_csv(cls, path) -> "ValueGrid":
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        hdr = {}
        for ln in lines[:4]:
            key, val = ln.split(",", 1)
            hdr[key] = val
        times = np.array([float(v) for v in lines[4].split(",")[1:]])
        m, n_pts = int(hdr["m"]), int(hdr["n_pts"])
        shape = (len(times),) + (n_pts,) * m
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[5:]])
        return cls(
            m=m,
            R=float(hdr["R"]),
            times=times,
            values=data.reshape(shape),
            rho=float(hdr["rho"]),
        )


# ---------------------------------------------------------------------------
# grid geometry helpers
# ---------------------------------------------------------------------------

def _grid_nodes(m: int, R: float, n_pts: int) -> np.ndarray:
    """All grid nodes as an array (n_nodes, m), row-major."""
    axis = np.linspace(-R, R, n_pts)
    if m == 1:
        return axis[:, None]
    A, B = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([A.ravel(), B.ravel()], axis=1)


def _drift_on_nodes(nodes: np.ndarray, cfg: IntegratorConfig) -> np.ndarray:
    lam_eff = cfg.viscosity * eigenvalues(cfg.m)
    drift = -lam_eff * nodes
    drift += drift_nonlinearity(nodes, cfg, dealiased_intervals(cfg.m))
    return drift


# ---------------------------------------------------------------------------
# integro-differential operator on a slice
# ---------------------------------------------------------------------------

def _apply_generator(
    values: np.ndarray,
    grad_upwind_parts: tuple[np.ndarray, np.ndarray],
    drift: np.ndarray,
    rho_diag: np.ndarray,
    jump_disp: np.ndarray,
    jump_weights: np.ndarray,
    R: float,
    h: float,
    nodes: np.ndarray,
) -> tuple[np.ndarray, int]:
    """L v = (1/2) sum_k rho_k d^2_k v + sum_k drift_k D_k v (upwind)
    + sum_j w_j [v(x + d_j) - v(x) - (d_j, Dv)] on the full grid.

    Returns the flattened operator values and the count of clamped jump
    targets.  The trace term drops to zero on the boundary ring (the march
    keeps boundary nodes advection-dominated; comparisons stay in the core).
    """
    m = values.ndim
    shape = values.shape
    out = np.zeros(shape)

    # diffusion: central second differences, interior only
    for k in range(m):
        v = np.moveaxis(values, k, 0)
        o = np.moveaxis(out, k, 0)
        o[1:-1] += 0.5 * rho_diag[k] * (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2

    # drift: monotone upwind, one-sided into the domain at the edges
    fwd, bwd = grad_upwind_parts
    dpos = np.maximum(drift, 0.0).reshape(shape + (m,))
    dneg = np.minimum(drift, 0.0).reshape(shape + (m,))
    for k in range(m):
        out += dpos[..., k] * fwd[k] + dneg[..., k] * bwd[k]

    # jump integral with central gradient for the compensating term
    clamped = 0
    if jump_disp.size:
        grad_c = _central_gradient(values, h)
        flat = values.reshape(-1)
        outf = out.reshape(-1)
        for d, w in zip(jump_disp, jump_weights):
            target = nodes + d
            clamped += int(np.sum(np.any(np.abs(target) > R, axis=-1)))
            vt = _interp_values(values, R, target)
            comp = sum(d[k] * grad_c[k].reshape(-1) for k in range(m))
            outf += w * (vt - flat - comp)
        out = outf.reshape(shape)
    return out, clamped


def _upwind_differences(values: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Second-order one-sided differences per axis in both wind directions
    (first-order fallback on the two cells nearest each boundary); shapes
    (m,) + grid.  The first-order stencil loses too much accuracy against
    the drift-dominated closed-form benchmarks."""
    m = values.ndim
    fwd = np.empty((m,) + values.shape)
    bwd = np.empty((m,) + values.shape)
    for k in range(m):
        v = np.moveaxis(values, k, 0)
        f = np.moveaxis(fwd[k], k, 0)
        b = np.moveaxis(bwd[k], k, 0)
        f[:-2] = (-3.0 * v[:-2] + 4.0 * v[1:-1] - v[2:]) / (2.0 * h)
        f[-2] = (v[-1] - v[-2]) / h
        f[-1] = (v[-1] - v[-2]) / h
        b[2:] = (3.0 * v[2:] - 4.0 * v[1:-1] + v[:-2]) / (2.0 * h)
        b[1] = (v[1] - v[0]) / h
        b[0] = (v[1] - v[0]) / h
    return fwd, bwd


def integro_operator_apply(
    grid: ValueGrid,
    t_index: int,
    levy,
    q,
    cfg: IntegratorConfig | None = None,
) -> np.ndarray:
    """Evaluate the generator L_x v on slice t_index of a value grid."""
    cfg = cfg or IntegratorConfig(m=grid.m, dt=1e-3, T=1.0)
    noise = NoiseModel(covariance=q, levy=levy)
    nodes = _grid_nodes(grid.m, grid.R, grid.n_pts)
    drift = _drift_on_nodes(nodes, cfg)
    rho_diag = noise.rho(grid.m)
    if levy is not None and levy.total_rate > 0:
        disp = np.array([levy.jump_field(z, grid.m) for z in levy.marks])
        wts = levy.weights
    else:
        disp = np.empty((0, grid.m))
        wts = np.empty(0)
    values = grid.values[t_index]
    parts = _upwind_differences(values, grid.h)
    out, clamped = _apply_generator(
        values, parts, drift, rho_diag, disp, wts, grid.R, grid.h, nodes
    )
    if clamped:
        logger.info("generator application clamped %d jump targets", clamped)
    return out


# ---------------------------------------------------------------------------
# explicit finite-difference solver
# ---------------------------------------------------------------------------

def fd_stability_bound(h: float, max_rho: float) -> float:
    """Hard precondition on the explicit step: dt <= 0.4 h^2 / max_k rho_k."""
    return math.inf if max_rho == 0 else 0.4 * h * h / max_rho


def fd_hjb_solve(
    cfg: IntegratorConfig,
    noise: NoiseModel,
    rho: float,
    R: float,
    n_pts: int,
    dt_pde: float | None = None,
    n_slices: int = 20,
    running_cost: str | None = "phi_m",
    terminal_cost: str | None = "f_m",
) -> ValueGrid:
    """Explicit time march of v_t = L v + F(D_x v) + phi_m, v(0) = f_m.

    running_cost/terminal_cost accept "phi_m"/"f_m" or None (zero), so the
    linear Feynman-Kac special cases are reachable for validation.
    """
    if cfg.m > 2:
        raise ConfigError("grid solver supports m <= 2", field="problem.m")
    if rho < 0:
        raise ConfigError("rho must be nonnegative", field="control.rho")
    h = 2.0 * R / (n_pts - 1)
    rho_diag = noise.rho(cfg.m)
    max_rho = float(np.max(rho_diag)) if rho_diag.size else 0.0

    nodes = _grid_nodes(cfg.m, R, n_pts)
    drift = _drift_on_nodes(nodes, cfg)
    lam_jump = noise.jump_rate()
    # combined parabolic CFL guides the default step (0.5 safety for the
    # wide one-sided drift stencil)
    courant = np.sum(rho_diag) / h**2 + float(np.max(np.abs(drift))) / h + lam_jump
    auto_dt = min(fd_stability_bound(h, max_rho), 0.5 / courant if courant > 0 else math.inf)
    dt = auto_dt if dt_pde is None else dt_pde
    bound = fd_stability_bound(h, max_rho)
    if dt > bound * (1 + 1e-12):
        raise StabilityError(
            f"explicit step {dt:.3e} violates dt <= 0.4 h^2 / max rho = {bound:.3e}",
            field="hjb.dt_pde",
        )

    shape = (n_pts,) * cfg.m
    if terminal_cost == "f_m":
        v = f_m(nodes, cfg.level).reshape(shape)
    elif terminal_cost == "sq_norm":  # unregularized linear special cases
        v = np.sum(nodes**2, axis=-1).reshape(shape)
    elif terminal_cost is None:
        v = np.zeros(shape)
    else:
        raise ConfigError(f"unknown terminal cost {terminal_cost!r}", field="hjb.terminal_cost")
    if running_cost == "phi_m":
        phi = phi_m(nodes, cfg.level).reshape(shape)
    elif running_cost is None:
        phi = np.zeros(shape)
    else:
        raise ConfigError(f"unknown running cost {running_cost!r}", field="hjb.running_cost")

    if noise.levy is not None and noise.levy.total_rate > 0:
        disp = np.array([noise.levy.jump_field(z, cfg.m) for z in noise.levy.marks])
        wts = noise.levy.weights
    else:
        disp = np.empty((0, cfg.m))
        wts = np.empty(0)

    times = np.linspace(0.0, cfg.T, n_slices + 1)
    slices = [v.copy()]
    clamp_total = 0
    for i in range(n_slices):
        span = times[i + 1] - times[i]
        n_sub = max(1, math.ceil(span / dt - 1e-12))
        dt_sub = span / n_sub
        for _ in range(n_sub):
            parts = _upwind_differences(v, h)
            lv, clamped = _apply_generator(
                v, parts, drift, rho_diag, disp, wts, R, h, nodes
            )
            clamp_total += clamped
            grad_c = _central_gradient(v, h)
            norms = np.sqrt(np.sum(grad_c**2, axis=0))
            v = v + dt_sub * (lv + hamiltonian_values(norms, rho) + phi)
            if not np.all(np.isfinite(v)):
                raise RuntimeError(
                    f"finite-difference march produced non-finite values near t = {times[i]:.4g}; "
                    f"dt_pde = {dt_sub:.3e}, h = {h:.3e}"
                )
        slices.append(v.copy())
    grid = ValueGrid(
        m=cfg.m,
        R=R,
        times=times,
        values=np.stack(slices, axis=0),
        rho=rho,
        meta={"method": "fd", "dt_pde": dt, "clamped_jump_targets": clamp_total},
    )
    return grid


# ---------------------------------------------------------------------------
# mild-form Picard solver
# ---------------------------------------------------------------------------

@dataclass
class PicardReport:
    iterations: int
    sup_changes: list
    converged: bool
    max_node_stderr: float

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "sup_changes": self.sup_changes,
            "converged": self.converged,
            "max_node_stderr": self.max_node_stderr,
        }


def mild_picard_solve(
    cfg: IntegratorConfig,
    noise: NoiseModel,
    rho: float,
    R: float,
    n_pts: int,
    n_paths: int,
    seed: int,
    n_slices: int = 20,
    max_iter: int = 12,
    tol: float = 2e-3,
    workers: int = 1,
) -> tuple[ValueGrid, PicardReport]:
    """Fixed-point iteration on the Duhamel form

        v(t, x) = S_t f_m(x) + int_0^t S_{t-s} F(D_x v(s, .))(x) ds
                  + int_0^t S_{t-s} phi_m(x) ds

    with every semigroup application evaluated by Monte Carlo from each grid
    node using one frozen ensemble (common random numbers across nodes,
    horizons, and iterations).  The Duhamel quadrature is trapezoidal: the
    integrands are steep near s = t and a left-endpoint rule at desk-scale
    slice counts leaves a bias larger than the cross-oracle tolerance.
    """
    if cfg.m > 2:
        raise ConfigError("grid solver supports m <= 2", field="problem.m")
    nodes = _grid_nodes(cfg.m, R, n_pts)
    n_nodes = nodes.shape[0]
    shape = (n_pts,) * cfg.m

    times = np.linspace(0.0, cfg.T, n_slices + 1)
    snap_steps = tuple(checkpoint_steps_for(cfg, times))
    block = max(16, min(256, int(2.5e6 // (n_nodes * (n_slices + 1) * cfg.m))))
    req = BlockRequest(
        cfg=cfg,
        noise=noise,
        x0=nodes,
        master_seed=seed,
        snapshot_steps=snap_steps,
        antithetic=True,
    )
    out = run_ensemble(req, n_paths, block_size=block, workers=workers)
    Y = out["snapshots"]  # (n_paths, n_nodes, n_slices+1, m)

    ds = times[1] - times[0]
    phi_samples = phi_m(Y, cfg.level)  # (paths, nodes, slices+1)
    f_samples = f_m(Y, cfg.level)
    phi_hat = phi_samples.mean(axis=0)  # (nodes, slices+1)
    f_hat = f_samples.mean(axis=0)

    def duhamel(rows: np.ndarray, i: int) -> np.ndarray:
        # trapezoid over s: horizons l = i-j, endpoint weights 1/2
        if i == 0:
            return np.zeros(rows.shape[:-1])
        w = np.ones(i + 1)
        w[0] = w[-1] = 0.5
        return ds * np.tensordot(rows[..., : i + 1], w[::-1], axes=([-1], [0]))

    # v0[i] = S_{t_i} f_m + int_0^{t_i} S_{t_i - s} phi_m ds
    v = np.empty((n_slices + 1, n_nodes))
    for i in range(n_slices + 1):
        v[i] = f_hat[:, i] + duhamel(phi_hat, i)
    v0 = v.copy()

    sup_changes: list[float] = []
    converged = rho == 0.0  # F vanishes identically: v0 is the fixed point
    it = 0
    h = 2.0 * R / (n_pts - 1)
    if rho > 0.0:
        for it in range(1, max_iter + 1):
            # FVAL[j, l] = mean_p F(|D_x v(s_j, Y_p(s_l, node))|); l = 0 is
            # the deterministic horizon-zero evaluation at the node itself
            fval = np.zeros((n_slices + 1, n_nodes, n_slices + 1))
            for j in range(n_slices + 1):
                gslice = _central_gradient(v[j].reshape(shape), h)
                max_l = n_slices - j
                pts = Y[:, :, : max_l + 1, :].reshape(-1, cfg.m)
                comps = np.stack(
                    [_interp_values(gslice[k], R, pts) for k in range(cfg.m)], axis=-1
                )
                Fp = hamiltonian_values(np.linalg.norm(comps, axis=-1), rho)
                fval[j, :, : max_l + 1] = Fp.reshape(n_paths, n_nodes, max_l + 1).mean(axis=0)
            new = v0.copy()
            for i in range(1, n_slices + 1):
                w = np.ones(i + 1)
                w[0] = w[-1] = 0.5
                # sum over j = 0..i with horizon l = i - j
                contrib = sum(w[j] * fval[j, :, i - j] for j in range(i + 1))
                new[i] += ds * contrib
            change = float(np.max(np.abs(new - v)))
            sup_changes.append(change)
            v = new
            if change < tol:
                converged = True
                break
            if len(sup_changes) >= 3 and sup_changes[-1] >= sup_changes[-2] >= sup_changes[-3]:
                logger.warning(
                    "Picard sup changes non-decreasing over 3 iterations: %s", sup_changes[-3:]
                )
                break
        if sup_changes:
            logger.info("Picard sup changes: %s", [f"{c:.3e}" for c in sup_changes])

    # per-node sampling error of the final iterate at the horizon
    w = np.ones(n_slices + 1)
    w[0] = w[-1] = 0.5
    psi = f_samples[:, :, n_slices] + ds * np.tensordot(phi_samples, w[::-1], axes=([-1], [0]))
    stderr = psi.std(axis=0, ddof=1) / math.sqrt(n_paths)
    grid = ValueGrid(
        m=cfg.m,
        R=R,
        times=times,
        values=v.reshape((n_slices + 1,) + shape),
        rho=rho,
        meta={"method": "picard", "n_paths": n_paths, "seed": seed},
    )
    report = PicardReport(
        iterations=it,
        sup_changes=sup_changes,
        converged=converged,
        max_node_stderr=float(np.max(stderr)),
    )
    return grid, report


# ---------------------------------------------------------------------------
# gradient extraction and the feedback policy
# ---------------------------------------------------------------------------

def value_gradient(grid: ValueGrid, t: float, x: SpectralField | np.ndarray) -> SpectralField:
    """Interpolated central-difference gradient D_x v(t, x)."""
    coeffs = x.coeffs if isinstance(x, SpectralField) else np.asarray(x, dtype=float)
    return SpectralField(grid.gradient_at(t, coeffs[None, :])[0])


class FeedbackPolicy:
    """U(t) = G(D_x v(T - t, x)): the grid's initial-value clock runs
    backwards relative to the control's wall clock."""

    def __init__(self, grid: ValueGrid, rho: float):
        self.grid = grid
        self.rho = float(rho)

    @property
    def T(self) -> float:
        return self.grid.T

    def gradient(self, t: float, states: np.ndarray) -> np.ndarray:
        return self.grid.gradient_at(self.T - t, states)

    def controls(self, t: float, states: np.ndarray) -> np.ndarray:
        return feedback_map(self.gradient(t, states), self.rho)

    def __call__(self, t: float, x: SpectralField) -> SpectralField:
        return SpectralField(self.controls(t, x.coeffs[None, :])[0])


def extract_policy(grid: ValueGrid, rho: float | None = None) -> FeedbackPolicy:
    return FeedbackPolicy(grid, grid.rho if rho is None else rho)
