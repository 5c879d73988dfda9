"""Trace-class Gaussian covariance and finite-activity jump noise.

The Wiener basis is identified with the eigenbasis e_k, so Q is diagonal with
eigenvalues rho_k (either the power family Q = A^(-alpha) or an explicit
list).  Jumps follow an atomic intensity measure mu = sum_j w_j delta_{z_j}
with separable coefficient G(t, z) = z * sigma_j * profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .rng import substream, JUMP_STREAM
from .spectral import SpectralField, eigenvalues, unit_mode, v_norm_sq


@dataclass(frozen=True)
class CovarianceOperator:
    """Diagonal covariance Q with eigenvalues rho_k > 0 on the sine basis."""

    kind: str  # "a_power" | "explicit"
    alpha: float | None = None
    eigenvalues_list: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind == "a_power":
            if self.alpha is None:
                raise ValueError("a_power covariance needs an exponent alpha")
            if self.alpha <= 0.5:
                raise ValueError(
                    f"Q = A^(-alpha) with alpha = {self.alpha} is not trace class: "
                    "the eigenvalue tail sum diverges for alpha <= 1/2"
                )
        elif self.kind == "explicit":
            if not self.eigenvalues_list:
                raise ValueError("explicit covariance needs eigenvalues")
            if any(r <= 0 for r in self.eigenvalues_list):
                raise ValueError("covariance eigenvalues must be positive")
        else:
            raise ValueError(f"unknown covariance kind {self.kind!r}")

    @classmethod
    def a_power(cls, alpha: float) -> "CovarianceOperator":
        """Q = A^(-alpha): rho_k = lam_k^(-alpha), trace class iff alpha > 1/2."""
        return cls(kind="a_power", alpha=alpha)

    @classmethod
    def explicit(cls, values: Sequence[float]) -> "CovarianceOperator":
        return cls(kind="explicit", eigenvalues_list=tuple(float(v) for v in values))

    def rho(self, m: int) -> np.ndarray:
        """Eigenvalues rho_1..rho_m."""
        if self.kind == "a_power":
            return eigenvalues(m) ** (-self.alpha)
        vals = np.asarray(self.eigenvalues_list, dtype=float)
        if m > vals.size:
            raise ValueError(f"explicit covariance defines {vals.size} modes, {m} requested")
        return vals[:m].copy()

    def trace(self, m: int | None = None) -> float:
        """Tr(Q_m) = sum_{k<=m} rho_k; m = None gives a tail-bounded full trace."""
        if m is not None:
            if m < 1:
                raise ValueError("mode count must be >= 1")
            return float(np.sum(self.rho(m)))
        if self.kind == "explicit":
            return float(np.sum(self.eigenvalues_list))
        # partial sum + integral tail bound pi^(-2a) * int_K^inf k^(-2a) dk
        k_max = 100_000
        head = float(np.sum(self.rho(k_max)))
        a = 2.0 * self.alpha
        tail = math.pi ** (-a) * k_max ** (1.0 - a) / (a - 1.0)
        return head + tail


def trace(q: CovarianceOperator, m: int | None = None) -> float:
    return q.trace(m)


@dataclass(frozen=True)
class LevyModel:
    """Atomic intensity measure mu = sum_j w_j delta_{z_j} with separable
    jump coefficient G(t, z) = z * sigma_j * profile (time independent)."""

    atoms: tuple[tuple[float, float], ...]  # (mark z_j, rate weight w_j)
    sigma_j: float = 1.0
    profile: SpectralField = field(default_factory=lambda: unit_mode(1))

    def __post_init__(self):
        atoms = tuple((float(z), float(w)) for z, w in self.atoms)
        if any(w < 0 for _, w in atoms):
            raise ValueError("intensity weights must be nonnegative")
        object.__setattr__(self, "atoms", atoms)

    @property
    def total_rate(self) -> float:
        """Lambda = mu(Z), finite by construction (finite activity)."""
        return sum(w for _, w in self.atoms)

    @property
    def marks(self) -> np.ndarray:
        return np.array([z for z, _ in self.atoms])

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms])

    def profile_coeffs(self, m: int) -> np.ndarray:
        """P_m profile, zero-padded when the profile has fewer modes."""
        c = np.zeros(m)
        n = min(m, self.profile.m)
        c[:n] = self.profile.coeffs[:n]
        return c

    def jump_field(self, z: float, m: int) -> np.ndarray:
        """G(z) = z * sigma_j * P_m profile in coefficients."""
        return z * self.sigma_j * self.profile_coeffs(m)

    def compensator_mean(self) -> float:
        """sum_j w_j z_j sigma_j (scalar factor on the profile)."""
        return float(np.sum(self.weights * self.marks) * self.sigma_j)

    def second_moment_rate(self, m: int) -> float:
        """int_Z ||G_m(z)||^2 mu(dz) = sum_j w_j (z_j sigma_j)^2 ||P_m profile||^2."""
        pnorm2 = float(np.sum(self.profile_coeffs(m) ** 2))
        return float(np.sum(self.weights * (self.marks * self.sigma_j) ** 2) * pnorm2)


@dataclass(frozen=True)
class JumpEvent:
    """One Poisson jump: offset tau within its step, mark z, materialized field."""

    time: float
    mark: float
    field: SpectralField


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian covariance plus jump specification; either part optional."""

    covariance: CovarianceOperator | None = None
    levy: LevyModel | None = None

    def rho(self, m: int) -> np.ndarray:
        if self.covariance is None:
            return np.zeros(m)
        return self.covariance.rho(m)

    def trace(self, m: int) -> float:
        return 0.0 if self.covariance is None else self.covariance.trace(m)

    def jump_rate(self) -> float:
        return 0.0 if self.levy is None else self.levy.total_rate

    def jump_second_moment_rate(self, m: int) -> float:
        return 0.0 if self.levy is None else self.levy.second_moment_rate(m)


def sample_wiener_increment(
    q: CovarianceOperator, m: int, dt: float, rng: np.random.Generator
) -> SpectralField:
    """One increment of Q^(1/2) W over dt: independent N(0, rho_k dt) per mode."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0:
        return SpectralField(np.zeros(m))
    return SpectralField(rng.standard_normal(m) * np.sqrt(q.rho(m) * dt))


def sample_jumps(
    levy: LevyModel, t0: float, dt: float, rng: np.random.Generator, m: int | None = None
) -> list[JumpEvent]:
    """Jump events in [t0, t0+dt): Poisson(Lambda dt) count, i.i.d. marks
    with probabilities w_j / Lambda, times uniform in the step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    lam = levy.total_rate
    if lam == 0.0:
        return []
    m = levy.profile.m if m is None else m
    count = rng.poisson(lam * dt)
    if count == 0:
        return []
    probs = levy.weights / lam
    idx = rng.choice(len(levy.atoms), size=count, p=probs)
    taus = np.sort(rng.random(count) * dt)
    events = []
    for tau, j in zip(taus, idx):
        z = levy.marks[j]
        events.append(JumpEvent(time=t0 + tau, mark=z, field=SpectralField(levy.jump_field(z, m))))
    return events


def compensator_increment(levy: LevyModel, dt: float, m: int | None = None) -> SpectralField:
    """-dt * int_Z G mu(dz): the drift that compensates the jump integral."""
    m = levy.profile.m if m is None else m
    return SpectralField(-dt * levy.compensator_mean() * levy.profile_coeffs(m))


@dataclass(frozen=True)
class IsometryReport:
    lhs: float
    rhs: float
    stderr: float
    n_paths: int

    @property
    def z_score(self) -> float:
        if self.stderr == 0.0:
            return 0.0 if self.lhs == self.rhs else math.inf
        return abs(self.lhs - self.rhs) / self.stderr

    def passed(self, n_sigma: float = 3.0) -> bool:
        return self.z_score <= n_sigma


def ito_isometry_check(
    levy: LevyModel, T: float, n_paths: int, seed: int, m: int | None = None
) -> IsometryReport:
    """Monte Carlo E||int int G dN~||^2 against int_0^T int ||G||^2 mu(dz) dt.

    G is time independent, so the compensated integral is
    sigma_j * profile * (sum_i z_i - T sum_j w_j z_j).
    """
    m = levy.profile.m if m is None else m
    rhs = T * levy.second_moment_rate(m)
    lam = levy.total_rate
    if lam == 0.0:
        return IsometryReport(lhs=0.0, rhs=rhs, stderr=0.0, n_paths=n_paths)
    pnorm2 = float(np.sum(levy.profile_coeffs(m) ** 2))
    comp = T * float(np.sum(levy.weights * levy.marks))
    probs = levy.weights / lam
    sq = np.empty(n_paths)
    for p in range(n_paths):
        rng = substream(seed, JUMP_STREAM, p)
        count = rng.poisson(lam * T)
        zsum = float(np.sum(levy.marks[rng.choice(len(levy.atoms), size=count, p=probs)])) if count else 0.0
        sq[p] = (levy.sigma_j**2) * pnorm2 * (zsum - comp) ** 2
    return IsometryReport(
        lhs=float(sq.mean()),
        rhs=rhs,
        stderr=float(sq.std(ddof=1) / math.sqrt(n_paths)),
        n_paths=n_paths,
    )


@dataclass(frozen=True)
class AssumptionsReport:
    """Constants behind the standing noise assumptions, with pass flags."""

    a1_constant: float  # sup_k lam_k^(-kappa/2) rho_k^(-1/2)
    a1_finite: bool
    a2_l2_bound: float  # sup_t int ||G||^2 mu(dz)
    a2_h1_bounds: dict  # p -> int_0^T int ||G||_1^p mu(dz) dt
    a3_constant: float  # 1 + sigma_j max|z_j| ||profile||
    passed: bool

    def as_dict(self) -> dict:
        return {
            "a1_constant": self.a1_constant,
            "a1_finite": self.a1_finite,
            "a2_l2_bound": self.a2_l2_bound,
            "a2_h1_bounds": {str(k): v for k, v in self.a2_h1_bounds.items()},
            "a3_constant": self.a3_constant,
            "passed": self.passed,
        }


def verify_assumptions(
    q: CovarianceOperator | None,
    levy: LevyModel | None,
    kappa: float,
    m: int = 64,
    T: float = 1.0,
    p_list: Sequence[int] = (2, 4, 8),
) -> AssumptionsReport:
    """Evaluate the constants in the A1/A2/A3 noise conditions.

    A1: ||Q^(-1/2) x|| <= C ||A^(kappa/2) x||, i.e. C = sup_k lam_k^(-kappa/2) rho_k^(-1/2).
    A2: jump moment integrals (finite sums for an atomic measure).
    A3: ||x + theta G|| <= C (1 + ||x||) with C = 1 + sigma_j max|z_j| ||profile||.
    """
    if not 0.5 < kappa < 1.0:
        raise ValueError("kappa must lie in (1/2, 1)")
    if q is None:
        a1_c, a1_finite = math.inf, False
    elif q.kind == "a_power":
        # ratio lam_k^((alpha - kappa)/2): bounded iff alpha <= kappa
        a1_finite = q.alpha <= kappa
        lam = eigenvalues(m)
        a1_c = float(np.max(lam ** ((q.alpha - kappa) / 2.0))) if a1_finite else math.inf
    else:
        lam = eigenvalues(len(q.eigenvalues_list))
        ratios = lam ** (-kappa / 2.0) / np.sqrt(np.asarray(q.eigenvalues_list))
        a1_c, a1_finite = float(np.max(ratios)), True

    if levy is None or levy.total_rate == 0.0:
        a2_l2 = 0.0
        a2_h1 = {p: 0.0 for p in p_list}
        a3_c = 1.0
    else:
        pm = levy.profile_coeffs(levy.profile.m)
        a2_l2 = levy.second_moment_rate(levy.profile.m)
        h1 = math.sqrt(float(v_norm_sq(pm)))
        a2_h1 = {
            p: T * float(np.sum(levy.weights * (np.abs(levy.marks) * levy.sigma_j * h1) ** p))
            for p in p_list
        }
        a3_c = 1.0 + levy.sigma_j * float(np.max(np.abs(levy.marks))) * levy.profile.norm()

    passed = a1_finite and all(np.isfinite(v) for v in a2_h1.values()) and np.isfinite(a3_c)
    return AssumptionsReport(
        a1_constant=a1_c,
        a1_finite=a1_finite,
        a2_l2_bound=a2_l2,
        a2_h1_bounds=a2_h1,
        a3_constant=a3_c,
        passed=passed,
    )
